"""Round engine: client sampling, adapter broadcast, local training, aggregation.

A round samples ``K = floor(C * N)`` clients, hands each a copy of the
global adapter, runs local training, and averages the returned adapters
weighted by training-set size. Four training modes are supported:

* iterative: freeze adapter and train the model on the mu-weighted dual
  loss, then freeze the model and train the adapter;
* simultaneous: train model and adapter jointly on the summed logits;
* standalone: local head loss only, nothing exchanged;
* homogeneous_fedavg: a single shared architecture, full models averaged.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import seeding
from .adapter import LowRankAdapter, adapter_param_count, build_adapter, check_compatible
from .config import ExperimentConfig, RoundConfig, TrainMode, sampled_count
from .data import Dataset, generate_synthetic, load_csv_dataset, partition_noniid, split_811
from .errors import ConfigError, NumericalError, TrainingAborted
from .metrics import (
    RoundMetrics,
    RunLog,
    communication_cost_per_round,
    computation_cost_per_round,
    evaluate_client,
    train_loss,
)
from .model import HeteroModel, build_model, model_param_count
from .nn import cross_entropy, cross_entropy_grad, sgd_step, stack_backward, stack_forward


@dataclass
class ClientState:
    cid: int
    model: HeteroModel
    adapter: LowRankAdapter
    train: Dataset
    val: Dataset
    test: Dataset
    master_seed: int = 0

    @property
    def n_k(self) -> int:
        return len(self.train)

    def round_rng(self, round_index: int) -> np.random.Generator:
        return seeding.client_round_rng(self.master_seed, self.cid, round_index)


@dataclass
class ServerState:
    global_adapter: LowRankAdapter
    round: int = 0
    total_n: int = 0
    global_model: HeteroModel | None = None
    cum_comm_params: int = 0
    cum_flops: int = 0


def sample_clients(n_clients: int, participation: float, rng: np.random.Generator) -> list[int]:
    """``floor(C * N)`` distinct client ids, uniformly without replacement, sorted."""
    if n_clients < 1 or not 0 < participation <= 1:
        raise ConfigError(f"invalid sampling setup N={n_clients}, C={participation}")
    k = sampled_count(n_clients, participation)
    if k < 1:
        raise ConfigError(f"floor({participation} * {n_clients}) = 0 clients sampled")
    return sorted(rng.choice(n_clients, size=k, replace=False).tolist())


def client_receive(client: ClientState, global_adapter: LowRankAdapter) -> None:
    check_compatible(client.adapter, global_adapter)
    client.adapter = global_adapter.copy()


def dual_loss(adapter_loss, head_loss, mu: float):
    """Blend of the adapter-branch and head-branch losses, weighted toward the head."""
    return (1.0 - mu) * adapter_loss + mu * head_loss


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_loss(loss: float, client: ClientState, phase: str) -> None:
    if not np.isfinite(loss):
        raise NumericalError(f"client {client.cid}: non-finite loss in {phase}")


def _require_data(client: ClientState) -> None:
    if client.n_k == 0:
        raise ConfigError(f"client {client.cid} has no training data")


def phase1_train_model(client: ClientState, cfg: RoundConfig, rng: np.random.Generator) -> float:
    """Freeze the adapter, train extractor and head on the dual loss.

    The adapter's parameters are never stepped, but the adapter-branch
    gradient still flows through it into the representation. Returns the
    mean batch loss of the last epoch.
    """
    _require_data(client)
    model, adapter, data = client.model, client.adapter, client.train
    mu = cfg.mu
    last = 0.0
    for _ in range(cfg.local_epochs):
        losses = []
        for idx in _batches(client.n_k, cfg.batch_size, rng):
            x, y = data.features[idx], data.labels[idx]
            n = idx.size
            rep, ext_cache = stack_forward(model.extractor, x)
            y1, ad_cache = stack_forward(adapter.stack, rep)
            y2, head_cache = stack_forward(model.head, rep)
            loss = float(np.mean(dual_loss(cross_entropy(y1, y), cross_entropy(y2, y), mu)))
            _check_loss(loss, client, "phase 1")
            losses.append(loss)
            _, d_rep_adapter = stack_backward(adapter.stack, ad_cache, (1.0 - mu) * cross_entropy_grad(y1, y) / n)
            head_grads, d_rep_head = stack_backward(model.head, head_cache, mu * cross_entropy_grad(y2, y) / n)
            ext_grads, _ = stack_backward(model.extractor, ext_cache, d_rep_adapter + d_rep_head)
            sgd_step(model.extractor, ext_grads, cfg.lr_model)
            sgd_step(model.head, head_grads, cfg.lr_model)
        last = float(np.mean(losses))
    return last


def phase2_train_adapter(client: ClientState, cfg: RoundConfig, rng: np.random.Generator) -> float:
    """Freeze the (updated) model, train the adapter on its own CE loss."""
    _require_data(client)
    model, adapter, data = client.model, client.adapter, client.train
    last = 0.0
    for _ in range(cfg.local_epochs):
        losses = []
        for idx in _batches(client.n_k, cfg.batch_size, rng):
            x, y = data.features[idx], data.labels[idx]
            rep, _ = stack_forward(model.extractor, x)
            logits, cache = stack_forward(adapter.stack, rep)
            loss = float(np.mean(cross_entropy(logits, y)))
            _check_loss(loss, client, "phase 2")
            losses.append(loss)
            grads, _ = stack_backward(adapter.stack, cache, cross_entropy_grad(logits, y) / idx.size)
            sgd_step(adapter.stack, grads, cfg.lr_adapter)
        last = float(np.mean(losses))
    return last


def train_simultaneous(client: ClientState, cfg: RoundConfig, rng: np.random.Generator) -> float:
    """Joint step on CE(adapter logits + head logits); mu is unused."""
    _require_data(client)
    model, adapter, data = client.model, client.adapter, client.train
    last = 0.0
    for _ in range(cfg.local_epochs):
        losses = []
        for idx in _batches(client.n_k, cfg.batch_size, rng):
            x, y = data.features[idx], data.labels[idx]
            rep, ext_cache = stack_forward(model.extractor, x)
            y1, ad_cache = stack_forward(adapter.stack, rep)
            y2, head_cache = stack_forward(model.head, rep)
            logits = y1 + y2
            loss = float(np.mean(cross_entropy(logits, y)))
            _check_loss(loss, client, "simultaneous training")
            losses.append(loss)
            g = cross_entropy_grad(logits, y) / idx.size
            ad_grads, d_rep_adapter = stack_backward(adapter.stack, ad_cache, g)
            head_grads, d_rep_head = stack_backward(model.head, head_cache, g)
            ext_grads, _ = stack_backward(model.extractor, ext_cache, d_rep_adapter + d_rep_head)
            sgd_step(model.extractor, ext_grads, cfg.lr_model)
            sgd_step(model.head, head_grads, cfg.lr_model)
            sgd_step(adapter.stack, ad_grads, cfg.lr_adapter)
        last = float(np.mean(losses))
    return last


def train_local(client: ClientState, cfg: RoundConfig, rng: np.random.Generator) -> float:
    """Plain CE on the local head; used by standalone and FedAvg modes."""
    _require_data(client)
    model, data = client.model, client.train
    full = model.full_stack()
    last = 0.0
    for _ in range(cfg.local_epochs):
        losses = []
        for idx in _batches(client.n_k, cfg.batch_size, rng):
            x, y = data.features[idx], data.labels[idx]
            logits, cache = stack_forward(full, x)
            loss = float(np.mean(cross_entropy(logits, y)))
            _check_loss(loss, client, "local training")
            losses.append(loss)
            grads, _ = stack_backward(full, cache, cross_entropy_grad(logits, y) / idx.size)
            sgd_step(full, grads, cfg.lr_model)
        last = float(np.mean(losses))
    return last


def client_update(client: ClientState, global_state, cfg: RoundConfig, mode: TrainMode,
                  rng: np.random.Generator):
    """Run one round of local work; return what the server aggregates.

    ``global_state`` is the global adapter, or the global model in
    homogeneous FedAvg mode. Standalone returns ``None``.
    """
    if mode is TrainMode.ITERATIVE:
        client_receive(client, global_state)
        phase1_train_model(client, cfg, rng)
        phase2_train_adapter(client, cfg, rng)
        return client.adapter
    if mode is TrainMode.SIMULTANEOUS:
        client_receive(client, global_state)
        train_simultaneous(client, cfg, rng)
        return client.adapter
    if mode is TrainMode.STANDALONE:
        train_local(client, cfg, rng)
        return None
    if mode is TrainMode.HOMOGENEOUS_FEDAVG:
        if client.model.spec != global_state.spec:
            raise ConfigError(f"client {client.cid} model spec differs from the global model")
        client.model = global_state.copy()
        train_local(client, cfg, rng)
        return client.model
    raise ConfigError(f"unknown mode {mode!r}")


def weighted_average(param_sets: list[list[np.ndarray]], weights) -> list[np.ndarray]:
    """Entry-wise ``sum_k (n_k / n) p_k`` accumulated in list order."""
    if not param_sets:
        raise ConfigError("cannot aggregate an empty list")
    weights = [float(w) for w in weights]
    if len(weights) != len(param_sets):
        raise ConfigError(f"{len(weights)} weights for {len(param_sets)} parameter sets")
    if any(not w > 0 for w in weights):
        raise ConfigError("aggregation weights must be positive")
    shapes = [p.shape for p in param_sets[0]]
    for params in param_sets[1:]:
        if [p.shape for p in params] != shapes:
            raise ConfigError("parameter shapes differ across clients")
    total = sum(weights)
    out = [np.zeros(s) for s in shapes]
    for params, w in zip(param_sets, weights):
        frac = w / total
        for acc, p in zip(out, params):
            acc += frac * p
    return out


def aggregate(adapters: list[LowRankAdapter], weights) -> LowRankAdapter:
    if not adapters:
        raise ConfigError("cannot aggregate an empty list of adapters")
    for other in adapters[1:]:
        check_compatible(adapters[0], other)
    merged = adapters[0].copy()
    for target, value in zip(merged.parameters(), weighted_average([a.parameters() for a in adapters], weights)):
        target[...] = value
    return merged


def aggregate_models(models: list[HeteroModel], weights) -> HeteroModel:
    if not models:
        raise ConfigError("cannot aggregate an empty list of models")
    merged = models[0].copy()
    stacks = [m.full_stack() for m in models]
    for target, value in zip(merged.full_stack().parameters(),
                             weighted_average([s.parameters() for s in stacks], weights)):
        target[...] = value
    return merged


def setup_experiment(config: ExperimentConfig) -> tuple[ServerState, list[ClientState]]:
    """Build data, partition, splits, models and the initial global adapter."""
    config.validate()
    seed = config.seed
    if config.data.source == "csv":
        dataset = load_csv_dataset(config.data.path)
    else:
        d = config.data
        dataset = generate_synthetic(d.num_classes, d.dim, d.per_class, d.separation,
                                     seeding.rng_for(seed, seeding.DATA))
    problems = []
    if any(m.input_dim != dataset.dim for m in config.models):
        problems.append(f"model input width must equal dataset dim {dataset.dim}")
    if any(m.num_classes != dataset.num_classes for m in config.models):
        problems.append(f"model num_classes must equal dataset num_classes {dataset.num_classes}")
    if problems:
        raise ConfigError(problems)
    plan = partition_noniid(dataset, config.clients, config.classes_per_client,
                            seeding.rng_for(seed, seeding.PARTITION))
    global_adapter = build_adapter(config.adapter, seeding.rng_for(seed, seeding.ADAPTER))
    global_model = None
    if config.mode is TrainMode.HOMOGENEOUS_FEDAVG:
        global_model = build_model(config.models[0], seeding.rng_for(seed, seeding.MODEL, seeding.GLOBAL_MODEL_ID))
    clients = []
    for k in range(config.clients):
        tr, va, te = split_811(plan.client_indices[k], dataset.labels,
                               seeding.rng_for(seed, seeding.SPLIT, k), client_id=k)
        if global_model is not None:
            model = global_model.copy()
        else:
            model = build_model(config.model_for(k), seeding.rng_for(seed, seeding.MODEL, k))
        clients.append(ClientState(k, model, global_adapter.copy(), dataset.subset(tr),
                                   dataset.subset(va), dataset.subset(te), seed))
    return ServerState(global_adapter, global_model=global_model), clients


def _evaluation_model(server: ServerState, client: ClientState, mode: TrainMode) -> HeteroModel:
    if mode is TrainMode.HOMOGENEOUS_FEDAVG:
        return server.global_model
    return client.model


def run_round(server: ServerState, clients: list[ClientState], config: ExperimentConfig,
              workers: int = 1) -> RoundMetrics:
    t = server.round + 1
    mode, cfg = config.mode, config.round
    sampled = sample_clients(len(clients), config.participation,
                             seeding.rng_for(config.seed, seeding.SAMPLE, t))
    chosen = [clients[k] for k in sampled]
    if mode is TrainMode.HOMOGENEOUS_FEDAVG:
        shared = server.global_model
    else:
        shared = server.global_adapter

    def work(client):
        return client_update(client, shared, cfg, mode, client.round_rng(t))

    if workers > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            returned = list(pool.map(work, chosen))
    else:
        returned = [work(c) for c in chosen]

    weights = [c.n_k for c in chosen]
    if mode in (TrainMode.ITERATIVE, TrainMode.SIMULTANEOUS):
        server.global_adapter = aggregate(returned, weights)
        server.total_n = sum(weights)
        comm = communication_cost_per_round(len(chosen), adapter_param_count(server.global_adapter))
    elif mode is TrainMode.HOMOGENEOUS_FEDAVG:
        server.global_model = aggregate_models(returned, weights)
        server.total_n = sum(weights)
        comm = communication_cost_per_round(len(chosen), model_param_count(server.global_model))
    else:
        comm = 0
    server.cum_comm_params += comm
    server.cum_flops += computation_cost_per_round(chosen, config)
    server.round = t

    accs = tuple(evaluate_client(c, _evaluation_model(server, c, mode)) for c in clients)
    losses = [train_loss(c, _evaluation_model(server, c, mode)) for c in clients]
    return RoundMetrics(
        round=t,
        per_client_accuracy=accs,
        avg_accuracy=float(np.mean(accs)),
        cum_comm_params=int(server.cum_comm_params),
        cum_flops=int(server.cum_flops),
        mean_train_loss=float(np.mean(losses)),
        sampled_clients=tuple(sampled),
    )


def run_experiment(config: ExperimentConfig, workers: int = 1, progress=None) -> RunLog:
    """Run all rounds. ``progress(metrics)`` is called after each round.

    On a failure mid-run, :class:`TrainingAborted` carries the partial log.
    """
    server, clients = setup_experiment(config)
    log = RunLog(config, [], clients, server)
    for _ in range(config.rounds):
        try:
            metrics = run_round(server, clients, config, workers)
        except (NumericalError, FloatingPointError) as exc:
            raise TrainingAborted(f"round {server.round + 1}: {exc}", log) from exc
        log.rounds.append(metrics)
        if progress is not None:
            progress(metrics)
    return log
