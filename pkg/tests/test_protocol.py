import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetlora import seeding
from hetlora.adapter import build_adapter, shape_direct_reduction, shape_matrix_decomposition
from hetlora.config import RoundConfig, TrainMode
from hetlora.data import Dataset
from hetlora.errors import ConfigError
from hetlora.model import HeteroModel, ModelSpec, build_model
from hetlora.nn import Activation, DenseLayer, DenseStack, cross_entropy, param_hash, stack_forward
from hetlora.protocol import (
    ClientState,
    aggregate,
    client_receive,
    client_update,
    dual_loss,
    phase1_train_model,
    phase2_train_adapter,
    run_experiment,
    run_round,
    sample_clients,
    setup_experiment,
    train_local,
    train_simultaneous,
)

from conftest import tiny_config


def make_client(rng, n=24, dim=4, rep=5, classes=3, hidden=3, cid=0):
    model = build_model(ModelSpec((dim, 7, rep), (rep, 6, classes)), rng)
    adapter = build_adapter(shape_matrix_decomposition(rep, classes, hidden, init_sigma=0.3), rng)
    x = rng.normal(size=(n, dim))
    y = np.arange(n) % classes
    data = Dataset(x, y, classes)
    return ClientState(cid, model, adapter, data, data.subset([0]), data.subset(range(classes)))


def random_adapter(rng, d=5, c=3, r=3):
    adapter = build_adapter(shape_matrix_decomposition(d, c, r, init_sigma=1.0), rng)
    for p in adapter.parameters():
        p[...] = rng.normal(size=p.shape)
    return adapter


# sampling

@pytest.mark.parametrize("n,c,k", [(100, 0.1, 10), (10, 1.0, 10), (7, 0.5, 3), (100, 0.29, 29)])
def test_sample_sizes(n, c, k, rng):
    ids = sample_clients(n, c, rng)
    assert len(ids) == k == len(set(ids))
    assert ids == sorted(ids) and all(0 <= i < n for i in ids)


def test_sample_zero_clients_rejected(rng):
    with pytest.raises(ConfigError):
        sample_clients(5, 0.1, rng)


def test_sampling_roughly_uniform():
    counts = np.zeros(10)
    for t in range(2000):
        for k in sample_clients(10, 0.3, np.random.default_rng(t)):
            counts[k] += 1
    assert np.all(np.abs(counts / 2000 - 0.3) < 0.04)


# broadcast

def test_receive_copies_and_isolates(rng):
    client = make_client(rng)
    glob = random_adapter(rng)
    client_receive(client, glob)
    assert param_hash(client.adapter.stack) == param_hash(glob.stack)
    client.adapter.layer_b.weights += 1.0
    assert param_hash(client.adapter.stack) != param_hash(glob.stack)


def test_receive_rejects_incompatible_adapter(rng):
    client = make_client(rng)
    with pytest.raises(ConfigError):
        client_receive(client, random_adapter(rng, d=6))


# local training

def test_phase1_freezes_adapter_and_phase2_freezes_model(rng):
    client = make_client(rng)
    client.adapter.layer_b.weights[:] = rng.normal(size=client.adapter.layer_b.weights.shape)
    cfg = RoundConfig(local_epochs=2, batch_size=5, lr_model=0.05, lr_adapter=0.05, mu=0.7)
    ad_before = param_hash(client.adapter.stack)
    model_before = param_hash(client.model.extractor, client.model.head)
    phase1_train_model(client, cfg, rng)
    assert param_hash(client.adapter.stack) == ad_before
    model_mid = param_hash(client.model.extractor, client.model.head)
    assert model_mid != model_before
    phase2_train_adapter(client, cfg, rng)
    assert param_hash(client.model.extractor, client.model.head) == model_mid
    assert param_hash(client.adapter.stack) != ad_before


def test_dual_loss_half_is_mean(rng):
    a, b = rng.exponential(size=50), rng.exponential(size=50)
    np.testing.assert_allclose(dual_loss(a, b, 0.5), (a + b) / 2, rtol=0, atol=1e-15)


def test_dual_loss_mu_derivative(rng):
    a, b = 1.3, 0.4
    h = 1e-6
    fd = (dual_loss(a, b, 0.7 + h) - dual_loss(a, b, 0.7 - h)) / (2 * h)
    assert fd == pytest.approx(b - a, abs=1e-9)


def extractor_grad_from_adapter_branch(client, x, y):
    """Finite-difference gradient of the adapter-branch CE wrt the first extractor weight matrix."""
    w = client.model.extractor.layers[0].weights
    eps = 1e-6
    grad = np.zeros_like(w)

    def loss():
        rep, _ = stack_forward(client.model.extractor, x)
        return float(np.mean(cross_entropy(stack_forward(client.adapter.stack, rep)[0], y)))

    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + eps
        up = loss()
        w[idx] = old - eps
        down = loss()
        w[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def test_fresh_adapter_gives_no_extractor_signal(rng):
    client = make_client(rng)
    x, y = client.train.features, client.train.labels
    assert not extractor_grad_from_adapter_branch(client, x, y).any()
    other = make_client(np.random.default_rng(1234))
    same = make_client(np.random.default_rng(1234))
    cfg = RoundConfig(local_epochs=1, batch_size=len(other.train), lr_model=0.1, lr_adapter=0.1, mu=0.5)
    phase1_train_model(other, cfg, np.random.default_rng(0))
    half = RoundConfig(local_epochs=1, batch_size=len(same.train), lr_model=0.05, lr_adapter=0.1, mu=0.5)
    # with B = 0 only the head term acts: mu * lr = 0.5 * 0.1 equals 1.0 * 0.05 on plain CE
    train_local(same, half, np.random.default_rng(0))
    for a, b in zip(other.model.full_stack().parameters(), same.model.full_stack().parameters()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_trained_adapter_gives_extractor_signal(rng):
    client = make_client(rng)
    client.adapter.layer_b.weights[:] = rng.normal(size=client.adapter.layer_b.weights.shape)
    x, y = client.train.features, client.train.labels
    assert np.abs(extractor_grad_from_adapter_branch(client, x, y)).max() > 1e-4


def test_phase1_extractor_update_matches_finite_differences(rng):
    client = make_client(rng, n=6)
    client.adapter.layer_b.weights[:] = rng.normal(size=client.adapter.layer_b.weights.shape)
    mu, lr = 0.7, 1e-3
    x, y = client.train.features, client.train.labels
    w = client.model.extractor.layers[0].weights
    eps = 1e-6

    def loss():
        rep, _ = stack_forward(client.model.extractor, x)
        l1 = cross_entropy(stack_forward(client.adapter.stack, rep)[0], y)
        l2 = cross_entropy(stack_forward(client.model.head, rep)[0], y)
        return float(np.mean(dual_loss(l1, l2, mu)))

    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + eps
        up = loss()
        w[idx] = old - eps
        down = loss()
        w[idx] = old
        fd[idx] = (up - down) / (2 * eps)
    before = w.copy()
    phase1_train_model(client, RoundConfig(1, len(y), lr, lr, mu), rng)
    np.testing.assert_allclose((before - client.model.extractor.layers[0].weights) / lr, fd, atol=1e-7)


def identity_extractor_client(rng):
    x = np.concatenate([rng.normal(loc=2.0, size=(20, 2)), rng.normal(loc=-2.0, size=(20, 2))])
    y = np.repeat([0, 1], 20)
    data = Dataset(x, y, 2)
    extractor = DenseStack([DenseLayer(np.eye(2), np.zeros(2), Activation.IDENTITY)])
    head = DenseStack([DenseLayer(np.zeros((2, 2)), np.zeros(2))])
    model = HeteroModel(extractor, head, ModelSpec((2, 2), (2, 2)))
    adapter = build_adapter(shape_direct_reduction((2, 2), 1, init_sigma=0.5), rng)
    return ClientState(0, model, adapter, data, data, data)


def test_phase2_loss_strictly_decreases(rng):
    client = identity_extractor_client(rng)
    cfg = RoundConfig(local_epochs=1, batch_size=40, lr_model=0.1, lr_adapter=0.1, mu=0.9)
    losses = [phase2_train_adapter(client, cfg, rng) for _ in range(10)]
    assert losses[0] == pytest.approx(np.log(2), abs=1e-12)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_iterative_is_phase1_then_phase2(rng):
    glob = random_adapter(np.random.default_rng(3))
    cfg = RoundConfig(local_epochs=2, batch_size=7, lr_model=0.05, lr_adapter=0.05, mu=0.8)
    a = make_client(np.random.default_rng(1))
    b = make_client(np.random.default_rng(1))
    client_update(a, glob, cfg, TrainMode.ITERATIVE, np.random.default_rng(9))
    client_receive(b, glob)
    r = np.random.default_rng(9)
    phase1_train_model(b, cfg, r)
    phase2_train_adapter(b, cfg, r)
    assert param_hash(a.model.full_stack(), a.adapter.stack) == param_hash(b.model.full_stack(), b.adapter.stack)


def test_standalone_returns_nothing_and_ignores_adapter(rng):
    client = make_client(rng)
    glob = random_adapter(rng)
    before = param_hash(glob.stack), param_hash(client.adapter.stack)
    out = client_update(client, glob, RoundConfig(), TrainMode.STANDALONE, rng)
    assert out is None
    assert (param_hash(glob.stack), param_hash(client.adapter.stack)) == before


def test_standalone_run_leaves_server_adapter_unchanged():
    cfg = tiny_config(mode=TrainMode.STANDALONE)
    server, clients = setup_experiment(cfg)
    before = param_hash(server.global_adapter.stack)
    m = run_round(server, clients, cfg)
    assert param_hash(server.global_adapter.stack) == before
    assert m.cum_comm_params == 0


def test_simultaneous_first_step_is_plain_head_training(rng):
    # with B = 0 the adapter logits vanish, so model updates equal those of plain CE on the head
    a = make_client(np.random.default_rng(2))
    b = make_client(np.random.default_rng(2))
    cfg = RoundConfig(local_epochs=1, batch_size=len(a.train), lr_model=0.1, lr_adapter=0.1, mu=0.9)
    train_simultaneous(a, cfg, np.random.default_rng(0))
    train_local(b, cfg, np.random.default_rng(0))
    for p, q in zip(a.model.full_stack().parameters(), b.model.full_stack().parameters()):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-14)
    assert a.adapter.layer_b.weights.any()


def test_simultaneous_loss_is_summed_logits(rng):
    client = make_client(rng)
    client.adapter.layer_b.weights[:] = rng.normal(size=client.adapter.layer_b.weights.shape)
    x, y = client.train.features, client.train.labels
    rep, _ = stack_forward(client.model.extractor, x)
    summed = stack_forward(client.adapter.stack, rep)[0] + stack_forward(client.model.head, rep)[0]
    expected = float(np.mean(cross_entropy(summed, y)))
    cfg = RoundConfig(local_epochs=1, batch_size=len(y), lr_model=0.1, lr_adapter=0.1)
    assert train_simultaneous(client, cfg, rng) == pytest.approx(expected, abs=1e-14)


def test_phase1_rejects_empty_client(rng):
    client = make_client(rng)
    client.train = client.train.subset([])
    with pytest.raises(ConfigError, match="client 0"):
        phase1_train_model(client, RoundConfig(), rng)


# aggregation

def brute_force_mean(adapters, weights):
    total = sum(weights)
    out = []
    for j in range(len(adapters[0].parameters())):
        arr = adapters[0].parameters()[j]
        res = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            res[idx] = sum(w * a.parameters()[j][idx] for a, w in zip(adapters, weights)) / total
        out.append(res)
    return out


def test_aggregate_identical_inputs(rng):
    base = random_adapter(rng)
    merged = aggregate([base.copy() for _ in range(4)], [3, 1, 7, 2])
    for p, q in zip(merged.parameters(), base.parameters()):
        np.testing.assert_allclose(p, q, rtol=1e-15, atol=0)


def test_aggregate_zeros_and_ones(rng):
    zero, one = random_adapter(rng), random_adapter(rng)
    for p in zero.parameters():
        p[...] = 0.0
    for p in one.parameters():
        p[...] = 1.0
    merged = aggregate([zero, one], [1, 3])
    for p in merged.parameters():
        np.testing.assert_array_equal(p, np.full(p.shape, 0.75))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_aggregate_matches_brute_force(k, seed):
    rng = np.random.default_rng(seed)
    adapters = [random_adapter(rng) for _ in range(k)]
    weights = rng.integers(1, 500, size=k).tolist()
    merged = aggregate(adapters, weights)
    for p, q in zip(merged.parameters(), brute_force_mean(adapters, weights)):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-12)
    lo = [np.minimum.reduce([a.parameters()[j] for a in adapters]) for j in range(4)]
    hi = [np.maximum.reduce([a.parameters()[j] for a in adapters]) for j in range(4)]
    for p, l, h in zip(merged.parameters(), lo, hi):
        assert np.all(p >= l - 1e-12) and np.all(p <= h + 1e-12)
    perm = rng.permutation(k)
    shuffled = aggregate([adapters[i] for i in perm], [weights[i] for i in perm])
    for p, q in zip(merged.parameters(), shuffled.parameters()):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-12)


def test_aggregate_single_adapter_is_identity(rng):
    a = random_adapter(rng)
    assert param_hash(aggregate([a], [17]).stack) == param_hash(a.stack)


def test_aggregate_rejects_bad_input(rng):
    with pytest.raises(ConfigError):
        aggregate([], [])
    with pytest.raises(ConfigError):
        aggregate([random_adapter(rng), random_adapter(rng, r=2)], [1, 1])
    with pytest.raises(ConfigError):
        aggregate([random_adapter(rng)], [1, 2])


def test_aggregate_does_not_alias_inputs(rng):
    a = random_adapter(rng)
    merged = aggregate([a], [1])
    merged.layer_a.weights += 1.0
    assert not np.shares_memory(merged.layer_a.weights, a.layer_a.weights)


# rounds

def test_one_sampled_client_sets_global_adapter():
    cfg = tiny_config(participation=0.25)
    server, clients = setup_experiment(cfg)
    hashes = [param_hash(c.model.full_stack()) for c in clients]
    m = run_round(server, clients, cfg)
    (k,) = m.sampled_clients
    assert param_hash(server.global_adapter.stack) == param_hash(clients[k].adapter.stack)
    for j, c in enumerate(clients):
        changed = param_hash(c.model.full_stack()) != hashes[j]
        assert changed == (j == k)


def test_round_weights_by_training_size():
    cfg = tiny_config(participation=0.5)
    server, clients = setup_experiment(cfg)
    m = run_round(server, clients, cfg)
    chosen = [clients[k] for k in m.sampled_clients]
    expected = brute_force_mean([c.adapter for c in chosen], [c.n_k for c in chosen])
    for p, q in zip(server.global_adapter.parameters(), expected):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-12)
    assert server.total_n == sum(c.n_k for c in chosen)


def test_run_length_and_determinism():
    cfg = tiny_config(rounds=4)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert len(a.rounds) == 4 and [r.round for r in a.rounds] == [1, 2, 3, 4]
    assert a.rounds == b.rounds
    assert param_hash(a.server.global_adapter.stack) == param_hash(b.server.global_adapter.stack)


def test_seed_changes_results():
    assert run_experiment(tiny_config(seed=1)).rounds != run_experiment(tiny_config(seed=2)).rounds


def test_invalid_config_rejected_before_training():
    with pytest.raises(ConfigError, match="rounds"):
        tiny_config(rounds=0)


def test_heterogeneous_models_assigned_mod_specs():
    cfg = tiny_config(clients=7)
    _, clients = setup_experiment(cfg)
    assert [c.model.spec for c in clients] == [cfg.models[k % 3] for k in range(7)]


def test_worker_count_does_not_change_results():
    cfg = tiny_config(rounds=2)
    assert run_experiment(cfg, workers=1).rounds == run_experiment(cfg, workers=3).rounds


def test_fedavg_mode_shares_one_model():
    spec = ModelSpec((5, 8, 6), (6, 6))
    cfg = tiny_config(mode=TrainMode.HOMOGENEOUS_FEDAVG, models=(spec,))
    log = run_experiment(cfg)
    g = log.server.global_model
    n = sum(c.n_k for c in log.clients)
    assert log.server.total_n == n
    assert log.rounds[-1].cum_comm_params == 3 * 2 * 4 * sum(p.size for p in g.full_stack().parameters())


def test_fedavg_rejects_mixed_specs():
    with pytest.raises(ConfigError, match="identical"):
        tiny_config(mode=TrainMode.HOMOGENEOUS_FEDAVG)


@pytest.mark.parametrize("mode", list(TrainMode))
def test_every_mode_runs(mode):
    models = (ModelSpec((5, 8, 6), (6, 6)),) if mode is TrainMode.HOMOGENEOUS_FEDAVG else tiny_config().models
    log = run_experiment(tiny_config(mode=mode, models=models, rounds=2))
    assert all(0.0 <= r.avg_accuracy <= 1.0 for r in log.rounds)


def test_descent_on_tiny_problem():
    cfg = tiny_config(rounds=20, round=RoundConfig(1, 8, 0.02, 0.02, 0.9))
    losses = [r.mean_train_loss for r in run_experiment(cfg).rounds]
    steps = [b <= a for a, b in zip(losses, losses[1:])]
    assert sum(steps) >= 0.9 * len(steps)


def test_seed_streams_are_independent_of_order():
    a = [seeding.client_round_rng(5, k, t).random() for k, t in itertools.product(range(3), range(3))]
    b = [seeding.client_round_rng(5, k, t).random() for t, k in itertools.product(range(3), range(3))]
    assert sorted(a) == sorted(b) and len(set(a)) == 9
