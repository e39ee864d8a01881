"""Accuracy, communication and FLOP accounting, and result export.

FLOP convention: a dense layer's forward pass costs ``2 * d_in * d_out``
per sample and its backward pass twice that. A part that is only run
forward (frozen and not on any gradient path) costs forward only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapter import AdapterSpec
from .config import ExperimentConfig, TrainMode, parse_config, write_config
from .errors import ConfigError
from .model import HeteroModel, extract_representation, head_forward, model_flops_per_sample
from .nn import cross_entropy, forward_flops


@dataclass
class RoundMetrics:
    round: int
    per_client_accuracy: tuple[float, ...]
    avg_accuracy: float
    cum_comm_params: int
    cum_flops: int
    mean_train_loss: float
    sampled_clients: tuple[int, ...] = field(default=(), compare=False)


@dataclass
class RunLog:
    config: ExperimentConfig
    rounds: list[RoundMetrics] = field(default_factory=list)
    clients: list = field(default=None, compare=False, repr=False)
    server: object = field(default=None, compare=False, repr=False)

    @property
    def summary(self) -> dict:
        if not self.rounds:
            return {"rounds": 0}
        last = self.rounds[-1]
        return {
            "rounds": len(self.rounds),
            "final_avg_accuracy": last.avg_accuracy,
            "best_avg_accuracy": max(r.avg_accuracy for r in self.rounds),
            "cum_comm_params": last.cum_comm_params,
            "cum_flops": last.cum_flops,
            "final_mean_train_loss": last.mean_train_loss,
        }


def predict(model: HeteroModel, features) -> np.ndarray:
    """Argmax of the local head; ties go to the lowest class index."""
    logits = head_forward(model, extract_representation(model, features))
    return np.atleast_2d(logits).argmax(axis=1)


def evaluate_client(client, model: HeteroModel | None = None) -> float:
    """Test accuracy of ``model`` (default: the client's own) on the client's test set."""
    test = client.test
    if len(test) == 0:
        raise ConfigError(f"client {client.cid} has an empty test set")
    model = client.model if model is None else model
    return float(np.mean(predict(model, test.features) == test.labels))


def train_loss(client, model: HeteroModel | None = None) -> float:
    model = client.model if model is None else model
    train = client.train
    logits = head_forward(model, extract_representation(model, train.features))
    return float(np.mean(cross_entropy(np.atleast_2d(logits), train.labels)))


def communication_cost_per_round(k: int, param_count: int) -> int:
    """Downlink broadcast plus uplink return for ``k`` sampled clients."""
    if k < 1:
        raise ConfigError(f"need at least one sampled client, got {k}")
    return 2 * k * param_count


def adapter_forward_flops(spec: AdapterSpec) -> int:
    return 2 * spec.rep_dim * spec.hidden_dim + 2 * spec.hidden_dim * spec.num_classes


def per_sample_training_flops(model: HeteroModel, adapter: AdapterSpec, mode: TrainMode) -> int:
    """FLOPs to push one sample through one epoch of every local phase.

    Iterative mode counts its phases separately: phase 1 runs forward and
    backward through extractor, head and the frozen adapter (gradient flows
    through it into the extractor); phase 2 runs the frozen extractor
    forward only and the adapter forward and backward.
    """
    f_model = model_flops_per_sample(model)
    f_ext = forward_flops(model.extractor)
    f_ad = adapter_forward_flops(adapter)
    if mode is TrainMode.ITERATIVE:
        return 3 * (f_model + f_ad) + (f_ext + 3 * f_ad)
    if mode is TrainMode.SIMULTANEOUS:
        return 3 * (f_model + f_ad)
    return 3 * f_model


def computation_cost_per_round(clients, cfg: ExperimentConfig, mode: TrainMode | None = None) -> int:
    mode = cfg.mode if mode is None else mode
    epochs = cfg.round.local_epochs
    return sum(
        client.n_k * epochs * per_sample_training_flops(client.model, cfg.adapter, mode)
        for client in clients
    )


def metrics_header(n_clients: int) -> list[str]:
    return (["round", "avg_accuracy"] + [f"acc_client_{k}" for k in range(n_clients)]
            + ["cum_comm_params", "cum_flops", "mean_train_loss"])


def write_csv(runlog: RunLog, path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(metrics_header(runlog.config.clients))
            for r in runlog.rounds:
                writer.writerow(
                    [r.round, repr(r.avg_accuracy)]
                    + [repr(a) for a in r.per_client_accuracy]
                    + [r.cum_comm_params, r.cum_flops, repr(r.mean_train_loss)]
                )
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def write_config_snapshot(runlog: RunLog, path) -> None:
    """Settings of the run, minus the output directory, so reruns elsewhere match byte for byte."""
    try:
        write_config(runlog.config, path, include_out_dir=False)
    except OSError as exc:
        raise OSError(f"cannot write config snapshot to {path}: {exc}") from exc


def read_csv(path, config: ExperimentConfig) -> RunLog:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != metrics_header(config.clients):
            raise ConfigError(f"{path}: unexpected metrics header")
        rounds = []
        for row in reader:
            n = config.clients
            rounds.append(RoundMetrics(
                round=int(row[0]),
                avg_accuracy=float(row[1]),
                per_client_accuracy=tuple(float(v) for v in row[2:2 + n]),
                cum_comm_params=int(row[2 + n]),
                cum_flops=int(row[3 + n]),
                mean_train_loss=float(row[4 + n]),
            ))
    return RunLog(config, rounds)


def read_run(directory) -> RunLog:
    directory = Path(directory)
    config = parse_config(directory / "config.txt")
    return read_csv(directory / "metrics.csv", config)


def export_representations(client, path) -> None:
    """Write ``label,r1,...,r_d`` for every test sample of ``client``."""
    reps = np.atleast_2d(extract_representation(client.model, client.test.features))
    try:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            for y, row in zip(client.test.labels, reps):
                fh.write(",".join([str(int(y))] + [repr(float(v)) for v in row]) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write representations to {path}: {exc}") from exc
