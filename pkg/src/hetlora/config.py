"""Experiment configuration: dataclasses, validation, and the flat key-value file format.

The file format is one ``section.key = value`` per line, ``#`` comments,
blank lines ignored. Model specs are numbered: ``model.0.extractor = 20,64,50``.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

from .adapter import AdapterMode, AdapterSpec
from .errors import ConfigError
from .model import ModelSpec, scaled_model_family


class TrainMode(enum.Enum):
    ITERATIVE = "iterative"
    SIMULTANEOUS = "simultaneous"
    STANDALONE = "standalone"
    HOMOGENEOUS_FEDAVG = "homogeneous_fedavg"


@dataclass(frozen=True)
class RoundConfig:
    local_epochs: int = 1
    batch_size: int = 32
    lr_model: float = 0.01
    lr_adapter: float = 0.01
    mu: float = 0.9

    def violations(self) -> list[str]:
        out = []
        if self.local_epochs < 1:
            out.append(f"round.local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            out.append(f"round.batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_model > 0:
            out.append(f"round.lr_model must be positive, got {self.lr_model}")
        if not self.lr_adapter > 0:
            out.append(f"round.lr_adapter must be positive, got {self.lr_adapter}")
        if not 0.5 <= self.mu < 1:
            out.append(f"mu must lie in [0.5, 1), got {self.mu}")
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_classes: int = 10
    dim: int = 20
    per_class: int = 200
    separation: float = 8.0
    path: str = ""


def sampled_count(n_clients: int, participation: float) -> int:
    # Guard against 0.29 * 100 == 28.999999999999996.
    return int(math.floor(participation * n_clients + 1e-9))


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int = 50
    clients: int = 10
    participation: float = 1.0
    mode: TrainMode = TrainMode.ITERATIVE
    seed: int = 0
    # Where results go, not what the experiment is: excluded from equality.
    out_dir: str = field(default="runs/default", compare=False)
    classes_per_client: int = 2
    round: RoundConfig = field(default_factory=RoundConfig)
    adapter: AdapterSpec = field(
        default_factory=lambda: AdapterSpec(AdapterMode.MATRIX_DECOMPOSITION, 50, 8, 10, 0.01)
    )
    models: tuple[ModelSpec, ...] = field(default_factory=lambda: tuple(scaled_model_family(20, 10)))
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def sampled_per_round(self) -> int:
        return sampled_count(self.clients, self.participation)

    def model_for(self, client_id: int) -> ModelSpec:
        return self.models[client_id % len(self.models)]

    def violations(self) -> list[str]:
        out = []
        if self.rounds < 1:
            out.append(f"experiment.rounds must be >= 1, got {self.rounds}")
        if self.clients < 1:
            out.append(f"experiment.clients must be >= 1, got {self.clients}")
        if not 0 < self.participation <= 1:
            out.append(f"experiment.participation must lie in (0, 1], got {self.participation}")
        elif self.clients >= 1 and self.sampled_per_round < 1:
            out.append(
                f"floor(participation * clients) = 0 for participation={self.participation}, clients={self.clients}"
            )
        if self.seed < 0:
            out.append(f"experiment.seed must be >= 0, got {self.seed}")
        out.extend(self.round.violations())
        out.extend(self.adapter.violations())
        if not self.models:
            out.append("at least one model spec is required")
        for i, spec in enumerate(self.models):
            out.extend(f"model.{i}: {msg}" for msg in spec.violations())
        reps = {m.rep_dim for m in self.models}
        classes = {m.num_classes for m in self.models}
        if len(reps) > 1:
            out.append(f"all models must share rep_dim, got {sorted(reps)}")
        elif reps and reps != {self.adapter.rep_dim}:
            out.append(f"adapter.rep_dim {self.adapter.rep_dim} != model rep_dim {reps.pop()}")
        if len(classes) > 1:
            out.append(f"all models must share num_classes, got {sorted(classes)}")
        elif classes and classes != {self.adapter.num_classes}:
            out.append(
                f"adapter.num_classes {self.adapter.num_classes} != model num_classes {next(iter(classes))}"
            )
        if self.mode is TrainMode.HOMOGENEOUS_FEDAVG and len(set(self.models)) > 1:
            out.append("homogeneous_fedavg mode requires identical model specs for all clients")
        if self.data.source == "synthetic":
            d = self.data
            if min(d.num_classes, d.dim, d.per_class) < 1:
                out.append("data.num_classes, data.dim and data.per_class must be >= 1")
            if not d.separation > 0:
                out.append(f"data.separation must be positive, got {d.separation}")
            if self.models and any(m.num_classes != d.num_classes for m in self.models):
                out.append(f"model num_classes must equal data.num_classes {d.num_classes}")
            if self.models and any(m.input_dim != d.dim for m in self.models):
                out.append(f"model input width must equal data.dim {d.dim}")
            if not 1 <= self.classes_per_client <= d.num_classes:
                out.append(
                    f"experiment.classes_per_client must lie in [1, {d.num_classes}], got {self.classes_per_client}"
                )
        elif self.data.source == "csv":
            if not self.data.path:
                out.append("data.path is required when data.source = csv")
            if self.classes_per_client < 1:
                out.append(f"experiment.classes_per_client must be >= 1, got {self.classes_per_client}")
        else:
            out.append(f"data.source must be 'synthetic' or 'csv', got {self.data.source!r}")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.violations()
        if problems:
            raise ConfigError(problems)
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SCALAR_KEYS = {
    "experiment.rounds": int,
    "experiment.clients": int,
    "experiment.participation": float,
    "experiment.mode": TrainMode,
    "experiment.seed": int,
    "experiment.out_dir": str,
    "experiment.classes_per_client": int,
    "round.local_epochs": int,
    "round.batch_size": int,
    "round.lr_model": float,
    "round.lr_adapter": float,
    "round.mu": float,
    "adapter.mode": AdapterMode,
    "adapter.hidden_dim": int,
    "adapter.init_sigma": float,
    "adapter.rep_dim": int,
    "adapter.num_classes": int,
    "data.source": str,
    "data.num_classes": int,
    "data.dim": int,
    "data.per_class": int,
    "data.separation": float,
    "data.path": str,
}


def _parse_widths(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def read_config_values(text: str, source: str = "<config>") -> tuple[dict, list[ModelSpec]]:
    """Typed key-values and model specs from config text, before defaults and validation."""
    problems: list[str] = []
    values: dict[str, object] = {}
    models: dict[int, dict[str, tuple[int, ...]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "model" and parts[2] in ("extractor", "head"):
            try:
                idx = int(parts[1])
                models.setdefault(idx, {})[parts[2]] = _parse_widths(value)
            except ValueError:
                problems.append(f"{source}:{lineno}: bad model entry {key} = {value!r}")
            continue
        if key not in _SCALAR_KEYS:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _SCALAR_KEYS[key](value)
        except ValueError:
            problems.append(f"{source}:{lineno}: invalid value for {key}: {value!r}")
    model_specs: list[ModelSpec] = []
    if models:
        if sorted(models) != list(range(len(models))):
            problems.append(f"model indices must be 0..{len(models) - 1}, got {sorted(models)}")
        for idx in sorted(models):
            entry = models[idx]
            if set(entry) != {"extractor", "head"}:
                problems.append(f"model.{idx} needs both extractor and head widths")
                continue
            model_specs.append(ModelSpec(entry["extractor"], entry["head"]))
    if problems:
        raise ConfigError(problems)
    return values, model_specs


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate; every problem found is reported together."""
    values, model_specs = read_config_values(text, source)
    return build_config(values, model_specs)


def build_config(values: dict, model_specs=()) -> ExperimentConfig:
    """Layer parsed key-values over the built-in defaults, then validate."""
    defaults = ExperimentConfig()
    v = dict(values)
    data = DataConfig(
        source=v.pop("data.source", defaults.data.source),
        num_classes=v.pop("data.num_classes", defaults.data.num_classes),
        dim=v.pop("data.dim", defaults.data.dim),
        per_class=v.pop("data.per_class", defaults.data.per_class),
        separation=v.pop("data.separation", defaults.data.separation),
        path=v.pop("data.path", defaults.data.path),
    )
    specs = tuple(model_specs) or tuple(scaled_model_family(data.dim, data.num_classes))
    rnd = RoundConfig(
        local_epochs=v.pop("round.local_epochs", defaults.round.local_epochs),
        batch_size=v.pop("round.batch_size", defaults.round.batch_size),
        lr_model=v.pop("round.lr_model", defaults.round.lr_model),
        lr_adapter=v.pop("round.lr_adapter", defaults.round.lr_adapter),
        mu=v.pop("round.mu", defaults.round.mu),
    )
    adapter = AdapterSpec(
        mode=v.pop("adapter.mode", defaults.adapter.mode),
        rep_dim=v.pop("adapter.rep_dim", specs[0].rep_dim),
        hidden_dim=v.pop("adapter.hidden_dim", defaults.adapter.hidden_dim),
        num_classes=v.pop("adapter.num_classes", specs[0].num_classes),
        init_sigma=v.pop("adapter.init_sigma", defaults.adapter.init_sigma),
    )
    cfg = ExperimentConfig(
        rounds=v.pop("experiment.rounds", defaults.rounds),
        clients=v.pop("experiment.clients", defaults.clients),
        participation=v.pop("experiment.participation", defaults.participation),
        mode=v.pop("experiment.mode", defaults.mode),
        seed=v.pop("experiment.seed", defaults.seed),
        out_dir=v.pop("experiment.out_dir", defaults.out_dir),
        classes_per_client=v.pop("experiment.classes_per_client", defaults.classes_per_client),
        round=rnd,
        adapter=adapter,
        models=specs,
        data=data,
    )
    if v:
        raise ConfigError([f"unknown key {k!r}" for k in sorted(v)])
    return cfg.validate()


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def format_config(cfg: ExperimentConfig, include_out_dir: bool = True) -> str:
    """Render every setting, so the text parses back to an equal config."""
    lines = [
        f"experiment.rounds = {cfg.rounds}",
        f"experiment.clients = {cfg.clients}",
        f"experiment.participation = {cfg.participation!r}",
        f"experiment.mode = {cfg.mode.value}",
        f"experiment.seed = {cfg.seed}",
        f"experiment.classes_per_client = {cfg.classes_per_client}",
        f"round.local_epochs = {cfg.round.local_epochs}",
        f"round.batch_size = {cfg.round.batch_size}",
        f"round.lr_model = {cfg.round.lr_model!r}",
        f"round.lr_adapter = {cfg.round.lr_adapter!r}",
        f"round.mu = {cfg.round.mu!r}",
        f"adapter.mode = {cfg.adapter.mode.value}",
        f"adapter.rep_dim = {cfg.adapter.rep_dim}",
        f"adapter.hidden_dim = {cfg.adapter.hidden_dim}",
        f"adapter.num_classes = {cfg.adapter.num_classes}",
        f"adapter.init_sigma = {cfg.adapter.init_sigma!r}",
        f"data.source = {cfg.data.source}",
        f"data.num_classes = {cfg.data.num_classes}",
        f"data.dim = {cfg.data.dim}",
        f"data.per_class = {cfg.data.per_class}",
        f"data.separation = {cfg.data.separation!r}",
        f"data.path = {cfg.data.path}",
    ]
    if include_out_dir:
        lines.insert(5, f"experiment.out_dir = {cfg.out_dir}")
    for i, spec in enumerate(cfg.models):
        lines.append(f"model.{i}.extractor = {','.join(map(str, spec.extractor_widths))}")
        lines.append(f"model.{i}.head = {','.join(map(str, spec.head_widths))}")
    return "\n".join(lines) + "\n"


def write_config(cfg: ExperimentConfig, path, include_out_dir: bool = True) -> None:
    Path(path).write_text(format_config(cfg, include_out_dir), encoding="utf-8")
