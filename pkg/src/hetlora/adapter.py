"""Homogeneous low-rank adapter attached at the representation.

Two structural variants share the same ``rep_dim -> hidden_dim -> num_classes``
shape: direct reduction keeps a ReLU between its layers, matrix
decomposition is purely linear. The first layer is drawn from N(0, sigma^2)
and the second starts at exactly zero, so a fresh adapter outputs zeros.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import Activation, DenseLayer, DenseStack, stack_forward


class AdapterMode(enum.Enum):
    DIRECT_REDUCTION = "direct_reduction"
    MATRIX_DECOMPOSITION = "matrix_decomposition"


@dataclass(frozen=True)
class AdapterSpec:
    mode: AdapterMode
    rep_dim: int
    hidden_dim: int
    num_classes: int
    init_sigma: float = 0.01

    def violations(self) -> list[str]:
        out = []
        if self.hidden_dim < 1:
            out.append(f"adapter hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.hidden_dim >= self.rep_dim:
            out.append(
                f"adapter hidden_dim {self.hidden_dim} must be < rep_dim {self.rep_dim} (low-rank)"
            )
        if self.num_classes < 2:
            out.append(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.init_sigma > 0:
            out.append(f"adapter init_sigma must be positive, got {self.init_sigma}")
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigError(problems)


@dataclass
class LowRankAdapter:
    layer_a: DenseLayer
    layer_b: DenseLayer
    mode: AdapterMode

    def __post_init__(self):
        self.stack = DenseStack([self.layer_a, self.layer_b])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.layer_a.d_in, self.layer_a.d_out, self.layer_b.d_out)

    def copy(self) -> "LowRankAdapter":
        return LowRankAdapter(self.layer_a.copy(), self.layer_b.copy(), self.mode)

    def parameters(self) -> list[np.ndarray]:
        return self.stack.parameters()


def build_adapter(spec: AdapterSpec, rng: np.random.Generator) -> LowRankAdapter:
    spec.validate()
    hidden_act = Activation.RELU if spec.mode is AdapterMode.DIRECT_REDUCTION else Activation.IDENTITY
    a = DenseLayer(
        rng.normal(0.0, spec.init_sigma, size=(spec.rep_dim, spec.hidden_dim)),
        np.zeros(spec.hidden_dim),
        hidden_act,
    )
    b = DenseLayer(np.zeros((spec.hidden_dim, spec.num_classes)), np.zeros(spec.num_classes))
    return LowRankAdapter(a, b, spec.mode)


def adapter_forward(adapter: LowRankAdapter, rep) -> np.ndarray:
    return stack_forward(adapter.stack, rep)[0]


def shape_direct_reduction(head_fc_dims: tuple[int, int], r: int, init_sigma: float = 0.01) -> AdapterSpec:
    """Adapter mirroring the last two FC layers, the first reduced to width ``r``."""
    d_in, d_out = head_fc_dims
    spec = AdapterSpec(AdapterMode.DIRECT_REDUCTION, d_in, r, d_out, init_sigma)
    spec.validate()
    return spec


def shape_matrix_decomposition(rep_dim: int, num_classes: int, r: int,
                               init_sigma: float = 0.01) -> AdapterSpec:
    spec = AdapterSpec(AdapterMode.MATRIX_DECOMPOSITION, rep_dim, r, num_classes, init_sigma)
    spec.validate()
    return spec


def spec_param_count(spec: AdapterSpec) -> int:
    d, r, c = spec.rep_dim, spec.hidden_dim, spec.num_classes
    return d * r + r + r * c + c


def adapter_param_count(adapter: LowRankAdapter) -> int:
    return sum(p.size for p in adapter.parameters())


def check_compatible(adapter: LowRankAdapter, other: LowRankAdapter) -> None:
    if adapter.shape != other.shape or adapter.mode is not other.mode:
        raise ConfigError(
            f"adapter mismatch: {adapter.mode.value}{adapter.shape} vs {other.mode.value}{other.shape}"
        )
