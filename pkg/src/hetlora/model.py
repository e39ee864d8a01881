"""Heterogeneous client models: a dense extractor feeding a dense head.

Every client shares the representation width ``rep_dim`` at the
extractor/head boundary; interior widths may differ freely. That boundary
is where the shared low-rank adapter attaches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import Activation, DenseStack, build_stack, forward_flops, param_count, stack_forward


@dataclass(frozen=True)
class ModelSpec:
    extractor_widths: tuple[int, ...]
    head_widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "extractor_widths", tuple(int(w) for w in self.extractor_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))

    @property
    def input_dim(self) -> int:
        return self.extractor_widths[0]

    @property
    def rep_dim(self) -> int:
        return self.extractor_widths[-1]

    @property
    def num_classes(self) -> int:
        return self.head_widths[-1]

    def violations(self) -> list[str]:
        out = []
        if len(self.extractor_widths) < 2:
            out.append(f"extractor needs >= 2 widths, got {list(self.extractor_widths)}")
        if len(self.head_widths) < 2:
            out.append(f"head needs >= 2 widths, got {list(self.head_widths)}")
        if any(w < 1 for w in self.extractor_widths + self.head_widths):
            out.append("all model widths must be >= 1")
        if self.extractor_widths and self.head_widths and self.extractor_widths[-1] != self.head_widths[0]:
            out.append(
                f"extractor output {self.extractor_widths[-1]} != head input {self.head_widths[0]} (rep_dim)"
            )
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigError(problems)


@dataclass
class HeteroModel:
    extractor: DenseStack
    head: DenseStack
    spec: ModelSpec

    def __post_init__(self):
        if self.extractor.d_out != self.head.d_in:
            raise ConfigError("extractor output and head input disagree")

    def copy(self) -> "HeteroModel":
        return HeteroModel(self.extractor.copy(), self.head.copy(), self.spec)

    def full_stack(self) -> DenseStack:
        """Extractor and head as one stack (layers shared, not copied)."""
        return self.extractor + self.head


def build_model(spec: ModelSpec, rng: np.random.Generator) -> HeteroModel:
    spec.validate()
    # ReLU on the representation so the full model is a plain ReLU MLP.
    extractor = build_stack(spec.extractor_widths, rng, final_activation=Activation.RELU)
    head = build_stack(spec.head_widths, rng)
    return HeteroModel(extractor, head, spec)


def extract_representation(model: HeteroModel, x) -> np.ndarray:
    return stack_forward(model.extractor, x)[0]


def head_forward(model: HeteroModel, rep) -> np.ndarray:
    return stack_forward(model.head, rep)[0]


def model_param_count(model: HeteroModel) -> int:
    return param_count(model.extractor) + param_count(model.head)


def model_flops_per_sample(model: HeteroModel) -> int:
    """Forward FLOPs for one sample; backward is counted as twice this."""
    return forward_flops(model.extractor) + forward_flops(model.head)


def scaled_model_family(input_dim: int, num_classes: int, rep_dim: int = 50,
                        scale: int = 10) -> list[ModelSpec]:
    """Five dense analogues of a CNN family whose FC1 widths are 2000/2000/1000/800/500.

    Head first widths are those sizes divided by ``scale``; the extractor's
    hidden width halves for the second model, echoing its thinner conv stack.
    """
    fc1 = [2000, 2000, 1000, 800, 500]
    conv = [64, 32, 64, 64, 64]
    return [
        ModelSpec((input_dim, c, rep_dim), (rep_dim, f // scale, num_classes))
        for f, c in zip(fc1, conv)
    ]
