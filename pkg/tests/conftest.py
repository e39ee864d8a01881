import numpy as np
import pytest

from hetlora.adapter import AdapterMode, AdapterSpec
from hetlora.config import DataConfig, ExperimentConfig, RoundConfig, TrainMode
from hetlora.model import ModelSpec
from hetlora.nn import Activation, DenseLayer, DenseStack, stack_forward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stack(rng, widths, final=Activation.IDENTITY, scale=1.0):
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = final if i == len(widths) - 2 else Activation.RELU
        layers.append(DenseLayer(scale * rng.normal(size=(a, b)), scale * rng.normal(size=b), act))
    return DenseStack(layers)


def push_off_kinks(stack, x, margin=0.05):
    """Shift biases so every ReLU pre-activation for ``x`` sits at least ``margin`` from 0."""
    for _ in range(len(stack.layers) + 1):
        _, cache = stack_forward(stack, x)
        moved = False
        for layer, z in zip(stack.layers, cache.preacts):
            if layer.activation is not Activation.RELU:
                continue
            z = z[0]
            close = np.abs(z) < margin
            if close.any():
                layer.bias[close] += np.where(z[close] >= 0, 2 * margin, -2 * margin)
                moved = True
                break
        if not moved:
            return stack
    return stack


def tiny_config(**overrides):
    """Small, fast experiment: 6 classes, dim 5, rep 6."""
    models = (
        ModelSpec((5, 8, 6), (6, 10, 6)),
        ModelSpec((5, 4, 6), (6, 7, 6)),
        ModelSpec((5, 8, 6), (6, 6)),
    )
    base = dict(
        rounds=3,
        clients=4,
        participation=1.0,
        mode=TrainMode.ITERATIVE,
        seed=7,
        classes_per_client=2,
        round=RoundConfig(local_epochs=1, batch_size=8, lr_model=0.05, lr_adapter=0.05, mu=0.8),
        adapter=AdapterSpec(AdapterMode.MATRIX_DECOMPOSITION, 6, 3, 6, 0.1),
        models=models,
        data=DataConfig("synthetic", num_classes=6, dim=5, per_class=40, separation=6.0),
    )
    base.update(overrides)
    return ExperimentConfig(**base).validate()
