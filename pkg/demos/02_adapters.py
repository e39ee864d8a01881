"""
Low-rank adapters
=================

The shared adapter maps a representation to class logits through a
rank-r bottleneck. Its second layer starts at zero, so before any
training it predicts uniform probabilities for every input.
"""
import math

import numpy as np

from hetlora.adapter import (
    adapter_forward,
    build_adapter,
    shape_direct_reduction,
    shape_matrix_decomposition,
    spec_param_count,
)
from hetlora.nn import cross_entropy, dense_param_count

rng = np.random.default_rng(1)

# matrix decomposition: a purely linear d -> r -> C factorisation
spec = shape_matrix_decomposition(500, 10, 20)
adapter = build_adapter(spec, rng)
print("matrix decomposition 500 -> 20 -> 10:", spec_param_count(spec), "parameters")
print("a dense 500 x 10 layer would need", dense_param_count(500, 10))

reps = rng.normal(size=(6, 500))
logits = adapter_forward(adapter, reps)
print("fresh adapter logits all zero:", not logits.any())
print("loss on every sample:", cross_entropy(logits, np.arange(6) % 10), " ln 10 =", math.log(10))

# direct reduction keeps a ReLU in the bottleneck
for r in (4, 8, 16):
    s = shape_direct_reduction((50, 10), r)
    print(f"direct reduction r={r:2d}: {spec_param_count(s)} parameters")
