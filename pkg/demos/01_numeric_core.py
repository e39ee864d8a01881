"""
Dense layers, backprop and a gradient check
===========================================

Build a small ReLU stack, push one sample through it and compare the
analytic gradient with central finite differences.
"""
import numpy as np

from hetlora.nn import build_stack, cross_entropy, grad_check, param_count, stack_forward

rng = np.random.default_rng(0)

# 8 inputs, two hidden layers, 4 classes
stack = build_stack([8, 16, 12, 4], rng)
print("layer widths:", stack.widths, " parameters:", param_count(stack))

x = rng.normal(size=8)
logits, _ = stack_forward(stack, x)
print("logits:", np.round(logits, 4))
print("loss for label 2:", cross_entropy(logits, 2))

# the same forward pass works on a batch of rows
batch = rng.normal(size=(5, 8))
print("batch logits shape:", stack_forward(stack, batch)[0].shape)

# relative error between backprop and finite differences
err = grad_check(stack, x, 2)
print(f"max relative gradient error: {err:.2e}")
