"""
Label-skewed clients
====================

Generate Gaussian blobs, hand each client two classes and split every
client's samples 8:1:1 into train, validation and test.
"""
import numpy as np

from hetlora.data import generate_synthetic, partition_noniid, split_811

ds = generate_synthetic(num_classes=10, dim=20, per_class=200, separation=8.0,
                        rng=np.random.default_rng(0))
print("dataset:", len(ds), "samples,", ds.dim, "features,", ds.num_classes, "classes")

plan = partition_noniid(ds, n_clients=10, classes_per_client=2, rng=np.random.default_rng(1))
for k, (classes, idx) in enumerate(zip(plan.client_classes, plan.client_indices)):
    tr, va, te = split_811(idx, ds.labels, np.random.default_rng(100 + k), client_id=k)
    counts = np.bincount(ds.labels[idx], minlength=10)[list(classes)]
    print(f"client {k}: classes {classes} counts {counts.tolist()} "
          f"split {tr.size}/{va.size}/{te.size}")
