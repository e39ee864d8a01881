"""
Communication and computation
=============================

Only the adapter crosses the network, so traffic scales with its size
rather than the clients' models. Training cost is counted in FLOPs.
"""
from hetlora import ExperimentConfig, TrainMode, seeding
from hetlora.adapter import spec_param_count
from hetlora.metrics import communication_cost_per_round, per_sample_training_flops
from hetlora.model import build_model, model_param_count

cfg = ExperimentConfig()
k = cfg.sampled_per_round
adapter_size = spec_param_count(cfg.adapter)
print("adapter parameters:", adapter_size)
print(f"per round (down + up, K={k}):", communication_cost_per_round(k, adapter_size))

for i, spec in enumerate(cfg.models):
    model = build_model(spec, seeding.rng_for(0, seeding.MODEL, i))
    flops = {m.value: per_sample_training_flops(model, cfg.adapter, m)
             for m in (TrainMode.ITERATIVE, TrainMode.SIMULTANEOUS, TrainMode.STANDALONE)}
    print(f"model {i}: {model_param_count(model):6d} params, "
          f"FedAvg would send {communication_cost_per_round(k, model_param_count(model))} per round; "
          f"FLOPs/sample {flops}")
