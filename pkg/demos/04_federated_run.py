"""
A federated run
===============

Ten clients with five different model widths share one low-rank adapter.
Compare the two-phase iterative protocol with purely local training.
"""
from hetlora import ExperimentConfig, TrainMode, run_experiment

base = ExperimentConfig(rounds=20)
for k in range(5):
    spec = base.model_for(k)
    print(f"model {k}: extractor {spec.extractor_widths}  head {spec.head_widths}")

for mode in (TrainMode.ITERATIVE, TrainMode.SIMULTANEOUS, TrainMode.STANDALONE):
    log = run_experiment(base.replace(mode=mode))
    s = log.summary
    print(f"{mode.value:13s} final accuracy {s['final_avg_accuracy']:.4f}  "
          f"train loss {s['final_mean_train_loss']:.4f}  comm {s['cum_comm_params']}")

# per-round progress of the iterative run
log = run_experiment(base)
for r in log.rounds[::5]:
    print(f"round {r.round:2d}: accuracy {r.avg_accuracy:.3f}  loss {r.mean_train_loss:.4f}")
