"""Train a small FGNN to predict MAP assignments on budget-constrained chains.

Labels are exact MAP assignments.  The trained model is compared with
loopy max-sum on held-out instances.  This is a scaled-down run; the full
setting uses 2000 instances, hidden 64 and 100 epochs.
"""
from fgnn.datasets import gen_synthetic_dataset
from fgnn.nn import ModelConfig
from fgnn.training import OptimConfig, evaluate_model, feature_sizes, maxsum_accuracy, train_map_model

train = gen_synthetic_dataset("D1", 200, seed=1, n=10, window=6, k=3)
test = gen_synthetic_dataset("D1", 100, seed=2, n=10, window=6, k=3)

vi, fi, ei = feature_sizes()
cfg = ModelConfig(var_in=vi, fac_in=fi, edge_in=ei, hidden=32, num_layers=3, aggregator="max")
res = train_map_model(train, cfg, OptimConfig(epochs=20, batch_size=50, lr=3e-3, seed=0), test=test,
                      log=lambda m: print(f"epoch {m.epoch:3d}  loss {m.train_loss:.4f}  test acc {m.eval_accuracy:.4f}"))

print(f"loss {res.initial_loss:.4f} -> {res.final_loss:.4f}")
print(f"per-variable agreement with exact MAP: FGNN {evaluate_model(res.model, test):.4f}, "
      f"max-sum {maxsum_accuracy(test):.4f}")
