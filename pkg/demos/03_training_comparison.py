# # Dense versus permutational networks
#
# Every architecture gets the same data: the state of 8 discs now, and their
# state 10 simulator steps later. This demo trains a small version of the
# comparison in about a minute. The full desk-scale numbers come from
# `pytest tests/test_acceptance.py` and are cached in `.permdyn_cache/`.

import json
from pathlib import Path

import numpy as np

from permdyn.models import KINDS, ModelConfig, build_model
from permdyn.sim import SimConfig
from permdyn.train import EVAL_SEED_OFFSET, TrainConfig, evaluate, make_dataset, train

sim = SimConfig(n_discs=8)
train_set = make_dataset(sim, 100, 0, "train")
eval_set = make_dataset(sim, 20, EVAL_SEED_OFFSET, "eval")


# ## Doing nothing
#
# Predicting "no change" sets the scale for every error below.

x, y = eval_set.batch(np.arange(len(eval_set)))
print("identity predictor MSE:", np.mean((x[..., :4] - y) ** 2))


# ## A short run of each architecture

cfg = TrainConfig(batch_size=32, total_steps=1500, eval_every=500, eval_samples=1024)
for kind in KINDS:
    width = 256 if KINDS[kind][0] == "dense" else 32
    model = build_model(ModelConfig(kind, n_objects=8, hidden_width=width))
    train(model, train_set, cfg, eval_set)
    print(f"{kind:18s} params {model.n_params:7d}  eval MSE {evaluate(model, eval_set):.4f}")


# ## Desk-scale results, if they have been computed

for path in sorted(Path(".permdyn_cache").glob("*.json")):
    rec = json.loads(path.read_text())
    if rec.get("spec", {}).get("experiment") == "single":
        print(f"{rec['kind']:18s} {rec['n_discs']:2d} discs  trailing eval MSE "
              f"{rec['trailing_eval_mse']:.4f}")
