# # Telling discs apart with labels
#
# Eight small discs (r = 0.1) share the box with four large ones (r = 0.2).
# The network only sees positions and velocities, so it cannot tell which
# disc is which. Appending a fixed random 2-vector to each disc gives it a
# handle it can learn to associate with size.
#
# With the short budget used here neither model has learned much beyond the
# average motion, so the two numbers are close. The desk-scale comparison is
# criterion 6 of `pytest tests/test_acceptance.py`.

import numpy as np

from permdyn.train import HeteroConfig, TrainConfig, heterogeneous_experiment

cfg = HeteroConfig(hidden_width=32, train=TrainConfig(
    n_train_traj=200, eval_traj=20, total_steps=3000, eval_every=500, eval_samples=1024))
out = heterogeneous_experiment(cfg)

print("labels:")
print(np.round(out["labels"], 3))
print("unlabelled eval MSE:", round(out["mse_unlabeled"], 4))
print("labelled eval MSE:  ", round(out["mse_labeled"], 4))
