# # Closed-loop rollout
#
# Feed the model its own prediction as the next input. Accuracy drifts away
# from the true trajectory, but a good model should keep the discs from
# passing through each other.

import numpy as np

from permdyn.models import ModelConfig, build_model
from permdyn.sim import SimConfig, generate_trajectory, pair_penetration
from permdyn.train import EVAL_SEED_OFFSET, TrainConfig, make_dataset, rollout, train

sim = SimConfig(n_discs=8)
train_set = make_dataset(sim, 200, 0, "train")
model = build_model(ModelConfig("Perm-Skip-3,4-Max", hidden_width=32))
train(model, train_set, TrainConfig(batch_size=32, total_steps=3000, eval_every=1000))


# ## Roll out 40 predictions from an unseen starting state
#
# Each prediction jumps 10 simulator steps, so 40 predictions cover the same
# time as 400 recorded steps.

truth = generate_trajectory(sim, EVAL_SEED_OFFSET)
res = rollout(model, truth.state(0), 40)
states = res.trajectory.states
print("finite:", bool(np.all(np.isfinite(states))))

for k in (0, 10, 20, 40):
    err = np.mean((states[k] - truth.states[10 * k]) ** 2)
    pen = pair_penetration(states[k][:, :2], res.trajectory.radii)
    print(f"prediction {k:2d}  MSE vs truth {err:.4f}  deepest overlap {pen.max():.3f}")
