# # Changing the number of discs
#
# A permutational network has no weight tied to the object count, so a model
# trained on 4 discs can be run on 12. Whether its predictions are any good
# there depends on the pooling. With average pooling each interaction is
# diluted by 1/N; max pooling keeps the nearest, strongest interaction.
#
# The budget here is tiny (200 trajectories, 3000 steps, width 32), so both
# variants are still close to each other. The gap opens at desk scale; see
# criterion 5 of `pytest tests/test_acceptance.py`.

from permdyn.models import ModelConfig, build_model
from permdyn.sim import SimConfig
from permdyn.train import EVAL_SEED_OFFSET, TrainConfig, generalization_matrix, make_dataset, train

train_set = make_dataset(SimConfig(n_discs=4), 200, 0, "train")
tests = {n: make_dataset(SimConfig(n_discs=n), 20, EVAL_SEED_OFFSET, "eval")
         for n in (2, 4, 8, 12)}
cfg = TrainConfig(batch_size=32, total_steps=3000, eval_every=1000, eval_samples=1024)


# ## Train both pooling variants on 4 discs

models = {}
for kind in ("Perm-Skip-3,4", "Perm-Skip-3,4-Max"):
    model = build_model(ModelConfig(kind, hidden_width=32))
    train(model, train_set, cfg, tests[4])
    models[kind] = model


# ## Test on 2 to 12 discs
#
# Rows are the training count, columns the test count.

for kind, model in models.items():
    table = generalization_matrix({4: model}, tests)
    print(kind)
    print("  " + "  ".join(f"{n:>6d}" for n in table.test_counts))
    print("  " + "  ".join(f"{v:.4f}" for v in table.mse[0]))
