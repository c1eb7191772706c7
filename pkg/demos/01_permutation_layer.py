# # The permutational layer
#
# A permutational layer maps a set of N objects to N outputs. Output i pools
# an inner network applied to every pair (x_i, x_j), so reordering the
# objects reorders the outputs the same way and nothing else changes.

import numpy as np

from permdyn.perm import PermLayer, PermLayerConfig, pair_expand

rng = np.random.default_rng(0)


# ## Pairs
#
# For three objects with two features each, row i*N + j of the pair tensor
# holds the concatenation [x_i, x_j]. The self-pair (i, i) is included.

x = np.arange(6.0).reshape(3, 2)
print(pair_expand(x))


# ## A layer with its own parameter vector
#
# Layers do not own storage. They bind views into one flat parameter array,
# which is what the optimizer and the checkpoint format see.

layer = PermLayer(PermLayerConfig(n_in=4, n_out=8, inner_widths=(32, 32), pooling="average"))
params = np.zeros(layer.n_params)
grads = np.zeros(layer.n_params)
layer.bind(params, grads, 0)
layer.init_uniform(rng)
print("parameters:", layer.n_params)


# ## Equivariance
#
# Shuffle the objects, run the layer, and compare with the shuffled output.

x = rng.standard_normal((6, 4))
y, _ = layer.forward(x)
for _ in range(5):
    perm = rng.permutation(6)
    y_perm, _ = layer.forward(x[perm])
    print("max deviation:", np.max(np.abs(y_perm - y[perm])))


# ## Any number of objects
#
# The weights do not depend on N, so the same layer runs on 1 or 50 objects.

for n in (1, 2, 12, 50):
    print(n, layer.forward(rng.standard_normal((n, 4)))[0].shape)


# ## Pooling modes
#
# Average pooling hides the object count, sum pooling exposes it, and max
# pooling keeps the strongest single interaction per feature.

for mode in ("average", "sum", "max"):
    lay = PermLayer(PermLayerConfig(4, 8, (32,), mode))
    p = np.zeros(lay.n_params)
    lay.bind(p, np.zeros_like(p), 0)
    lay.init_uniform(np.random.default_rng(1))
    one = rng.standard_normal((1, 4))
    twice = np.repeat(one, 2, axis=0)
    a, b = lay.forward(one)[0], lay.forward(twice)[0]
    print(f"{mode:8s} duplicating the only object changes output by {np.max(np.abs(a - b[:1])):.3g}")
