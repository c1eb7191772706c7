"""Permutational layer.

For a set of objects ``x_1..x_N`` the layer computes, for every ordered pair
(including the self-pair ``j == i``), an inner dense network ``f(x_i, x_j)``
on the concatenated features, then pools over the second index::

    average:  y_i = (1/N) sum_j f(x_i, x_j)
    sum:      y_i = sum_j f(x_i, x_j)
    max:      y_i = max_j f(x_i, x_j)      (elementwise)

The same weights are used for every pair, so the output rows permute exactly
as the input rows do.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .tensor import MLP, Linear, ShapeError, relu, relu_backward

POOLING_MODES = ("average", "sum", "max")


def pair_expand(x) -> np.ndarray:
    """All ordered pairs of rows, concatenated: row ``i*N + j`` is ``[x_i, x_j]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected [n_objects, n_features], got {x.shape}")
    n, f = x.shape
    if n < 1:
        raise ValueError("cannot expand an empty object set")
    left = np.repeat(x, n, axis=0)
    right = np.tile(x, (n, 1))
    return np.concatenate([left, right], axis=1)


@dataclass(frozen=True)
class PermLayerConfig:
    n_in: int
    n_out: int
    inner_widths: tuple = ()
    pooling: str = "average"
    # ReLU on the inner network's output; off for a network's final layer
    out_relu: bool = True

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("n_in and n_out must be >= 1")
        if self.pooling not in POOLING_MODES:
            raise ValueError(
                f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        object.__setattr__(self, "inner_widths", tuple(self.inner_widths))


@dataclass
class PermCache:
    layer_id: int
    x: np.ndarray
    h1: np.ndarray        # first-layer pre-activation, [B, N, N, H1]
    tail: list            # caches of the remaining inner layers
    argmax: np.ndarray | None
    pair_out_shape: tuple
    squeeze: bool
    consumed: bool = False


_layer_ids = itertools.count()


class PermLayer:
    """Permutational layer over inputs of shape ``[N, n_in]`` or ``[B, N, n_in]``.

    The first inner layer is evaluated on the concatenation ``[x_i, x_j]`` by
    splitting its weight matrix into the ``x_i`` and ``x_j`` halves, so the
    N^2 pair rows are never materialized for that layer.
    """

    def __init__(self, config: PermLayerConfig):
        self.config = config
        widths = [2 * config.n_in, *config.inner_widths, config.n_out]
        self.first = Linear(widths[0], widths[1])
        self.tail = MLP(widths[1:], out_relu=config.out_relu) if len(widths) > 2 else None
        self._id = next(_layer_ids)

    @property
    def linears(self) -> list:
        return [self.first] + (self.tail.layers if self.tail else [])

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.linears)

    def bind(self, params, grads, offset: int) -> int:
        for layer in self.linears:
            offset = layer.bind(params, grads, offset)
        return offset

    def init_uniform(self, rng) -> None:
        for layer in self.linears:
            layer.init_uniform(rng)

    def _first_relu(self) -> bool:
        return self.tail is not None or self.config.out_relu

    def forward(self, x):
        """Return ``(y, cache)`` with ``y`` shaped like ``x`` but ``n_out`` features wide."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.config.n_in:
            raise ShapeError(
                f"expected [..., N, {self.config.n_in}] input, got {x.shape}")
        B, N, F = x.shape
        if N < 1:
            raise ValueError("cannot apply a permutational layer to an empty set")
        W = self.first.W
        a = x @ W[:F]                 # x_i contribution
        c = x @ W[F:] + self.first.b  # x_j contribution
        h1 = a[:, :, None, :] + c[:, None, :, :]
        h = relu(h1) if self._first_relu() else h1
        tail_cache = None
        if self.tail is not None:
            flat, tail_cache = self.tail.forward(h.reshape(B * N * N, -1))
            out = flat.reshape(B, N, N, -1)
        else:
            out = h
        argmax = None
        mode = self.config.pooling
        if mode == "average":
            y = out.sum(axis=2) / N
        elif mode == "sum":
            y = out.sum(axis=2)
        else:
            # np.argmax returns the first maximum: ties go to the smallest j
            argmax = out.argmax(axis=2)
            y = np.take_along_axis(out, argmax[:, :, None, :], axis=2)[:, :, 0, :]
        cache = PermCache(self._id, x, h1, tail_cache, argmax, out.shape, squeeze)
        return (y[0] if squeeze else y), cache

    def pair_output_grad(self, cache: PermCache, g_out) -> np.ndarray:
        """Gradient with respect to every pair output ``f(x_i, x_j)``, shape [B, N, N, n_out]."""
        g_out = np.asarray(g_out, dtype=np.float64)
        if cache.squeeze:
            g_out = g_out[None]
        B, N, _, n_out = cache.pair_out_shape
        if g_out.shape != (B, N, n_out):
            raise ShapeError(
                f"output gradient shape {g_out.shape} does not match forward "
                f"output {(B, N, n_out)}")
        mode = self.config.pooling
        if mode == "max":
            g_pair = np.zeros(cache.pair_out_shape)
            np.put_along_axis(g_pair, cache.argmax[:, :, None, :],
                              g_out[:, :, None, :], axis=2)
            return g_pair
        scale = 1.0 / N if mode == "average" else 1.0
        return np.broadcast_to((g_out * scale)[:, :, None, :], cache.pair_out_shape)

    def backward(self, cache: PermCache, g_out) -> np.ndarray:
        """Accumulate inner-network gradients and return the input gradient."""
        if cache.layer_id != self._id:
            raise RuntimeError("cache was produced by a different layer")
        if cache.consumed:
            raise RuntimeError("stale cache: backward already ran on this forward pass")
        g_pair = self.pair_output_grad(cache, g_out)
        cache.consumed = True
        x = cache.x
        B, N, F = x.shape
        if self.tail is not None:
            g_flat = self.tail.backward(cache.tail, g_pair.reshape(B * N * N, -1))
            g_h = g_flat.reshape(B, N, N, -1)
        else:
            g_h = g_pair
        if self._first_relu():
            g_h = relu_backward(cache.h1, g_h)
        g_i = g_h.sum(axis=2)   # [B, N, H] routed to the x_i slot
        g_j = g_h.sum(axis=1)   # [B, N, H] routed to the x_j slot
        W = self.first.W
        xf = x.reshape(B * N, F)
        H = g_i.shape[-1]
        self.first.gW[:F] += xf.T @ g_i.reshape(B * N, H)
        self.first.gW[F:] += xf.T @ g_j.reshape(B * N, H)
        self.first.gb += g_j.sum(axis=(0, 1))
        g_x = g_i @ W[:F].T + g_j @ W[F:].T
        return g_x[0] if cache.squeeze else g_x
