"""Dense numeric kernel: linear and ReLU layers with explicit backward passes,
MSE loss, Adam, and a central-difference gradient checker.

Every matrix is a C-contiguous float64 ``numpy.ndarray``. Layers keep their
weights and gradient buffers as views into caller-provided flat arrays so an
entire model can be optimized as one parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


class Linear:
    """Affine map ``x @ W + b`` with W of shape [n_in, n_out].

    Parameters live in ``W``/``b``; gradients accumulate into ``gW``/``gb``.
    Until :meth:`bind` is called the layer owns private buffers.
    """

    def __init__(self, n_in: int, n_out: int):
        if n_in < 1 or n_out < 1:
            raise ShapeError(f"layer sizes must be positive, got {n_in}x{n_out}")
        self.n_in = n_in
        self.n_out = n_out
        self.W = np.zeros((n_in, n_out))
        self.b = np.zeros(n_out)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    @property
    def n_params(self) -> int:
        return self.n_in * self.n_out + self.n_out

    def bind(self, params: np.ndarray, grads: np.ndarray, offset: int) -> int:
        """Rebind weights and gradients as views into flat arrays at ``offset``.

        Current parameter values are copied into the new storage. Returns the
        offset just past this layer.
        """
        nw = self.n_in * self.n_out
        end = offset + self.n_params
        params[offset:offset + nw] = self.W.ravel()
        params[offset + nw:end] = self.b
        self.W = params[offset:offset + nw].reshape(self.n_in, self.n_out)
        self.b = params[offset + nw:end]
        self.gW = grads[offset:offset + nw].reshape(self.n_in, self.n_out)
        self.gb = grads[offset + nw:end]
        return end

    def init_uniform(self, rng: np.random.Generator) -> None:
        # Glorot-uniform weights, zero bias
        limit = np.sqrt(6.0 / (self.n_in + self.n_out))
        self.W[...] = rng.uniform(-limit, limit, size=self.W.shape)
        self.b[...] = 0.0

    def zero_grad(self) -> None:
        self.gW[...] = 0.0
        self.gb[...] = 0.0

    def __repr__(self) -> str:
        return f"Linear({self.n_in}, {self.n_out})"


def linear_forward(x, p: Linear) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != p.n_in:
        raise ShapeError(
            f"input shape {x.shape} incompatible with weight shape {p.W.shape}")
    return x @ p.W + p.b


def linear_backward(x, p: Linear, g_out) -> np.ndarray:
    """Accumulate ``gW += x.T @ g_out`` and ``gb += sum(g_out)``; return ``g_out @ W.T``."""
    x = as_matrix(x)
    g_out = as_matrix(g_out)
    if x.shape[1] != p.n_in or g_out.shape != (x.shape[0], p.n_out):
        raise ShapeError(
            f"input {x.shape}, output gradient {g_out.shape} and weight "
            f"{p.W.shape} are inconsistent")
    p.gW += x.T @ g_out
    p.gb += g_out.sum(axis=0)
    return g_out @ p.W.T


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x, g_out) -> np.ndarray:
    # subgradient at exactly zero is 0
    return g_out * (np.asarray(x) > 0.0)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean of squared differences over every element, and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


class MLP:
    """Stack of Linear layers with ReLU between them.

    ``widths`` lists every layer boundary, e.g. ``[8, 64, 4]`` is two layers.
    If ``out_relu`` is true a ReLU also follows the final layer.
    Inputs are 2-D ``[rows, widths[0]]``.
    """

    def __init__(self, widths, out_relu: bool = False):
        widths = list(widths)
        if len(widths) < 2:
            raise ShapeError("an MLP needs at least one layer")
        self.widths = widths
        self.out_relu = out_relu
        self.layers = [Linear(a, b) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def bind(self, params, grads, offset: int) -> int:
        for layer in self.layers:
            offset = layer.bind(params, grads, offset)
        return offset

    def init_uniform(self, rng) -> None:
        for layer in self.layers:
            layer.init_uniform(rng)

    def _relu_after(self, k: int) -> bool:
        return k < len(self.layers) - 1 or self.out_relu

    def forward(self, x):
        """Return ``(output, cache)``; the cache holds each layer's input and pre-activation."""
        cache = []
        h = x
        for k, layer in enumerate(self.layers):
            z = h @ layer.W
            z += layer.b
            cache.append((h, z))
            h = relu(z) if self._relu_after(k) else z
        return h, cache

    def backward(self, cache, g_out):
        g = g_out
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            h, z = cache[k]
            if self._relu_after(k):
                g = relu_backward(z, g)
            layer.gW += h.T @ g
            layer.gb += g.sum(axis=0)
            g = g @ layer.W.T
        return g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kwargs) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **kwargs)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float) -> np.ndarray:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape} and optimizer state "
            f"{state.m.shape} must have equal length")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise FloatingPointError(
            f"non-finite gradient at parameter index {int(bad[0])}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


@dataclass
class GradcheckReport:
    max_rel_error: float
    n_checked: int
    n_skipped: int    # probes whose +-eps interval straddled a kink


def gradcheck_report(loss_and_grad, params: np.ndarray, eps: float = 1e-5,
                     n_probe: int = 200, seed: int = 0,
                     pattern=None) -> GradcheckReport:
    """Compare an analytic gradient against central differences.

    ``loss_and_grad(params)`` must return ``(loss, grad)`` evaluated at the
    current contents of ``params`` (which is perturbed in place and restored).
    Probes a seeded random subsample of ``n_probe`` coordinates (all of them
    if fewer) and tracks ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``pattern(params)``, if given, returns a signature of the function's
    piecewise region (e.g. ReLU signs and max-pool winners). A coordinate
    whose perturbed signatures differ from the unperturbed one is skipped,
    since the central difference there spans a kink; a replacement
    coordinate is drawn so that ``n_probe`` coordinates are still checked.
    """
    _, analytic = loss_and_grad(params)
    analytic = np.array(analytic, dtype=np.float64, copy=True)
    n = params.size
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    base = pattern(params) if pattern is not None else None
    worst = 0.0
    checked = skipped = 0
    for i in order:
        if checked >= n_probe:
            break
        orig = params[i]
        params[i] = orig + eps
        f_plus, _ = loss_and_grad(params)
        kink = pattern is not None and pattern(params) != base
        params[i] = orig - eps
        f_minus, _ = loss_and_grad(params)
        kink = kink or (pattern is not None and pattern(params) != base)
        params[i] = orig
        if kink:
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
        checked += 1
    return GradcheckReport(worst, checked, skipped)


def gradcheck(loss_and_grad, params: np.ndarray, eps: float = 1e-5,
              n_probe: int = 200, seed: int = 0, pattern=None) -> float:
    """Largest relative analytic-vs-central-difference error; see :func:`gradcheck_report`."""
    return gradcheck_report(loss_and_grad, params, eps, n_probe, seed,
                            pattern).max_rel_error
