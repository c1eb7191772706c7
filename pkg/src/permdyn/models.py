"""The seven dynamics-prediction networks and their checkpoint format.

Dense kinds flatten ``[N, F]`` object features into one vector and so fix N
at build time. Perm kinds stack three permutational layers and accept any N.
Every model predicts 4 features (x, y, v_x, v_y) per object; ``skip`` kinds
add the input coordinates to the network output.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .perm import PermLayer, PermLayerConfig
from .tensor import MLP, AdamState, GradcheckReport, ShapeError, gradcheck_report, mse_loss

FORMAT_VERSION = 1
N_COORDS = 4

# kind -> (family, depth, skip, pooling)
KINDS = {
    "Dense-4": ("dense", 4, False, None),
    "Dense-Skip-4": ("dense", 4, True, None),
    "Dense-Skip-8": ("dense", 8, True, None),
    "Perm-3,1": ("perm", 1, False, "average"),
    "Perm-3,4": ("perm", 4, False, "average"),
    "Perm-Skip-3,4": ("perm", 4, True, "average"),
    "Perm-Skip-3,4-Max": ("perm", 4, True, "max"),
}

_CLI_NAMES = {k.lower().replace(",", "-"): k for k in KINDS}


def resolve_kind(name: str) -> str:
    """Accept either the table name (``Perm-Skip-3,4``) or its kebab form (``perm-skip-3-4``)."""
    if name in KINDS:
        return name
    try:
        return _CLI_NAMES[name.lower()]
    except KeyError:
        raise ValueError(
            f"unknown architecture {name!r}; choose from {sorted(_CLI_NAMES)}") from None


def kebab(kind: str) -> str:
    return kind.lower().replace(",", "-")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointBlobError(CheckpointError):
    pass


class CheckpointLengthError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    n_features: int = 4
    n_objects: int | None = None      # dense kinds only
    hidden_width: int | None = None   # None -> 64 (perm) / 256 (dense)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", resolve_kind(self.kind))
        if self.n_features < N_COORDS:
            raise ValueError(f"need at least {N_COORDS} input features per object")
        if self.family == "dense" and not self.n_objects:
            raise ValueError("dense architectures need n_objects")
        if self.hidden_width is None:
            object.__setattr__(self, "hidden_width", 256 if self.family == "dense" else 64)

    @property
    def family(self) -> str:
        return KINDS[self.kind][0]

    @property
    def depth(self) -> int:
        return KINDS[self.kind][1]

    @property
    def skip(self) -> bool:
        return KINDS[self.kind][2]

    @property
    def pooling(self) -> str | None:
        return KINDS[self.kind][3]


class Model:
    """A built network with a flat parameter vector and its Adam state.

    ``forward`` takes ``[B, N, F]`` (or ``[N, F]``) object features and
    returns ``[B, N, 4]`` predictions.
    """

    def __init__(self, config: ModelConfig, layers: list):
        self.config = config
        self.layers = layers
        n = sum(layer.n_params for layer in layers)
        self.params = np.zeros(n)
        self.grads = np.zeros(n)
        offset = 0
        for layer in layers:
            offset = layer.bind(self.params, self.grads, offset)
        self.adam = AdamState.zeros(n)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def is_perm(self) -> bool:
        return self.config.family == "perm"

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3:
            raise ShapeError(f"expected [batch, objects, features], got {x.shape}")
        cfg = self.config
        if x.shape[2] != cfg.n_features:
            raise ShapeError(
                f"model expects {cfg.n_features} features per object, got {x.shape[2]}")
        if not self.is_perm and x.shape[1] != cfg.n_objects:
            raise ShapeError(
                f"{cfg.kind} was built for {cfg.n_objects} objects, got {x.shape[1]}")
        return x, squeeze

    def forward(self, x, return_cache: bool = False):
        x, squeeze = self._check_input(x)
        B, N, F = x.shape
        caches = []
        if self.is_perm:
            h = x
            for layer in self.layers:
                h, c = layer.forward(h)
                caches.append(c)
            out = h
        else:
            out, c = self.layers[0].forward(x.reshape(B, N * F))
            caches.append(c)
            out = out.reshape(B, N, N_COORDS)
        if self.config.skip:
            out = out + x[:, :, :N_COORDS]
        if squeeze:
            out = out[0]
        if return_cache:
            return out, (caches, x.shape, squeeze)
        return out

    def backward(self, cache, g_out) -> np.ndarray:
        """Accumulate parameter gradients into ``self.grads``; return the input gradient."""
        caches, shape, squeeze = cache
        g_out = np.asarray(g_out, dtype=np.float64)
        if squeeze:
            g_out = g_out[None]
        B, N, F = shape
        if self.is_perm:
            g = g_out
            for layer, c in zip(reversed(self.layers), reversed(caches)):
                g = layer.backward(c, g)
            g_x = g
        else:
            g_x = self.layers[0].backward(caches[0], g_out.reshape(B, N * N_COORDS))
            g_x = g_x.reshape(B, N, F)
        if self.config.skip:
            g_x = g_x.copy()
            g_x[:, :, :N_COORDS] += g_out
        return g_x[0] if squeeze else g_x

    def loss_and_grad(self, x, target) -> float:
        """MSE of the prediction against ``target``; gradients left in ``self.grads``."""
        self.grads[...] = 0.0
        pred, cache = self.forward(x, return_cache=True)
        loss, g = mse_loss(pred, target)
        self.backward(cache, g)
        return loss

    def activation_pattern(self, x) -> bytes:
        """Digest of every ReLU sign and max-pool winner for input ``x``.

        Two parameter vectors with the same pattern lie in the same linear
        region of the network.
        """
        _, (caches, _, _) = self.forward(x, return_cache=True)
        h = hashlib.sha256()
        if self.is_perm:
            for layer, c in zip(self.layers, caches):
                if layer._first_relu():
                    h.update(np.packbits(c.h1 > 0).tobytes())
                if layer.tail is not None:
                    _mlp_pattern(layer.tail, c.tail, h)
                if c.argmax is not None:
                    h.update(c.argmax.tobytes())
        else:
            _mlp_pattern(self.layers[0], caches[0], h)
        return h.digest()


def _mlp_pattern(mlp: MLP, cache, h) -> None:
    for k, (_, z) in enumerate(cache):
        if mlp._relu_after(k):
            h.update(np.packbits(z > 0).tobytes())


def model_gradcheck(model: Model, x, target, eps: float = 1e-5, n_probe: int = 200,
                    seed: int = 0) -> GradcheckReport:
    """Central-difference check of the MSE gradient of a whole network at ``(x, target)``."""

    def loss_and_grad(_params):
        loss = model.loss_and_grad(x, target)
        return loss, model.grads

    return gradcheck_report(loss_and_grad, model.params, eps, n_probe, seed,
                            pattern=lambda _p: model.activation_pattern(x))


def _perm_layers(cfg: ModelConfig) -> list:
    w = cfg.hidden_width
    inner = (w,) * (cfg.depth - 1)
    sizes = [cfg.n_features, w, w, N_COORDS]
    layers = []
    for k in range(3):
        final = k == 2
        layers.append(PermLayer(PermLayerConfig(
            n_in=sizes[k], n_out=sizes[k + 1], inner_widths=inner,
            pooling=cfg.pooling, out_relu=not final)))
    return layers


def _dense_layers(cfg: ModelConfig) -> list:
    w = cfg.hidden_width
    widths = ([cfg.n_objects * cfg.n_features] + [w] * (cfg.depth - 1)
              + [cfg.n_objects * N_COORDS])
    return [MLP(widths, out_relu=False)]


def build_model(config: ModelConfig) -> Model:
    layers = _perm_layers(config) if config.family == "perm" else _dense_layers(config)
    model = Model(config, layers)
    rng = np.random.default_rng(config.seed)
    for layer in layers:
        layer.init_uniform(rng)
    return model


def model_forward(model: Model, states) -> np.ndarray:
    return model.forward(states)


def save_checkpoint(model: Model, path) -> None:
    blob = model.params.astype("<f8").tobytes()
    doc = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "param_blob": base64.b64encode(blob).decode("ascii"),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        raw = base64.b64decode(doc["param_blob"], validate=True)
    except (binascii.Error, ValueError, KeyError) as exc:
        raise CheckpointBlobError(f"{path}: corrupt parameter blob ({exc})") from None
    if len(raw) % 8:
        raise CheckpointBlobError(
            f"{path}: truncated parameter blob ({len(raw)} bytes is not a whole "
            f"number of float64 values)")
    config = ModelConfig(**doc["config"])
    model = build_model(config)
    values = np.frombuffer(raw, dtype="<f8")
    if values.size != model.n_params:
        raise CheckpointLengthError(
            f"{path}: config implies {model.n_params} parameters, blob holds {values.size}")
    model.params[...] = values
    return model


def gradcheck_point(model: Model, n_objects: int, batch: int = 2, seed: int = 0,
                    residual: float = 0.1):
    """Random inputs and targets a small distance from the model's own prediction.

    A small residual keeps the loss, and with it the round-off in the
    central difference, far below the gradients being checked.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, n_objects, model.config.n_features))
    target = model.forward(x) + residual * rng.standard_normal((batch, n_objects, N_COORDS))
    return x, target
