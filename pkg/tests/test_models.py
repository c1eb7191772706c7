import base64
import json

import numpy as np
import pytest

from permdyn.models import (KINDS, CheckpointBlobError, CheckpointLengthError,
                            CheckpointVersionError, ModelConfig, build_model, gradcheck_point,
                            kebab, load_checkpoint, model_forward, model_gradcheck,
                            resolve_kind, save_checkpoint)
from permdyn.tensor import ShapeError

PERM_KINDS = [k for k, v in KINDS.items() if v[0] == "perm"]
DENSE_KINDS = [k for k, v in KINDS.items() if v[0] == "dense"]


def lin(a, b):
    return a * b + b


def perm_count(f, w, depth, out=4):
    """Closed-form parameter count of a three-layer perm network."""
    def layer(n_in, n_out):
        widths = [2 * n_in] + [w] * (depth - 1) + [n_out]
        return sum(lin(a, b) for a, b in zip(widths[:-1], widths[1:]))
    return layer(f, w) + layer(w, w) + layer(w, out)


def dense_count(n, f, w, depth):
    widths = [n * f] + [w] * (depth - 1) + [n * 4]
    return sum(lin(a, b) for a, b in zip(widths[:-1], widths[1:]))


def test_perm_skip_3_4_widths_and_count():
    m = build_model(ModelConfig("Perm-Skip-3,4", hidden_width=64))
    assert [(l.config.n_in, l.config.n_out) for l in m.layers] == [(4, 64), (64, 64), (64, 4)]
    assert all(l.config.inner_widths == (64, 64, 64) for l in m.layers)
    assert m.n_params == perm_count(4, 64, 4) == 50628


def test_dense_4_shapes_and_count():
    m = build_model(ModelConfig("Dense-4", n_objects=8, hidden_width=256))
    assert m.layers[0].widths == [32, 256, 256, 256, 32]
    assert m.n_params == dense_count(8, 4, 256, 4) == 148256


@pytest.mark.parametrize("kind", list(KINDS))
def test_param_counts_match_formula(kind):
    cfg = ModelConfig(kind, n_objects=8)
    m = build_model(cfg)
    fam, depth, _, _ = KINDS[kind]
    expected = (perm_count(4, 64, depth) if fam == "perm" else dense_count(8, 4, 256, depth))
    assert m.n_params == expected


def test_regression_constants():
    counts = {k: build_model(ModelConfig(k, n_objects=8)).n_params for k in KINDS}
    assert counts == {
        "Dense-4": 148256, "Dense-Skip-4": 148256, "Dense-Skip-8": 411424,
        "Perm-3,1": 9348, "Perm-3,4": 50628, "Perm-Skip-3,4": 50628,
        "Perm-Skip-3,4-Max": 50628,
    }


def test_labelled_input_width():
    m = build_model(ModelConfig("Perm-Skip-3,4", n_features=6))
    assert m.n_params == perm_count(6, 64, 4)
    y = m.forward(np.zeros((5, 6)))
    assert y.shape == (5, 4)


def test_max_kind_uses_max_everywhere():
    m = build_model(ModelConfig("Perm-Skip-3,4-Max"))
    assert {l.config.pooling for l in m.layers} == {"max"}
    m = build_model(ModelConfig("Perm-3,4"))
    assert {l.config.pooling for l in m.layers} == {"average"}


def test_same_seed_identical_bytes():
    a = build_model(ModelConfig("Perm-3,4", seed=3))
    b = build_model(ModelConfig("Perm-3,4", seed=3))
    c = build_model(ModelConfig("Perm-3,4", seed=4))
    assert a.params.tobytes() == b.params.tobytes() != c.params.tobytes()


def test_unknown_kind():
    with pytest.raises(ValueError):
        ModelConfig("Perm-9,9")


def test_kind_names_round_trip():
    for k in KINDS:
        assert resolve_kind(kebab(k)) == k
    assert kebab("Perm-Skip-3,4-Max") == "perm-skip-3-4-max"


@pytest.mark.parametrize("kind", ["Dense-Skip-4", "Dense-Skip-8", "Perm-Skip-3,4",
                                  "Perm-Skip-3,4-Max"])
def test_zero_weight_skip_is_identity(kind):
    m = build_model(ModelConfig(kind, n_objects=8, n_features=6))
    m.params[...] = 0
    x = np.random.default_rng(0).standard_normal((3, 8, 6))
    np.testing.assert_array_equal(m.forward(x), x[:, :, :4])


def test_zero_weight_dense_outputs_bias():
    m = build_model(ModelConfig("Dense-4", n_objects=3))
    m.params[...] = 0
    out_layer = m.layers[0].layers[-1]
    out_layer.b[...] = np.arange(12.0)
    x = np.random.default_rng(1).standard_normal((2, 3, 4))
    np.testing.assert_array_equal(m.forward(x), np.broadcast_to(np.arange(12.0).reshape(3, 4),
                                                                (2, 3, 4)))


def test_dense_wrong_object_count():
    m = build_model(ModelConfig("Dense-4", n_objects=8))
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 7, 4)))


def test_dense_requires_object_count():
    with pytest.raises(ValueError):
        ModelConfig("Dense-Skip-4")


@pytest.mark.parametrize("kind", PERM_KINDS)
def test_perm_model_equivariance(kind):
    m = build_model(ModelConfig(kind, seed=2))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 8, 4))
    y = model_forward(m, x)
    for _ in range(10):
        perm = rng.permutation(8)
        assert np.max(np.abs(m.forward(x[:, perm]) - y[:, perm])) < 1e-9


@pytest.mark.parametrize("kind", PERM_KINDS)
def test_perm_model_any_object_count(kind):
    m = build_model(ModelConfig(kind))
    for n in (1, 2, 4, 8, 12, 16):
        assert m.forward(np.ones((n, 4))).shape == (n, 4)


def test_forward_deterministic():
    m = build_model(ModelConfig("Perm-Skip-3,4-Max"))
    x = np.random.default_rng(5).standard_normal((2, 6, 4))
    assert m.forward(x).tobytes() == m.forward(x).tobytes()


@pytest.mark.parametrize("kind", list(KINDS))
def test_full_network_gradcheck(kind):
    m = build_model(ModelConfig(kind, n_objects=8, seed=1))
    x, target = gradcheck_point(m, 8, seed=1)
    report = model_gradcheck(m, x, target)
    assert report.n_checked == 200
    assert report.max_rel_error < 1e-4


def test_input_gradient_of_skip_model():
    m = build_model(ModelConfig("Perm-Skip-3,4", seed=2))
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))
    _, cache = m.forward(x, return_cache=True)
    g = m.backward(cache, w)
    eps = 1e-6
    for i in range(3):
        for k in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i, k] += eps
            xm[i, k] -= eps
            num = (np.sum(m.forward(xp) * w) - np.sum(m.forward(xm) * w)) / (2 * eps)
            assert abs(num - g[i, k]) < 1e-5 * max(1.0, abs(num))


@pytest.mark.parametrize("kind", ["Perm-Skip-3,4-Max", "Dense-Skip-8"])
def test_checkpoint_round_trip(tmp_path, kind):
    m = build_model(ModelConfig(kind, n_objects=4, seed=7))
    path = tmp_path / "m.json"
    save_checkpoint(m, path)
    m2 = load_checkpoint(path)
    assert m2.config == m.config
    assert m2.params.tobytes() == m.params.tobytes()
    x = np.random.default_rng(8).standard_normal((3, 4, 4))
    assert np.array_equal(m.forward(x), m2.forward(x))
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and set(doc) == {"format_version", "config", "param_blob"}
    raw = base64.b64decode(doc["param_blob"])
    assert np.array_equal(np.frombuffer(raw, "<f8"), m.params)


def _tamper(tmp_path, **changes):
    m = build_model(ModelConfig("Perm-3,1"))
    path = tmp_path / "m.json"
    save_checkpoint(m, path)
    doc = json.loads(path.read_text())
    doc.update(changes)
    path.write_text(json.dumps(doc))
    return path, m


def test_checkpoint_version_mismatch(tmp_path):
    path, _ = _tamper(tmp_path, format_version=2)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_corrupt_base64(tmp_path):
    path, _ = _tamper(tmp_path, param_blob="@@not base64@@")
    with pytest.raises(CheckpointBlobError):
        load_checkpoint(path)


def test_checkpoint_truncated_blob(tmp_path):
    m = build_model(ModelConfig("Perm-3,1"))
    blob = base64.b64encode(m.params.astype("<f8").tobytes()[:-3]).decode()
    path, _ = _tamper(tmp_path, param_blob=blob)
    with pytest.raises(CheckpointBlobError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_length_off_by_one(tmp_path):
    m = build_model(ModelConfig("Perm-3,1"))
    blob = base64.b64encode(m.params[:-1].astype("<f8").tobytes()).decode()
    path, _ = _tamper(tmp_path, param_blob=blob)
    with pytest.raises(CheckpointLengthError, match=f"{m.n_params}.*{m.n_params - 1}"):
        load_checkpoint(path)
