"""Acceptance suite: one PASS/FAIL/SKIP line per criterion in the terminal summary.

Criteria 1-3 run in seconds. Criteria 4-7 need desk-scale trained models
(2000 trajectories, 30k steps); they are read from the result cache at
``$PERMDYN_CACHE`` (default ``.permdyn_cache`` in the repo root) and trained
into it when missing, which takes a couple of hours on one core. Set
``PERMDYN_SKIP_DESK=1`` to skip them. Criterion 8 runs only with
``PERMDYN_FULL_SCALE=1``.
"""

import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from permdyn.experiments import (DESK_TRAIN, FULL_TRAIN, ResultCache, eval_dataset,
                                 generalization_table, hetero_table, run_one)
from permdyn.models import KINDS, ModelConfig, build_model, gradcheck_point, model_gradcheck
from permdyn.perm import PermLayer, PermLayerConfig
from permdyn.sim import (DiscState, SimConfig, diagnostics, generate_trajectory, init_and_relax,
                         kinetic_energy, pair_penetration, step)
from permdyn.tensor import (MLP, Linear, gradcheck_report, linear_backward, linear_forward,
                            mse_loss)
from permdyn.train import HeteroConfig, rollout

ROOT = Path(__file__).resolve().parents[1]
PERM_KINDS = [k for k, v in KINDS.items() if v[0] == "perm"]



def _desk_only(verdicts, number, name):
    if os.environ.get("PERMDYN_SKIP_DESK") == "1":
        verdicts.record(number, name, None, "not run (PERMDYN_SKIP_DESK=1)")
        pytest.skip("PERMDYN_SKIP_DESK=1")


@pytest.fixture(scope="module")
def cache():
    return ResultCache(os.environ.get("PERMDYN_CACHE", ROOT / ".permdyn_cache"))


# 1 -------------------------------------------------------------------------

def test_equivariance(verdicts):
    rng = np.random.default_rng(0)
    worst = 0.0
    for kind in PERM_KINDS:
        m = build_model(ModelConfig(kind, seed=1))
        for n in (1, 2, 4, 8, 12):
            x = rng.standard_normal((n, 4))
            y = m.forward(x)
            perms = np.stack([rng.permutation(n) for _ in range(100)])
            out = m.forward(x[perms])  # the 100 permuted copies as one batch
            worst = max(worst, float(np.max(np.abs(out - y[perms]))))
    ok = worst < 1e-9
    verdicts.record(1, "equivariance", ok,
                    f"max |pi f(X) - f(pi X)| = {worst:.2e} over {len(PERM_KINDS)} kinds, "
                    f"N in 1..12, 100 perms each (tol 1e-9)")
    assert ok


# 2 -------------------------------------------------------------------------

def _bound(module, seed):
    params = np.zeros(module.n_params)
    grads = np.zeros(module.n_params)
    module.bind(params, grads, 0)
    module.init_uniform(np.random.default_rng(seed))
    return params, grads


def _layer_check(module, forward, backward, signature, x, n_out, seed, eps):
    params, grads = _bound(module, seed)
    rng = np.random.default_rng(seed + 1)
    target = forward(x)[0] + 0.1 * rng.standard_normal(forward(x)[0].shape)

    def f(_):
        grads[...] = 0
        y, cache = forward(x)
        _, g = mse_loss(y, target)
        backward(cache, g)
        return mse_loss(y, target)[0], grads

    def pattern(_):
        return signature(forward(x)[1])

    return gradcheck_report(f, params, eps=eps, pattern=pattern).max_rel_error


def _perm_signature(c):
    sig = [c.h1 > 0] + [z > 0 for _, z in c.tail]
    if c.argmax is not None:
        sig.append(c.argmax)
    return b"".join(np.asarray(s).tobytes() for s in sig)


def _mlp_signature(cache):
    return b"".join((z > 0).tobytes() for _, z in cache)


def _single_layer_errors(eps):
    rng = np.random.default_rng(0)
    errs = {}
    lin = Linear(5, 3)

    def lin_fwd(x):
        return linear_forward(x, lin), x

    def lin_bwd(x, g):
        linear_backward(x, lin, g)

    errs["Linear"] = _layer_check(lin, lin_fwd, lin_bwd, lambda c: b"",
                                  rng.standard_normal((6, 5)), 3, 0, eps)
    mlp = MLP([5, 16, 16, 3])
    errs["MLP"] = _layer_check(mlp, mlp.forward, mlp.backward, _mlp_signature,
                               rng.standard_normal((6, 5)), 3, 1, eps)
    for mode in ("average", "sum", "max"):
        for n_in, n_out, out_relu in ((4, 64, True), (64, 4, False)):
            layer = PermLayer(PermLayerConfig(n_in, n_out, (64, 64, 64), mode, out_relu))
            x = rng.standard_normal((2, 8, n_in))
            errs[f"Perm[{mode},{n_in}->{n_out}]"] = _layer_check(
                layer, layer.forward, layer.backward, _perm_signature, x, n_out, 2, eps)
    return errs


def test_gradients(verdicts):
    # Within one activation region the loss is quadratic in any single weight,
    # so the central difference carries no truncation error and a wider step
    # only reduces roundoff; probes whose stencil crosses a kink are skipped.
    layer_errs = _single_layer_errors(1e-3)
    small_step = max(_single_layer_errors(1e-5).values())

    arch_errs = {}
    for kind in KINDS:
        m = build_model(ModelConfig(kind, n_objects=8, seed=1))
        x, target = gradcheck_point(m, 8, seed=1)
        arch_errs[kind] = model_gradcheck(m, x, target).max_rel_error

    worst_layer = max(layer_errs.values())
    worst_arch = max(arch_errs.values())
    ok = worst_layer < 1e-6 and worst_arch < 1e-4
    verdicts.record(2, "gradients", ok,
                    f"worst single layer {worst_layer:.2e} at eps 1e-3 (tol 1e-6, "
                    f"{max(layer_errs, key=layer_errs.get)}; {small_step:.1e} at eps 1e-5), "
                    f"worst architecture "
                    f"{worst_arch:.2e} (tol 1e-4, {max(arch_errs, key=arch_errs.get)})")
    assert ok


# 3 -------------------------------------------------------------------------

def test_physics(verdicts):
    cfg = SimConfig(n_discs=2, walls=False)
    before = DiscState(np.array([[-0.2, 0.0], [0.2, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]),
                       np.full(2, 0.2))
    after = step(before, cfg)
    momentum = float(np.max(np.abs(after.velocities.sum(0) - before.velocities.sum(0))))
    ratio = float(-(after.velocities[1, 0] - after.velocities[0, 0])
                  / (before.velocities[1, 0] - before.velocities[0, 0]))
    oracle = float(np.max(np.abs(after.velocities - [[-0.9, 0.0], [0.9, 0.0]])))

    # oblique pair: momentum along every axis
    obl = DiscState(np.array([[0.0, 0.0], [0.3, 0.25]]), np.array([[0.7, 0.4], [-0.2, -0.9]]),
                    np.full(2, 0.2))
    momentum = max(momentum, float(np.max(np.abs(step(obl, cfg).velocities.sum(0)
                                                 - obl.velocities.sum(0)))))

    ke_rise = -np.inf
    penetration = 0.0
    for n in (4, 8, 12):
        for seed in range(5):
            tr = generate_trajectory(SimConfig(n_discs=n), seed)
            ke_rise = max(ke_rise, float(np.max(np.diff(kinetic_energy(tr.states)))))
            penetration = max(penetration, diagnostics(
                init_and_relax(SimConfig(n_discs=n), seed)).max_penetration)
    radii = (0.1,) * 8 + (0.2,) * 4
    for seed in range(5):
        penetration = max(penetration, diagnostics(
            init_and_relax(SimConfig(n_discs=12, radii=radii), seed)).max_penetration)

    ok = (momentum < 1e-9 and abs(ratio - 0.9) <= 1e-9 and oracle <= 1e-9
          and ke_rise <= 1e-9 and penetration < 1e-6)
    verdicts.record(3, "physics", ok,
                    f"momentum drift {momentum:.1e}, restitution {ratio:.12f}, "
                    f"largest per-step KE rise {ke_rise:.1e}, relaxed penetration "
                    f"{penetration:.1e}")
    assert ok


# 4 -------------------------------------------------------------------------

TABLE1_ORDER = ["Perm-Skip-3,4-Max", "Perm-Skip-3,4", "Perm-3,4", "Perm-3,1"]
DENSE_KINDS = ["Dense-4", "Dense-Skip-4", "Dense-Skip-8"]


def _ordering(mse: dict) -> tuple[bool, list]:
    a, b, c, d = (mse[k] for k in TABLE1_ORDER)
    best_dense = min(mse[k] for k in DENSE_KINDS)
    checks = [a < b, b <= c, c < d, d < best_dense, c <= 0.5 * mse["Dense-Skip-4"]]
    return all(checks), checks


def test_table1_ordering(verdicts, cache):
    _desk_only(verdicts, 4, "Table 1 ordering")
    recs = {k: run_one(k, 8, DESK_TRAIN, cache=cache)[0] for k in TABLE1_ORDER + DENSE_KINDS}
    trailing = {k: r["trailing_eval_mse"] for k, r in recs.items()}
    final = {k: r["final_eval_mse"] for k, r in recs.items()}
    ok, checks = _ordering(trailing)
    ok_final, _ = _ordering(final)
    names = ["Max<Skip", "Skip<=Perm-3,4", "Perm-3,4<Perm-3,1", "Perm-3,1<best Dense",
             "Perm-3,4<=0.5xDense-Skip-4"]
    failed = [n for n, c in zip(names, checks) if not c]
    table = ", ".join(f"{k} {v:.4f}" for k, v in trailing.items())
    verdicts.record(4, "Table 1 ordering", ok,
                    f"trailing-window MSE {table}; ratio Perm-3,4/Dense-Skip-4 = "
                    f"{trailing['Perm-3,4'] / trailing['Dense-Skip-4']:.2f}"
                    + (f"; violated: {', '.join(failed)}" if failed else "")
                    + f"; ordering on final-step MSE {'holds' if ok_final else 'fails'}")
    assert ok


# 5 -------------------------------------------------------------------------

def test_table2_pattern(verdicts, cache):
    _desk_only(verdicts, 5, "Table 2 pattern")
    avg = generalization_table("Perm-Skip-3,4", (4,), (4, 12), DESK_TRAIN, cache)
    mx = generalization_table("Perm-Skip-3,4-Max", (4,), (4, 12), DESK_TRAIN, cache)
    avg12, max4, max12 = avg.cell(4, 12), mx.cell(4, 4), mx.cell(4, 12)
    ok = max12 < 0.5 * avg12 and max12 / max4 < 4
    verdicts.record(5, "Table 2 pattern", ok,
                    f"4->12 discs: max {max12:.4f} vs avg {avg12:.4f} (ratio "
                    f"{max12 / avg12:.2f}, need < 0.5); max degradation 4->12 "
                    f"{max12 / max4:.2f}x (need < 4), avg in-distribution {avg.cell(4, 4):.4f}")
    assert ok


# 6 -------------------------------------------------------------------------

def test_heterogeneous_labels(verdicts, cache):
    _desk_only(verdicts, 6, "heterogeneous labels")
    out = hetero_table(HeteroConfig(train=replace(DESK_TRAIN)), cache)
    lab, unlab = out["mse_labeled"], out["mse_unlabeled"]
    ok = lab < 0.75 * unlab
    verdicts.record(6, "heterogeneous labels", ok,
                    f"labelled {lab:.4f} vs unlabelled {unlab:.4f} (ratio {lab / unlab:.2f}, "
                    f"need < 0.75)")
    assert ok


# 7 -------------------------------------------------------------------------

def test_rollout_sanity(verdicts, cache):
    _desk_only(verdicts, 7, "rollout sanity")
    _, model = run_one("Perm-Skip-3,4-Max", 8, DESK_TRAIN, cache=cache)
    ev = eval_dataset(8, DESK_TRAIN)
    radius = 0.2
    overlaps, all_pairs, finite = [], [], True
    for k in range(10):
        s0 = DiscState(ev.frames[k, 0, :, :2], ev.frames[k, 0, :, 2:4], np.full(8, radius))
        res = rollout(model, s0, 40)
        finite &= res.truncated_at is None and bool(np.all(np.isfinite(res.trajectory.states)))
        for s in res.trajectory.states[1:]:
            pen = pair_penetration(s[:, :2], res.trajectory.radii)
            all_pairs.append(pen.mean())
            overlaps.extend(pen[pen > 0])
    depth = float(np.mean(overlaps)) if overlaps else 0.0
    ok = finite and depth < 0.5 * radius
    verdicts.record(7, "rollout sanity", ok,
                    f"10 rollouts x 40 predictions, finite={finite}; mean depth of "
                    f"overlapping pairs {depth:.4f} (need < {0.5 * radius}), "
                    f"{len(overlaps)} overlaps in {len(all_pairs) * 28} pair-states, "
                    f"mean over all pairs {np.mean(all_pairs):.5f}")
    assert ok


# 8 -------------------------------------------------------------------------

PAPER_TABLE1_8 = {"Dense-4": 0.095, "Dense-Skip-4": 0.088, "Dense-Skip-8": 0.092,
                  "Perm-3,1": 0.062, "Perm-3,4": 0.028, "Perm-Skip-3,4": 0.025,
                  "Perm-Skip-3,4-Max": 0.018}
PAPER_TABLE2_4 = {("Perm-Skip-3,4", 4): 0.011, ("Perm-Skip-3,4", 12): 0.147,
                  ("Perm-Skip-3,4-Max", 4): 0.010, ("Perm-Skip-3,4-Max", 12): 0.037}


def test_full_scale(verdicts, cache):
    if os.environ.get("PERMDYN_FULL_SCALE") != "1":
        verdicts.record(8, "full-scale reproduction", None,
                        "not run (set PERMDYN_FULL_SCALE=1; 20000 trajectories, 100k steps)")
        pytest.skip("PERMDYN_FULL_SCALE not set")
    ours, paper = {}, {}
    for kind, ref in PAPER_TABLE1_8.items():
        ours[f"{kind}@8"] = run_one(kind, 8, FULL_TRAIN, cache=cache)[0]["trailing_eval_mse"]
        paper[f"{kind}@8"] = ref
    for kind in ("Perm-Skip-3,4", "Perm-Skip-3,4-Max"):
        t = generalization_table(kind, (4,), (4, 12), FULL_TRAIN, cache)
        for n in (4, 12):
            ours[f"{kind} 4->{n}"] = t.cell(4, n)
            paper[f"{kind} 4->{n}"] = PAPER_TABLE2_4[(kind, n)]
    off = {k: ours[k] / paper[k] for k in ours if abs(ours[k] - paper[k]) > 0.5 * paper[k]}
    ok = not off
    verdicts.record(8, "full-scale reproduction", ok,
                    "all within +-50% of the reported values" if ok else
                    "outside +-50%: " + ", ".join(f"{k} x{v:.2f}" for k, v in off.items()))
    assert ok
