"""Desk-scale versions of the architecture comparison, the cross-disc-count
generalization study and the labelled heterogeneous-disc experiment.

Results are expensive (tens of minutes per network on one core), so every
run can be memoized in a :class:`ResultCache` keyed on its full
configuration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .models import KINDS, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .sim import SimConfig, random_labels
from .train import (EVAL_SEED_OFFSET, Dataset, HeteroConfig, TrainConfig,
                    _feature_view, make_dataset, train, write_history_csv)

log = logging.getLogger(__name__)

DESK_TRAIN = TrainConfig(n_train_traj=2000, batch_size=32, total_steps=30_000,
                         eval_traj=200, seed=0)
FULL_TRAIN = TrainConfig(n_train_traj=20_000, batch_size=32, total_steps=100_000,
                         eval_traj=1000, seed=0)

PERM_WIDTH = 64
DENSE_WIDTH = 256


class ResultCache:
    """Directory of ``<key>.json`` metric records plus ``<key>.model.json`` checkpoints."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(spec: dict) -> str:
        blob = json.dumps(spec, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def get(self, spec: dict):
        path = self.root / f"{self.key(spec)}.json"
        if not path.exists():
            return None
        rec = json.loads(path.read_text())
        model_path = self.root / f"{self.key(spec)}.model.json"
        model = load_checkpoint(model_path) if model_path.exists() else None
        return rec, model

    def put(self, spec: dict, record: dict, model=None, history=None) -> None:
        k = self.key(spec)
        if model is not None:
            save_checkpoint(model, self.root / f"{k}.model.json")
        if history is not None:
            write_history_csv(history, self.root / f"{k}.history.csv")
        (self.root / f"{k}.json").write_text(
            json.dumps({"spec": spec, **record}, indent=1, default=str))


def _data_cache():
    store = {}

    def get(sim: SimConfig, n_traj: int, base_seed: int, split: str, labels=None):
        lab_key = None if labels is None else np.asarray(labels).tobytes()
        key = (sim, n_traj, base_seed, split, lab_key)
        if key not in store:
            store[key] = make_dataset(sim, n_traj, base_seed, split, labels)
        return store[key]

    return get


datasets = _data_cache()


def train_dataset(n_discs: int, tc: TrainConfig, data_seed: int = 0, sim=None) -> Dataset:
    sim = sim or SimConfig(n_discs=n_discs)
    return datasets(sim, tc.n_train_traj, data_seed, "train")


def eval_dataset(n_discs: int, tc: TrainConfig, data_seed: int = 0, sim=None) -> Dataset:
    sim = sim or SimConfig(n_discs=n_discs)
    return datasets(sim, tc.eval_traj, data_seed + EVAL_SEED_OFFSET, "eval")


def run_one(kind: str, n_discs: int, tc: TrainConfig = DESK_TRAIN, model_seed: int = 0,
            data_seed: int = 0, hidden_width: int | None = None, cache=None):
    """Train one architecture on ``n_discs`` identical discs; returns ``(record, model)``."""
    width = hidden_width or (DENSE_WIDTH if KINDS[kind][0] == "dense" else PERM_WIDTH)
    mc = ModelConfig(kind, n_objects=n_discs, hidden_width=width, seed=model_seed)
    spec = {"experiment": "single", "model": asdict(mc), "train": asdict(tc),
            "n_discs": n_discs, "data_seed": data_seed, "sim": asdict(SimConfig(n_discs=n_discs))}
    if cache is not None:
        hit = cache.get(spec)
        if hit is not None:
            return hit
    t0 = time.time()
    model = build_model(mc)
    res = train(model, train_dataset(n_discs, tc, data_seed), tc,
                eval_dataset(n_discs, tc, data_seed))
    record = {"kind": kind, "n_discs": n_discs, "n_params": model.n_params,
              "final_eval_mse": res.final_eval_mse,
              "trailing_eval_mse": res.trailing_eval_mse,
              "seconds": time.time() - t0}
    log.info("%s on %d discs: trailing %.5f final %.5f (%.0fs)", kind, n_discs,
             res.trailing_eval_mse, res.final_eval_mse, record["seconds"])
    if cache is not None:
        cache.put(spec, record, model, res.history)
    return record, model


def architecture_table(n_discs: int = 8, tc: TrainConfig = DESK_TRAIN, kinds=tuple(KINDS),
                       cache=None) -> dict:
    """Eval MSE of each architecture trained on the same ``n_discs`` data."""
    return {k: run_one(k, n_discs, tc, cache=cache)[0] for k in kinds}


def generalization_table(kind: str, train_counts=(4,), test_counts=(4, 12),
                         tc: TrainConfig = DESK_TRAIN, cache=None):
    """Train ``kind`` at each training count; evaluate on every test count."""
    from .train import generalization_matrix
    models = {n: run_one(kind, n, tc, cache=cache)[1] for n in train_counts}
    tests = {n: eval_dataset(n, tc) for n in test_counts}
    return generalization_matrix(models, tests)


def hetero_table(config: HeteroConfig = HeteroConfig(train=replace(DESK_TRAIN)),
                 cache=None) -> dict:
    """Labelled vs unlabelled mixed-radius experiment, memoized per variant."""
    radii = (config.r_small,) * config.n_small + (config.r_large,) * config.n_large
    sim = SimConfig(n_discs=len(radii), radii=radii)
    labels = random_labels(len(radii), config.label_seed)
    tc = config.train
    out = {}
    for name, width in (("unlabeled", 4), ("labeled", 6)):
        mc = ModelConfig(config.kind, n_features=width, hidden_width=config.hidden_width,
                         seed=config.model_seed)
        spec = {"experiment": "hetero", "model": asdict(mc), "hetero": asdict(config),
                "variant": name}
        hit = cache.get(spec) if cache is not None else None
        if hit is None:
            t0 = time.time()
            tr = _feature_view(datasets(sim, tc.n_train_traj, config.data_seed, "train",
                                        labels), width)
            ev = _feature_view(datasets(sim, tc.eval_traj,
                                        config.data_seed + EVAL_SEED_OFFSET, "eval",
                                        labels), width)
            model = build_model(mc)
            res = train(model, tr, tc, ev)
            record = {"final_eval_mse": res.final_eval_mse,
                      "trailing_eval_mse": res.trailing_eval_mse,
                      "seconds": time.time() - t0}
            if cache is not None:
                cache.put(spec, record, model, res.history)
        else:
            record, model = hit
        out[f"mse_{name}"] = record["trailing_eval_mse"]
        out[f"final_mse_{name}"] = record["final_eval_mse"]
        out[f"model_{name}"] = model
    return out
