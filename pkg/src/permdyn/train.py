"""Datasets of horizon-ahead prediction pairs, the training loop, evaluation,
cross-disc-count generalization, closed-loop rollout and the labelled
heterogeneous-disc experiment.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import N_COORDS, Model, ModelConfig, build_model
from .pdyn import read_pdyn, write_pdyn
from .sim import DiscState, SimConfig, Trajectory, generate_trajectories, random_labels
from .tensor import ShapeError, adam_step

log = logging.getLogger(__name__)

HORIZON = 10
EVAL_SEED_OFFSET = 1_000_000


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, lr: float, loss: float):
        super().__init__(f"non-finite training loss {loss} at step {step} (lr={lr:.3g})")
        self.step = step
        self.lr = lr


@dataclass
class Dataset:
    """Prediction pairs ``(features at t, coordinates at t + horizon)``.

    Samples are not materialized: ``frames`` holds every trajectory's
    per-step features and ``index`` lists ``(trajectory, t)`` for each sample.
    """

    frames: np.ndarray          # [n_traj, n_states, n_discs, n_features]
    index: np.ndarray           # [n_samples, 2]
    horizon: int
    source: str
    split: str
    traj_keys: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.index.shape[0]

    def __getitem__(self, k):
        x, y = self.batch(np.atleast_1d(k))
        return x[0], y[0]

    @property
    def n_discs(self) -> int:
        return self.frames.shape[2]

    @property
    def n_features(self) -> int:
        return self.frames.shape[3]

    def batch(self, rows) -> tuple[np.ndarray, np.ndarray]:
        tr, t = self.index[rows, 0], self.index[rows, 1]
        return self.frames[tr, t], self.frames[tr, t + self.horizon, :, :N_COORDS]

    @property
    def inputs(self) -> np.ndarray:
        return self.batch(np.arange(len(self)))[0]

    @property
    def targets(self) -> np.ndarray:
        return self.batch(np.arange(len(self)))[1]

    def provenance(self) -> set:
        return set(self.traj_keys)


def build_dataset(source, horizon: int = HORIZON, split: str = "train") -> Dataset:
    """Build prediction pairs from a PDYN path or a list of trajectories.

    Each trajectory of ``S + 1`` states contributes samples for
    ``t = 0 .. S - horizon``. Labels are appended to the inputs only.
    """
    if isinstance(source, (str, Path)):
        name = str(source)
        trajectories = read_pdyn(source)
    else:
        trajectories = list(source)
        name = "memory"
    if not trajectories:
        raise ValueError("no trajectories to build a dataset from")
    n_states = trajectories[0].n_states
    if horizon < 0 or horizon >= n_states:
        raise ValueError(
            f"horizon {horizon} must be in [0, {n_states - 1}] for trajectories "
            f"of {n_states} states")
    frames = np.stack([tr.features() for tr in trajectories])
    per = n_states - horizon
    tr_idx = np.repeat(np.arange(len(trajectories)), per)
    t_idx = np.tile(np.arange(per), len(trajectories))
    keys = [f"n{tr.n_discs}:seed:{tr.seed}" if tr.seed is not None else f"{name}#{k}"
            for k, tr in enumerate(trajectories)]
    return Dataset(frames, np.stack([tr_idx, t_idx], axis=1), horizon, name, split, keys)


@dataclass(frozen=True)
class TrainConfig:
    n_train_traj: int = 2000
    batch_size: int = 32
    total_steps: int = 30_000
    lr0: float = 1e-3
    lr_tau: float = 5000.0
    eval_traj: int = 200
    eval_every: int = 1000
    eval_samples: int = 4096
    trailing_window: int = 10_000
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("n_train_traj", "batch_size", "eval_traj", "eval_every",
                     "eval_samples", "log_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0 or self.lr0 <= 0 or self.lr_tau <= 0:
            raise ValueError("total_steps must be >= 0 and lr0, lr_tau > 0")


def lr_schedule(t: int, config: TrainConfig = TrainConfig()) -> float:
    return config.lr0 * math.exp(-t / config.lr_tau)


@dataclass
class HistoryRow:
    step: int
    lr: float
    train_mse: float
    eval_mse: float = float("nan")


@dataclass
class TrainResult:
    model: Model
    history: list
    final_eval_mse: float = float("nan")
    trailing_eval_mse: float = float("nan")


def _check_compatible(model: Model, dataset: Dataset) -> None:
    cfg = model.config
    if dataset.n_features != cfg.n_features:
        raise ShapeError(
            f"model expects {cfg.n_features} input features, dataset has "
            f"{dataset.n_features}")
    if not model.is_perm and dataset.n_discs != cfg.n_objects:
        raise ShapeError(
            f"{cfg.kind} was built for {cfg.n_objects} discs, dataset has "
            f"{dataset.n_discs}")


def evaluate(model, dataset: Dataset, rows=None, chunk: int = 256) -> float:
    """MSE over all samples (or ``rows``), discs and the 4 output features.

    ``model`` is a :class:`Model` or any object whose ``forward`` maps
    ``[B, N, F]`` inputs to ``[B, N, 4]`` predictions.
    """
    if isinstance(model, Model):
        _check_compatible(model, dataset)
    rows = np.arange(len(dataset)) if rows is None else np.asarray(rows)
    total = 0.0
    count = 0
    for start in range(0, rows.size, chunk):
        x, y = dataset.batch(rows[start:start + chunk])
        d = model.forward(x) - y
        total += float(np.sum(d * d))
        count += d.size
    return total / count


def train(model: Model, dataset: Dataset, config: TrainConfig = TrainConfig(),
          eval_dataset: Dataset | None = None) -> TrainResult:
    """Adam on shuffled mini-batches with the exponential learning-rate schedule.

    The history gets one row per ``log_every`` steps with the running-average
    training MSE; rows on ``eval_every`` boundaries also carry the MSE on a
    fixed subsample of ``eval_dataset``.
    """
    _check_compatible(model, dataset)
    if eval_dataset is not None:
        _check_compatible(model, eval_dataset)
        if dataset.provenance() & eval_dataset.provenance():
            raise ValueError("train and eval datasets share trajectories")
    rng = np.random.default_rng(config.seed)
    eval_rows = None
    if eval_dataset is not None:
        n_eval = min(config.eval_samples, len(eval_dataset))
        eval_rows = np.sort(np.random.default_rng(config.seed + 1).choice(
            len(eval_dataset), n_eval, replace=False))
    history = []
    order = rng.permutation(len(dataset))
    cursor = 0
    running = 0.0
    n_running = 0
    for t in range(config.total_steps):
        if cursor + config.batch_size > order.size:
            order = rng.permutation(len(dataset))
            cursor = 0
        rows = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        x, y = dataset.batch(rows)
        lr = lr_schedule(t, config)
        loss = model.loss_and_grad(x, y)
        if not math.isfinite(loss):
            raise TrainingDiverged(t, lr, loss)
        adam_step(model.params, model.grads, model.adam, lr)
        running += loss
        n_running += 1
        done = t + 1
        if done % config.log_every == 0 or done == config.total_steps:
            row = HistoryRow(done, lr, running / n_running)
            running, n_running = 0.0, 0
            if eval_rows is not None and (done % config.eval_every == 0
                                          or done == config.total_steps):
                row.eval_mse = evaluate(model, eval_dataset, eval_rows)
                log.info("step %d lr %.3g train %.5f eval %.5f",
                         done, lr, row.train_mse, row.eval_mse)
            history.append(row)
    result = TrainResult(model, history)
    if eval_dataset is not None:
        result.final_eval_mse = evaluate(model, eval_dataset)
        result.trailing_eval_mse = trailing_eval(history, config.trailing_window)
    return result


def trailing_eval(history, window: int) -> float:
    """Mean of the periodic eval MSEs logged within the last ``window`` steps."""
    evals = [r for r in history if not math.isnan(r.eval_mse)]
    if not evals:
        return float("nan")
    last = evals[-1].step
    vals = [r.eval_mse for r in evals if r.step > last - window]
    return float(np.mean(vals))


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "train_mse", "eval_mse"])
        for r in history:
            w.writerow([r.step, repr(r.lr), repr(r.train_mse),
                        "" if math.isnan(r.eval_mse) else repr(r.eval_mse)])


@dataclass
class GeneralizationTable:
    train_counts: list
    test_counts: list
    mse: np.ndarray       # [len(train_counts), len(test_counts)]

    def cell(self, train_n: int, test_n: int) -> float:
        return float(self.mse[self.train_counts.index(train_n),
                              self.test_counts.index(test_n)])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train_discs"] + [f"test_{n}" for n in self.test_counts])
            for n, row in zip(self.train_counts, self.mse):
                w.writerow([n] + [repr(float(v)) for v in row])


def generalization_matrix(models, datasets) -> GeneralizationTable:
    """Evaluate perm models trained at various disc counts on test sets of other counts.

    ``models`` maps training disc count -> model (a bare model is keyed by
    its first dataset's count); ``datasets`` maps test disc count -> dataset.
    """
    if isinstance(models, Model):
        models = {next(iter(datasets)): models}
    for m in models.values():
        if not m.is_perm:
            raise ValueError(
                f"{m.config.kind} has a fixed disc count and cannot be evaluated "
                f"across disc counts")
    rows = sorted(models)
    cols = sorted(datasets)
    mse = np.array([[evaluate(models[r], datasets[c]) for c in cols] for r in rows])
    return GeneralizationTable(rows, cols, mse)


@dataclass
class RolloutResult:
    trajectory: Trajectory      # one state per prediction horizon
    n_calls: int
    truncated_at: int | None = None


def rollout(model: Model, initial: DiscState, n_predictions: int) -> RolloutResult:
    """Feed the model's predictions back as its next input.

    Labels ride along unchanged. Stops early (and records the step) if a
    prediction is non-finite.
    """
    if n_predictions < 0:
        raise ValueError("n_predictions must be >= 0")
    feats = initial.features()
    if feats.shape[1] != model.config.n_features:
        raise ShapeError(
            f"model expects {model.config.n_features} features per disc, state "
            f"provides {feats.shape[1]}")
    states = [feats[:, :N_COORDS].copy()]
    calls = 0
    truncated = None
    x = feats
    for k in range(n_predictions):
        pred = model.forward(x)
        calls += 1
        if not np.all(np.isfinite(pred)):
            truncated = k
            log.warning("rollout stopped at prediction %d: non-finite output", k)
            break
        states.append(pred)
        x = pred if initial.labels is None else np.concatenate([pred, initial.labels], axis=1)
    traj = Trajectory(np.stack(states), np.asarray(initial.radii, dtype=np.float64).copy(),
                      None if initial.labels is None else initial.labels.copy())
    return RolloutResult(traj, calls, truncated)


def write_rollout(result: RolloutResult, path) -> None:
    write_pdyn(path, [result.trajectory])


# --- experiment helpers ------------------------------------------------------

def make_dataset(sim: SimConfig, n_traj: int, base_seed: int, split: str,
                 labels=None, horizon: int = HORIZON) -> Dataset:
    trajs = generate_trajectories(sim, n_traj, base_seed, labels)
    ds = build_dataset(trajs, horizon, split)
    ds.source = f"sim:n{sim.n_discs}:seeds{base_seed}-{base_seed + n_traj - 1}"
    return ds


@dataclass(frozen=True)
class HeteroConfig:
    n_small: int = 8
    r_small: float = 0.1
    n_large: int = 4
    r_large: float = 0.2
    hidden_width: int = 64
    kind: str = "Perm-Skip-3,4"
    train: TrainConfig = TrainConfig()
    label_seed: int = 12345
    data_seed: int = 0
    model_seed: int = 0


def heterogeneous_experiment(config: HeteroConfig = HeteroConfig()) -> dict:
    """Train the same network on mixed-radius discs with and without per-disc labels.

    Labels are drawn once and stay bound to disc identity across every
    trajectory, train and eval alike.
    """
    radii = [config.r_small] * config.n_small + [config.r_large] * config.n_large
    n = len(radii)
    sim = SimConfig(n_discs=n, radii=tuple(radii))
    labels = random_labels(n, config.label_seed)
    tc = config.train
    train_ds = make_dataset(sim, tc.n_train_traj, config.data_seed, "train", labels)
    eval_ds = make_dataset(sim, tc.eval_traj, config.data_seed + EVAL_SEED_OFFSET,
                           "eval", labels)
    out = {"labels": labels}
    for name, width in (("unlabeled", N_COORDS), ("labeled", N_COORDS + 2)):
        model = build_model(ModelConfig(config.kind, n_features=width,
                                        hidden_width=config.hidden_width,
                                        seed=config.model_seed))
        tr = _feature_view(train_ds, width)
        ev = _feature_view(eval_ds, width)
        res = train(model, tr, tc, ev)
        out[f"mse_{name}"] = res.trailing_eval_mse
        out[f"final_mse_{name}"] = res.final_eval_mse
        out[f"result_{name}"] = res
    return out


def _feature_view(ds: Dataset, width: int) -> Dataset:
    if width == ds.n_features:
        return ds
    return Dataset(ds.frames[..., :width], ds.index, ds.horizon, ds.source, ds.split,
                   list(ds.traj_keys))
