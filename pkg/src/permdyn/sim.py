"""2D hard-disc simulator.

Discs live in the box [-L, L]^2 (L = 1 by default) with no gravity and no
friction. A step drifts positions by ``dt * v``, resolves contacts with
sequential normal impulses (coefficient of restitution ``e``) in fixed pair
order, then projects out any remaining overlap without touching velocities.

Trajectories follow the generation protocol used for the learning task:
uniform random centres, ``relax_steps`` of overlap removal with velocities
held at zero, standard-normal velocity kick, then ``record_steps`` recorded
steps.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

PENETRATION_TOL = 1e-6
MAX_RELAX_ATTEMPTS = 10_000
_PROJECTION_SWEEPS = 100


class PackingError(RuntimeError):
    """Relaxation could not produce an overlap-free configuration."""


@dataclass(frozen=True)
class SimConfig:
    n_discs: int = 8
    radii: tuple | None = None        # per-disc; None -> all ``radius``
    radius: float = 0.2
    half_width: float = 1.0
    restitution: float = 0.9
    dt: float = 0.02
    relax_steps: int = 200
    record_steps: int = 400
    mass: float = 1.0
    solver_iterations: int = 8
    walls: bool = True

    def __post_init__(self):
        if self.radii is not None:
            object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
            if len(self.radii) != self.n_discs:
                raise ValueError(
                    f"{len(self.radii)} radii given for {self.n_discs} discs")
        if not 0.0 < self.restitution <= 1.0:
            raise ValueError("restitution must lie in (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        r = self.radius_array()
        if np.any(r <= 0) or np.any(r >= self.half_width):
            raise ValueError("radii must be positive and smaller than the box half-width")
        if np.pi * np.sum(r ** 2) >= (2 * self.half_width) ** 2:
            raise ValueError("total disc area exceeds the box area")

    def radius_array(self) -> np.ndarray:
        if self.radii is None:
            return np.full(self.n_discs, float(self.radius))
        return np.array(self.radii, dtype=np.float64)


@dataclass
class DiscState:
    positions: np.ndarray           # [n, 2]
    velocities: np.ndarray          # [n, 2]
    radii: np.ndarray               # [n]
    labels: np.ndarray | None = None  # [n, 2]

    @property
    def n_discs(self) -> int:
        return self.positions.shape[0]

    def features(self) -> np.ndarray:
        """``[n, 4]`` (x, y, v_x, v_y), or ``[n, 6]`` with labels appended."""
        cols = [self.positions, self.velocities]
        if self.labels is not None:
            cols.append(self.labels)
        return np.concatenate(cols, axis=1)

    def copy(self) -> "DiscState":
        return DiscState(self.positions.copy(), self.velocities.copy(),
                         self.radii.copy(),
                         None if self.labels is None else self.labels.copy())


@dataclass
class Trajectory:
    """Recorded states as one ``[n_states, n_discs, 4]`` array of (x, y, v_x, v_y)."""

    states: np.ndarray
    radii: np.ndarray
    labels: np.ndarray | None = None
    seed: int | None = None
    config: SimConfig | None = None

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_discs(self) -> int:
        return self.states.shape[1]

    def state(self, t: int) -> DiscState:
        s = self.states[t]
        return DiscState(s[:, :2].copy(), s[:, 2:4].copy(), self.radii.copy(),
                         None if self.labels is None else self.labels.copy())

    def features(self) -> np.ndarray:
        """States with labels (if any) appended to every step's features."""
        if self.labels is None:
            return self.states
        lab = np.broadcast_to(self.labels, (self.n_states, *self.labels.shape))
        return np.concatenate([self.states, lab], axis=2)


# --- kernels -----------------------------------------------------------------

@numba.njit(cache=True)
def _resolve_impulses(pos, vel, radii, inv_mass, e, half, walls, iterations):
    n = pos.shape[0]
    for _ in range(iterations):
        for i in range(n):
            for j in range(i + 1, n):
                dx = pos[j, 0] - pos[i, 0]
                dy = pos[j, 1] - pos[i, 1]
                d2 = dx * dx + dy * dy
                rs = radii[i] + radii[j]
                if d2 >= rs * rs:
                    continue
                d = np.sqrt(d2)
                if d > 0.0:
                    nx = dx / d
                    ny = dy / d
                else:
                    nx = 1.0
                    ny = 0.0
                vn = (vel[j, 0] - vel[i, 0]) * nx + (vel[j, 1] - vel[i, 1]) * ny
                if vn >= 0.0:
                    continue
                jmag = -(1.0 + e) * vn / (inv_mass[i] + inv_mass[j])
                vel[i, 0] -= jmag * inv_mass[i] * nx
                vel[i, 1] -= jmag * inv_mass[i] * ny
                vel[j, 0] += jmag * inv_mass[j] * nx
                vel[j, 1] += jmag * inv_mass[j] * ny
        if walls:
            for i in range(n):
                lim = half - radii[i]
                for k in range(2):
                    if pos[i, k] < -lim and vel[i, k] < 0.0:
                        vel[i, k] = -e * vel[i, k]
                    elif pos[i, k] > lim and vel[i, k] > 0.0:
                        vel[i, k] = -e * vel[i, k]


@numba.njit(cache=True)
def _max_penetration(pos, radii, half, walls):
    n = pos.shape[0]
    worst = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            p = radii[i] + radii[j] - np.sqrt(dx * dx + dy * dy)
            if p > worst:
                worst = p
        if walls:
            lim = half - radii[i]
            for k in range(2):
                p = abs(pos[i, k]) - lim
                if p > worst:
                    worst = p
    return worst


@numba.njit(cache=True)
def _project(pos, radii, half, walls, sweeps, tol):
    """Gauss-Seidel position projection; returns the remaining max penetration."""
    n = pos.shape[0]
    for _ in range(sweeps):
        for i in range(n):
            for j in range(i + 1, n):
                dx = pos[j, 0] - pos[i, 0]
                dy = pos[j, 1] - pos[i, 1]
                d2 = dx * dx + dy * dy
                rs = radii[i] + radii[j]
                if d2 >= rs * rs:
                    continue
                d = np.sqrt(d2)
                if d > 0.0:
                    nx = dx / d
                    ny = dy / d
                else:
                    nx = 1.0
                    ny = 0.0
                half_gap = 0.5 * (rs - d)
                pos[i, 0] -= half_gap * nx
                pos[i, 1] -= half_gap * ny
                pos[j, 0] += half_gap * nx
                pos[j, 1] += half_gap * ny
        if walls:
            for i in range(n):
                lim = half - radii[i]
                for k in range(2):
                    if pos[i, k] < -lim:
                        pos[i, k] = -lim
                    elif pos[i, k] > lim:
                        pos[i, k] = lim
        if _max_penetration(pos, radii, half, walls) <= tol:
            break
    return _max_penetration(pos, radii, half, walls)


@numba.njit(cache=True)
def _run(pos, vel, radii, inv_mass, e, dt, half, walls, iterations, n_steps, out):
    """Advance ``n_steps``, writing the initial and every later state into ``out``."""
    n = pos.shape[0]
    for i in range(n):
        out[0, i, 0] = pos[i, 0]
        out[0, i, 1] = pos[i, 1]
        out[0, i, 2] = vel[i, 0]
        out[0, i, 3] = vel[i, 1]
    for s in range(n_steps):
        for i in range(n):
            pos[i, 0] += dt * vel[i, 0]
            pos[i, 1] += dt * vel[i, 1]
        _resolve_impulses(pos, vel, radii, inv_mass, e, half, walls, iterations)
        _project(pos, radii, half, walls, _PROJECTION_SWEEPS, 1e-12)
        for i in range(n):
            out[s + 1, i, 0] = pos[i, 0]
            out[s + 1, i, 1] = pos[i, 1]
            out[s + 1, i, 2] = vel[i, 0]
            out[s + 1, i, 3] = vel[i, 1]


# --- public operations -------------------------------------------------------

def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([stream, seed])


def _inv_mass(config: SimConfig) -> np.ndarray:
    return np.full(config.n_discs, 1.0 / config.mass)


def _check_finite(state: DiscState) -> None:
    if not (np.all(np.isfinite(state.positions)) and np.all(np.isfinite(state.velocities))):
        raise FloatingPointError("disc state contains non-finite values")


def init_and_relax(config: SimConfig, seed: int) -> DiscState:
    """Uniform random centres followed by ``relax_steps`` of zero-velocity overlap removal.

    Restarts from fresh positions until the packing is penetration-free, up to
    ``MAX_RELAX_ATTEMPTS`` draws.
    """
    radii = config.radius_array()
    half = config.half_width
    rng = _rng(seed, 0)
    for _ in range(MAX_RELAX_ATTEMPTS):
        lo = -half + radii[:, None]
        pos = lo + rng.random((config.n_discs, 2)) * (-2 * lo)
        for _ in range(config.relax_steps):
            # one projection sweep per relaxation step; velocities stay zero
            _project(pos, radii, half, True, 1, 0.0)
        if _max_penetration(pos, radii, half, True) < PENETRATION_TOL:
            return DiscState(pos, np.zeros_like(pos), radii)
    raise PackingError(
        f"no overlap-free packing of {config.n_discs} discs after "
        f"{MAX_RELAX_ATTEMPTS} attempts")


def kick_velocities(state: DiscState, seed: int) -> DiscState:
    out = state.copy()
    out.velocities = _rng(seed, 1).standard_normal(state.positions.shape)
    return out


def step(state: DiscState, config: SimConfig) -> DiscState:
    """Advance one timestep; returns a new state."""
    _check_finite(state)
    out = state.copy()
    buf = np.empty((2, state.n_discs, 4))
    _run(out.positions, out.velocities, np.asarray(state.radii, dtype=np.float64),
         _inv_mass(config), config.restitution, config.dt, config.half_width,
         config.walls, config.solver_iterations, 1, buf)
    return out


def simulate(state: DiscState, config: SimConfig, n_steps: int) -> np.ndarray:
    """Run ``n_steps`` from ``state``; returns ``[n_steps + 1, n, 4]`` recorded states."""
    _check_finite(state)
    pos = state.positions.astype(np.float64, copy=True)
    vel = state.velocities.astype(np.float64, copy=True)
    out = np.empty((n_steps + 1, state.n_discs, 4))
    _run(pos, vel, np.asarray(state.radii, dtype=np.float64), _inv_mass(config),
         config.restitution, config.dt, config.half_width, config.walls,
         config.solver_iterations, n_steps, out)
    return out


def generate_trajectory(config: SimConfig, seed: int, labels=None) -> Trajectory:
    state = kick_velocities(init_and_relax(config, seed), seed)
    states = simulate(state, config, config.record_steps)
    lab = None if labels is None else np.asarray(labels, dtype=np.float64)
    return Trajectory(states, state.radii, lab, seed, config)


def _gen_one(args):
    config, seed, labels = args
    return generate_trajectory(config, seed, labels)


def worker_count() -> int:
    cap = os.environ.get("PERMDYN_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def generate_trajectories(config: SimConfig, n_traj: int, base_seed: int,
                          labels=None, workers: int | None = None) -> list:
    """Trajectories with seeds ``base_seed + k``; identical output for any worker count."""
    jobs = [(config, base_seed + k, labels) for k in range(n_traj)]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or n_traj < 2:
        return [_gen_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_gen_one, jobs, chunksize=max(1, n_traj // (4 * workers))))


def random_labels(n_discs: int, seed: int) -> np.ndarray:
    """Standard-normal 2-vector label per disc identity."""
    return _rng(seed, 2).standard_normal((n_discs, 2))


@dataclass
class Diagnostics:
    kinetic_energy: float
    total_momentum: np.ndarray
    max_penetration: float


def diagnostics(obj, mass: float = 1.0, half_width: float = 1.0,
                walls: bool = True):
    """Kinetic energy, momentum and worst overlap of a state, or per step of a trajectory."""
    if isinstance(obj, Trajectory):
        return [diagnostics(obj.state(t), mass, half_width, walls)
                for t in range(obj.n_states)]
    v = obj.velocities
    pen = _max_penetration(np.ascontiguousarray(obj.positions, dtype=np.float64),
                           np.asarray(obj.radii, dtype=np.float64), half_width, walls)
    return Diagnostics(
        kinetic_energy=float(0.5 * mass * np.sum(v * v)),
        total_momentum=mass * v.sum(axis=0),
        max_penetration=float(pen),
    )


def kinetic_energy(states: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Per-step kinetic energy of a ``[steps, n, 4]`` state array."""
    v = states[..., 2:4]
    return 0.5 * mass * np.sum(v * v, axis=(-1, -2))


def pair_penetration(positions: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Overlap depth ``max(0, r_i + r_j - |p_i - p_j|)`` for every pair i < j."""
    i, j = np.triu_indices(positions.shape[0], k=1)
    d = np.linalg.norm(positions[i] - positions[j], axis=1)
    return np.maximum(0.0, radii[i] + radii[j] - d)
