"""Reader/writer for PDYN trajectory files.

Layout, all little-endian::

    b"PDYN"  u32 version=1  u32 n_traj  u32 n_discs  u32 n_steps  u32 n_features
    per trajectory:
        f64 radii[n_discs]
        f64 labels[n_discs][2]                        (only if n_features == 6)
        f64 states[n_steps + 1][n_discs][n_features]

With labels, the state rows carry them as features 4 and 5 on every step.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .sim import Trajectory

MAGIC = b"PDYN"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class PDYNError(ValueError):
    pass


def write_pdyn(path, trajectories) -> None:
    trajectories = list(trajectories)
    if not trajectories:
        raise PDYNError("refusing to write an empty trajectory file")
    first = trajectories[0]
    n_discs, n_states = first.n_discs, first.n_states
    labelled = first.labels is not None
    n_features = 6 if labelled else 4
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(trajectories), n_discs,
                              n_states - 1, n_features))
        for traj in trajectories:
            if (traj.n_discs, traj.n_states) != (n_discs, n_states):
                raise PDYNError("all trajectories in a file must share disc and step counts")
            if (traj.labels is not None) != labelled:
                raise PDYNError("either every trajectory carries labels or none does")
            fh.write(np.asarray(traj.radii, dtype="<f8").tobytes())
            if labelled:
                fh.write(np.asarray(traj.labels, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(traj.features(), dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise PDYNError(f"{path}: file too short for a PDYN header")
    magic, version, n_traj, n_discs, n_steps, n_features = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise PDYNError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise PDYNError(f"{path}: unsupported PDYN version {version}")
    if n_features not in (4, 6):
        raise PDYNError(f"{path}: n_features must be 4 or 6, got {n_features}")
    return dict(n_traj=n_traj, n_discs=n_discs, n_steps=n_steps, n_features=n_features)


def read_pdyn(path) -> list[Trajectory]:
    h = read_header(path)
    n, s, f = h["n_discs"], h["n_steps"] + 1, h["n_features"]
    per_traj = n + (2 * n if f == 6 else 0) + s * n * f
    data = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    expected = h["n_traj"] * per_traj
    if data.size != expected:
        raise PDYNError(
            f"{Path(path)}: expected {expected} float64 values after the header, "
            f"found {data.size}")
    out = []
    for k in range(h["n_traj"]):
        block = data[k * per_traj:(k + 1) * per_traj]
        radii = block[:n].astype(np.float64)
        pos = n
        labels = None
        if f == 6:
            labels = block[pos:pos + 2 * n].reshape(n, 2).astype(np.float64)
            pos += 2 * n
        states = block[pos:].reshape(s, n, f).astype(np.float64)
        out.append(Trajectory(np.ascontiguousarray(states[:, :, :4]), radii, labels))
    return out
