"""Seed-reproducible Brownian increments and (controlled) Poisson random measures.

All randomness flows through counter-based Philox streams keyed by
(seed, replica, purpose), so parallel replicas never share a stream and the
same key always reproduces the same draws.  The controlled measure is sampled
by thinning: a dominating measure with intensity eps^-1 phi_max nu is drawn
and each atom (s, v_j) is kept with probability phi(s, v_j) / phi_max, which
realizes the indicator 1_{[0, phi(s, x)]}(r) over the auxiliary coordinate of
the dominating point process.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .coefficients import MarkMeasure, StepFunction

__all__ = [
    "JumpEvent",
    "NoiseBundle",
    "stream",
    "sample_brownian",
    "sample_prm",
    "sample_controlled_prm",
    "save_bundle",
    "load_bundle",
]

_PURPOSES = {"brownian": 1, "jumps": 2, "thinning": 3, "pilot": 4, "crude": 5}

_MAGIC = b"SPDLNB1\x00"


class JumpEvent(NamedTuple):
    time: float
    mark: int


def stream(seed: int, replica: int = 0, purpose: str = "brownian") -> np.random.Generator:
    """Independent Philox stream for (seed, replica, purpose)."""
    try:
        purpose_id = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), purpose_id))
    return np.random.Generator(np.random.Philox(ss))


def sample_brownian(n_modes: int, grid: np.ndarray, seed: int,
                    replica: int = 0) -> np.ndarray:
    """Table of independent increments, entry (k, m) ~ Normal(0, grid[m+1]-grid[m])."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must contain at least two nodes")
    if grid[0] != 0.0:
        raise ValueError("grid must start at 0")
    dt = np.diff(grid)
    if np.any(dt <= 0):
        raise ValueError("grid must be strictly increasing")
    rng = stream(seed, replica, "brownian")
    return rng.standard_normal((n_modes, dt.size)) * np.sqrt(dt)[None, :]


def _draw_events(rates: np.ndarray, t_end: float,
                 rng: np.random.Generator) -> List[JumpEvent]:
    """Merged, strictly time-sorted events with per-mark Poisson(rate * T) counts."""
    counts = rng.poisson(np.asarray(rates, dtype=float) * t_end)
    times = []
    marks = []
    for j, n in enumerate(counts):
        if n == 0:
            continue
        tj = rng.uniform(0.0, t_end, size=int(n))
        while np.any(tj == 0.0):  # Uniform(0, T] convention
            tj[tj == 0.0] = rng.uniform(0.0, t_end, size=int(np.sum(tj == 0.0)))
        times.append(tj)
        marks.append(np.full(int(n), j, dtype=int))
    if not times:
        return []
    times = np.concatenate(times)
    marks = np.concatenate(marks)
    order = np.argsort(times, kind="stable")
    times, marks = times[order], marks[order]
    # Ties have probability zero but break determinism guarantees; resample.
    while np.any(np.diff(times) == 0.0):
        dup = np.concatenate([[False], np.diff(times) == 0.0])
        times[dup] = rng.uniform(0.0, t_end, size=int(dup.sum()))
        order = np.argsort(times, kind="stable")
        times, marks = times[order], marks[order]
    return [JumpEvent(float(t), int(j)) for t, j in zip(times, marks)]


def sample_prm(theta: float, mm: MarkMeasure, t_end: float, seed: int,
               replica: int = 0) -> List[JumpEvent]:
    """Poisson random measure on [0, T] x marks with intensity theta * nu."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    rng = stream(seed, replica, "jumps")
    return _draw_events(theta * mm.weights, t_end, rng)


def sample_controlled_prm(phi: StepFunction, epsilon: float, mm: MarkMeasure,
                          t_end: Optional[float] = None, seed: int = 0,
                          replica: int = 0) -> List[JumpEvent]:
    """Controlled measure N^{eps^-1 phi} by thinning a dominating PRM.

    ``phi`` is a piecewise-constant table of shape (n_cells, m) with
    nonnegative entries (controls come from the bounded class).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    values = np.asarray(phi.values, dtype=float)
    if values.ndim != 2 or values.shape[1] != mm.n_marks:
        raise ValueError("phi must have shape (n_cells, n_marks)")
    if np.any(values < 0):
        raise ValueError("phi must be nonnegative")
    if t_end is None:
        t_end = phi.t_end
    phi_max = float(values.max(initial=0.0))
    if phi_max == 0.0:
        return []
    rng = stream(seed, replica, "jumps")
    dominating = _draw_events(phi_max * mm.weights / epsilon, t_end, rng)
    if not dominating:
        return []
    accept_rng = stream(seed, replica, "thinning")
    unif = accept_rng.uniform(0.0, 1.0, size=len(dominating))
    kept = []
    for u, ev in zip(unif, dominating):
        local = float(np.asarray(phi.at(min(ev.time, t_end)))[ev.mark])
        if u * phi_max <= local and local > 0.0:
            kept.append(ev)
    return kept


@dataclass(frozen=True)
class NoiseBundle:
    """One replica's driving noise: increment table plus jump log."""

    grid: np.ndarray
    brownian: np.ndarray
    jumps: List[JumpEvent]
    seed: int

    def __eq__(self, other):
        return (
            isinstance(other, NoiseBundle)
            and self.seed == other.seed
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.brownian, other.brownian)
            and self.jumps == other.jumps
        )


def save_bundle(path, bundle: NoiseBundle) -> None:
    """Binary dump: header (magic, seed, K, M, n_events) + little-endian float64 blocks."""
    brownian = np.ascontiguousarray(bundle.brownian, dtype="<f8")
    grid = np.ascontiguousarray(bundle.grid, dtype="<f8")
    n_modes, n_steps = brownian.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQQ", bundle.seed, n_modes, n_steps, len(bundle.jumps)))
        fh.write(grid.tobytes())
        fh.write(brownian.tobytes())
        ev = np.array(
            [[t, float(j)] for t, j in bundle.jumps], dtype="<f8"
        ).reshape(len(bundle.jumps), 2)
        fh.write(ev.tobytes())


def load_bundle(path) -> NoiseBundle:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a noise bundle file")
        seed, n_modes, n_steps, n_events = struct.unpack("<QQQQ", fh.read(32))
        grid = np.frombuffer(fh.read(8 * (n_steps + 1)), dtype="<f8").copy()
        brownian = np.frombuffer(fh.read(8 * n_modes * n_steps), dtype="<f8").copy()
        brownian = brownian.reshape(n_modes, n_steps)
        ev = np.frombuffer(fh.read(16 * n_events), dtype="<f8").reshape(n_events, 2)
    jumps = [JumpEvent(float(t), int(j)) for t, j in ev]
    return NoiseBundle(grid=grid, brownian=brownian, jumps=jumps, seed=int(seed))
