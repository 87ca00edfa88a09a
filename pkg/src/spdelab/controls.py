"""Deterministic controls: H-valued drift direction f and jump-intensity tilt g.

Both components are piecewise constant on a shared time-cell grid.  ``f`` has
one H-coefficient row per cell, ``g`` one positive intensity factor per
(cell, mark).  The lower bound g_min > 0 keeps log g and the entropy cost
finite along every code path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .coefficients import StepFunction

__all__ = ["ControlPair", "zero_control", "uniform_grid"]

DEFAULT_G_MIN = 1e-6
DEFAULT_G_MAX = 1e6


def uniform_grid(t_end: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("need at least one step")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    return np.linspace(0.0, float(t_end), steps + 1)


@dataclass(frozen=True)
class ControlPair:
    edges: np.ndarray  # (n_cells + 1,) cell boundaries starting at 0
    f: np.ndarray  # (n_cells, K)
    g: np.ndarray  # (n_cells, m)
    g_min: float = DEFAULT_G_MIN
    g_max: float = DEFAULT_G_MAX
    # costs cached at construction time by with_costs(); None until computed
    cached_tilde_cost: float = None
    cached_jump_cost: float = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        f = np.atleast_2d(np.asarray(self.f, dtype=float))
        g = np.atleast_2d(np.asarray(self.g, dtype=float))
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0) or e[0] != 0.0:
            raise ValueError("cell edges must be strictly increasing and start at 0")
        n_cells = e.size - 1
        if f.shape[0] != n_cells:
            raise ValueError("f must have one row per cell")
        if g.size and g.shape[0] != n_cells:
            raise ValueError("g must have one row per cell")
        if not (0 < self.g_min <= self.g_max):
            raise ValueError("need 0 < g_min <= g_max")
        if g.size and (np.any(g < self.g_min) or np.any(g > self.g_max)):
            raise ValueError("g entries must lie within [g_min, g_max]")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise ValueError("control tables must be finite")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)

    @property
    def n_cells(self) -> int:
        return int(self.edges.size - 1)

    @property
    def n_modes(self) -> int:
        return int(self.f.shape[1])

    @property
    def n_marks(self) -> int:
        return int(self.g.shape[1]) if self.g.size else 0

    @property
    def t_end(self) -> float:
        return float(self.edges[-1])

    def cell_of(self, t) -> np.ndarray:
        idx = np.searchsorted(self.edges, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def f_at(self, t) -> np.ndarray:
        return self.f[self.cell_of(t)]

    def g_at(self, t) -> np.ndarray:
        return self.g[self.cell_of(t)]

    def g_table(self) -> StepFunction:
        """The tilt as a StepFunction usable as a thinning intensity control."""
        return StepFunction(edges=self.edges, values=self.g)

    def is_null(self) -> bool:
        """True when f vanishes and g is identically one (no tilt)."""
        return bool(np.all(self.f == 0.0) and (self.g.size == 0 or np.all(self.g == 1.0)))

    def scaled(self, f_factor: float = 1.0, g_factor: float = 1.0) -> "ControlPair":
        """Scale f and the tilt deviation g - 1 (used by convergence sweeps)."""
        g = 1.0 + g_factor * (self.g - 1.0) if self.g.size else self.g
        return replace(self, f=f_factor * self.f, g=g,
                       cached_tilde_cost=None, cached_jump_cost=None)

    def with_costs(self, mm=None) -> "ControlPair":
        """Copy with both costs computed and cached on the pair."""
        from .rate import cost_of_control

        costs = cost_of_control(self, mm)
        return replace(self, cached_tilde_cost=costs.tilde_cost,
                       cached_jump_cost=costs.jump_cost)


def zero_control(t_end: float, n_modes: int, n_marks: int, n_cells: int = 1,
                 g_min: float = DEFAULT_G_MIN, g_max: float = DEFAULT_G_MAX) -> ControlPair:
    edges = np.linspace(0.0, float(t_end), n_cells + 1)
    return ControlPair(
        edges=edges,
        f=np.zeros((n_cells, n_modes)),
        g=np.ones((n_cells, n_marks)),
        g_min=g_min,
        g_max=g_max,
    )
