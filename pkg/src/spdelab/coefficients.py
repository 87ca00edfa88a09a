"""Noise coefficients, mark measure, operator norms, and condition checkers.

The mark space is finite and discrete, so every integral against the mark
measure is an exact weighted sum.  Coefficients are restricted to affine
families in the state:

    diffusion   s_k(t, u) = a_k(t) + b_k <u, e_k>   (diagonal, optional clip)
    jump        G(t, u, v_j) = c_j(t) (alpha_j h_j + beta_j u)

with h_j a unit field and a_k, c_j piecewise constant in time.  The affine
structure gives closed forms for the growth norm ||G(t, v)||_{0,H} and the
Lipschitz norm ||G(t, v)||_{1,H}; non-affine callables are still accepted by
``g_norms`` but their norms are sampled suprema flagged as estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "MarkMeasure",
    "StepFunction",
    "DiffusionCoefficient",
    "JumpCoefficient",
    "GNorms",
    "ConditionReport",
    "CostBallBounds",
    "g_norms",
    "exact_majorant",
    "with_exact_majorant",
    "check_conditions",
    "check_exp_integrability",
    "cost_ball_bounds",
]


@dataclass(frozen=True)
class MarkMeasure:
    """Finite discrete mark space {v_1..v_m} with strictly positive weights."""

    weights: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("mark weights must be a nonempty one-dimensional sequence")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("mark weights must be strictly positive and finite")
        object.__setattr__(self, "weights", w)
        labels = self.labels or tuple(f"v{j + 1}" for j in range(w.size))
        if len(labels) != w.size:
            raise ValueError("labels and weights must have the same length")
        object.__setattr__(self, "labels", tuple(labels))

    @property
    def n_marks(self) -> int:
        return int(self.weights.size)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def to_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "labels": list(self.labels)}


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function of time on cells [edges[i], edges[i+1])."""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ValueError("edges must contain at least two points")
        if np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing")
        if v.shape[0] != e.size - 1:
            raise ValueError("values must have one row per cell")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)

    @property
    def n_cells(self) -> int:
        return int(self.edges.size - 1)

    @property
    def t_end(self) -> float:
        return float(self.edges[-1])

    def cell_of(self, t) -> np.ndarray:
        idx = np.searchsorted(self.edges, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def at(self, t):
        return self.values[self.cell_of(t)]

    def integral(self) -> float:
        dt = np.diff(self.edges)
        flat = self.values.reshape(self.n_cells, -1).sum(axis=1)
        return float(np.sum(dt * flat))

    @staticmethod
    def constant(value, t_end: float, n_cells: int = 1) -> "StepFunction":
        edges = np.linspace(0.0, float(t_end), n_cells + 1)
        values = np.broadcast_to(
            np.asarray(value, dtype=float), (n_cells,) + np.shape(value)
        ).copy()
        return StepFunction(edges=edges, values=values)


@dataclass(frozen=True)
class DiffusionCoefficient:
    """Diagonal diffusion with per-mode singular value a_k(t) + b_k u_k.

    ``k_table`` is the integrable majorant K(t) used by the growth/Lipschitz
    conditions; leave it None to have it derived exactly from the affine data
    (see :func:`with_exact_majorant`).
    """

    a: StepFunction  # values shape (n_cells, K)
    b: np.ndarray  # shape (K,)
    clip: Optional[float] = None
    k_table: Optional[StepFunction] = None

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if self.a.values.ndim != 2:
            raise ValueError("diffusion table must have shape (n_cells, K)")
        if b.shape != (self.a.values.shape[1],):
            raise ValueError("b must have one slope per mode")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip bound must be positive")
        object.__setattr__(self, "b", b)

    @property
    def n_modes(self) -> int:
        return int(self.a.values.shape[1])

    def singular_values(self, t: float, u: np.ndarray) -> np.ndarray:
        """s_k(t, u) for a single state (K,) or a batch (B, K)."""
        s = self.a.at(t) + self.b * u
        if self.clip is not None:
            s = np.clip(s, -self.clip, self.clip)
        return s

    def hs_norm_sq(self, t: float, u: np.ndarray) -> float:
        """Squared Hilbert-Schmidt norm of sigma(t, u)."""
        s = self.singular_values(t, u)
        return float(np.sum(s**2))

    @staticmethod
    def constant(a: Sequence[float], b: Sequence[float], t_end: float,
                 clip: Optional[float] = None) -> "DiffusionCoefficient":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return DiffusionCoefficient(
            a=StepFunction(np.array([0.0, float(t_end)]), a), b=np.asarray(b, float),
            clip=clip,
        )


@dataclass(frozen=True)
class JumpCoefficient:
    """Per-mark affine jump law G(t, u, v_j) = c_j(t) (alpha_j h_j + beta_j u)."""

    c: StepFunction  # values shape (n_cells, m)
    alphas: np.ndarray  # (m,)
    betas: np.ndarray  # (m,)
    h: np.ndarray  # (m, K) unit fields

    def __post_init__(self):
        al = np.asarray(self.alphas, dtype=float)
        be = np.asarray(self.betas, dtype=float)
        h = np.asarray(self.h, dtype=float)
        m = self.c.values.shape[1]
        if self.c.values.ndim != 2:
            raise ValueError("jump table must have shape (n_cells, m)")
        if al.shape != (m,) or be.shape != (m,):
            raise ValueError("alphas and betas must have one entry per mark")
        if h.ndim != 2 or h.shape[0] != m:
            raise ValueError("h must have shape (m, K)")
        norms = np.linalg.norm(h, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("each h_j must be a unit field")
        object.__setattr__(self, "alphas", al)
        object.__setattr__(self, "betas", be)
        object.__setattr__(self, "h", h)

    @property
    def n_marks(self) -> int:
        return int(self.c.values.shape[1])

    @property
    def n_modes(self) -> int:
        return int(self.h.shape[1])

    def evaluate(self, t: float, u: np.ndarray, j: int) -> np.ndarray:
        """G(t, u, v_j) for a single state (K,) or a batch (B, K)."""
        c = float(np.asarray(self.c.at(t))[j])
        return c * (self.alphas[j] * self.h[j] + self.betas[j] * u)

    def norm_table(self, which: int) -> np.ndarray:
        """||G(., v_j)||_{which,H} per (cell, mark); exact for the affine law."""
        if which == 0:
            return np.abs(self.c.values) * np.maximum(
                np.abs(self.alphas), np.abs(self.betas)
            )
        if which == 1:
            return np.abs(self.c.values) * np.abs(self.betas)
        raise ValueError("which must be 0 or 1")

    @staticmethod
    def constant(c: Sequence[float], alphas, betas, h, t_end: float) -> "JumpCoefficient":
        c = np.atleast_2d(np.asarray(c, dtype=float))
        return JumpCoefficient(
            c=StepFunction(np.array([0.0, float(t_end)]), c),
            alphas=alphas, betas=betas, h=h,
        )


@dataclass(frozen=True)
class GNorms:
    zero_norm: float
    one_norm: float
    exact: bool = True


def g_norms(jc, t: float, j: int, n_samples: int = 4096, seed: int = 0,
            n_modes: Optional[int] = None) -> GNorms:
    """Growth and Lipschitz norms of G(t, ., v_j).

    For the affine family both are closed forms: along the h_j direction the
    ratio ||G|| / (1 + ||u||) is |c| (|alpha| + |beta| r) / (1 + r), monotone
    in r, so its supremum is |c| max(|alpha|, |beta|), attained in the limit
    ||u|| -> 0 or ||u|| -> infinity.  Arbitrary coefficients fall back to a
    sampled supremum flagged with ``exact=False``.
    """
    if isinstance(jc, JumpCoefficient):
        c = float(np.asarray(jc.c.at(t))[j])
        zero = abs(c) * max(abs(jc.alphas[j]), abs(jc.betas[j]))
        one = abs(c * jc.betas[j])
        return GNorms(zero_norm=zero, one_norm=one, exact=True)

    if n_modes is None:
        raise ValueError("n_modes is required for sampled norms of non-affine coefficients")
    rng = np.random.default_rng(seed)
    zero = 0.0
    one = 0.0
    scales = np.concatenate([[0.0], np.logspace(-3, 3, 13)])
    for _ in range(max(1, n_samples // (2 * scales.size))):
        d1 = rng.standard_normal(n_modes)
        d2 = rng.standard_normal(n_modes)
        d1 /= max(np.linalg.norm(d1), 1e-300)
        d2 /= max(np.linalg.norm(d2), 1e-300)
        for r in scales:
            u1, u2 = r * d1, r * d2
            g1 = np.asarray(jc.evaluate(t, u1, j), dtype=float)
            g2 = np.asarray(jc.evaluate(t, u2, j), dtype=float)
            zero = max(zero, np.linalg.norm(g1) / (1.0 + r))
            du = np.linalg.norm(u1 - u2)
            if du > 0:
                one = max(one, np.linalg.norm(g1 - g2) / du)
    return GNorms(zero_norm=float(zero), one_norm=float(one), exact=False)


def _growth_quadratic(dc: Optional[DiffusionCoefficient],
                      jc: Optional[JumpCoefficient],
                      mm: Optional[MarkMeasure],
                      cell_t: float, n_modes: int):
    """Coefficients (Q, L, C0) of the growth numerator as a quadratic in u.

    ||sigma(t,u)||^2 + sum_j nu_j ||G(t,u,v_j)||^2 = u'Qu + 2 L'u + C0.
    """
    q_diag = np.zeros(n_modes)
    lin = np.zeros(n_modes)
    const = 0.0
    iso = 0.0
    if dc is not None:
        a = np.asarray(dc.a.at(cell_t), dtype=float)
        q_diag += dc.b**2
        lin += a * dc.b
        const += float(np.sum(a**2))
    if jc is not None and mm is not None:
        c = np.asarray(jc.c.at(cell_t), dtype=float)
        w = mm.weights * c**2
        iso += float(np.sum(w * jc.betas**2))
        lin += (w * jc.alphas * jc.betas) @ jc.h
        const += float(np.sum(w * jc.alphas**2))
    q = np.diag(q_diag) + iso * np.eye(n_modes)
    return q, lin, const


def exact_majorant(dc: Optional[DiffusionCoefficient],
                   jc: Optional[JumpCoefficient],
                   mm: Optional[MarkMeasure]) -> StepFunction:
    """Exact integrable majorant K(t) for the growth and Lipschitz conditions.

    Per time cell, the growth ratio sup_u N(u) / (1 + ||u||^2) with quadratic
    numerator N equals the top eigenvalue of the homogenized matrix
    [[Q, L], [L', C0]] (directions (u, 1) are dense in the unit sphere up to
    the ||u|| -> infinity limit, which contributes lambda_max(Q)).  The
    Lipschitz constant max_k b_k^2 + sum_j nu_j c_j^2 beta_j^2 is the top
    eigenvalue of Q, dominated by the same matrix, so one table serves both
    inequalities.
    """
    if dc is None and jc is None:
        raise ValueError("at least one coefficient family is required")
    edge_sets = []
    if dc is not None:
        edge_sets.append(dc.a.edges)
    if jc is not None:
        edge_sets.append(jc.c.edges)
    edges = np.unique(np.concatenate(edge_sets))
    n_modes = dc.n_modes if dc is not None else jc.n_modes
    values = np.empty(edges.size - 1)
    for i in range(edges.size - 1):
        t_mid = 0.5 * (edges[i] + edges[i + 1])
        q, lin, const = _growth_quadratic(dc, jc, mm, t_mid, n_modes)
        m = np.zeros((n_modes + 1, n_modes + 1))
        m[:n_modes, :n_modes] = q
        m[:n_modes, -1] = lin
        m[-1, :n_modes] = lin
        m[-1, -1] = const
        values[i] = float(np.linalg.eigvalsh(m)[-1])
    return StepFunction(edges=edges, values=values)


def with_exact_majorant(dc: DiffusionCoefficient,
                        jc: Optional[JumpCoefficient],
                        mm: Optional[MarkMeasure]) -> DiffusionCoefficient:
    return replace(dc, k_table=exact_majorant(dc, jc, mm))


@dataclass
class ConditionReport:
    satisfied: bool
    growth_max_ratio: float
    lipschitz_max_ratio: float
    growth_argmax: dict
    lipschitz_argmax: dict
    violations: list
    n_samples: int
    seed: int
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "satisfied": bool(self.satisfied),
            "growth_max_ratio": self.growth_max_ratio,
            "lipschitz_max_ratio": self.lipschitz_max_ratio,
            "growth_argmax": self.growth_argmax,
            "lipschitz_argmax": self.lipschitz_argmax,
            "violations": self.violations,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "tolerance": self.tolerance,
        }


def check_conditions(dc: Optional[DiffusionCoefficient],
                     jc: Optional[JumpCoefficient],
                     mm: Optional[MarkMeasure],
                     n_samples: int = 2000, seed: int = 0,
                     tolerance: float = 1e-9) -> ConditionReport:
    """Sampled verification of the growth and Lipschitz inequalities.

    Over sampled (t, u1, u2) the report records the largest ratio of each
    inequality's left side to K(t) (1 + ||u||^2) resp. K(t) ||u1 - u2||^2.
    A violated condition is a report outcome, not an error.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if dc is None and jc is None:
        raise ValueError("nothing to check")
    k_table = dc.k_table if (dc is not None and dc.k_table is not None) else None
    if k_table is None:
        k_table = exact_majorant(dc, jc, mm)
    n_modes = dc.n_modes if dc is not None else jc.n_modes
    t_end = k_table.t_end

    rng = np.random.default_rng(seed)
    # Deterministic probes guarantee the additive case attains ratio 1 at u = 0.
    times = np.concatenate([k_table.edges[:-1], rng.uniform(0.0, t_end, n_samples)])
    scales = np.concatenate([[0.0, 1e-6], np.logspace(-2, 3, 6)])

    def lhs_growth(t, u):
        val = dc.hs_norm_sq(t, u) if dc is not None else 0.0
        if jc is not None and mm is not None:
            for j in range(mm.n_marks):
                val += mm.weights[j] * float(np.sum(jc.evaluate(t, u, j) ** 2))
        return val

    def lhs_lipschitz(t, u1, u2):
        val = 0.0
        if dc is not None:
            s1 = dc.singular_values(t, u1)
            s2 = dc.singular_values(t, u2)
            val += float(np.sum((s1 - s2) ** 2))
        if jc is not None and mm is not None:
            for j in range(mm.n_marks):
                dg = jc.evaluate(t, u1, j) - jc.evaluate(t, u2, j)
                val += mm.weights[j] * float(np.sum(dg**2))
        return val

    g_max, g_arg = -np.inf, {}
    l_max, l_arg = -np.inf, {}
    for t in times:
        k_t = float(np.asarray(k_table.at(t)))
        for r in scales:
            d = rng.standard_normal(n_modes)
            d /= max(np.linalg.norm(d), 1e-300)
            u = r * d
            ratio = lhs_growth(t, u) / (k_t * (1.0 + r**2))
            if ratio > g_max:
                g_max, g_arg = ratio, {"t": float(t), "u_norm": float(r)}
        u1 = rng.standard_normal(n_modes) * rng.choice(scales[1:])
        u2 = u1 + rng.standard_normal(n_modes) * rng.choice(scales[1:])
        du2 = float(np.sum((u1 - u2) ** 2))
        if du2 > 0:
            ratio = lhs_lipschitz(t, u1, u2) / (k_t * du2)
            if ratio > l_max:
                l_max, l_arg = ratio, {"t": float(t), "du_norm": float(np.sqrt(du2))}

    violations = []
    if g_max > 1.0 + tolerance:
        violations.append({
            "inequality": "growth",
            "statement": "||sigma(t,u)||^2 + sum_j nu_j ||G(t,u,v_j)||^2 <= K(t)(1+||u||^2)",
            "max_ratio": float(g_max), "at": g_arg,
        })
    if l_max > 1.0 + tolerance:
        violations.append({
            "inequality": "lipschitz",
            "statement": "||sigma(t,u1)-sigma(t,u2)||^2 + sum_j nu_j ||dG_j||^2 <= K(t)||u1-u2||^2",
            "max_ratio": float(l_max), "at": l_arg,
        })
    return ConditionReport(
        satisfied=not violations,
        growth_max_ratio=float(g_max),
        lipschitz_max_ratio=float(l_max),
        growth_argmax=g_arg,
        lipschitz_argmax=l_arg,
        violations=violations,
        n_samples=n_samples,
        seed=seed,
        tolerance=tolerance,
    )


def _exp_integral(jc: JumpCoefficient, mm: MarkMeasure, delta: float,
                  which: int, power: int, positive_only: bool = False) -> float:
    """integral over [0,T] x marks of exp(delta ||G||^power) d(nu x dt)."""
    norms = jc.norm_table(which)
    dt = np.diff(jc.c.edges)
    integrand = np.exp(delta * norms**power)
    if positive_only:
        integrand = np.where(norms > 0, integrand, 0.0)
    return float(np.sum(dt[:, None] * integrand * mm.weights[None, :]))


def check_exp_integrability(jc: JumpCoefficient, mm: MarkMeasure,
                            delta: float, which: int) -> float:
    """Exact value of the exponential-moment integral for the jump norms.

    Returns integral_0^T sum_j exp(delta ||G(s, v_j)||^2_{which,H}) nu_j ds.
    Finiteness is automatic for a finite mark space; the value shows how the
    moment scales with delta.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if which not in (0, 1):
        raise ValueError("which must be 0 or 1")
    return _exp_integral(jc, mm, delta, which, power=2)


@dataclass(frozen=True)
class CostBallBounds:
    """Upper bounds for the cost-ball suprema of the jump-norm integrals.

    ``c_i1`` bounds sup over {L_T(g) <= N} of the |g - 1|-weighted first-power
    integral; ``c_i2`` the (g + 1)-weighted squared integral, for i = 0, 1.
    """

    n_budget: float
    sigma: float
    c01: float
    c02: float
    c11: float
    c12: float

    def bound(self, which: int, order: int) -> float:
        return {
            (0, 1): self.c01, (0, 2): self.c02,
            (1, 1): self.c11, (1, 2): self.c12,
        }[(which, order)]


def cost_ball_bounds(jc: JumpCoefficient, mm: MarkMeasure,
                   n_budget: float, sigma: float) -> CostBallBounds:
    """Explicit bounds via the Young-type inequality ab <= e^{sigma a}/sigma + l(b)/sigma.

    Applied pointwise only where the norm factor is positive (where it
    vanishes the product is zero), so identically vanishing norms give bound
    exactly 0.  The l(g) budget contributes N/sigma once per integral.
    """
    if n_budget < 0:
        raise ValueError("cost budget must be >= 0")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    out = {}
    dt = np.diff(jc.c.edges)
    for which in (0, 1):
        norms = jc.norm_table(which)
        has_mass = bool(np.any(norms > 0))
        budget_term = n_budget / sigma if has_mass else 0.0
        lin = float(np.sum(dt[:, None] * norms * mm.weights[None, :]))
        sq = float(np.sum(dt[:, None] * norms**2 * mm.weights[None, :]))
        e1 = _exp_integral(jc, mm, sigma, which, power=1, positive_only=True)
        e2 = _exp_integral(jc, mm, sigma, which, power=2, positive_only=True)
        out[(which, 1)] = e1 / sigma + budget_term + lin
        out[(which, 2)] = e2 / sigma + budget_term + sq
    return CostBallBounds(
        n_budget=float(n_budget), sigma=float(sigma),
        c01=out[(0, 1)], c02=out[(0, 2)], c11=out[(1, 1)], c12=out[(1, 2)],
    )
