"""Monte-Carlo validation experiments: probabilities, slopes, convergence, tails.

Probability estimates carry Wilson 95% intervals.  The slope experiment
extrapolates -I from eps log p(eps): since sharp small-noise asymptotics give
p(eps) ~ C sqrt(eps) exp(-I / eps) for nondegenerate terminal events, the fit
regresses log p_hat - (1/2) log eps on 1/eps, which removes the prefactor
bias that a bare 1/eps fit would leave at desk-scale eps.  Experiments that
cannot reach the minimum hit count within the path cap report INCONCLUSIVE
rather than a number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .controls import ControlPair, zero_control
from .model import Model
from .rate import MinimizeOptions, RateEstimate, TerminalTarget, minimize_rate
from .simulate import simulate_ensemble
from .skeleton import solve_skeleton

__all__ = [
    "EventSpec",
    "ProbabilityEstimate",
    "SlopeReport",
    "ISEstimate",
    "TightnessReport",
    "subseed",
    "wilson_interval",
    "estimate_probability",
    "ldp_slope",
    "importance_sampling_estimate",
    "convergence_experiment_a",
    "convergence_experiment_b",
    "tightness_report",
]

MIN_EXPECTED_HITS = 20
PILOT_PATHS = 200
PATH_CAP = 1_000_000


def subseed(seed: int, *key: int) -> int:
    """Stable derived seed for a sub-experiment."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054):
    if n <= 0:
        raise ValueError("n must be positive")
    p = hits / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class EventSpec:
    """Closed terminal event: half-space {<X_T, e_mode> >= a} or
    ball complement {||X_T - z|| >= r}."""

    kind: str
    a: float = math.inf
    mode: int = 1
    z: Optional[np.ndarray] = None
    r: float = 0.0

    def __post_init__(self):
        if self.kind not in ("half_space", "ball_complement"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "ball_complement":
            if self.z is None:
                raise ValueError("ball_complement needs a center z")
            object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
            if self.r < 0:
                raise ValueError("radius must be >= 0")

    def hit(self, terminal: np.ndarray) -> np.ndarray:
        terminal = np.atleast_2d(terminal)
        if self.kind == "half_space":
            return terminal[:, self.mode - 1] >= self.a
        return np.linalg.norm(terminal - self.z[None, :], axis=1) >= self.r

    def to_target(self) -> TerminalTarget:
        if self.kind == "half_space":
            return TerminalTarget(kind="half_space", a=self.a, mode=self.mode)
        return TerminalTarget(kind="ball_complement", z=self.z, r=self.r)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "a": self.a, "mode": self.mode, "r": self.r}
        if self.z is not None:
            d["z"] = [float(v) for v in self.z]
        return d


@dataclass
class ProbabilityEstimate:
    p_hat: float
    ci: tuple
    hits: int
    n: int
    zero_hits: bool

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat, "ci_low": self.ci[0], "ci_high": self.ci[1],
            "hits": self.hits, "n": self.n, "zero_hits": self.zero_hits,
        }


def estimate_probability(model: Model, epsilon: float, event: EventSpec,
                         n: int, seed: int, x0, grid) -> ProbabilityEstimate:
    """Crude Monte-Carlo probability of a terminal event with Wilson 95% CI."""
    if n < 100:
        raise ValueError("need at least 100 paths")
    summary = simulate_ensemble(model, epsilon, None, x0, grid, seed, n)
    hits = int(np.sum(event.hit(summary.terminal)))
    if hits == 0:
        return ProbabilityEstimate(
            p_hat=0.0, ci=(0.0, wilson_interval(0, n)[1]), hits=0, n=n, zero_hits=True
        )
    return ProbabilityEstimate(
        p_hat=hits / n, ci=wilson_interval(hits, n), hits=hits, n=n, zero_hits=False
    )


@dataclass
class SlopeReport:
    rows: List[dict]
    slope: Optional[float]  # extrapolated -I from the prefactor-corrected fit
    i_mc: Optional[float]
    i_opt: Optional[float]
    rel_gap: Optional[float]
    inconclusive: bool

    def to_dict(self) -> dict:
        return {
            "rows": self.rows, "slope": self.slope, "i_mc": self.i_mc,
            "i_opt": self.i_opt, "rel_gap": self.rel_gap,
            "inconclusive": self.inconclusive,
        }


def ldp_slope(model: Model, event: EventSpec, eps_list: Sequence[float],
              n_grid_steps: int, x0, seed: int,
              target_hits: int = 100,
              rate_estimate: Optional[RateEstimate] = None,
              rate_opts: Optional[MinimizeOptions] = None) -> SlopeReport:
    """eps log p versus the optimized rate, with pilot-sized path counts.

    Each epsilon is pre-sized by a 200-path pilot so the main run expects at
    least ``target_hits`` hits (never fewer than MIN_EXPECTED_HITS), capped at
    one million paths; an epsilon whose minimum requirement exceeds the cap,
    or whose realized hits fall below the minimum, is flagged INCONCLUSIVE.
    """
    eps_list = list(eps_list)
    if any(e <= 0 for e in eps_list) or any(
        eps_list[i] <= eps_list[i + 1] for i in range(len(eps_list) - 1)
    ):
        raise ValueError("eps_list must be positive and strictly decreasing")
    if max(eps_list) > 0.1 + 1e-12:
        raise ValueError("slope experiments are restricted to eps <= 0.1")

    grid = np.linspace(0.0, model.t_end, n_grid_steps + 1)
    rows = []
    for i, eps in enumerate(eps_list):
        # Staged pilot: start at 200 paths and grow geometrically until the
        # event is seen a few times, so rare events are sized from an actual
        # estimate instead of a zero-hit upper bound.
        pilot_n = PILOT_PATHS
        for stage in range(4):
            pilot = simulate_ensemble(
                model, eps, None, x0, grid, subseed(seed, 901, i, stage), pilot_n
            )
            pilot_hits = int(np.sum(event.hit(pilot.terminal)))
            if pilot_hits >= 3 or pilot_n * 8 > PATH_CAP // 4:
                break
            pilot_n *= 8
        # A zero-hit pilot yields only an upper bound, not an estimate; no
        # main-run size can then be certified, so the epsilon is inconclusive.
        if pilot_hits == 0 or math.ceil(MIN_EXPECTED_HITS / (pilot_hits / pilot_n)) > PATH_CAP:
            rows.append({
                "eps": eps, "n": 0, "hits": 0, "p_hat": 0.0,
                "ci_low": 0.0, "ci_high": 0.0, "eps_log_p": None,
                "inconclusive": True,
            })
            continue
        p_est = pilot_hits / pilot_n
        n = int(min(max(math.ceil(target_hits / p_est), 2000), PATH_CAP))
        est = estimate_probability(model, eps, event, n, subseed(seed, 902, i), x0, grid)
        inconclusive = est.hits < MIN_EXPECTED_HITS
        rows.append({
            "eps": eps, "n": n, "hits": est.hits, "p_hat": est.p_hat,
            "ci_low": est.ci[0], "ci_high": est.ci[1],
            "eps_log_p": eps * math.log(est.p_hat) if est.p_hat > 0 else None,
            "inconclusive": inconclusive,
        })

    good = [r for r in rows if not r["inconclusive"]]
    slope = i_mc = i_opt = rel_gap = None
    if len(good) >= 2:
        x = np.array([1.0 / r["eps"] for r in good])
        y = np.array([math.log(r["p_hat"]) - 0.5 * math.log(r["eps"]) for r in good])
        slope = float(np.polyfit(x, y, 1)[0])
        i_mc = -slope
    if rate_estimate is None and i_mc is not None:
        rate_estimate = minimize_rate(model, event.to_target(), x0, opts=rate_opts)
    if rate_estimate is not None:
        i_opt = rate_estimate.value if isinstance(rate_estimate, RateEstimate) else float(rate_estimate)
        if i_mc is not None and np.isfinite(i_opt) and i_opt > 0:
            rel_gap = abs(i_mc - i_opt) / i_opt
    return SlopeReport(
        rows=rows, slope=slope, i_mc=i_mc, i_opt=i_opt, rel_gap=rel_gap,
        inconclusive=any(r["inconclusive"] for r in rows),
    )


@dataclass
class ISEstimate:
    p_hat: float
    ci: tuple
    variance_ratio: Optional[float]
    flagged: int
    crude: Optional[ProbabilityEstimate]

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat, "ci_low": self.ci[0], "ci_high": self.ci[1],
            "variance_ratio": self.variance_ratio, "flagged": self.flagged,
            "crude": self.crude.to_dict() if self.crude else None,
        }


def importance_sampling_estimate(model: Model, epsilon: float, event: EventSpec,
                                 n: int, seed: int, minimizer: ControlPair,
                                 x0, grid,
                                 compare_crude: bool = True) -> ISEstimate:
    """Tilted estimate: simulate under the minimizer, weight hits by exp(-log E).

    The variance ratio compares the per-sample variance of the weighted
    indicator against p(1-p) from a crude run of equal size.
    """
    summary = simulate_ensemble(model, epsilon, minimizer, x0, grid, seed, n)
    flagged = int(np.sum(summary.flagged))
    if flagged > 1e-3 * n:
        raise RuntimeError(
            f"{flagged} of {n} samples carried infinite weights; the tilt "
            "vanishes on the event's support"
        )
    ok = ~summary.flagged
    contrib = np.zeros(n)
    contrib[ok] = np.exp(-summary.log_weight[ok]) * event.hit(summary.terminal[ok])
    p_hat = float(np.mean(contrib))
    se = float(np.std(contrib, ddof=1) / math.sqrt(n))
    ci = (max(0.0, p_hat - 1.959963984540054 * se), p_hat + 1.959963984540054 * se)
    crude = None
    variance_ratio = None
    if compare_crude:
        crude = estimate_probability(model, epsilon, event, n, subseed(seed, 903), x0, grid)
        p_ref = crude.p_hat if crude.hits > 0 else p_hat
        if 0 < p_ref < 1:
            variance_ratio = float(np.var(contrib, ddof=1) / (p_ref * (1.0 - p_ref)))
    return ISEstimate(p_hat=p_hat, ci=ci, variance_ratio=variance_ratio,
                      flagged=flagged, crude=crude)


def convergence_experiment_a(model: Model, q_sequence: Sequence[ControlPair],
                             q: ControlPair, x0, grid) -> List[float]:
    """sup-H distances between the skeletons of q_n and of the limit control q."""
    ref = solve_skeleton(model, q, x0, grid)
    return [
        solve_skeleton(model, qn, x0, grid).sup_distance(ref.trajectory)
        for qn in q_sequence
    ]


def convergence_experiment_b(model: Model, u: ControlPair,
                             eps_list: Sequence[float], n: int, seed: int,
                             x0, grid) -> List[dict]:
    """Median sup-distance between controlled paths and the skeleton, per eps."""
    ref = solve_skeleton(model, u, x0, grid).trajectory
    rows = []
    for i, eps in enumerate(eps_list):
        summary = simulate_ensemble(
            model, eps, u, x0, grid, subseed(seed, 904, i), n, ref=ref
        )
        rows.append({
            "eps": float(eps), "n": n,
            "median_sup_distance": float(np.median(summary.sup_dist)),
        })
    return rows


@dataclass
class TightnessReport:
    rows: List[dict]  # per (eps, control, k)
    fits: List[dict]  # per (eps, control): slope of log tail vs zeta_k
    t0: float

    def to_dict(self) -> dict:
        return {"rows": self.rows, "fits": self.fits, "t0": self.t0}


def tightness_report(model: Model, eps_list: Sequence[float],
                     u_list: Sequence[Optional[ControlPair]],
                     k_list: Sequence[int], t0: float, n: int, seed: int,
                     x0, grid) -> TightnessReport:
    """High-mode energy envelopes: E sup_{t >= t0} of the tail energy per cutoff.

    For each (eps, control) the log of the mean tail energy is regressed on
    zeta_k; the exponential envelope predicts slope -2 t0.  Head-window
    energies (t <= t0) are reported alongside for the smallness check.
    """
    if not (0.0 < t0 < model.t_end):
        raise ValueError("t0 must lie strictly inside (0, T)")
    zetas = model.system.zetas
    rows = []
    fits = []
    for i, eps in enumerate(eps_list):
        for ui, u in enumerate(u_list):
            summary = simulate_ensemble(
                model, eps, u, x0, grid, subseed(seed, 905, i, ui), n,
                tail_ks=list(k_list), t0=t0,
            )
            mean_tail = summary.tail_energy.mean(axis=0)
            mean_head = summary.head_energy.mean(axis=0)
            zs, logs = [], []
            for col, k in enumerate(k_list):
                rows.append({
                    "eps": float(eps), "control": ui, "k": int(k),
                    "zeta_k": float(zetas[k - 1]) if k <= zetas.size else None,
                    "mean_tail": float(mean_tail[col]),
                    "mean_head": float(mean_head[col]),
                })
                if k <= zetas.size and mean_tail[col] > 0:
                    zs.append(zetas[k - 1])
                    logs.append(math.log(mean_tail[col]))
            if len(zs) >= 2:
                coeffs = np.polyfit(np.array(zs), np.array(logs), 1)
                fits.append({
                    "eps": float(eps), "control": ui,
                    "slope": float(coeffs[0]),
                    "envelope_constant": float(np.exp(coeffs[1])),
                    "predicted_slope": -2.0 * t0,
                })
    return TightnessReport(rows=rows, fits=fits, t0=t0)
