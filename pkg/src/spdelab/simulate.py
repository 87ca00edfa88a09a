"""Simulation of the small-noise jump-diffusion evolution and its Girsanov tilts.

Dynamics per mode, between jumps (exponential Euler, forcing frozen at the
left endpoint):

    x_k(t + dt) = e^{-zeta_k dt} x_k(t)
                  + (1 - e^{-zeta_k dt}) / zeta_k * F_k(t, x(t))
                  + sqrt(eps) s_k(t, x(t)) dB_k,

    F(t, x) = sigma(t, x) psi(t) - sum_j G(t, x, v_j) nu_j.

The -G nu term is the net compensator drift: the controlled equation adds
G (phi - 1) nu while its jump martingale is compensated at phi nu, so the phi
contributions cancel and the control enters only through the jump intensity
eps^-1 phi nu.  Jumps are applied at their exact sampled times by sub-stepping
inside the grid step, each displacing the state by eps G(s, X_{s-}, v).

The accumulated Girsanov log-density is

    log E = sum_{jumps} log phi(s, v) + eps^-1 int (1 - phi) dnu_T
            + eps^-1/2 int psi . dbeta - (2 eps)^-1 int ||psi||^2 ds,

where beta is the canonical Brownian motion under the reference measure.  A
path simulated under a generating control records raw increments of the
simulation Brownian motion; the canonical increments are those plus the
generating drift eps^-1/2 psi_gen dt.  Evaluated on uncontrolled paths the
density is the reference-measure martingale with mean one; evaluated on paths
generated under the same control, exp(-log E) is the importance weight that
reweights controlled samples back to the reference measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .controls import ControlPair
from .model import Model
from .noise import JumpEvent, NoiseBundle, sample_brownian, sample_controlled_prm, sample_prm

__all__ = [
    "AppliedJump",
    "SdePath",
    "EnsembleSummary",
    "BlowUpError",
    "simulate_uncontrolled",
    "simulate_controlled",
    "simulate_ensemble",
    "girsanov_log_weight",
    "tail_energy",
    "noise_bundle",
]

BLOWUP_NORM = 1e8


class BlowUpError(RuntimeError):
    def __init__(self, t: float, norm: float, replica: int):
        self.t, self.norm, self.replica = t, norm, replica
        super().__init__(
            f"state norm {norm:.3e} exceeded {BLOWUP_NORM:.0e} at t={t:.6g} "
            f"(replica {replica})"
        )


class AppliedJump(NamedTuple):
    time: float
    mark: int
    pre_state: np.ndarray
    displacement: np.ndarray


@dataclass
class SdePath:
    """A single simulated trajectory with its driving noise and jump log."""

    grid: np.ndarray
    states: np.ndarray  # (M + 1, K) values at grid nodes
    jumps: List[AppliedJump]
    brownian: np.ndarray  # (K, M) raw simulated increments
    log_weight: float
    epsilon: float
    seed: int
    replica: int
    control: Optional[ControlPair]  # generating control; None when uncontrolled
    weight_flagged: bool = False

    def sup_h_norm(self) -> float:
        sup = float(np.max(np.linalg.norm(self.states, axis=1)))
        for jump in self.jumps:
            sup = max(sup, float(np.linalg.norm(jump.pre_state + jump.displacement)))
        return sup

    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class EnsembleSummary:
    """Associatively mergeable per-replica statistics of a path ensemble."""

    terminal: np.ndarray  # (n, K)
    sup_h: np.ndarray  # (n,)
    log_weight: np.ndarray  # (n,)
    flagged: np.ndarray  # (n,) bool
    sup_dist: Optional[np.ndarray] = None  # (n,) sup distance to reference
    head_energy: Optional[np.ndarray] = None  # (n, len(tail_ks)), t <= t0
    tail_energy: Optional[np.ndarray] = None  # (n, len(tail_ks)), t >= t0
    tail_ks: Optional[Sequence[int]] = None
    jump_counts: Optional[np.ndarray] = None  # (n,)

    @property
    def n_paths(self) -> int:
        return int(self.terminal.shape[0])

    def weights(self) -> np.ndarray:
        return np.exp(-self.log_weight)


def _events_for_replica(model: Model, epsilon: float, u: Optional[ControlPair],
                        t_end: float, seed: int, replica: int):
    if model.jump is None:
        return []
    if u is None or u.n_marks == 0:
        return sample_prm(1.0 / epsilon, model.marks, t_end, seed, replica)
    return sample_controlled_prm(u.g_table(), epsilon, model.marks, t_end, seed, replica)


def _tilt_jump_compensation(u: ControlPair, model: Model, epsilon: float) -> float:
    """eps^-1 integral of (1 - phi) over [0, T] x marks against dt x nu."""
    dt = np.diff(u.edges)
    return float(np.sum(dt[:, None] * (1.0 - u.g) * model.marks.weights[None, :])) / epsilon


def _suffix_energy(x: np.ndarray, ks: Sequence[int]) -> np.ndarray:
    """sum_{i >= k} x_i^2 for each 1-based cutoff k; columns ordered like ks."""
    sq = x**2
    suffix = np.cumsum(sq[..., ::-1], axis=-1)[..., ::-1]
    cols = []
    n_modes = x.shape[-1]
    for k in ks:
        if k <= n_modes:
            cols.append(suffix[..., k - 1])
        else:
            cols.append(np.zeros(x.shape[:-1]))
    return np.stack(cols, axis=-1)


def _run_paths(model: Model, epsilon: float, u_gen: Optional[ControlPair],
               x0: np.ndarray, grid: np.ndarray, seed: int,
               replicas: Sequence[int],
               weight_control: Optional[ControlPair] = None,
               ref: Optional[np.ndarray] = None,
               tail_ks: Optional[Sequence[int]] = None,
               t0: Optional[float] = None,
               record: bool = False):
    """Shared engine: evolve a batch of replicas, tracking requested statistics.

    ``weight_control`` selects the tilt whose Girsanov log-density is
    accumulated; it defaults to the generating control.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    if grid.size < 2 or np.any(dt <= 0) or grid[0] != 0.0:
        raise ValueError("grid must be strictly increasing and start at 0")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n_modes,):
        raise ValueError("x0 has wrong dimension")
    if tail_ks and t0 is None:
        raise ValueError("tail-energy tracking needs a split time t0")
    if weight_control is None:
        weight_control = u_gen
    for ctrl, name in ((u_gen, "control"), (weight_control, "weight control")):
        if ctrl is not None and abs(ctrl.t_end - grid[-1]) > 1e-12:
            raise ValueError(f"{name} cells must span the simulation horizon")

    n_steps = dt.size
    n_modes = model.n_modes
    t_left = grid[:-1]
    zetas = model.system.zetas
    decay = np.exp(-np.outer(dt, zetas))
    phi1 = np.empty_like(decay)
    nz = zetas > 0
    phi1[:, nz] = (1.0 - decay[:, nz]) / zetas[nz][None, :]
    phi1[:, ~nz] = dt[:, None]
    sqeps = math.sqrt(epsilon)

    # Per-step coefficient tables (state-independent pieces).
    if model.sigma is not None:
        a_vals = np.asarray(model.sigma.a.at(t_left), dtype=float).reshape(n_steps, n_modes)
        b = model.sigma.b
        clip = model.sigma.clip
    else:
        a_vals = np.zeros((n_steps, n_modes))
        b = np.zeros(n_modes)
        clip = None
    psi_vals = (
        u_gen.f[u_gen.cell_of(t_left)] if u_gen is not None else np.zeros((n_steps, n_modes))
    )
    if model.jump is not None:
        jc, mm = model.jump, model.marks
        c_vals = np.asarray(jc.c.at(t_left), dtype=float).reshape(n_steps, mm.n_marks)
        w_drift = -c_vals * mm.weights[None, :]
        add = w_drift @ (jc.alphas[:, None] * jc.h)
        iso = w_drift @ jc.betas
    else:
        add = np.zeros((n_steps, n_modes))
        iso = np.zeros(n_steps)

    # Girsanov pieces for the evaluated tilt.
    wc = weight_control
    tilt_psi = wc.f[wc.cell_of(t_left)] if wc is not None else None
    gen_psi = psi_vals
    jump_comp = 0.0
    if wc is not None and wc.n_marks and model.jump is not None:
        jump_comp = _tilt_jump_compensation(wc, model, epsilon)

    n = len(replicas)
    terminal = np.empty((n, n_modes))
    sup_h = np.empty(n)
    logw = np.full(n, jump_comp)
    flagged = np.zeros(n, dtype=bool)
    sup_dist = np.empty(n) if ref is not None else None
    n_k = len(tail_ks) if tail_ks else 0
    head_e = np.zeros((n, n_k)) if tail_ks else None
    tail_e = np.zeros((n, n_k)) if tail_ks else None
    jump_counts = np.zeros(n, dtype=int)
    paths: List[SdePath] = []

    chunk = max(16, min(n, int(4e6 / max(1, n_steps * n_modes))))
    for lo in range(0, n, chunk):
        reps = replicas[lo : lo + chunk]
        nb = len(reps)
        brown = np.empty((nb, n_modes, n_steps))
        for i, rep in enumerate(reps):
            brown[i] = sample_brownian(n_modes, grid, seed, rep)
        events_by_step = [{} for _ in range(n_steps)]
        for i, rep in enumerate(reps):
            evs = _events_for_replica(model, epsilon, u_gen, grid[-1], seed, rep)
            jump_counts[lo + i] = len(evs)
            for ev in evs:
                m = min(int(np.searchsorted(grid, ev.time, side="right")) - 1, n_steps - 1)
                events_by_step[m].setdefault(i, []).append(ev)

        x = np.tile(x0, (nb, 1))
        c_sup = np.full(nb, float(np.sum(x0**2)))
        c_logw = np.zeros(nb)
        c_flag = np.zeros(nb, dtype=bool)
        c_dist = None
        if ref is not None:
            c_dist = np.full(nb, float(np.linalg.norm(x0 - ref[0])))
        if tail_ks:
            e0 = _suffix_energy(x, tail_ks)
            c_head = e0.copy()
            c_tail = e0.copy() if t0 <= 0.0 else np.zeros((nb, n_k))
        rec_states = np.empty((nb, n_steps + 1, n_modes)) if record else None
        rec_jumps = [[] for _ in range(nb)] if record else None
        if record:
            rec_states[:, 0] = x

        for m in range(n_steps):
            tm, tnext, h = t_left[m], grid[m + 1], dt[m]
            s = a_vals[m][None, :] + b[None, :] * x
            if clip is not None:
                s = np.clip(s, -clip, clip)
            forcing = s * psi_vals[m][None, :] + add[m][None, :] + iso[m] * x
            x_new = decay[m][None, :] * x + phi1[m][None, :] * forcing
            step_events = events_by_step[m]
            for i, evs in step_events.items():
                xi = x[i]
                fi = forcing[i]
                t_cur = tm
                for ev in evs:
                    delta = ev.time - t_cur
                    dd = np.exp(-zetas * delta)
                    pp = np.where(nz, (1.0 - dd) / np.where(nz, zetas, 1.0), delta)
                    xi = dd * xi + pp * fi
                    disp = epsilon * model.jump.evaluate(ev.time, xi, ev.mark)
                    pre = xi
                    xi = xi + disp
                    t_cur = ev.time
                    c_sup[i] = max(c_sup[i], float(np.sum(xi**2)))
                    if tail_ks:
                        e_jump = _suffix_energy(xi, tail_ks)
                        if ev.time <= t0:
                            c_head[i] = np.maximum(c_head[i], e_jump)
                        if ev.time >= t0:
                            c_tail[i] = np.maximum(c_tail[i], e_jump)
                    if wc is not None and wc.n_marks:
                        phi_e = float(wc.g_at(ev.time)[ev.mark])
                        if phi_e <= 0.0:
                            c_logw[i] = -np.inf
                            c_flag[i] = True
                        else:
                            c_logw[i] += math.log(phi_e)
                    if record:
                        rec_jumps[i].append(
                            AppliedJump(ev.time, ev.mark, pre.copy(), disp.copy())
                        )
                delta = tnext - t_cur
                dd = np.exp(-zetas * delta)
                pp = np.where(nz, (1.0 - dd) / np.where(nz, zetas, 1.0), delta)
                x_new[i] = dd * xi + pp * fi
            x_new += sqeps * s * brown[:, :, m]
            x = x_new
            h2 = np.sum(x**2, axis=1)
            if np.max(h2) > BLOWUP_NORM**2:
                i_bad = int(np.argmax(h2))
                raise BlowUpError(tnext, float(np.sqrt(h2[i_bad])), reps[i_bad])
            c_sup = np.maximum(c_sup, h2)
            if tilt_psi is not None and np.any(tilt_psi[m]):
                db_can = brown[:, :, m] + (gen_psi[m] / sqeps * h)[None, :]
                c_logw += (db_can @ tilt_psi[m]) / sqeps
                c_logw -= float(np.sum(tilt_psi[m] ** 2)) * h / (2.0 * epsilon)
            if ref is not None:
                c_dist = np.maximum(c_dist, np.linalg.norm(x - ref[m + 1], axis=1))
            if tail_ks:
                e_now = _suffix_energy(x, tail_ks)
                if tnext <= t0:
                    c_head = np.maximum(c_head, e_now)
                if tnext >= t0:
                    c_tail = np.maximum(c_tail, e_now)
            if record:
                rec_states[:, m + 1] = x

        terminal[lo : lo + nb] = x
        sup_h[lo : lo + nb] = np.sqrt(c_sup)
        logw[lo : lo + nb] += c_logw
        flagged[lo : lo + nb] = c_flag
        if ref is not None:
            sup_dist[lo : lo + nb] = c_dist
        if tail_ks:
            head_e[lo : lo + nb] = c_head
            tail_e[lo : lo + nb] = c_tail
        if record:
            for i, rep in enumerate(reps):
                paths.append(SdePath(
                    grid=grid, states=rec_states[i], jumps=rec_jumps[i],
                    brownian=brown[i], log_weight=float(logw[lo + i]),
                    epsilon=epsilon, seed=seed, replica=rep, control=u_gen,
                    weight_flagged=bool(c_flag[i]),
                ))

    summary = EnsembleSummary(
        terminal=terminal, sup_h=sup_h, log_weight=logw, flagged=flagged,
        sup_dist=sup_dist, head_energy=head_e, tail_energy=tail_e,
        tail_ks=tail_ks, jump_counts=jump_counts,
    )
    return (summary, paths) if record else (summary, None)


def simulate_uncontrolled(model: Model, epsilon: float, x0: np.ndarray,
                          grid: np.ndarray, seed: int, replica: int = 0) -> SdePath:
    """One path of the uncontrolled equation, fully recorded."""
    _, paths = _run_paths(model, epsilon, None, x0, grid, seed, [replica], record=True)
    return paths[0]


def simulate_controlled(model: Model, epsilon: float, u: ControlPair,
                        x0: np.ndarray, grid: np.ndarray, seed: int,
                        replica: int = 0) -> SdePath:
    """One path of the Girsanov-controlled equation, fully recorded.

    The accumulated ``log_weight`` is the controlled-measure density of this
    path's own control; exp(-log_weight) reweights it back to the reference.
    """
    _, paths = _run_paths(model, epsilon, u, x0, grid, seed, [replica], record=True)
    return paths[0]


def simulate_ensemble(model: Model, epsilon: float, u: Optional[ControlPair],
                      x0: np.ndarray, grid: np.ndarray, seed: int, n: int,
                      weight_control: Optional[ControlPair] = None,
                      ref: Optional[np.ndarray] = None,
                      tail_ks: Optional[Sequence[int]] = None,
                      t0: Optional[float] = None) -> EnsembleSummary:
    """Summarized ensemble of ``n`` replicas with per-replica noise streams."""
    summary, _ = _run_paths(
        model, epsilon, u, x0, grid, seed, list(range(n)),
        weight_control=weight_control, ref=ref, tail_ks=tail_ks, t0=t0,
    )
    return summary


def girsanov_log_weight(model: Model, path: SdePath, u: ControlPair,
                        epsilon: Optional[float] = None) -> float:
    """Girsanov log-density of the tilt ``u`` evaluated along a stored path.

    The path's generating control supplies the drift that converts its raw
    simulated increments into canonical ones.  For a path generated under
    ``u`` itself this reproduces the simulator's accumulated ``log_weight``;
    for an uncontrolled path it is the reference-measure martingale density.
    """
    if epsilon is None:
        epsilon = path.epsilon
    if epsilon != path.epsilon:
        raise ValueError("epsilon must match the path's epsilon")
    if abs(u.t_end - path.grid[-1]) > 1e-12:
        raise ValueError("tilt cells must span the path's horizon")
    sqeps = math.sqrt(epsilon)
    grid = path.grid
    t_left = grid[:-1]
    dt = np.diff(grid)
    lw = 0.0
    flagged = False
    if u.n_marks and model.jump is not None:
        lw += _tilt_jump_compensation(u, model, epsilon)
        for jump in path.jumps:
            phi_e = float(u.g_at(jump.time)[jump.mark])
            if phi_e <= 0.0:
                return -np.inf
            lw += math.log(phi_e)
    psi = u.f[u.cell_of(t_left)]
    if np.any(psi):
        gen_psi = (
            path.control.f[path.control.cell_of(t_left)]
            if path.control is not None
            else np.zeros_like(psi)
        )
        db_can = path.brownian.T + gen_psi * (dt[:, None] / sqeps)
        lw += float(np.sum(db_can * psi)) / sqeps
        lw -= float(np.sum(np.sum(psi**2, axis=1) * dt)) / (2.0 * epsilon)
    return lw


def noise_bundle(path: SdePath) -> NoiseBundle:
    """The driving noise of a recorded path, in replayable bundle form."""
    return NoiseBundle(
        grid=path.grid,
        brownian=path.brownian,
        jumps=[JumpEvent(j.time, j.mark) for j in path.jumps],
        seed=path.seed,
    )


def tail_energy(path: SdePath, k: int, t0: float):
    """(head, tail) suprema of the energy in modes >= k, split at t0.

    head = sup over t <= t0, tail = sup over t >= t0, both taken over grid
    nodes and post-jump states.
    """
    n_modes = path.states.shape[1]
    if k < 1:
        raise ValueError("cutoff k must be >= 1")
    if k > n_modes:
        return 0.0, 0.0
    energies = [(float(t), float(np.sum(s[k - 1 :] ** 2)))
                for t, s in zip(path.grid, path.states)]
    energies += [
        (jump.time, float(np.sum((jump.pre_state + jump.displacement)[k - 1 :] ** 2)))
        for jump in path.jumps
    ]
    head = max((e for t, e in energies if t <= t0), default=0.0)
    tail = max((e for t, e in energies if t >= t0), default=0.0)
    return head, tail
