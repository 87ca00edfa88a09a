"""Command-line entry points and run orchestration.

Each experiment writes one CSV table and one JSON summary into a fresh run
directory named by timestamp + config hash, alongside a manifest recording
the config, master seed, and library versions.  Exit status: 0 on success,
2 when a Monte-Carlo experiment is INCONCLUSIVE, 1 on error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import platform
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .coefficients import check_conditions, check_exp_integrability, cost_ball_bounds
from .config import ConfigError, ExperimentConfig, parse_config, to_toml
from .controls import ControlPair
from .harness import (
    convergence_experiment_a,
    convergence_experiment_b,
    importance_sampling_estimate,
    ldp_slope,
    subseed,
    tightness_report,
)
from .rate import cost_of_control, minimize_rate
from .simulate import simulate_ensemble
from .skeleton import NonConvergence, energy_report, picard_diagnostics, solve_skeleton

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: List[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def make_run_dir(cfg: ExperimentConfig, out_override: Optional[str]) -> Path:
    stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    base = Path(out_override or cfg.out_dir)
    run_dir = base / f"{stamp}-{cfg.config_hash()}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def write_manifest(run_dir: Path, cfg: ExperimentConfig, seed: int) -> None:
    write_json(run_dir / "manifest.json", {
        "config": cfg.data,
        "config_hash": cfg.config_hash(),
        "config_toml": to_toml(cfg.data),
        "seed": seed,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "versions": {
            "spdelab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    })


def _control_rows(q: ControlPair):
    for i in range(q.n_cells):
        yield [q.edges[i], q.edges[i + 1], *q.f[i], *(q.g[i] if q.g.size else [])]


def _control_header(q: ControlPair) -> List[str]:
    return (
        ["t_left", "t_right"]
        + [f"f_{k + 1}" for k in range(q.n_modes)]
        + [f"g_{j + 1}" for j in range(q.n_marks)]
    )


def run(cfg: ExperimentConfig, seed: Optional[int] = None,
        out: Optional[str] = None, threads: int = 1) -> int:
    """Execute the configured experiment; returns the process exit status."""
    seed = cfg.seed if seed is None else seed
    model = cfg.build_model()
    grid = cfg.grid()
    x0 = cfg.initial_state(model)
    run_dir = make_run_dir(cfg, out)
    write_manifest(run_dir, cfg, seed)
    exp = cfg.data["experiment"]
    kind = cfg.kind
    status = EXIT_OK

    if kind == "skeleton":
        q = cfg.build_control(model)
        tol = float(exp["tol"]) if "tol" in exp else None
        sol = solve_skeleton(model, q, x0, grid, tol=tol,
                             max_iter=int(exp.get("max_iter", 30)))
        write_csv(
            run_dir / "trajectory.csv",
            ["t"] + [f"coeff_{k + 1}" for k in range(model.n_modes)],
            ([t, *row] for t, row in zip(sol.grid, sol.trajectory)),
        )
        summary = {
            "iterations": sol.iterations,
            "residuals": sol.residuals,
            "converged": sol.converged,
            "sup_h2": sol.sup_h2,
            "int_v2": sol.int_v2,
            "energy": energy_report(model, q, sol),
            "costs": cost_of_control(q, model.marks).to_dict(),
        }
        if sol.iterations >= 3:
            summary["picard"] = picard_diagnostics(sol).to_dict()
        write_json(run_dir / "summary.json", summary)

    elif kind == "simulate":
        epsilon = float(exp["epsilon"])
        n = int(exp.get("paths", 1000))
        u = cfg.build_control(model) if exp.get("controlled", False) else None
        summary = simulate_ensemble(model, epsilon, u, x0, grid, seed, n)
        write_csv(
            run_dir / "ensemble.csv",
            ["replica"] + [f"terminal_{k + 1}" for k in range(model.n_modes)]
            + ["sup_h", "log_weight", "flagged"],
            (
                [i, *summary.terminal[i], summary.sup_h[i],
                 summary.log_weight[i], bool(summary.flagged[i])]
                for i in range(n)
            ),
        )
        if exp.get("dump_noise", False):
            from .noise import save_bundle
            from .simulate import noise_bundle, simulate_controlled, simulate_uncontrolled

            for replica in range(min(n, int(exp.get("dump_noise_max", 16)))):
                if u is None:
                    path = simulate_uncontrolled(model, epsilon, x0, grid, seed, replica)
                else:
                    path = simulate_controlled(model, epsilon, u, x0, grid, seed, replica)
                save_bundle(run_dir / f"noise_{replica:04d}.bin", noise_bundle(path))
        write_json(run_dir / "summary.json", {
            "epsilon": epsilon, "paths": n, "controlled": u is not None,
            "mean_sup_h": float(summary.sup_h.mean()),
            "mean_terminal": summary.terminal.mean(axis=0).tolist(),
            "mean_jump_count": float(summary.jump_counts.mean()),
            "flagged": int(summary.flagged.sum()),
        })

    elif kind == "rate":
        target = cfg.build_target()
        init = cfg.build_control(model) if "control" in cfg.data else None
        opts = cfg.optimizer_options(threads=threads)
        if init is not None and init.n_cells != opts.control_cells:
            raise ValueError(
                f"control.cells ({init.n_cells}) must equal "
                f"experiment.optimizer.control_cells ({opts.control_cells}) "
                "to seed the rate optimizer"
            )
        estimate = minimize_rate(model, target, x0, init=init, opts=opts)
        write_csv(run_dir / "minimizer.csv", _control_header(estimate.minimizer),
                  _control_rows(estimate.minimizer))
        write_json(run_dir / "summary.json", {
            "target": target.to_dict(), **estimate.to_dict(),
        })

    elif kind == "validate-ldp":
        event = cfg.build_event()
        eps_list = [float(e) for e in exp["eps_list"]]
        opts = cfg.optimizer_options(threads=threads)
        estimate = minimize_rate(model, event.to_target(), x0, opts=opts)
        report = ldp_slope(
            model, event, eps_list, cfg.grid_steps, x0, seed,
            target_hits=int(exp.get("target_hits", 100)),
            rate_estimate=estimate,
        )
        summary = {"slope": report.to_dict(), "rate": estimate.to_dict(),
                   "event": event.to_dict()}
        if exp.get("importance_sampling", True) and estimate.reachable:
            is_eps = max(eps_list)
            is_n = int(exp.get("is_paths", 20000))
            is_est = importance_sampling_estimate(
                model, is_eps, event, is_n, subseed(seed, 950),
                estimate.minimizer, x0, grid,
            )
            summary["importance_sampling"] = {"epsilon": is_eps, "n": is_n,
                                              **is_est.to_dict()}
        write_csv(
            run_dir / "slope.csv",
            ["eps", "n", "hits", "p_hat", "ci_low", "ci_high", "eps_log_p",
             "inconclusive"],
            (
                [r["eps"], r["n"], r["hits"], r["p_hat"], r["ci_low"],
                 r["ci_high"], r["eps_log_p"], r["inconclusive"]]
                for r in report.rows
            ),
        )
        write_json(run_dir / "summary.json", summary)
        if report.inconclusive:
            status = EXIT_INCONCLUSIVE

    elif kind == "converge":
        mode = exp.get("mode", "control")
        if mode == "control":
            q = cfg.build_control(model)
            n_list = [int(n) for n in exp.get("n_list", [1, 2, 5, 10, 20, 50, 100])]
            q_seq = [q.scaled(1.0 - 1.0 / n, 1.0 - 1.0 / n) for n in n_list]
            distances = convergence_experiment_a(model, q_seq, q, x0, grid)
            write_csv(run_dir / "converge.csv", ["n", "sup_distance"],
                      zip(n_list, distances))
            write_json(run_dir / "summary.json", {
                "mode": mode, "n_list": n_list, "distances": distances,
            })
        else:
            u = cfg.build_control(model)
            eps_list = [float(e) for e in exp["eps_list"]]
            rows = convergence_experiment_b(
                model, u, eps_list, int(exp.get("paths", 200)), seed, x0, grid
            )
            write_csv(run_dir / "converge.csv",
                      ["eps", "n", "median_sup_distance"],
                      ([r["eps"], r["n"], r["median_sup_distance"]] for r in rows))
            write_json(run_dir / "summary.json", {"mode": mode, "rows": rows})

    elif kind == "tightness":
        eps_list = [float(e) for e in exp["eps_list"]]
        k_list = [int(k) for k in exp["k_list"]]
        u = cfg.build_control(model) if "control" in cfg.data else None
        report = tightness_report(
            model, eps_list, [u], k_list, float(exp["t0"]),
            int(exp.get("paths", 500)), seed, x0, grid,
        )
        write_csv(
            run_dir / "tightness.csv",
            ["eps", "control", "k", "zeta_k", "mean_tail", "mean_head"],
            (
                [r["eps"], r["control"], r["k"], r["zeta_k"], r["mean_tail"],
                 r["mean_head"]]
                for r in report.rows
            ),
        )
        write_json(run_dir / "summary.json", report.to_dict())

    elif kind == "check-conditions":
        report = check_conditions(
            model.sigma, model.jump, model.marks,
            n_samples=int(exp.get("samples", 2000)), seed=seed,
        )
        summary = {"conditions": report.to_dict()}
        if model.jump is not None:
            deltas = [float(d) for d in exp.get("deltas", [0.5, 1.0])]
            summary["exp_integrability"] = {
                str(d): {
                    "zero_norm": check_exp_integrability(model.jump, model.marks, d, 0),
                    "one_norm": check_exp_integrability(model.jump, model.marks, d, 1),
                }
                for d in deltas
            }
            summary["cost_ball_bounds"] = cost_ball_bounds(
                model.jump, model.marks,
                n_budget=float(exp.get("cost_budget", 1.0)),
                sigma=float(exp.get("sigma", 1.0)),
            ).__dict__
        write_csv(
            run_dir / "conditions.csv",
            ["inequality", "max_ratio", "satisfied"],
            [
                ["growth", report.growth_max_ratio,
                 report.growth_max_ratio <= 1 + report.tolerance],
                ["lipschitz", report.lipschitz_max_ratio,
                 report.lipschitz_max_ratio <= 1 + report.tolerance],
            ],
        )
        write_json(run_dir / "summary.json", summary)

    else:  # pragma: no cover - guarded by config validation
        raise ValueError(f"unknown experiment kind {kind!r}")

    print(run_dir)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="Experiments on jump-diffusion stochastic evolution equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("skeleton", "solve the controlled skeleton equation"),
        ("simulate", "simulate path ensembles of the stochastic equation"),
        ("rate", "minimize the control cost for a terminal target"),
        ("validate-ldp", "compare eps log P against the optimized rate"),
        ("converge", "control- or epsilon-convergence experiments"),
        ("tightness", "high-mode tail-energy envelopes"),
        ("check-conditions", "verify growth/Lipschitz/exponential conditions"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for gradient evaluations")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    configured = cfg.data["experiment"].get("kind")
    if configured != args.command:
        print(
            f"config declares experiment kind {configured!r} but the "
            f"{args.command!r} subcommand was invoked",
            file=sys.stderr,
        )
        return EXIT_ERROR
    try:
        return run(cfg, seed=args.seed, out=args.out, threads=args.threads)
    except (NonConvergence, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
