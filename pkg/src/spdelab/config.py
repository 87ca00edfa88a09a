"""TOML experiment configuration: parsing, validation, hashing, serialization.

One human-editable file drives a run; all randomness flows from the single
``seeds.master`` entry so every number in a run directory is reproducible.
Validation collects every violation (not just the first), each named by its
config path.  Duplicate keys are a TOML parse error by the standard, reported
with the offending location rather than silently resolved.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .coefficients import DiffusionCoefficient, JumpCoefficient, MarkMeasure, StepFunction
from .controls import ControlPair, zero_control
from .harness import EventSpec
from .model import Model, demo_initial_state, demo_model, scalar_ou_model
from .rate import MinimizeOptions, TerminalTarget
from .spectral import EigenSystem, fractional_laplacian_system

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "parse_config_text", "to_toml"]

EXPERIMENT_KINDS = (
    "skeleton", "simulate", "rate", "validate-ldp", "converge",
    "tightness", "check-conditions",
)


class ConfigError(ValueError):
    """Raised with the full list of validation violations."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


def _canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=True)


@dataclass
class ExperimentConfig:
    data: dict

    @property
    def kind(self) -> str:
        return self.data["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return int(self.data.get("seeds", {}).get("master", 0))

    @property
    def out_dir(self) -> str:
        return self.data.get("output", {}).get("dir", "runs")

    @property
    def grid_steps(self) -> int:
        return int(self.data["grid"]["steps"])

    @property
    def t_end(self) -> float:
        return float(self.data["grid"]["t_end"])

    def config_hash(self) -> str:
        return hashlib.sha256(_canonical_json(self.data).encode()).hexdigest()[:12]

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.grid_steps + 1)

    def build_model(self) -> Model:
        block = self.data["model"]
        kind = block.get("kind", "custom")
        if kind == "demo":
            return demo_model(t_end=self.t_end)
        if kind == "scalar_ou":
            return scalar_ou_model(
                rate=float(block.get("rate", 1.0)),
                noise=float(block.get("noise", 1.0)),
                t_end=self.t_end,
            )
        system = self._build_system(block["system"])
        marks = None
        jump = None
        sigma = None
        if "marks" in block:
            marks = MarkMeasure(weights=np.asarray(block["marks"]["weights"], dtype=float))
        if "sigma" in block:
            sb = block["sigma"]
            a = np.atleast_2d(np.asarray(sb["a"], dtype=float))
            sigma = DiffusionCoefficient(
                a=StepFunction(np.linspace(0.0, self.t_end, a.shape[0] + 1), a),
                b=np.asarray(sb["b"], dtype=float),
                clip=float(sb["clip"]) if "clip" in sb else None,
            )
        if "jump" in block:
            jb = block["jump"]
            c = np.atleast_2d(np.asarray(jb["c"], dtype=float))
            jump = JumpCoefficient(
                c=StepFunction(np.linspace(0.0, self.t_end, c.shape[0] + 1), c),
                alphas=np.asarray(jb["alphas"], dtype=float),
                betas=np.asarray(jb["betas"], dtype=float),
                h=np.asarray(jb["h"], dtype=float),
            )
        if sigma is not None and "k_values" in block.get("sigma", {}):
            k_vals = np.asarray(block["sigma"]["k_values"], dtype=float)
            from dataclasses import replace

            sigma = replace(
                sigma,
                k_table=StepFunction(np.linspace(0.0, self.t_end, k_vals.size + 1), k_vals),
            )
        elif sigma is not None:
            from .coefficients import with_exact_majorant

            sigma = with_exact_majorant(sigma, jump, marks)
        return Model(system=system, sigma=sigma, jump=jump, marks=marks, t_end=self.t_end)

    @staticmethod
    def _build_system(block: dict) -> EigenSystem:
        if "eigenvalues" in block:
            return EigenSystem(
                zetas=np.asarray(block["eigenvalues"], dtype=float),
                lambda0=float(block.get("lambda0", 1.0)),
            )
        return fractional_laplacian_system(
            order=float(block.get("order", 2.0)),
            n_modes=int(block["modes"]),
            domain_length=float(block.get("domain_length", math.pi)),
            lambda0=float(block.get("lambda0", 1.0)),
        )

    def initial_state(self, model: Model) -> np.ndarray:
        if "x0" in self.data.get("model", {}):
            return np.asarray(self.data["model"]["x0"], dtype=float)
        if self.data["model"].get("kind") == "demo":
            return demo_initial_state()
        return np.zeros(model.n_modes)

    def build_control(self, model: Model) -> ControlPair:
        block = self.data.get("control")
        if block is None or block.get("f") == "zero":
            cells = int(block.get("cells", 1)) if block else 1
            return zero_control(model.t_end, model.n_modes, model.n_marks, n_cells=cells)
        f = np.atleast_2d(np.asarray(block["f"], dtype=float))
        if model.n_marks:
            g = np.atleast_2d(np.asarray(block.get("g", np.ones((f.shape[0], model.n_marks))), dtype=float))
        else:
            g = np.ones((f.shape[0], 0))
        edges = np.linspace(0.0, model.t_end, f.shape[0] + 1)
        return ControlPair(edges=edges, f=f, g=g)

    def build_event(self) -> EventSpec:
        block = self.data["experiment"]["event"]
        if block["kind"] == "half_space":
            return EventSpec(kind="half_space", a=float(block["a"]),
                             mode=int(block.get("mode", 1)))
        return EventSpec(kind="ball_complement",
                         z=np.asarray(block["z"], dtype=float), r=float(block["r"]))

    def build_target(self) -> TerminalTarget:
        block = self.data["experiment"]["target"]
        kind = block["kind"]
        if kind in ("point", "ball", "ball_complement"):
            return TerminalTarget(kind=kind, z=np.asarray(block["z"], dtype=float),
                                  r=float(block.get("r", 0.0)))
        return TerminalTarget(kind="half_space", a=float(block["a"]),
                              mode=int(block.get("mode", 1)))

    def optimizer_options(self, threads: int = 1) -> MinimizeOptions:
        block = self.data["experiment"].get("optimizer", {})
        defaults = MinimizeOptions()
        return MinimizeOptions(
            control_cells=int(block.get("control_cells", defaults.control_cells)),
            grid_steps=int(block.get("grid_steps", self.grid_steps)),
            mu_schedule=tuple(block.get("mu_schedule", defaults.mu_schedule)),
            max_iter_per_stage=int(block.get("max_iter_per_stage", defaults.max_iter_per_stage)),
            fd_step=float(block.get("fd_step", defaults.fd_step)),
            grad_tol=float(block.get("grad_tol", defaults.grad_tol)),
            residual_tol=float(block.get("residual_tol", defaults.residual_tol)),
            threads=threads,
        )


def _check(cond, violations, path, message):
    if not cond:
        violations.append(f"{path}: {message}")
    return cond


def _validate(data: dict) -> List[str]:
    v: List[str] = []
    if not _check("experiment" in data, v, "experiment", "section is required"):
        return v
    exp = data["experiment"]
    _check(isinstance(exp, dict) and "kind" in exp, v, "experiment.kind", "is required")
    kind = exp.get("kind")
    if kind is not None:
        _check(kind in EXPERIMENT_KINDS, v, "experiment.kind",
               f"must be one of {', '.join(EXPERIMENT_KINDS)} (got {kind!r})")
    if not _check("grid" in data, v, "grid", "section is required"):
        return v
    grid = data["grid"]
    t_end = grid.get("t_end")
    _check(isinstance(t_end, (int, float)) and t_end > 0, v, "grid.t_end",
           "must be a positive number")
    steps = grid.get("steps")
    _check(isinstance(steps, int) and steps >= 2, v, "grid.steps",
           "must be an integer >= 2")
    if not _check("model" in data, v, "model", "section is required"):
        return v
    model = data["model"]
    mkind = model.get("kind", "custom")
    _check(mkind in ("demo", "scalar_ou", "custom"), v, "model.kind",
           "must be demo, scalar_ou, or custom")

    n_modes = None
    if mkind == "custom":
        if _check("system" in model, v, "model.system", "section is required for custom models"):
            sys_block = model["system"]
            if "eigenvalues" in sys_block:
                zetas = sys_block["eigenvalues"]
                ok = isinstance(zetas, list) and zetas and all(
                    isinstance(z, (int, float)) for z in zetas
                )
                _check(ok, v, "model.system.eigenvalues", "must be a nonempty number list")
                if ok:
                    n_modes = len(zetas)
                    for i, z in enumerate(zetas):
                        _check(z >= 0, v, f"model.system.eigenvalues[{i}]", "must be >= 0")
                    _check(all(zetas[i] <= zetas[i + 1] for i in range(len(zetas) - 1)),
                           v, "model.system.eigenvalues", "must be nondecreasing")
            else:
                _check("modes" in sys_block, v, "model.system.modes",
                       "required when no explicit eigenvalue list is given")
                if "modes" in sys_block:
                    n_modes = int(sys_block["modes"])
                order = sys_block.get("order", 2.0)
                _check(0 < order <= 2, v, "model.system.order", "must lie in (0, 2]")
            lam = sys_block.get("lambda0", 1.0)
            _check(lam > 0, v, "model.system.lambda0", "must be positive")
    elif mkind == "demo":
        n_modes = 4
    else:
        n_modes = 1

    n_marks = {"demo": 2, "scalar_ou": 0}.get(mkind)
    if "marks" in model:
        weights = model["marks"].get("weights")
        if _check(isinstance(weights, list) and weights, v, "model.marks.weights",
                  "must be a nonempty list"):
            n_marks = len(weights)
            for i, w in enumerate(weights):
                _check(isinstance(w, (int, float)) and w > 0, v,
                       f"model.marks.weights[{i}]", "must be > 0")
    if "jump" in model:
        _check("marks" in model, v, "model.marks",
               "required when a jump coefficient is present")
        jb = model["jump"]
        for key in ("c", "alphas", "betas", "h"):
            _check(key in jb, v, f"model.jump.{key}", "is required")
        if n_marks is not None and "alphas" in jb:
            _check(len(jb["alphas"]) == n_marks, v, "model.jump.alphas",
                   f"must have one entry per mark ({n_marks})")
        if "h" in jb and isinstance(jb["h"], list) and n_modes is not None:
            for i, row in enumerate(jb["h"]):
                if isinstance(row, list):
                    _check(len(row) == n_modes, v, f"model.jump.h[{i}]",
                           f"must have {n_modes} entries")
                    norm = math.sqrt(sum(float(x) ** 2 for x in row))
                    _check(abs(norm - 1.0) <= 1e-9, v, f"model.jump.h[{i}]",
                           "must be a unit field")
    if "sigma" in model and n_modes is not None:
        sb = model["sigma"]
        if "b" in sb:
            _check(len(sb["b"]) == n_modes, v, "model.sigma.b",
                   f"must have {n_modes} entries")

    if "control" in data and data["control"].get("f") != "zero":
        cb = data["control"]
        if "f" in cb and isinstance(cb["f"], list) and n_modes is not None:
            rows = cb["f"] if isinstance(cb["f"][0], list) else [cb["f"]]
            for i, row in enumerate(rows):
                _check(len(row) == n_modes, v, f"control.f[{i}]",
                       f"must have {n_modes} entries")
        if "g" in cb:
            rows = cb["g"] if isinstance(cb["g"][0], list) else [cb["g"]]
            for i, row in enumerate(rows):
                if n_marks is not None:
                    _check(len(row) == n_marks, v, f"control.g[{i}]",
                           f"must have one entry per mark ({n_marks})")
                for j, val in enumerate(row):
                    _check(val > 0, v, f"control.g[{i}][{j}]", "must be > 0")

    if kind == "simulate":
        eps = exp.get("epsilon")
        _check(isinstance(eps, (int, float)) and eps > 0, v, "experiment.epsilon",
               "must be a positive number")
        _check(int(exp.get("paths", 1)) >= 1, v, "experiment.paths", "must be >= 1")
    if kind == "validate-ldp":
        eps_list = exp.get("eps_list")
        ok = isinstance(eps_list, list) and len(eps_list) >= 2
        _check(ok, v, "experiment.eps_list", "must list at least two epsilons")
        if ok:
            _check(all(e > 0 for e in eps_list), v, "experiment.eps_list",
                   "entries must be positive")
            _check(all(eps_list[i] > eps_list[i + 1] for i in range(len(eps_list) - 1)),
                   v, "experiment.eps_list", "must be strictly decreasing")
            _check(max(eps_list) <= 0.1, v, "experiment.eps_list",
                   "validation sweeps are restricted to eps <= 0.1")
        _check("event" in exp, v, "experiment.event", "is required")
    if kind == "rate":
        _check("target" in exp, v, "experiment.target", "is required")
    if kind == "tightness":
        t0 = exp.get("t0")
        good_t = isinstance(t0, (int, float)) and isinstance(t_end, (int, float))
        _check(good_t and 0 < t0 < t_end, v, "experiment.t0",
               "must lie strictly inside (0, t_end)")
        _check(isinstance(exp.get("k_list"), list) and exp.get("k_list"), v,
               "experiment.k_list", "must be a nonempty list of cutoffs")
    if kind == "converge":
        mode = exp.get("mode", "control")
        _check(mode in ("control", "epsilon"), v, "experiment.mode",
               "must be 'control' or 'epsilon'")
    if "seeds" in data:
        master = data["seeds"].get("master", 0)
        _check(isinstance(master, int) and master >= 0, v, "seeds.master",
               "must be a nonnegative integer")
    return v


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    violations = _validate(data)
    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(data=data)


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        text = repr(value)
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def to_toml(data: dict) -> str:
    """Serialize a config tree back to TOML (semantically round-trips)."""
    lines: List[str] = []

    def emit(table: dict, prefix: str):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
        if prefix and (scalars or not subtables):
            lines.append(f"[{prefix}]")
        for key, value in scalars.items():
            lines.append(f"{key} = {_toml_scalar(value)}")
        if scalars:
            lines.append("")
        for key, value in subtables.items():
            emit(value, f"{prefix}.{key}" if prefix else key)

    emit(data, "")
    return "\n".join(lines).rstrip() + "\n"
