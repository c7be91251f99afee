"""Experiment configuration files.

One experiment per INI file::

    [experiment]
    name = matrec            ; ncpd | nmf | matrec | inexact_rgd | stiefel_proxgrad
    trials = 10
    base_seed = 2024
    clock = ops              ; ops | wall

    [problem]
    p = 300

    [solver.tbmm]
    kind = tbmm              ; tbmm | block_pgd | niht | rgd
    max_iters = 500

Unset problem keys take the defaults in :data:`PROBLEM_DEFAULTS`. Solver
keys are listed in :func:`solver_config`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..solvers import (Constant, Exact, Fixed, FromLipschitz, Inexact, LineSearch, SolverConfig,
                       TheoremStep)

EXPERIMENTS = ("ncpd", "nmf", "matrec", "inexact_rgd", "stiefel_proxgrad")
SOLVER_KINDS = ("tbmm", "block_pgd", "niht", "rgd")

PROBLEM_DEFAULTS = {
    "ncpd": {"dims": "50,40,30", "R": "10", "r": "2", "lambdas": "0.01,0.01,0.01",
             "nonneg": "true"},
    "nmf": {"p": "50", "N": "40", "R": "10", "r": "5", "lam": "0.01", "nonneg_H": "true"},
    "matrec": {"m": "50", "n": "12", "r": "3", "p": "450"},
    "inexact_rgd": {"m": "50", "n": "12", "r": "3", "p": "300"},
    "stiefel_proxgrad": {"n": "50", "k": "3", "support": "5", "samples": "200",
                         "weight": "0.1"},
}

APPLICABLE = {
    "ncpd": ("tbmm", "block_pgd"),
    "nmf": ("tbmm", "block_pgd"),
    "matrec": ("tbmm", "block_pgd", "niht", "rgd"),
    "inexact_rgd": ("tbmm", "rgd"),
    "stiefel_proxgrad": ("tbmm",),
}

SOLVER_KEYS = {"kind", "max_iters", "step", "alpha", "gamma", "rho", "alpha0", "m2", "l_psi",
               "lambda", "safety", "lambda_values", "subproblem", "tol0", "budget", "noise",
               "time_limit", "lam", "safeguard"}


@dataclass
class SolverEntry:
    name: str
    kind: str
    config: SolverConfig
    lam: float | None = None
    safeguard: bool = False


@dataclass
class ExperimentConfig:
    name: str
    problem: dict
    solvers: list
    trials: int = 10
    base_seed: int = 0
    clock: str = "ops"
    output_dir: str = "."
    source: dict = field(default_factory=dict)

    def problem_kwargs(self):
        return problem_kwargs(self.name, self.problem)


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _bool(text, key):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _num(sec, key, cast, default=None):
    if key not in sec:
        return default
    try:
        return cast(sec[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {sec[key]!r}") from None


def problem_kwargs(name, params):
    """Typed keyword arguments for the experiment's problem factory."""
    try:
        if name == "ncpd":
            return {"dims": tuple(int(v) for v in params["dims"].split(",")),
                    "R": int(params["R"]), "r": int(params["r"]),
                    "lambdas": _floats(params["lambdas"]),
                    "nonneg": _bool(params["nonneg"], "nonneg")}
        if name == "nmf":
            return {"p": int(params["p"]), "N": int(params["N"]), "R": int(params["R"]),
                    "r": int(params["r"]), "lam": float(params["lam"]),
                    "nonneg_H": _bool(params["nonneg_H"], "nonneg_H")}
        if name in ("matrec", "inexact_rgd"):
            return {k: int(params[k]) for k in ("m", "n", "r", "p")}
        return {"n": int(params["n"]), "k": int(params["k"]), "support": int(params["support"]),
                "samples": int(params["samples"]), "weight": float(params["weight"])}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[problem] for {name}: {exc}") from None


def solver_config(name, sec, clock):
    """Build a :class:`SolverConfig` from one ``[solver.NAME]`` section."""
    unknown = set(sec) - SOLVER_KEYS
    if unknown:
        raise ConfigError(f"[solver.{name}]: unknown keys {sorted(unknown)}")
    step_kind = sec.get("step", "constant")
    if step_kind == "constant":
        step = Constant(_num(sec, "alpha", float, 1.0))
    elif step_kind == "linesearch":
        step = LineSearch(_num(sec, "gamma", float, 0.5), _num(sec, "rho", float),
                          _num(sec, "alpha0", float, 1.0))
    elif step_kind == "theorem":
        step = TheoremStep(_num(sec, "m2", float, 1.0), _num(sec, "l_psi", float))
    else:
        raise ConfigError(f"[solver.{name}]: unknown step {step_kind!r}")
    lam_kind = sec.get("lambda", "lipschitz")
    if lam_kind == "lipschitz":
        lam = FromLipschitz(_num(sec, "safety", float, 1.0))
    elif lam_kind == "fixed":
        if "lambda_values" not in sec:
            raise ConfigError(f"[solver.{name}]: lambda = fixed needs lambda_values")
        lam = Fixed(_floats(sec["lambda_values"]))
    else:
        raise ConfigError(f"[solver.{name}]: unknown lambda mode {lam_kind!r}")
    sub_kind = sec.get("subproblem", "exact")
    if sub_kind == "exact":
        sub = Exact()
    elif sub_kind == "inexact":
        sub = Inexact(_num(sec, "tol0", float, 1e-2), _num(sec, "budget", int, 50))
    else:
        raise ConfigError(f"[solver.{name}]: unknown subproblem mode {sub_kind!r}")
    return SolverConfig(max_iters=_num(sec, "max_iters", int, 100), step=step, lam=lam,
                        subproblem=sub, noise=_num(sec, "noise", float, 0.0),
                        time_limit=_num(sec, "time_limit", float), clock=clock)


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if "experiment" not in cp:
        raise ConfigError(f"{source}: missing [experiment] section")
    ex = cp["experiment"]
    name = ex.get("name", "")
    if name not in EXPERIMENTS:
        raise ConfigError(f"{source}: unknown experiment {name!r}; choose from {EXPERIMENTS}")
    trials = _num(ex, "trials", int, 10)
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    base_seed = _num(ex, "base_seed", int, 0)
    if not 0 <= base_seed < 2**64:
        raise ConfigError("base_seed must be a 64-bit unsigned integer")
    clock = ex.get("clock", "ops")
    if clock not in ("ops", "wall"):
        raise ConfigError(f"clock must be 'ops' or 'wall', got {clock!r}")
    params = dict(PROBLEM_DEFAULTS[name])
    if "problem" in cp:
        for k, v in cp["problem"].items():
            if k not in params:
                raise ConfigError(f"[problem]: unknown key {k!r} for {name}")
            params[k] = v
    problem_kwargs(name, params)
    entries = []
    for sec_name in cp.sections():
        if not sec_name.startswith("solver."):
            continue
        sname = sec_name[len("solver."):]
        sec = cp[sec_name]
        kind = sec.get("kind", sname)
        if kind not in SOLVER_KINDS:
            raise ConfigError(f"[{sec_name}]: unknown solver kind {kind!r}")
        if kind not in APPLICABLE[name]:
            raise ConfigError(f"[{sec_name}]: solver {kind!r} does not apply to {name}")
        entries.append(SolverEntry(sname, kind, solver_config(sname, sec, clock),
                                   _num(sec, "lam", float),
                                   _bool(sec.get("safeguard", "false"), "safeguard")))
    if not entries:
        raise ConfigError(f"{source}: no [solver.*] sections")
    return ExperimentConfig(name, params, entries, trials, base_seed, clock,
                            source={"path": source})


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


DEFAULT_CONFIGS = {
    "matrec": """\
[experiment]
name = matrec
trials = 10
base_seed = 2024
clock = ops

[problem]
m = 50
n = 12
r = 3
p = 450

[solver.tbmm]
kind = tbmm
max_iters = 500

[solver.niht]
kind = niht
max_iters = 500
""",
    "inexact_rgd": """\
[experiment]
name = inexact_rgd
trials = 10
base_seed = 2024

[problem]
p = 300

[solver.rgd_c0]
kind = rgd
max_iters = 1000
noise = 0

[solver.rgd_c1]
kind = rgd
max_iters = 1000
noise = 1

[solver.rgd_c10]
kind = rgd
max_iters = 1000
noise = 10
""",
    "ncpd": """\
[experiment]
name = ncpd
trials = 10
base_seed = 2024

[problem]
dims = 50,40,30
R = 10
r = 2
lambdas = 0.01,0.01,0.01
nonneg = true

[solver.tbmm]
kind = tbmm
max_iters = 100

[solver.block_pgd]
kind = block_pgd
max_iters = 100
""",
    "nmf": """\
[experiment]
name = nmf
trials = 10
base_seed = 2024

[problem]
nonneg_H = true

[solver.tbmm]
kind = tbmm
max_iters = 100

[solver.block_pgd]
kind = block_pgd
max_iters = 100
""",
    "stiefel_proxgrad": """\
[experiment]
name = stiefel_proxgrad
trials = 10
base_seed = 2024

[solver.tbmm]
kind = tbmm
max_iters = 200
subproblem = inexact
tol0 = 1e-6
budget = 200
""",
}
