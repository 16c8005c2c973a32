"""Command line front end.

    backward-lq --preset blqb --paths 10000 --seed 42 --out results/

runs the whole pipeline and writes

* ``riccati.csv``: ``Upsilon``, ``Gamma1``, ``Gamma2``, ``Sigma`` on the ODE grid,
* ``bsde.csv``: path means of ``phi^``, ``eta1^`` and ``psi^``,
* ``trajectory.csv``: path means of ``Y^``, ``Z1^``, ``Y`` and ``X^``,
* ``control.csv``: mean, standard deviation and three sample paths of ``v``,
* ``cost.json``: the cost certificate and the simulated cost,
* ``diagnostics.json``: validation, Riccati, BSDE and optimality checks.

Exit status is 0 on success, 2 when the problem or the configuration is
rejected, 3 on a numerical failure and 4 on an I/O error; failures print a
JSON object ``{"error", "module", "message"}`` on stderr.

A problem can also be read from a TOML file; see :func:`spec_from_config`.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .core import Coefficient, ProblemSpec, TerminalSpec, TimeGrid
from .errors import NumericalError, OutOfRangeError, SolverError, ValidationError
from .pipeline import DEFAULT_PATHS, DEFAULT_SEED, run_pipeline
from .presets import DEFAULT_MC_STEPS, PRESETS, BlqaClosedForm
from .riccati import DEFAULT_ODE_STEPS

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ARTIFACTS = ("riccati", "bsde", "trajectory", "control", "cost", "diagnostics")
THREADS_ENV = "BACKWARD_LQ_THREADS"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
FLOAT_FORMAT = "{:.12e}"


class ConfigError(ValidationError):
    code = "BAD_CONFIG"


@dataclass
class RunConfig:
    preset: str = None
    config: str = None
    n_paths: int = DEFAULT_PATHS
    dt_mc: float = 1.0 / DEFAULT_MC_STEPS
    dt_ode: float = 1.0 / DEFAULT_ODE_STEPS
    seed: int = DEFAULT_SEED
    basis_degree: int = 3
    out: str = "."
    artifacts: tuple = ARTIFACTS
    problem: dict = field(default=None, repr=False)

    def check(self):
        if (self.preset is None) == (self.config is None and self.problem is None):
            raise ConfigError("give exactly one of a preset or a config file", module="cli")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}",
                              module="cli")
        if self.n_paths < 100:
            raise ConfigError("n_paths must be at least 100", module="cli")
        if not 0 < self.dt_ode <= self.dt_mc:
            raise ConfigError("need 0 < dt_ode <= dt_mc", module="cli")
        if self.basis_degree < 1:
            raise ConfigError("basis degree must be at least 1", module="cli")
        unknown = set(self.artifacts) - set(ARTIFACTS)
        if unknown:
            raise ConfigError(f"unknown artifacts {sorted(unknown)}", module="cli")
        return self


def _coefficient(value, name):
    if isinstance(value, dict):
        kind = value.get("kind", "constant")
        if kind == "constant":
            return Coefficient.constant(value["value"])
        if kind == "polynomial":
            return Coefficient.polynomial(value["coeffs"])
        if kind == "exponential":
            return Coefficient.exponential(value["rate"], value.get("value", 1.0))
        raise ConfigError(f"{name}: unknown coefficient kind {kind!r}", module="cli")
    return Coefficient.constant(value)


def _terminal(table, n):
    table = dict(table or {"kind": "zero"})
    kind = table.pop("kind", "zero")
    loading = table.pop("loading", [1.0] * n)
    if kind == "lognormal":
        return TerminalSpec.lognormal(table["a"], table["b"], table["c"], loading)
    if kind == "smooth":
        return TerminalSpec.smooth(table.get("constant", 0.0), table.get("terms", []), loading)
    if kind == "zero":
        return TerminalSpec.zero(loading)
    raise ConfigError(f"unknown terminal kind {kind!r}", module="cli")


def spec_from_config(problem, n_steps=DEFAULT_MC_STEPS):
    """Build a :class:`ProblemSpec` from the ``[problem]`` table of a config.

    Keys: ``n``, ``m``, ``horizon`` (default 1), ``name``, ``G`` and a
    ``[problem.coefficients]`` table with entries ``A, B, C1, C2, H, R, N1,
    N2``. Each entry is a number, a matrix (list of rows) or a table
    ``{kind = "polynomial", coeffs = [...]}`` /
    ``{kind = "exponential", rate = r, value = ...}``; missing entries are
    zero. ``[problem.terminal]`` has ``kind`` in {lognormal, smooth, zero}
    with ``a, b, c`` or ``constant, terms = [[g, amp, w1, w2], ...]``.
    """
    try:
        n, m = int(problem["n"]), int(problem["m"])
        coefs = problem.get("coefficients", {})
        shapes = {"A": (n, n), "B": (n, m), "C1": (n, n), "C2": (n, n),
                  "H": (n, n), "R": (m, m), "N1": (n, n), "N2": (n, n)}
        unknown = set(coefs) - set(shapes)
        if unknown:
            raise ConfigError(f"unknown coefficients {sorted(unknown)}", module="cli")
        entries = {name: _coefficient(coefs[name], name) if name in coefs
                   else Coefficient.constant(np.zeros(shape)) for name, shape in shapes.items()}
        grid = TimeGrid(float(problem.get("horizon", 1.0)), n_steps)
        G = problem.get("G", np.zeros((n, n)))
        return ProblemSpec(n, m, grid, G=G, terminal=_terminal(problem.get("terminal"), n),
                           name=problem.get("name", "custom"), **entries)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem description: {exc}", module="cli") from exc


def _steps(horizon, dt, what):
    steps = horizon / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"{what} must divide the horizon", module="cli")
    return int(round(steps))


def build_spec(cfg):
    if cfg.preset is not None:
        spec = PRESETS[cfg.preset]()
    else:
        spec = spec_from_config(cfg.problem)
    return spec.with_grid(TimeGrid(spec.horizon, _steps(spec.horizon, cfg.dt_mc, "dt")))


def _columns(name, stack):
    """Flatten a per-node stack of vectors or matrices into named columns."""
    stack = np.asarray(stack)
    trailing = stack.shape[1:]
    if int(np.prod(trailing)) == 1:
        return {name: stack.reshape(-1)}
    flat = stack.reshape(stack.shape[0], -1)
    labels = [f"{name}_" + "_".join(str(i + 1) for i in idx) for idx in np.ndindex(*trailing)]
    return dict(zip(labels, flat.T))


def write_csv(path, t, columns):
    header = ["t", *columns]
    data = np.column_stack([t, *columns.values()])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in data:
            writer.writerow([FLOAT_FORMAT.format(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mean(x):
    return x.mean(axis=1)


def artifact_tables(result):
    """Curve tables keyed by artifact name: ``{name: (t, {column: values})}``."""
    ric = result.riccati
    t_ode = ric.grid.nodes
    t = result.ensemble.grid.nodes
    sol, traj, closed = result.bsde, result.trajectory, result.closed_loop
    riccati = {}
    for name in ("upsilon", "gamma1", "gamma2", "sigma"):
        riccati.update(_columns(name, getattr(ric, name).values))
    bsde = {**_columns("phi_hat_mean", _mean(sol.phi_hat)),
            **_columns("eta1_hat_mean", _mean(sol.eta1_hat)),
            **_columns("psi_hat_mean", _mean(result.psi.psi_hat))}
    trajectory = {**_columns("y_hat_mean", _mean(traj.Y_hat)),
                  **_columns("z1_hat_mean", _mean(traj.Z1)),
                  **_columns("y_mean", _mean(traj.Y)),
                  **_columns("x_hat_mean", _mean(traj.X_hat))}
    control = {**_columns("v_mean", _mean(traj.v)),
               **_columns("v_std", traj.v.std(axis=1)),
               **_columns("v_feedback_mean", _mean(closed.v))}
    for p in range(min(3, traj.v.shape[1])):
        control.update(_columns(f"v_path{p}", traj.v[:, p]))
    return {"riccati": (t_ode, riccati), "bsde": (t, bsde),
            "trajectory": (t, trajectory), "control": (t, control)}


def cost_payload(result, preset=None):
    payload = result.cost.to_dict()
    closed = result.extras["closed_loop_cost"]
    payload["j_mc_feedback"] = closed.value
    payload["j_mc_feedback_stderr"] = closed.stderr
    rep = result.extras.get("replication")
    if rep is not None:
        payload["replication_stderr"] = {"j_mc": rep["stderr"]["J_mc"],
                                         "j_formula": rep["stderr"]["J_formula"]}
    if preset == "blqa":
        payload["reference"] = BlqaClosedForm().cost()
    return payload


def diagnostics_payload(result, cfg):
    ric, sol, traj = result.riccati, result.bsde, result.trajectory
    validation = result.extras["validation"]
    res, noise = result.extras["stationarity_profile"]
    ratio = res / np.where(noise > 0, noise, np.inf)
    diag = result.diagnostics
    return {
        "config": {k: v for k, v in asdict(cfg).items() if k not in ("problem", "out")},
        "problem": result.spec.name,
        "validation": {"accepted": validation.accepted,
                       "min_eigenvalue": {k: float(np.min(v))
                                          for k, v in validation.min_eigenvalues.items()}},
        "riccati": {
            "symmetry_defect": {name: getattr(ric, name).symmetry_defect()
                                for name in ("upsilon", "gamma1", "gamma2", "sigma")},
            "min_eigenvalue": {name: float(np.min(getattr(ric, name).min_eigenvalues()))
                               for name in ("upsilon", "gamma1", "gamma2", "sigma")},
            "min_singular_value": {k: float(np.min(v)) for k, v in
                                   ric.invertibility_log.items() if k != "t"},
        },
        "bsde": {"phi0": sol.phi0, "phi0_stderr": sol.phi0_stderr,
                 "max_refinement_move": sol.max_refinement_move,
                 "eta2_hat_rms": float(np.sqrt(np.mean(sol.eta2_hat ** 2)))},
        "Y0": traj.Y0,
        "stationarity": {"residual": diag.stationarity_residual_norm,
                         "noise_at_max": float(noise[int(np.argmax(res))]),
                         "max_ratio": float(np.max(ratio))},
        "fbsde_residual": {"open_loop": diag.fbsde_residual,
                           "feedback": result.closed_loop.meta["fbsde_residual"]},
        "feedback_gap": result.extras["feedback_gap"],
        "psi_projection_gap": result.extras["psi_projection_gap"],
        "perturbation_margins": diag.perturbation_margins,
        "replication": result.extras.get("replication"),
    }


def run(cfg):
    """Run the pipeline for ``cfg`` and write the requested artifacts.

    Returns the pipeline result and the list of files written.
    """
    cfg.check()
    spec = build_spec(cfg)
    ode_steps = _steps(spec.horizon, cfg.dt_ode, "ode dt")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(spec, n_paths=cfg.n_paths, seed=cfg.seed, ode_steps=ode_steps,
                          degree=cfg.basis_degree,
                          margins="diagnostics" in cfg.artifacts)
    written = []
    tables = artifact_tables(result)
    for name in ("riccati", "bsde", "trajectory", "control"):
        if name in cfg.artifacts:
            t, cols = tables[name]
            write_csv(out / f"{name}.csv", t, cols)
            written.append(out / f"{name}.csv")
    if "cost" in cfg.artifacts:
        write_json(out / "cost.json", cost_payload(result, cfg.preset))
        written.append(out / "cost.json")
    if "diagnostics" in cfg.artifacts:
        write_json(out / "diagnostics.json", diagnostics_payload(result, cfg))
        written.append(out / "diagnostics.json")
    return result, written


def _fraction(text):
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def parser():
    p = argparse.ArgumentParser(prog="backward-lq", description=__doc__.split("\n\n")[0])
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in problem")
    src.add_argument("--config", help="TOML file with a [problem] table and optional [run] table")
    p.add_argument("--paths", type=int, help=f"number of paths (default {DEFAULT_PATHS})")
    p.add_argument("--dt", type=_fraction, help="simulation step, e.g. 1/256")
    p.add_argument("--ode-dt", type=_fraction, help="Riccati step, e.g. 1/2000")
    p.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--basis-degree", type=int, help="polynomial degree of the regression basis")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--artifacts", help="comma separated subset of " + ",".join(ARTIFACTS))
    return p


def config_from_args(args):
    cfg = RunConfig()
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {args.config}: {exc}", module="cli") from exc
        if "problem" not in data:
            raise ConfigError("config file needs a [problem] table", module="cli")
        cfg.config, cfg.problem = args.config, data["problem"]
        run_table = data.get("run", {})
        for key, attr in (("paths", "n_paths"), ("seed", "seed"),
                          ("basis_degree", "basis_degree"), ("out", "out")):
            if key in run_table:
                setattr(cfg, attr, run_table[key])
        for key, attr in (("dt", "dt_mc"), ("ode_dt", "dt_ode")):
            if key in run_table:
                setattr(cfg, attr, float(Fraction(str(run_table[key]))))
    else:
        cfg.preset = args.preset or "blqb"
    for flag, attr in (("paths", "n_paths"), ("dt", "dt_mc"), ("ode_dt", "dt_ode"),
                       ("seed", "seed"), ("basis_degree", "basis_degree"), ("out", "out")):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, attr, value)
    if args.artifacts:
        cfg.artifacts = tuple(a.strip() for a in args.artifacts.split(",") if a.strip())
    return cfg


def _fail(status, err):
    payload = err.as_dict() if isinstance(err, SolverError) else {
        "error": type(err).__name__, "module": "cli", "message": str(err)}
    print(json.dumps(payload), file=sys.stderr)
    return status


def main(argv=None):
    args = parser().parse_args(argv)
    threads = os.environ.get(THREADS_ENV)
    try:
        limit = int(threads) if threads else None
    except ValueError:
        return _fail(EXIT_VALIDATION, ConfigError(f"{THREADS_ENV} must be an integer",
                                                  module="cli"))
    try:
        with threadpool_limits(limits=limit):
            cfg = config_from_args(args)
            run(cfg)
    except (ValidationError, OutOfRangeError) as err:
        return _fail(EXIT_VALIDATION, err)
    except (NumericalError, SolverError) as err:
        return _fail(EXIT_NUMERIC, err)
    except OSError as err:
        return _fail(EXIT_IO, err)
    except ValueError as err:
        return _fail(EXIT_VALIDATION, err)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
