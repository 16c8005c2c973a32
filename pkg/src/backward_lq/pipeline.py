"""End-to-end solution of a problem on one seeded ensemble.

:func:`run_pipeline` chains validation, the Riccati equations, the filtered
BSDE, the open-loop and feedback trajectories, the cost certificate and the
optimality diagnostics.

Regression-based estimates carry two kinds of Monte Carlo error: the
per-path sampling noise, which the per-path standard errors capture, and
the noise of the fitted regression coefficients, which they do not.
:func:`replicate` estimates the total error by repeating the solve on
disjoint blocks of paths.
"""

from dataclasses import dataclass, field

import numpy as np

from .bsde import solve_phi
from .condexp import RegressionBasis, TerminalFeatures
from .core import TimeGrid, validate_spec
from .cost import evaluate_cost_mc, optimal_cost_formula
from .hamiltonian import (assemble_open_loop, closed_loop_simulate, diagnose,
                          psi_projection_gap, solve_psi, stationarity_profile)
from .pathsim import generate_brownian
from .riccati import solve_riccati

DEFAULT_PATHS = 10_000
DEFAULT_SEED = 42
DEFAULT_BATCHES = 8


@dataclass(eq=False)
class PipelineResult:
    spec: object
    riccati: object
    ensemble: object
    basis: RegressionBasis
    bsde: object
    trajectory: object
    closed_loop: object
    psi: object
    cost: object
    diagnostics: object
    extras: dict = field(default_factory=dict)

    @property
    def riccati_mc(self):
        """Riccati paths on the simulation grid."""
        return self.riccati.on(self.ensemble.grid)


def default_basis(spec, degree=3, terminal_features=True):
    """Polynomials of ``degree`` plus the terminal-value features of ``spec``."""
    features = (TerminalFeatures(spec.terminal),) if terminal_features else ()
    return RegressionBasis(degree=degree, features=features)


def _solve_block(spec, riccati, ensemble, basis):
    sol = solve_phi(spec, riccati.upsilon, ensemble, basis)
    traj = assemble_open_loop(spec, riccati.upsilon, sol, ensemble, basis)
    report = optimal_cost_formula(spec, riccati, sol, ensemble, basis, trajectory=traj)
    return {"Y0": np.atleast_1d(traj.Y0).astype(float),
            "phi0": np.atleast_1d(sol.phi0).astype(float),
            "J_mc": report.j_mc, "J_formula": report.j_formula}


def replicate(spec, riccati, ensemble, basis=None, n_batches=DEFAULT_BATCHES):
    """Standard errors of ``Y0``, ``phi0`` and ``J`` from disjoint path blocks.

    The ensemble is cut into ``n_batches`` blocks which are solved
    independently; the spread of the block estimates divided by
    ``sqrt(n_batches)`` estimates the error of a solve on all paths,
    including the regression-coefficient noise. Returns
    ``{"n_batches": B, "stderr": {...}, "batches": {...}}`` or ``None``
    when the blocks would be too small to regress on.
    """
    basis = basis or RegressionBasis()
    size = ensemble.n_paths // n_batches
    if n_batches < 2 or size < 10 * basis.n_functions("full"):
        return None
    blocks = [_solve_block(spec, riccati, ensemble.block(i * size, (i + 1) * size), basis)
              for i in range(n_batches)]
    batches = {key: np.array([b[key] for b in blocks]) for key in blocks[0]}
    stderr = {key: (vals.std(axis=0, ddof=1) / np.sqrt(n_batches)).tolist()
              for key, vals in batches.items()}
    for key in ("J_mc", "J_formula"):
        stderr[key] = float(stderr[key])
    return {"n_batches": n_batches, "stderr": stderr,
            "batches": {k: v.tolist() for k, v in batches.items()}}


def run_pipeline(spec, n_paths=DEFAULT_PATHS, seed=DEFAULT_SEED, n_steps=None,
                 ode_steps=None, degree=3, terminal_features=True, margins=True,
                 n_batches=DEFAULT_BATCHES):
    """Solve ``spec`` on ``n_paths`` paths drawn from ``seed``.

    ``n_steps`` overrides the simulation grid of ``spec``; ``ode_steps`` the
    Riccati grid. The regression basis holds the polynomials of ``degree``
    and, unless ``terminal_features`` is false, the
    :class:`~backward_lq.condexp.TerminalFeatures` of the terminal value.
    Set ``margins=False`` to skip the perturbation study and
    ``n_batches=0`` to skip the replication standard errors.
    """
    if n_steps is not None:
        spec = spec.with_grid(TimeGrid(spec.horizon, n_steps))
    validation = validate_spec(spec).raise_if_rejected()
    basis = default_basis(spec, degree, terminal_features)
    riccati = solve_riccati(spec, ode_steps)
    ensemble = generate_brownian(seed, n_paths, spec.grid)
    sol = solve_phi(spec, riccati.upsilon, ensemble, basis)
    traj = assemble_open_loop(spec, riccati.upsilon, sol, ensemble, basis)
    psi = solve_psi(spec, riccati, sol, ensemble, basis)
    closed = closed_loop_simulate(spec, riccati, psi, sol, ensemble)
    cost = optimal_cost_formula(spec, riccati, sol, ensemble, basis, trajectory=traj)
    diag = diagnose(spec, traj, ensemble, basis, margins=margins)
    res, noise = stationarity_profile(spec, traj, basis, ensemble)
    closed_cost = evaluate_cost_mc(spec, closed, ensemble)
    extras = {
        "validation": validation,
        "stationarity_profile": (res, noise),
        "closed_loop_cost": closed_cost,
        "feedback_gap": float(np.sqrt(np.mean((closed.v - traj.v) ** 2))),
        "psi_projection_gap": psi_projection_gap(psi, ensemble, basis),
        "replication": replicate(spec, riccati, ensemble, basis, n_batches) if n_batches else None,
    }
    return PipelineResult(spec, riccati, ensemble, basis, sol, traj, closed, psi, cost,
                          diag, extras)
