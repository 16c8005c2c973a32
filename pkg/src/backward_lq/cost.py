"""Monte Carlo cost and the analytic optimal-cost certificate.

    J(v) = 1/2 E[Y0' G Y0 + int (Y' H Y + v' R v + Z1' N1 Z1 + Z2' N2 Z2) dt]

The certificate evaluates the optimal value from ``Sigma`` and the filtered
BSDE solution without simulating the controlled state:

    J* = 1/2 E<zeta^, Sigma_T zeta^>
       + 1/2 E int (<H phi, phi> - <H phi^, phi^>) dt
       + 1/2 E int <[N1 (I + U N1)^-1 - Sigma] eta1^, eta1^> dt
       + 1/2 E int (<N1 (eta1 - eta1^), eta1 - eta1^> + <N2 eta2, eta2>) dt
       - E int <phi^, Sigma (C1 (I + U N1)^-1 eta1^ + C2 eta2^)> dt

with ``zeta^ = E[zeta | F_T^W1]``. Time integrals use the trapezoidal rule
on the simulation grid.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .condexp import OBSERVABLE, RegressionBasis, projector
from .core import coefficient_table
from .pathsim import filtering_factors, mv, quad_form

TERM_NAMES = ("terminal_sigma", "h_variance", "eta1_hat", "residual_eta", "cross")


@dataclass
class CostEstimate:
    """Sample mean of per-path costs with its standard error."""

    value: float
    stderr: float
    per_path: np.ndarray

    def __iter__(self):
        return iter((self.value, self.stderr))


def _estimate(per_path):
    per_path = np.asarray(per_path, dtype=float)
    se = per_path.std(ddof=1) / np.sqrt(per_path.size) if per_path.size > 1 else 0.0
    return CostEstimate(float(per_path.mean()), float(se), per_path)


def per_path_cost(spec, traj, grid):
    """Cost of every path, shape ``(n_paths,)``."""
    tab = coefficient_table(spec, grid.nodes)
    G = np.asarray(spec.G)
    y0 = traj.Y[0]
    running = (quad_form(tab.H, traj.Y) + quad_form(tab.R, traj.v)
               + quad_form(tab.N1, traj.Z1) + quad_form(tab.N2, traj.Z2))
    initial = np.einsum("pi,ij,pj->p", y0, G, y0)
    return 0.5 * (initial + trapezoid(running, dx=grid.dt, axis=0))


def evaluate_cost_mc(spec, traj, ensemble):
    """Monte Carlo value of ``J`` along ``traj`` with its standard error."""
    return _estimate(per_path_cost(spec, traj, ensemble.grid))


@dataclass
class CostReport:
    """Certificate terms, their sum and the comparison with the simulated cost.

    ``agreement`` is ``|j_mc - j_formula|`` divided by the standard error of
    the paired per-path difference; it is ``None`` without a trajectory.
    """

    j_formula: float
    formula_stderr: float
    decomposition: dict
    j_mc: float = None
    j_mc_stderr: float = None
    agreement: float = None

    def to_dict(self):
        return {"j_formula": self.j_formula, "formula_stderr": self.formula_stderr,
                "decomposition": dict(self.decomposition), "j_mc": self.j_mc,
                "j_mc_stderr": self.j_mc_stderr, "agreement": self.agreement}


def formula_terms(spec, riccati, bsde_sol, ensemble, basis=None):
    """Per-path contributions of the five certificate terms, ``{name: (n_paths,)}``."""
    sol = bsde_sol
    basis = basis or sol.basis or RegressionBasis()
    grid = ensemble.grid
    tab = filtering_factors(spec, riccati.upsilon, grid)
    S = riccati.sigma.on(grid).values
    N = grid.n_steps
    zeta = sol.phi[N]
    zeta_hat = projector(basis, ensemble, N, OBSERVABLE)(zeta)

    def integral(vals):
        return trapezoid(vals, dx=grid.dt, axis=0)

    res1 = sol.eta1 - sol.eta1_hat
    c1k = mv(tab.C1 @ tab.KN, sol.eta1_hat) + mv(tab.C2, sol.eta2_hat)
    return {
        "terminal_sigma": 0.5 * np.einsum("pi,ij,pj->p", zeta_hat, S[N], zeta_hat),
        "h_variance": 0.5 * integral(quad_form(tab.H, sol.phi) - quad_form(tab.H, sol.phi_hat)),
        "eta1_hat": 0.5 * integral(quad_form(tab.NK - S, sol.eta1_hat)),
        "residual_eta": 0.5 * integral(quad_form(tab.N1, res1) + quad_form(tab.N2, sol.eta2)),
        "cross": -integral(quad_form(S, sol.phi_hat, c1k)),
    }


def optimal_cost_formula(spec, riccati, bsde_sol, ensemble, basis=None, trajectory=None):
    """Evaluate the optimal-cost certificate.

    With ``trajectory`` the simulated cost along it is computed as well and
    compared with the certificate path by path.
    """
    terms = formula_terms(spec, riccati, bsde_sol, ensemble, basis)
    per_path = sum(terms[name] for name in TERM_NAMES)
    decomposition = {name: float(terms[name].mean()) for name in TERM_NAMES}
    total = float(sum(decomposition[name] for name in TERM_NAMES))
    est = _estimate(per_path)
    report = CostReport(total, est.stderr, decomposition)
    if trajectory is not None:
        mc = evaluate_cost_mc(spec, trajectory, ensemble)
        diff = _estimate(mc.per_path - per_path)
        report.j_mc, report.j_mc_stderr = mc.value, mc.stderr
        scale = diff.stderr if diff.stderr > 0 else np.inf
        report.agreement = float(abs(mc.value - total) / scale) if np.isfinite(scale) else (
            0.0 if mc.value == total else float("inf"))
    return report
