"""Solution of the stochastic Hamiltonian system and optimality diagnostics.

The controlled state ``(Y, Z1, Z2)`` and the adjoint ``X`` are assembled
from the decoupling relations

    Y  = U Xh + phi,
    Z1 = eta1 - eta1^ + (I + U N1)^-1 (eta1^ - U C1' Xh),
    Z2 = eta2,
    v  = -R^-1 B' Xh,

and, in feedback form, from the second ansatz
``X = -Gamma1 (Y - Y^) - Gamma2 Y^ - psi`` which gives
``Xh = -(I + Gamma2 U)^-1 (Gamma2 phi^ + psi^)`` and
``v = R^-1 B' (Gamma2 Y^ + psi^)``.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bsde import GeneratorSpec, solve_filtered_bsde
from .condexp import OBSERVABLE, RegressionBasis, condexp_regress, projector, rms
from .core import coefficient_table
from .cost import evaluate_cost_mc
from .errors import NumericalError
from .pathsim import euler_sde, filtering_factors, mv, simulate_x, simulate_xhat


@dataclass(eq=False)
class HamiltonianTrajectory:
    """Per-path processes, arrays of shape ``(N + 1, n_paths, dim)``.

    ``psi`` and ``psi_hat`` are ``None`` for an open-loop assembly that did
    not solve for them. ``meta`` records how the trajectory was built and
    the Euler defects of the two forward-backward equations.
    """

    X: np.ndarray
    X_hat: np.ndarray
    Y: np.ndarray
    Y_hat: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray
    v: np.ndarray
    Y0: np.ndarray
    psi: np.ndarray = None
    psi_hat: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def with_control(self, v, **changes):
        """Copy with another control (and optionally other processes)."""
        fields = dict(X=self.X, X_hat=self.X_hat, Y=self.Y, Y_hat=self.Y_hat, Z1=self.Z1,
                      Z2=self.Z2, v=v, Y0=self.Y0, psi=self.psi, psi_hat=self.psi_hat,
                      meta=dict(self.meta))
        fields.update(changes)
        return HamiltonianTrajectory(**fields)


@dataclass
class OptimalityDiagnostics:
    stationarity_residual_norm: float
    fbsde_residual: dict
    perturbation_margins: list


class PsiPaths(NamedTuple):
    psi: np.ndarray
    psi_hat: np.ndarray


def _inv_stack(M, what):
    s = np.linalg.svd(M, compute_uv=False)[..., -1]
    if np.min(s) < 1e-10:
        raise NumericalError(f"{what} singular", code="SINGULAR_FACTOR", module="hamiltonian")
    return np.linalg.inv(M)


def _tables(spec, riccati, grid):
    """Coefficients and Riccati paths stacked on the simulation grid."""
    tab = filtering_factors(spec, riccati.upsilon, grid)
    tab.G1 = riccati.gamma1.on(grid).values
    tab.G2 = riccati.gamma2.on(grid).values
    tab.S = riccati.sigma.on(grid).values
    tab.At = np.swapaxes(tab.A, -1, -2)
    tab.C1t = np.swapaxes(tab.C1, -1, -2)
    tab.C2t = np.swapaxes(tab.C2, -1, -2)
    tab.Bt = np.swapaxes(tab.B, -1, -2)
    tab.J = _inv_stack(np.eye(spec.n) + tab.G2 @ tab.U, "I + Gamma2 Upsilon")
    return tab


def fbsde_residuals(spec, traj, ensemble):
    """RMS per-step Euler defects of the state and adjoint equations.

        dY = (A Y + B v + C1 Z1 + C2 Z2) dt + Z1 dW1 + Z2 dW2
        dX = -(A' X + H Y) dt - (C1' X + N1 Z1) dW1 - (C2' X + N2 Z2) dW2
    """
    tab = coefficient_table(spec, ensemble.grid.nodes)
    dt = ensemble.dt
    dW1 = ensemble.dW1[:, :, None]
    dW2 = ensemble.dW2[:, :, None]
    sl = slice(0, -1)
    Y, X, Z1, Z2, v = traj.Y, traj.X, traj.Z1[sl], traj.Z2[sl], traj.v[sl]
    A, B, C1, C2 = tab.A[sl], tab.B[sl], tab.C1[sl], tab.C2[sl]
    dY = (Y[1:] - Y[:-1]
          - (mv(A, Y[:-1]) + mv(B, v) + mv(C1, Z1) + mv(C2, Z2)) * dt
          - Z1 * dW1 - Z2 * dW2)
    C1t, C2t = np.swapaxes(C1, -1, -2), np.swapaxes(C2, -1, -2)
    dX = (X[1:] - X[:-1]
          + (mv(np.swapaxes(A, -1, -2), X[:-1]) + mv(tab.H[sl], Y[:-1])) * dt
          + (mv(C1t, X[:-1]) + mv(tab.N1[sl], Z1)) * dW1
          + (mv(C2t, X[:-1]) + mv(tab.N2[sl], Z2)) * dW2)
    return {"state": rms(dY), "adjoint": rms(dX)}


def assemble_open_loop(spec, upsilon, bsde_sol, ensemble, basis=None):
    """Optimal trajectory from the decoupling relations.

    ``X^`` and ``X`` are simulated forward from the filtered BSDE solution;
    the state and control follow by substitution.
    """
    sol = bsde_sol
    tab = filtering_factors(spec, upsilon, ensemble.grid)
    xhat = simulate_xhat(spec, upsilon, sol.phi_hat, sol.eta1_hat, ensemble)
    x = simulate_x(spec, upsilon, sol, xhat, ensemble)
    UC1t = tab.U @ np.swapaxes(tab.C1, -1, -2)
    Y = mv(tab.U, xhat) + sol.phi
    Y_hat = mv(tab.U, xhat) + sol.phi_hat
    Z1 = sol.eta1 - sol.eta1_hat + mv(tab.KN, sol.eta1_hat - mv(UC1t, xhat))
    Z2 = sol.eta2.copy()
    v = -mv(tab.Rinv @ np.swapaxes(tab.B, -1, -2), xhat)
    G = np.asarray(spec.G)
    Y0 = np.linalg.solve(np.eye(spec.n) + tab.U[0] @ G, sol.phi0)
    traj = HamiltonianTrajectory(x, xhat, Y, Y_hat, Z1, Z2, v, Y0,
                                 meta={"construction": "open_loop"})
    traj.meta["fbsde_residual"] = fbsde_residuals(spec, traj, ensemble)
    return traj


def _psi_hat_direct(tab, sol, ensemble):
    """Filtered ``psi^`` by Euler on the observable filtration.

        dpsi^ = -[A' psi^ + G2 B R^-1 B' psi^ + G2 C1 K (eta1^ + U C1' psi^)
                  + G2 C2 eta2^] dt + a1^ dW1,
        a1^ = (N1 - G2) K [eta1^ + U C1' J (G2 phi^ + psi^)] - C1' J (G2 phi^ + psi^)

    with ``K = (I + U N1)^-1``, ``J = (I + G2 U)^-1`` and ``psi^_0 = 0``.
    """
    G2, U, KN, J = tab.G2, tab.U, tab.KN, tab.J
    G2C1K = G2 @ tab.C1 @ KN
    UC1t = U @ tab.C1t
    lin = tab.At + G2 @ tab.BRB + G2C1K @ UC1t
    G2C2 = G2 @ tab.C2
    NG = (tab.N1 - G2) @ KN

    def drift(k, t, p):
        return -(mv(lin[k], p) + mv(G2C1K[k], sol.eta1_hat[k]) + mv(G2C2[k], sol.eta2_hat[k]))

    def diff1(k, t, p):
        xi = mv(J[k], mv(G2[k], sol.phi_hat[k]) + p)
        return mv(NG[k], sol.eta1_hat[k] + mv(UC1t[k], xi)) - mv(tab.C1t[k], xi)

    return euler_sde(drift, diff1, None, np.zeros(U.shape[-1]), ensemble)


def _psi_full(tab, sol, psi_hat, ensemble):
    """``psi`` on the full filtration, reading the filtered value from ``psi_hat``."""
    G1, G2, U, KN, J = tab.G1, tab.G2, tab.U, tab.KN, tab.J
    G2C1K = G2 @ tab.C1 @ KN
    UC1t = U @ tab.C1t
    G2BRB = G2 @ tab.BRB
    G2C2, G1C1, G1C2 = G2 @ tab.C2, G1 @ tab.C1, G1 @ tab.C2
    NG1 = tab.N1 - G1
    NG2 = (tab.N1 - G2) @ KN
    N2G1 = tab.N2 - G1

    def drift(k, t, p):
        ph = psi_hat[k]
        e1, e1h = sol.eta1[k], sol.eta1_hat[k]
        e2, e2h = sol.eta2[k], sol.eta2_hat[k]
        return -(mv(tab.At[k], p) + mv(G2BRB[k], ph)
                 + mv(G2C1K[k], e1h + mv(UC1t[k], ph)) + mv(G2C2[k], e2h)
                 + mv(G1C1[k], e1 - e1h) + mv(G1C2[k], e2 - e2h))

    def xi(k, p):
        return mv(J[k], mv(G2[k], sol.phi_hat[k]) + psi_hat[k])

    def diff1(k, t, p):
        x = xi(k, p)
        dphi = sol.phi[k] - sol.phi_hat[k]
        return (mv(NG1[k], sol.eta1[k] - sol.eta1_hat[k]) - mv(tab.C1t[k], mv(G1[k], dphi))
                - mv(tab.C1t[k], p - psi_hat[k])
                + mv(NG2[k], sol.eta1_hat[k] + mv(UC1t[k], x)) - mv(tab.C1t[k], x))

    def diff2(k, t, p):
        x = xi(k, p)
        dphi = sol.phi[k] - sol.phi_hat[k]
        return (mv(N2G1[k], sol.eta2[k])
                - mv(tab.C2t[k], mv(G1[k], dphi) + p - psi_hat[k])
                - mv(tab.C2t[k], x))

    return euler_sde(drift, diff1, diff2, np.zeros(U.shape[-1]), ensemble)


def solve_psi(spec, riccati, bsde_sol, ensemble, basis=None):
    """Forward simulation of ``psi`` and of its filtered version ``psi^``.

    ``psi^`` always comes from its own filtered equation; the projection of
    ``psi`` onto the observable filtration is a cross-check, see
    :func:`psi_projection_gap`.
    """
    tab = _tables(spec, riccati, ensemble.grid)
    psi_hat = _psi_hat_direct(tab, bsde_sol, ensemble)
    psi = _psi_full(tab, bsde_sol, psi_hat, ensemble)
    return PsiPaths(psi, psi_hat)


def psi_projection_gap(psi_paths, ensemble, basis=None, nodes=None):
    """RMS difference between the projected ``psi`` and the direct ``psi^``.

    The projection uses the polynomial basis in ``W1_t`` augmented with
    ``psi^`` itself as a feature, since ``psi^`` depends on the whole
    observed path and not only on ``W1_t``.
    """
    basis = basis or RegressionBasis()
    psi, psi_hat = psi_paths
    nodes = range(1, psi.shape[0]) if nodes is None else nodes
    gaps = [rms(condexp_regress(psi[k], basis, ensemble, k, OBSERVABLE, extra=psi_hat[k])
                - psi_hat[k]) for k in nodes]
    return float(max(gaps))


def feedback_control(spec, gamma2, y_hat, psi_hat, k, grid=None):
    """``v_k = R^-1 B' (Gamma2 Y^_k + psi^_k)`` at node ``k`` of ``grid``."""
    grid = grid or spec.grid
    t = grid.nodes[k]
    R, B = spec.R(t), spec.B(t)
    G2 = gamma2.at(t)
    return mv(np.linalg.solve(R, B.T), mv(G2, y_hat) + psi_hat)


def closed_loop_simulate(spec, riccati, psi_paths, bsde_sol, ensemble):
    """Optimal trajectory in feedback form.

    ``Xh`` comes from the second ansatz, ``(Y, Y^, Z1, Z2)`` from the
    decoupling relations, ``v`` from :func:`feedback_control` and ``X`` from
    ``-Gamma1 (Y - Y^) - Gamma2 Y^ - psi``.
    """
    sol = bsde_sol
    grid = ensemble.grid
    tab = _tables(spec, riccati, grid)
    psi, psi_hat = psi_paths
    xhat = -mv(tab.J, mv(tab.G2, sol.phi_hat) + psi_hat)
    Y = mv(tab.U, xhat) + sol.phi
    Y_hat = mv(tab.U, xhat) + sol.phi_hat
    UC1t = tab.U @ tab.C1t
    Z1 = sol.eta1 - sol.eta1_hat + mv(tab.KN, sol.eta1_hat - mv(UC1t, xhat))
    Z2 = sol.eta2.copy()
    gamma2 = riccati.gamma2.on(grid)
    v = np.stack([feedback_control(spec, gamma2, Y_hat[k], psi_hat[k], k, grid)
                  for k in range(len(grid))])
    X = -mv(tab.G1, Y - Y_hat) - mv(tab.G2, Y_hat) - psi
    G = np.asarray(spec.G)
    Y0 = np.linalg.solve(np.eye(spec.n) + tab.U[0] @ G, sol.phi0)
    traj = HamiltonianTrajectory(X, xhat, Y, Y_hat, Z1, Z2, v, Y0, psi, psi_hat,
                                 meta={"construction": "closed_loop"})
    traj.meta["fbsde_residual"] = fbsde_residuals(spec, traj, ensemble)
    return traj


def stationarity_profile(spec, traj, basis, ensemble):
    """Per-node RMS of ``E[R v + B' X | F^W1]`` and its statistical-zero level.

    Returns ``(residual, noise)``, both of length ``N + 1``; ``noise`` is the
    RMS the projection would have if the conditional mean were zero, see
    :meth:`backward_lq.condexp.Projector.null_rms`.
    """
    basis = basis or RegressionBasis()
    tab = coefficient_table(spec, ensemble.grid.nodes)
    g = mv(tab.R, traj.v) + mv(np.swapaxes(tab.B, -1, -2), traj.X)
    res = np.empty(g.shape[0])
    noise = np.empty(g.shape[0])
    for k in range(g.shape[0]):
        proj = projector(basis, ensemble, k, OBSERVABLE)
        res[k] = rms(proj(g[k]))
        noise[k] = proj.null_rms(g[k])
    return res, noise


def stationarity_residual(spec, traj, basis, ensemble):
    """``max_k RMS_paths E[R v + B' X | F_k^W1]``."""
    res, _ = stationarity_profile(spec, traj, basis, ensemble)
    return float(np.max(res))


def _constant(t, w1):
    return np.ones_like(w1)


def _sine(t, w1):
    return np.sin(w1)


def _window(t, w1, horizon):
    inside = (t >= 0.25 * horizon) & (t <= 0.75 * horizon)
    return np.where(inside, 1.0, 0.0) * np.ones_like(w1)


DIRECTIONS = ("constant", "sin_w1", "window")


def direction_process(name, ensemble, m):
    """Observable perturbation direction ``u``, shape ``(N + 1, n_paths, m)``.

    ``"constant"``: ``u = 1``; ``"sin_w1"``: ``u = sin(W1_t)``;
    ``"window"``: indicator of ``[T/4, 3T/4]``. Every component of ``u``
    carries the same scalar process.
    """
    t = ensemble.grid.nodes[:, None]
    w1 = ensemble.W1
    if name == "constant":
        u = _constant(t, w1)
    elif name == "sin_w1":
        u = _sine(t, w1)
    elif name == "window":
        u = _window(t, w1, ensemble.grid.horizon)
    else:
        raise ValueError(f"unknown direction {name!r}")
    return np.repeat(u[:, :, None], m, axis=2)


def perturbation_state(spec, u, ensemble, basis=None):
    """Response ``(P, Q1, Q2)`` of the state to the control direction ``u``.

    ``dP = (A P + B u + C1 Q1 + C2 Q2) dt + Q1 dW1 + Q2 dW2``, ``P_T = 0``.
    The state under ``v* + eps u`` is ``Y* + eps P`` by linearity.
    """
    tab = coefficient_table(spec, ensemble.grid.nodes)
    Bu = mv(tab.B, u)

    def g(k, t, P, Q1, Q2, Ph, Q1h, Q2h):
        return mv(tab.A[k], P) + Bu[k] + mv(tab.C1[k], Q1) + mv(tab.C2[k], Q2)

    gen = GeneratorSpec(g, 0.0, "perturbation")
    zero = np.zeros((ensemble.n_paths, spec.n))
    sol = solve_filtered_bsde(gen, zero, ensemble, basis, n=spec.n)
    return sol.phi, sol.eta1, sol.eta2


def optimality_margin(spec, traj, ensemble, directions=DIRECTIONS, epsilons=(0.1, 0.2, 0.4),
                      basis=None):
    """``Delta J(eps) = J(v* + eps u) - J(v*)`` for each direction and step.

    Both costs are evaluated on the same paths, so the standard error is
    that of the per-path difference. Returns a list of dicts with keys
    ``direction``, ``epsilon``, ``delta_j`` and ``stderr``.
    """
    base = evaluate_cost_mc(spec, traj, ensemble)
    out = []
    for name in directions:
        u = direction_process(name, ensemble, spec.m)
        P, Q1, Q2 = perturbation_state(spec, u, ensemble, basis)
        for eps in epsilons:
            pert = traj.with_control(traj.v + eps * u, Y=traj.Y + eps * P,
                                     Z1=traj.Z1 + eps * Q1, Z2=traj.Z2 + eps * Q2)
            cost = evaluate_cost_mc(spec, pert, ensemble)
            diff = cost.per_path - base.per_path
            out.append({"direction": name, "epsilon": float(eps),
                        "delta_j": float(diff.mean()),
                        "stderr": float(diff.std(ddof=1) / np.sqrt(diff.size))})
    return out


def diagnose(spec, traj, ensemble, basis=None, margins=True):
    """Bundle the stationarity residual, FBSDE defects and perturbation margins."""
    res = stationarity_residual(spec, traj, basis, ensemble)
    fb = traj.meta.get("fbsde_residual") or fbsde_residuals(spec, traj, ensemble)
    marg = optimality_margin(spec, traj, ensemble, basis=basis) if margins else []
    return OptimalityDiagnostics(res, fb, marg)
