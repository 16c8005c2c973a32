"""Deterministic matrix ODEs that decouple the Hamiltonian system.

``upsilon`` solves the backward Riccati equation

    dU/dt = U A' + A U + U H U - B R^-1 B' - C1 (I + U N1)^-1 U C1',   U(T) = 0,

``gamma1`` and ``gamma2`` the forward equations

    dG1/dt = -G1 A - A' G1 + H,                                         G1(0) = G,
    dG2/dt = -G2 A - A' G2 - G2 [B R^-1 B' + C1 (I + U N1)^-1 U C1'] G2 + H,
                                                                        G2(0) = G,

and ``sigma`` the forward Lyapunov equation used by the optimal cost

    dS/dt = -S (A + U H) - (A + U H)' S + H,   S(0) = G (I + U(0) G)^-1.

All four are integrated with classical RK4 on a uniform grid and
symmetrised after every step.
"""

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .core import MatrixPath, TimeGrid, coefficient_table, symmetrize
from .errors import NumericalError

DEFAULT_ODE_STEPS = 2000
BLOWUP_LIMIT = 1e12
SINGULAR_TOL = 1e-10


def rk4_matrix_step(f, t, S, dt):
    """One classical Runge-Kutta step for ``dS/dt = f(t, S)``, then symmetrise.

    ``dt`` may be negative to integrate backward in time.
    """
    k1 = f(t, S)
    k2 = f(t + 0.5 * dt, S + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, S + 0.5 * dt * k2)
    k4 = f(t + dt, S + dt * k3)
    return symmetrize(S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def _check_finite(S, t, name):
    if not np.all(np.isfinite(S)) or np.max(np.abs(S)) > BLOWUP_LIMIT:
        raise NumericalError(f"{name} blew up at t={t:.6g}", code="BLOWUP", module="riccati",
                             details={"t": float(t), "path": name})


def _solve(M, rhs, t, what):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} singular at t={t:.6g}", code="SINGULAR_FACTOR",
                             module="riccati", details={"t": float(t)}) from exc


def _min_sv(M):
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def _c1_term(C1, U, N1, t):
    """``C1 (I + U N1)^-1 U C1'``."""
    return C1 @ _solve(np.eye(U.shape[0]) + U @ N1, U, t, "I + Upsilon N1") @ C1.T


class _CoefficientCache:
    """Coefficients tabulated on nodes and midpoints of ``grid``; RK4 only
    ever asks for those times, anything else is evaluated directly."""

    def __init__(self, spec, grid):
        self.spec = spec
        self.half = 0.5 * grid.dt
        tab = coefficient_table(spec, self.half * np.arange(2 * grid.n_steps + 1))
        self.rows = [SimpleNamespace(A=tab.A[j], H=tab.H[j], C1=tab.C1[j], N1=tab.N1[j],
                                     BRB=tab.BRB[j]) for j in range(len(tab.t))]

    def __call__(self, t):
        pos = t / self.half
        j = int(round(pos))
        if abs(pos - j) < 1e-9 and 0 <= j < len(self.rows):
            return self.rows[j]
        tab = coefficient_table(self.spec, [t])
        return SimpleNamespace(A=tab.A[0], H=tab.H[0], C1=tab.C1[0], N1=tab.N1[0],
                               BRB=tab.BRB[0])


def _upsilon_rhs(spec, coefs):
    def f(t, U):
        c = coefs(t)
        return U @ c.A.T + c.A @ U + U @ c.H @ U - c.BRB - _c1_term(c.C1, U, c.N1, t)
    return f


def _integrate(f, grid, start, backward, name):
    n = start.shape[0]
    vals = np.empty((len(grid), n, n))
    dt = grid.dt
    if backward:
        vals[-1] = start
        for k in range(grid.n_steps, 0, -1):
            t = grid.nodes[k]
            vals[k - 1] = rk4_matrix_step(f, t, vals[k], -dt)
            _check_finite(vals[k - 1], t - dt, name)
    else:
        vals[0] = start
        for k in range(grid.n_steps):
            t = grid.nodes[k]
            vals[k + 1] = rk4_matrix_step(f, t, vals[k], dt)
            _check_finite(vals[k + 1], t + dt, name)
    return vals


def _ode_grid(spec, n_steps):
    return TimeGrid(spec.horizon, DEFAULT_ODE_STEPS if n_steps is None else n_steps)


def solve_upsilon(spec, n_steps=None):
    """Backward Riccati solution ``Upsilon`` with ``Upsilon(T) = 0``."""
    grid = _ode_grid(spec, n_steps)
    zero = np.zeros((spec.n, spec.n))
    coefs = _CoefficientCache(spec, grid)
    vals = _integrate(_upsilon_rhs(spec, coefs), grid, zero, backward=True, name="upsilon")
    vals[-1] = zero
    eye = np.eye(spec.n)
    for k, t in enumerate(grid.nodes):
        if _min_sv(eye + vals[k] @ spec.N1(t)) < SINGULAR_TOL:
            raise NumericalError(f"I + Upsilon N1 singular at t={t:.6g}",
                                 code="SINGULAR_FACTOR", module="riccati")
    return MatrixPath(grid, vals, "upsilon")


class _UpsilonInterpolant:
    """Cubic Hermite interpolation of ``Upsilon`` using the ODE right-hand side
    for the node derivatives, so RK4 stages of the forward equations keep
    fourth-order accuracy."""

    def __init__(self, spec, upsilon, coefs):
        self.grid = upsilon.grid
        self.values = upsilon.values
        f = _upsilon_rhs(spec, coefs)
        self.slopes = np.array([f(t, U) for t, U in zip(self.grid.nodes, self.values)])

    def __call__(self, t):
        h = self.grid.dt
        pos = min(max(t / h, 0.0), self.grid.n_steps)
        k = min(int(np.floor(pos)), self.grid.n_steps - 1)
        s = pos - k
        if s == 0.0:
            return self.values[k]
        if s == 1.0:
            return self.values[k + 1]
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return (h00 * self.values[k] + h10 * h * self.slopes[k]
                + h01 * self.values[k + 1] + h11 * h * self.slopes[k + 1])


def solve_gamma1(spec, n_steps=None):
    """Forward Lyapunov equation for ``Gamma1`` with ``Gamma1(0) = G``."""
    grid = _ode_grid(spec, n_steps)
    coefs = _CoefficientCache(spec, grid)

    def f(t, S):
        c = coefs(t)
        return -S @ c.A - c.A.T @ S + c.H

    vals = _integrate(f, grid, np.array(spec.G), backward=False, name="gamma1")
    vals[0] = spec.G
    return MatrixPath(grid, vals, "gamma1")


def solve_gamma2(spec, upsilon):
    """Forward Riccati equation for ``Gamma2`` on the grid of ``upsilon``."""
    grid = upsilon.grid
    coefs = _CoefficientCache(spec, grid)
    U = _UpsilonInterpolant(spec, upsilon, coefs)

    def f(t, S):
        c = coefs(t)
        quad = c.BRB + _c1_term(c.C1, U(t), c.N1, t)
        return -S @ c.A - c.A.T @ S - S @ quad @ S + c.H

    vals = _integrate(f, grid, np.array(spec.G), backward=False, name="gamma2")
    vals[0] = spec.G
    eye = np.eye(spec.n)
    for k in range(len(grid)):
        if _min_sv(eye + vals[k] @ upsilon.values[k]) < SINGULAR_TOL:
            raise NumericalError(f"I + Gamma2 Upsilon singular at t={grid.nodes[k]:.6g}",
                                 code="SINGULAR_FACTOR", module="riccati")
    return MatrixPath(grid, vals, "gamma2")


def solve_sigma(spec, upsilon):
    """Forward Lyapunov equation for the cost kernel ``Sigma``."""
    grid = upsilon.grid
    coefs = _CoefficientCache(spec, grid)
    U = _UpsilonInterpolant(spec, upsilon, coefs)
    eye = np.eye(spec.n)
    G = np.asarray(spec.G)
    M0 = eye + upsilon.values[0] @ G
    if _min_sv(M0) < SINGULAR_TOL:
        raise NumericalError("I + Upsilon(0) G singular", code="SINGULAR_FACTOR",
                             module="riccati")
    start = symmetrize(np.linalg.solve(M0.T, G.T).T)

    def f(t, S):
        c = coefs(t)
        K = c.A + U(t) @ c.H
        return -S @ K - K.T @ S + c.H

    vals = _integrate(f, grid, start, backward=False, name="sigma")
    vals[0] = start
    return MatrixPath(grid, vals, "sigma")


@dataclass
class RiccatiBundle:
    upsilon: MatrixPath
    gamma1: MatrixPath
    gamma2: MatrixPath
    sigma: MatrixPath
    invertibility_log: dict

    @property
    def grid(self):
        return self.upsilon.grid

    def on(self, grid):
        """All four paths resampled onto ``grid``."""
        return RiccatiBundle(self.upsilon.on(grid), self.gamma1.on(grid),
                             self.gamma2.on(grid), self.sigma.on(grid),
                             self.invertibility_log)


def solve_riccati(spec, n_steps=None):
    upsilon = solve_upsilon(spec, n_steps)
    gamma1 = solve_gamma1(spec, n_steps)
    gamma2 = solve_gamma2(spec, upsilon)
    sigma = solve_sigma(spec, upsilon)
    eye = np.eye(spec.n)
    nodes = upsilon.grid.nodes
    log = {
        "t": nodes,
        "I+Upsilon*N1": np.array([_min_sv(eye + U @ spec.N1(t))
                                  for t, U in zip(nodes, upsilon.values)]),
        "I+Gamma2*Upsilon": np.array([_min_sv(eye + G2 @ U)
                                      for G2, U in zip(gamma2.values, upsilon.values)]),
    }
    return RiccatiBundle(upsilon, gamma1, gamma2, sigma, log)
