"""Seeded Brownian ensembles and Euler-Maruyama simulation.

Increments come from a counter-based Philox stream keyed by the seed, with
the step index and the Brownian component placed in the high counter words.
Every ``(seed, step, component)`` stream is therefore independent of how
many paths are drawn and of the order in which steps are generated.

Arrays are time-major: increments ``(n_steps, n_paths)``, Brownian values
``(n_nodes, n_paths)`` and processes ``(n_nodes, n_paths, d)``.
"""

from dataclasses import dataclass

import numpy as np

from .core import coefficient_table
from .errors import NumericalError

BLOWUP_LIMIT = 1e12


def _increments(seed, step, component, n_paths, dt):
    bitgen = np.random.Philox(key=int(seed) % 2 ** 64,
                              counter=[0, 0, int(step), int(component)])
    return np.sqrt(dt) * np.random.Generator(bitgen).standard_normal(n_paths)


@dataclass(eq=False)
class PathEnsemble:
    seed: int
    n_paths: int
    grid: object
    dW1: np.ndarray
    dW2: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    seed_w2: int = None

    @property
    def dt(self):
        return self.grid.dt

    @property
    def n_steps(self):
        return self.grid.n_steps

    def block(self, start, stop):
        """Ensemble made of paths ``start:stop`` (disjoint blocks are independent)."""
        sl = slice(start, stop)
        dW1, dW2 = self.dW1[:, sl], self.dW2[:, sl]
        return PathEnsemble(self.seed, dW1.shape[1], self.grid, dW1, dW2,
                            self.W1[:, sl], self.W2[:, sl], self.seed_w2)


def generate_brownian(seed, n_paths, grid, seed_w2=None):
    """Two independent Brownian motions on ``grid``.

    ``seed_w2`` (default: ``seed``) keys the second component separately so
    that ``W2`` can be resampled while ``W1`` stays fixed.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    seed_w2 = seed if seed_w2 is None else seed_w2
    dt = grid.dt
    dW1 = np.empty((grid.n_steps, n_paths))
    dW2 = np.empty((grid.n_steps, n_paths))
    for k in range(grid.n_steps):
        dW1[k] = _increments(seed, k, 0, n_paths, dt)
        dW2[k] = _increments(seed_w2, k, 1, n_paths, dt)
    zeros = np.zeros((1, n_paths))
    W1 = np.concatenate([zeros, np.cumsum(dW1, axis=0)], axis=0)
    W2 = np.concatenate([zeros, np.cumsum(dW2, axis=0)], axis=0)
    return PathEnsemble(seed, n_paths, grid, dW1, dW2, W1, W2, seed_w2)


def _check(x, k):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > BLOWUP_LIMIT:
        raise NumericalError(f"simulation blew up at step {k}", code="BLOWUP", module="pathsim")


def euler_sde(drift, diffusion1, diffusion2, x0, ensemble):
    """Explicit Euler-Maruyama scheme.

    Each callback has signature ``f(k, t, x) -> (n_paths, d)`` where ``x`` is
    the state at node ``k``; any auxiliary process is captured by closure.
    ``x0`` is either shared, shape ``(d,)``, or per path, ``(n_paths, d)``.
    Callbacks given as ``None`` are skipped, so an observable-filtration
    process passes ``diffusion2=None`` and never touches ``dW2``.
    """
    n_paths = ensemble.n_paths
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[-1]
    out = np.empty((len(ensemble.grid), n_paths, d))
    out[0] = np.broadcast_to(x0, (n_paths, d))
    dt = ensemble.dt
    for k in range(ensemble.n_steps):
        t = ensemble.grid.nodes[k]
        x = out[k]
        nxt = x + drift(k, t, x) * dt
        if diffusion1 is not None:
            nxt = nxt + diffusion1(k, t, x) * ensemble.dW1[k, :, None]
        if diffusion2 is not None:
            nxt = nxt + diffusion2(k, t, x) * ensemble.dW2[k, :, None]
        out[k + 1] = nxt
        _check(out[k + 1], k + 1)
    return out


def mv(M, x):
    """Apply ``M`` to per-path row vectors ``x``.

    ``M`` is one matrix ``(n, n)`` with ``x`` of shape ``(n_paths, n)``, or a
    per-node stack ``(K, n, n)`` with ``x`` of shape ``(K, n_paths, n)``.
    """
    return x @ np.swapaxes(M, -1, -2)


def quad_form(M, x, y=None):
    """``x' M y`` per node and path for stacks ``M (K, n, n)``, ``x (K, p, n)``."""
    y = x if y is None else y
    return np.einsum("kpi,kij,kpj->kp", x, M, y)


def _inv_stack(M, what):
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} singular", code="SINGULAR_FACTOR",
                             module="pathsim") from exc


def filtering_factors(spec, upsilon, grid):
    """Per-node coefficient stacks shared by the filtered equations.

    ``KN = (I + U N1)^-1``, ``NK = N1 (I + U N1)^-1`` and
    ``KC = (I + N1 U)^-1 C1'``, with ``U`` resampled onto ``grid``.
    """
    tab = coefficient_table(spec, grid.nodes)
    U = upsilon.on(grid).values
    eye = np.eye(spec.n)
    tab.U = U
    tab.KN = _inv_stack(eye + U @ tab.N1, "I + Upsilon N1")
    tab.NK = tab.N1 @ tab.KN
    tab.KC = _inv_stack(eye + tab.N1 @ U, "I + N1 Upsilon") @ np.swapaxes(tab.C1, -1, -2)
    return tab


def initial_xhat(spec, upsilon0, phi_hat0):
    """``-(I + G U0)^-1 G phi_hat0``."""
    G = np.asarray(spec.G)
    M = np.eye(spec.n) + G @ upsilon0
    return -np.linalg.solve(M, G @ np.atleast_2d(phi_hat0).T).T


def simulate_xhat(spec, upsilon, phi_hat, eta1_hat, ensemble):
    """Filtered adjoint state.

    dXh = -(A' Xh + H U Xh + H phi_hat) dt
          - [(I + N1 U)^-1 C1' Xh + N1 (I + U N1)^-1 eta1_hat] dW1
    started at ``-(I + G U0)^-1 G phi_hat0``. Never reads ``dW2``.
    """
    tab = filtering_factors(spec, upsilon, ensemble.grid)
    At = np.swapaxes(tab.A, -1, -2)
    HU = tab.H @ tab.U
    x0 = initial_xhat(spec, tab.U[0], phi_hat[0])

    def drift(k, t, x):
        return -(mv(At[k] + HU[k], x) + mv(tab.H[k], phi_hat[k]))

    def diff1(k, t, x):
        return -(mv(tab.KC[k], x) + mv(tab.NK[k], eta1_hat[k]))

    return euler_sde(drift, diff1, None, x0, ensemble)


def simulate_x(spec, upsilon, bsde_solution, xhat, ensemble):
    """Full-information adjoint state driven by both Brownian motions.

    dX = -[A' X + H (U Xh + phi)] dt
         - [C1' X + N1 (eta1 - eta1_hat) + N1 (I + U N1)^-1 (eta1_hat - U C1' Xh)] dW1
         - (C2' X + N2 eta2) dW2,
    with ``X0 = Xh0``.
    """
    sol = bsde_solution
    tab = filtering_factors(spec, upsilon, ensemble.grid)
    At = np.swapaxes(tab.A, -1, -2)
    C1t = np.swapaxes(tab.C1, -1, -2)
    C2t = np.swapaxes(tab.C2, -1, -2)
    UC1t = tab.U @ C1t

    def drift(k, t, x):
        return -(mv(At[k], x) + mv(tab.H[k], mv(tab.U[k], xhat[k]) + sol.phi[k]))

    def diff1(k, t, x):
        resid = sol.eta1[k] - sol.eta1_hat[k]
        filt = sol.eta1_hat[k] - mv(UC1t[k], xhat[k])
        return -(mv(C1t[k], x) + mv(tab.N1[k], resid) + mv(tab.NK[k], filt))

    def diff2(k, t, x):
        return -(mv(C2t[k], x) + mv(tab.N2[k], sol.eta2[k]))

    return euler_sde(drift, diff1, diff2, xhat[0], ensemble)
