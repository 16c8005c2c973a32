"""Least-squares Monte Carlo estimates of conditional expectations.

``E[beta_t | F_t^{W1}]`` (the observable filtration) is approximated by the
L2 projection of per-path samples onto polynomials in ``W1_t``; conditional
expectations on the full filtration use polynomials in ``(W1_t, W2_t)``.
Polynomials are probabilists' Hermite polynomials of ``W_t / sqrt(t)``,
scaled to unit variance, which keeps the Gram matrix close to ``n * I``.
"""

from dataclasses import dataclass
from math import factorial, sqrt

import numpy as np
from numpy.polynomial.hermite_e import hermevander
from scipy import linalg

from .errors import NumericalError

COND_LIMIT = 1e12
OBSERVABLE = "observable"
FULL = "full"


def _hermite_features(w, t, degree):
    if t <= 0.0 or degree == 0:
        return np.ones((w.shape[0], 1))
    V = hermevander(w / np.sqrt(t), degree)
    return V / np.sqrt([factorial(j) for j in range(degree + 1)])


def _total_degree_pairs(p1, p2, degree):
    pairs = [(i, j) for i in range(p1) for j in range(p2) if i + j <= degree]
    return np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])


@dataclass(frozen=True)
class TerminalFeatures:
    """Features spanning ``E[zeta | F_t]`` for the standard terminal values.

    For a smooth terminal value every non-affine term ``g(a1 W1_T + a2 W2_T)``
    contributes ``sin`` and ``cos`` of ``a1 W1_t + a2 W2_t`` on the full
    filtration and of ``a1 W1_t`` on the observable one; the pair is closed
    under the derivative, so it also spans the diffusion coefficients. A
    lognormal terminal value contributes ``exp(b W1_t + c W2_t)`` (resp.
    ``exp(b W1_t)``).
    """

    terminal: object

    def _arguments(self, w1, w2, filtration):
        term = self.terminal
        if term.kind != "smooth":
            return []
        full = filtration == FULL
        return [a1 * w1 + a2 * w2 if full else a1 * w1
                for g, _, a1, a2 in term.params[1] if g != "affine" and (full or a1 != 0.0)]

    def width(self, filtration=FULL):
        if self.terminal.kind == "lognormal":
            return 1
        zeros = np.zeros(1)
        return 2 * len(self._arguments(zeros, zeros, filtration))

    def __call__(self, t, w1, w2, filtration):
        term = self.terminal
        if term.kind == "lognormal":
            _, b, c = term.params
            return np.exp(b * w1 + c * w2) if filtration == FULL else np.exp(b * w1)
        cols = []
        for arg in self._arguments(w1, w2, filtration):
            cols += [np.sin(arg), np.cos(arg)]
        return np.column_stack(cols) if cols else None


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial basis for the projections.

    The ridge weight is added to the unnormalised normal equations
    ``Phi' Phi + ridge * I`` (constant column unpenalised, so sample means
    are preserved exactly). ``features`` holds extra callables
    ``f(t, w1, w2, filtration) -> (n_paths, q)`` appended to the
    polynomials, e.g. :class:`TerminalFeatures`.
    """

    degree: int = 3
    ridge: float = 1e-8
    features: tuple = ()

    def n_functions(self, filtration=OBSERVABLE):
        d = self.degree
        p = d + 1 if filtration == OBSERVABLE else (d + 1) * (d + 2) // 2
        return p + sum(getattr(f, "width", lambda _: 1)(filtration) for f in self.features)

    def design(self, ensemble, k, filtration=OBSERVABLE, extra=None):
        """Feature matrix at node ``k``, shape ``(n_paths, p)``."""
        t = ensemble.grid.nodes[k]
        f1 = _hermite_features(ensemble.W1[k], t, self.degree)
        if filtration == OBSERVABLE:
            Phi = f1
        elif filtration == FULL:
            f2 = _hermite_features(ensemble.W2[k], t, self.degree)
            i, j = _total_degree_pairs(f1.shape[1], f2.shape[1], self.degree)
            Phi = f1[:, i] * f2[:, j]
        else:
            raise ValueError(f"unknown filtration {filtration!r}")
        cols = [f(t, ensemble.W1[k], ensemble.W2[k], filtration) for f in self.features]
        if extra is not None:
            cols.append(extra)
        cols = [np.asarray(c, dtype=float).reshape(ensemble.n_paths, -1)
                for c in cols if c is not None]
        if cols:
            extra = np.column_stack(cols)
            # keep only the part of each extra feature not already spanned
            coef, *_ = np.linalg.lstsq(Phi, extra, rcond=None)
            resid = extra - Phi @ coef
            sd = resid.std(axis=0)
            keep = sd > 1e-6 * np.abs(extra).max(axis=0)
            if np.any(keep):
                Phi = np.column_stack([Phi, resid[:, keep] / sd[keep]])
        return Phi


class Projector:
    """L2 projection onto the column span of a fixed design matrix."""

    def __init__(self, Phi, ridge=1e-8):
        self.Phi = Phi
        p = Phi.shape[1]
        M = Phi.T @ Phi
        pen = np.full(p, float(ridge))
        pen[0] = 0.0
        M[np.diag_indices(p)] += pen
        eig = np.linalg.eigvalsh(M) if np.all(np.isfinite(M)) else np.array([np.nan])
        cond = eig[-1] / eig[0] if eig[0] > 0 else np.inf
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise NumericalError(f"regression normal equations ill-conditioned (cond={cond:.3e})",
                                 code="RANK_DEFICIENT", module="condexp")
        self.M = M
        self._chol = linalg.cho_factor(M)

    @property
    def n_functions(self):
        return self.Phi.shape[1]

    def coefficients(self, values):
        return linalg.cho_solve(self._chol, self.Phi.T @ values)

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        flat = values.reshape(values.shape[0], -1)
        return (self.Phi @ self.coefficients(flat)).reshape(values.shape)

    def null_rms(self, values):
        """RMS the projection of ``values`` would have if their conditional
        mean were zero, from the heteroscedasticity-consistent covariance of
        the coefficients, ``tr(M^-1 Phi' diag(e^2) Phi M^-1 Phi' Phi) / n``
        summed over components, with ``e`` the regression residuals.
        """
        values = np.asarray(values, dtype=float)
        flat = values.reshape(values.shape[0], -1)
        resid = flat - self.Phi @ self.coefficients(flat)
        n = flat.shape[0]
        gram = self.Phi.T @ self.Phi
        total = 0.0
        for j in range(flat.shape[1]):
            S = (self.Phi * resid[:, j:j + 1] ** 2).T @ self.Phi
            cov = linalg.cho_solve(self._chol, linalg.cho_solve(self._chol, S).T)
            total += np.trace(cov @ gram) / n
        return sqrt(max(total, 0.0) / flat.shape[1])


def projector(basis, ensemble, k, filtration=OBSERVABLE, extra=None):
    Phi = basis.design(ensemble, k, filtration, extra)
    if ensemble.n_paths < 10 * Phi.shape[1]:
        raise ValueError("need at least 10 paths per basis function")
    return Projector(Phi, basis.ridge)


def condexp_regress(values, basis, ensemble, k, filtration=OBSERVABLE, extra=None):
    """Per-path estimate of ``E[values | F_t]`` at node ``k``.

    ``values`` has shape ``(n_paths,)`` or ``(n_paths, d)``; the result has
    the same shape and is a linear function of ``values``. ``extra`` adds
    adapted process values as features (standardised columns).
    """
    return projector(basis, ensemble, k, filtration, extra)(values)


def tower_check(values, basis, ensemble, k, filtration=OBSERVABLE):
    """``|mean(projection) - mean(values)|``; zero up to rounding."""
    proj = condexp_regress(values, basis, ensemble, k, filtration)
    return float(np.max(np.abs(proj.mean(axis=0) - np.asarray(values).mean(axis=0))))


def projection_noise(values, n_functions):
    """Typical RMS of the projection of conditionally centred samples.

    A sample with zero conditional mean still projects onto ``p`` basis
    functions with RMS about ``sqrt(p / n) * std(values)``.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    spread = np.sqrt(np.mean(np.sum((values - values.mean(axis=0)) ** 2,
                                    axis=tuple(range(1, values.ndim)))))
    return sqrt(n_functions / n) * float(spread)


def rms(x):
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))
