"""The two scalar problems used as references.

``blqa``: constant coefficients with ``H = N1 = 0`` and a lognormal
terminal value. Everything is explicit; :class:`BlqaClosedForm` evaluates
the closed forms and is the oracle for the numerical modules.

``blqb``: ``C2 = 0`` with time-varying coefficients and
``zeta = T + sin(W1_T) + cos(2 W2_T)``; only numerical solutions exist.

The ``blqa`` default constants are artifact defaults picked for testing.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import Coefficient, ProblemSpec, TerminalSpec, TimeGrid

DEFAULT_MC_STEPS = 256


@dataclass(frozen=True)
class BlqaClosedForm:
    A: float = 1.0
    B: float = 1.0
    C1: float = 0.5
    C2: float = 0.5
    R: float = 1.0
    N2: float = 1.0
    G: float = 1.0
    a: float = 0.1
    b: float = 0.3
    c: float = 0.2
    T: float = 1.0

    def spec(self, n_steps=DEFAULT_MC_STEPS):
        return ProblemSpec(
            1, 1, TimeGrid(self.T, n_steps),
            A=self.A, B=self.B, C1=self.C1, C2=self.C2, H=0.0, R=self.R,
            N1=0.0, N2=self.N2, G=self.G,
            terminal=TerminalSpec.lognormal(self.a, self.b, self.c), name="blqa")

    @property
    def rate(self):
        return 2 * self.A - self.C1 ** 2

    def upsilon(self, t):
        t = np.asarray(t, dtype=float)
        k = self.rate
        if k == 0.0:
            return self.B ** 2 * (self.T - t) / self.R
        return -self.B ** 2 / (self.R * k) * np.expm1(k * (t - self.T))

    @property
    def upsilon0(self):
        return float(self.upsilon(0.0))

    @property
    def phi0(self):
        return float(np.exp((self.a - self.b * self.C1 - self.c * self.C2 - self.A) * self.T))

    def _phi_exponent(self, t):
        A, b, c = self.A, self.b, self.c
        return ((self.a - b * self.C1 - c * self.C2 - A) * self.T
                + (A + b * self.C1 + c * self.C2 - 0.5 * b * b - 0.5 * c * c) * t)

    def phi(self, t, w1, w2):
        return np.exp(self._phi_exponent(t) + self.b * w1 + self.c * w2)

    def phi_hat(self, t, w1):
        """``E[phi_t | F_t^{W1}]``: integrate out ``W2_t ~ N(0, t)``."""
        return np.exp(self._phi_exponent(t) + self.b * w1 + 0.5 * self.c ** 2 * t)

    def eta1(self, t, w1, w2):
        return self.b * self.phi(t, w1, w2)

    def eta2(self, t, w1, w2):
        return self.c * self.phi(t, w1, w2)

    @property
    def x0(self):
        return -self.G * self.phi0 / (1 + self.G * self.upsilon0)

    def xhat(self, t, w1):
        return self.x0 * np.exp(-(self.A + 0.5 * self.C1 ** 2) * t - self.C1 * w1)

    def v(self, t, w1):
        return -self.B / self.R * self.xhat(t, w1)

    def x(self, ensemble):
        """Adjoint state per path, stochastic integrals by left-point sums."""
        t = ensemble.grid.nodes[:, None]
        W1, W2 = ensemble.W1, ensemble.W2
        psi = np.exp(-(self.A + 0.5 * self.C1 ** 2 + 0.5 * self.C2 ** 2) * t
                     - self.C1 * W1 - self.C2 * W2)
        eta2 = self.eta2(t, W1, W2)
        integrand = self.N2 * eta2[:-1] / psi[:-1]
        incr = self.C2 * integrand * ensemble.dt + integrand * ensemble.dW2
        acc = np.concatenate([np.zeros((1, ensemble.n_paths)), np.cumsum(incr, axis=0)], axis=0)
        return psi * (self.x0 - acc)

    def gamma1(self, t):
        return self.G * np.exp(-2 * self.A * np.asarray(t, dtype=float))

    def gamma2(self, t):
        """Quotient formula, integral by adaptive quadrature."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = lambda s: np.exp(-2 * self.A * s) * (self.B ** 2 / self.R
                                                 + self.C1 ** 2 * self.upsilon(s))
        out = np.empty_like(t)
        for i, ti in enumerate(t):
            val, _ = integrate.quad(q, 0.0, ti, epsabs=1e-14, epsrel=1e-13, limit=200)
            out[i] = self.G * np.exp(-2 * self.A * ti) / (1 + self.G * val)
        return out

    def gammas(self, t):
        return self.gamma1(t), self.gamma2(t)

    def psi_hat(self, ensemble):
        """Filtered ``psi`` per path from its integrating-factor representation."""
        t = ensemble.grid.nodes
        W1 = ensemble.W1
        g2 = self.gamma2(t)
        ups = self.upsilon(t)
        rate = self.A + self.B ** 2 * g2 / self.R + self.C1 ** 2 * g2 * ups
        drift = rate + 0.5 * self.C1 ** 2
        cum = integrate.cumulative_trapezoid(drift, t, initial=0.0)[:, None]
        Phi = np.exp(-cum - self.C1 * W1)
        g2 = g2[:, None]
        ph = self.phi_hat(t[:, None], W1)
        e1h, e2h = self.b * ph, self.c * ph
        calB = self.C1 * g2 * e1h + self.C2 * g2 * e2h
        calD = g2 * e1h + self.C1 * g2 * ph
        inv = 1.0 / Phi[:-1]
        incr = -inv * (calB + self.C1 * calD)[:-1] * ensemble.dt - inv * calD[:-1] * ensemble.dW1
        acc = np.concatenate([np.zeros((1, ensemble.n_paths)), np.cumsum(incr, axis=0)], axis=0)
        return Phi * acc

    def phi_second_moment(self, t):
        A, b, c = self.A, self.b, self.c
        return np.exp(2 * (self.a - b * self.C1 - c * self.C2 - A) * self.T
                      + (2 * A + 2 * b * self.C1 + 2 * c * self.C2 + b * b + c * c)
                      * np.asarray(t, dtype=float))

    def cost(self):
        """``G phi0^2 / (2 + 2 G U0) + 1/2 int N2 E[eta2^2] dt``."""
        A, b, c = self.A, self.b, self.c
        kappa = 2 * A + 2 * b * self.C1 + 2 * c * self.C2 + b * b + c * c
        scale = np.exp(2 * (self.a - b * self.C1 - c * self.C2 - A) * self.T)
        if kappa == 0.0:
            integral = scale * self.T
        else:
            integral = scale * np.expm1(kappa * self.T) / kappa
        first = self.G * self.phi0 ** 2 / (2 + 2 * self.G * self.upsilon0)
        return float(first + 0.5 * self.N2 * c * c * integral)


BLQA = BlqaClosedForm()


def blqa_upsilon(t):
    return BLQA.upsilon(t)


def blqa_phi(t, w1, w2):
    return BLQA.phi(t, w1, w2)


def blqa_x(ensemble):
    """Adjoint state on every node and path of ``ensemble``."""
    return BLQA.x(ensemble)


def blqa_v(t, w1):
    return BLQA.v(t, w1)


def blqa_gammas(t):
    return BLQA.gammas(t)


def blqa_psi_hat(ensemble):
    """Filtered ``psi`` on every node and path of ``ensemble``."""
    return BLQA.psi_hat(ensemble)


def blqa_cost():
    return BLQA.cost()


def blqa_preset(n_steps=DEFAULT_MC_STEPS, **constants):
    return BlqaClosedForm(**constants).spec(n_steps)


def blqb_preset(n_steps=DEFAULT_MC_STEPS):
    """T=1, A=2, B=3t+2, C1=t-2, C2=0, G=2, H=exp(-0.05t), R=2t+1,
    N1=t(1-t), N2=2, zeta = T + sin(W1_T) + cos(2 W2_T)."""
    T = 1.0
    return ProblemSpec(
        1, 1, TimeGrid(T, n_steps),
        A=Coefficient.constant(2.0),
        B=Coefficient.polynomial([2.0, 3.0]),
        C1=Coefficient.polynomial([-2.0, 1.0]),
        C2=Coefficient.constant(0.0),
        H=Coefficient.exponential(-0.05),
        R=Coefficient.polynomial([1.0, 2.0]),
        N1=Coefficient.polynomial([0.0, T, -1.0]),
        N2=Coefficient.constant(2.0),
        G=2.0,
        terminal=TerminalSpec.smooth(T, [("sin", 1.0, 1.0, 0.0), ("cos", 1.0, 0.0, 2.0)]),
        name="blqb")


PRESETS = {"blqa": blqa_preset, "blqb": blqb_preset}
