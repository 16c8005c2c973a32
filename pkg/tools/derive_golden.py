"""Independent oracles for the ``blqb`` reference values frozen in the tests.

Two integrators are used for every scalar ODE: a plain-float RK4 loop at
``dt = 1e-6`` and ``scipy.integrate.solve_ivp`` (DOP853, rtol 1e-12). Neither
touches the package.

``phi^_0`` is semi-analytic. With ``C2 = 0`` the filtered value solves the
linear observable-filtration equation

    dphi^ = (alpha phi^ + beta eta1^) dt + eta1^ dW1,
    phi^_T = 1 + sin(W1_T) + exp(-2),

with ``alpha = A + U H`` and ``beta = C1 / (1 + U N1)``. Changing the drift of
``W1`` by ``beta`` gives

    phi^_0 = exp(-int_0^T alpha) (1 + exp(-2) - sin(int_0^T beta) exp(-T/2)).

Run ``python tools/derive_golden.py`` to print the values.
"""

import math

import numpy as np
from scipy.integrate import quad, solve_ivp

T = 1.0


def A(t):
    return 2.0


def B(t):
    return 3.0 * t + 2.0


def C1(t):
    return t - 2.0


def H(t):
    return math.exp(-0.05 * t)


def R(t):
    return 2.0 * t + 1.0


def N1(t):
    return t * (T - t)


G = 2.0


def f_upsilon(t, u):
    return (2 * A(t) * u + H(t) * u * u - B(t) ** 2 / R(t)
            - C1(t) ** 2 * u / (1 + u * N1(t)))


def rk4_scalar(f, t0, y0, t1, n):
    h = (t1 - t0) / n
    t, y = t0, y0
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def upsilon_dense():
    sol = solve_ivp(f_upsilon, (T, 0.0), [0.0], method="DOP853", rtol=1e-13, atol=1e-15,
                    dense_output=True)
    return lambda t: float(sol.sol(t)[0])


def main(n_fine=1_000_000):
    U = upsilon_dense()

    def f_gamma2(t, g):
        quad_term = B(t) ** 2 / R(t) + C1(t) ** 2 * U(t) / (1 + U(t) * N1(t))
        return -2 * A(t) * g - quad_term * g * g + H(t)

    def f_gamma1(t, g):
        return -2 * A(t) * g + H(t)

    def f_sigma(t, s):
        return -2 * (A(t) + U(t) * H(t)) * s + H(t)

    u0_rk4 = rk4_scalar(f_upsilon, T, 0.0, 0.0, n_fine)
    u0_ivp = U(0.0)
    sigma0 = G / (1 + U(0.0) * G)
    out = {"upsilon(0)": (u0_rk4, u0_ivp)}
    for name, f, y0 in (("gamma1(1)", f_gamma1, G), ("gamma2(1)", f_gamma2, G),
                        ("sigma(1)", f_sigma, sigma0)):
        ivp = solve_ivp(f, (0.0, T), [y0], method="DOP853", rtol=1e-13, atol=1e-15)
        out[name] = (rk4_scalar(f, 0.0, y0, T, n_fine // 10), float(ivp.y[0, -1]))

    alpha, _ = quad(lambda s: A(s) + U(s) * H(s), 0.0, T, epsabs=1e-14, epsrel=1e-13,
                    limit=200)
    beta, _ = quad(lambda s: C1(s) / (1 + U(s) * N1(s)), 0.0, T, epsabs=1e-14,
                   epsrel=1e-13, limit=200)
    phi_hat0 = math.exp(-alpha) * (1 + math.exp(-2.0) - math.sin(beta) * math.exp(-0.5 * T))
    out["phi_hat(0)"] = (phi_hat0, phi_hat0)
    for name, (a, b) in out.items():
        print(f"{name:12s} rk4={a:.15g} ivp={b:.15g} diff={abs(a - b):.2e}")
    return out


if __name__ == "__main__":
    main()
