"""Problem data: time grids, deterministic coefficients, terminal data.

Coefficients are restricted to a small closed family so that a problem can be
written to and read from a config file and evaluated exactly at any time:

* constant matrices,
* matrix polynomials in ``t`` (coefficients ascending in degree),
* ``exp(rate * t)`` times a constant matrix.

Terminal conditions are functionals of the Brownian endpoints
``(W1_T, W2_T)``.
"""

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .errors import OutOfRangeError, ValidationError

EIG_TOL = 1e-8
SYM_TOL = 1e-12

COEFFICIENT_NAMES = ("A", "B", "C1", "C2", "H", "R", "N1", "N2")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = horizon``."""

    horizon: float
    n_steps: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError("n_steps must be an integer >= 2")
        nodes = self.horizon * np.arange(self.n_steps + 1) / self.n_steps
        nodes[-1] = self.horizon
        nodes.setflags(write=False)
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self):
        return self.horizon / self.n_steps

    def __len__(self):
        return self.n_steps + 1


def _as_matrix(value):
    m = np.atleast_2d(np.asarray(value, dtype=float))
    if m.ndim != 2:
        raise ValueError("coefficient payload must be a scalar or a 2-d matrix")
    return m


@dataclass(frozen=True, eq=False)
class Coefficient:
    """A deterministic, bounded, matrix-valued function of time.

    Use the constructors :meth:`constant`, :meth:`polynomial` and
    :meth:`exponential` rather than building instances by hand.
    """

    kind: str
    matrices: tuple
    rate: float = 0.0

    @classmethod
    def constant(cls, value):
        return cls("constant", (_as_matrix(value),))

    @classmethod
    def polynomial(cls, coeffs):
        """``sum_j coeffs[j] * t**j``; each entry a scalar or a matrix."""
        mats = tuple(_as_matrix(c) for c in coeffs)
        if not mats:
            raise ValueError("polynomial needs at least one coefficient")
        if len({m.shape for m in mats}) != 1:
            raise ValueError("polynomial coefficients must share one shape")
        return cls("polynomial", mats)

    @classmethod
    def exponential(cls, rate, value=1.0):
        """``exp(rate * t) * value``."""
        return cls("exponential", (_as_matrix(value),), float(rate))

    @classmethod
    def coerce(cls, value):
        if isinstance(value, Coefficient):
            return value
        return cls.constant(value)

    @property
    def shape(self):
        return self.matrices[0].shape

    def __call__(self, t):
        t = float(t)
        if self.kind == "constant":
            return self.matrices[0].copy()
        if self.kind == "polynomial":
            out = np.zeros(self.shape)
            for m in reversed(self.matrices):
                out = out * t + m
            return out
        if self.kind == "exponential":
            return np.exp(self.rate * t) * self.matrices[0]
        raise ValueError(f"unknown coefficient kind {self.kind!r}")

    def on(self, times):
        """Stack of values at ``times``, shape ``(len(times),) + self.shape``."""
        times = np.asarray(times, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(self.matrices[0], times.shape + self.shape).copy()
        if self.kind == "polynomial":
            out = np.zeros(times.shape + self.shape)
            for m in reversed(self.matrices):
                out = out * times[..., None, None] + m
            return out
        return np.exp(self.rate * times)[..., None, None] * self.matrices[0]

    def to_dict(self):
        d = {"kind": self.kind, "matrices": [m.tolist() for m in self.matrices]}
        if self.kind == "exponential":
            d["rate"] = self.rate
        return d


def eval_coefficient(entry, t, horizon=None):
    """Evaluate ``entry`` at time ``t``.

    Raises :class:`OutOfRangeError` if ``horizon`` is given and ``t`` lies
    outside ``[0, horizon]``.
    """
    if horizon is not None and not (0.0 <= t <= horizon):
        raise OutOfRangeError(f"t={t} outside [0, {horizon}]", module="core")
    return entry(t)


_SMOOTH_FUNCS = ("affine", "sin", "cos")


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal value ``zeta = f(W1_T, W2_T) * loading``.

    kinds
        ``"lognormal"``: ``exp((a - b^2/2 - c^2/2) T + b W1_T + c W2_T)``,
        params ``(a, b, c)``.
        ``"smooth"``: ``constant + sum amp * g(w1 W1_T + w2 W2_T)`` with
        ``g`` in {affine, sin, cos}; params ``(constant, terms)`` where
        ``terms`` is a tuple of ``(g, amp, w1, w2)``.
        ``"zero"``: ``zeta = 0``.
    """

    kind: str = "zero"
    params: tuple = ()
    loading: tuple = (1.0,)

    def __post_init__(self):
        if self.kind not in ("lognormal", "smooth", "zero"):
            raise ValueError(f"unknown terminal kind {self.kind!r}")
        if self.kind == "lognormal" and len(self.params) != 3:
            raise ValueError("lognormal terminal needs (a, b, c)")
        if self.kind == "smooth":
            const, terms = self.params
            for g, *_ in terms:
                if g not in _SMOOTH_FUNCS:
                    raise ValueError(f"unknown smooth term {g!r}")

    @classmethod
    def lognormal(cls, a, b, c, loading=(1.0,)):
        return cls("lognormal", (float(a), float(b), float(c)), tuple(loading))

    @classmethod
    def smooth(cls, constant=0.0, terms=(), loading=(1.0,)):
        terms = tuple((g, float(amp), float(w1), float(w2)) for g, amp, w1, w2 in terms)
        return cls("smooth", (float(constant), terms), tuple(loading))

    @classmethod
    def zero(cls, loading=(1.0,)):
        return cls("zero", (), tuple(loading))

    def scalar(self, w1, w2, horizon):
        """The scalar functional ``f(W1_T, W2_T)``, vectorised over paths."""
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        if self.kind == "zero":
            return np.zeros(np.broadcast(w1, w2).shape)
        if self.kind == "lognormal":
            a, b, c = self.params
            return np.exp((a - 0.5 * b * b - 0.5 * c * c) * horizon + b * w1 + c * w2)
        const, terms = self.params
        out = np.full(np.broadcast(w1, w2).shape, const)
        for g, amp, a1, a2 in terms:
            arg = a1 * w1 + a2 * w2
            if g == "affine":
                out = out + amp * arg
            elif g == "sin":
                out = out + amp * np.sin(arg)
            else:
                out = out + amp * np.cos(arg)
        return out

    def sample(self, w1, w2, horizon):
        """``zeta`` per path, shape ``(n_paths, n)``."""
        return self.scalar(w1, w2, horizon)[:, None] * np.asarray(self.loading)

    def conditional_scalar(self, w1, horizon):
        """``E[f(W1_T, W2_T) | W1_T]`` in closed form."""
        w1 = np.asarray(w1, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(w1)
        if self.kind == "lognormal":
            a, b, c = self.params
            return np.exp((a - 0.5 * b * b) * horizon + b * w1)
        const, terms = self.params
        out = np.full(w1.shape, const)
        for g, amp, a1, a2 in terms:
            damp = np.exp(-0.5 * a2 * a2 * horizon)
            if g == "affine":
                out = out + amp * a1 * w1
            elif g == "sin":
                out = out + amp * damp * np.sin(a1 * w1)
            else:
                out = out + amp * damp * np.cos(a1 * w1)
        return out

    def smoothed(self, w1, w2, horizon, tau):
        """One-step conditional moments of the scalar functional.

        With independent ``dWi ~ N(0, tau)`` returns
        ``(E f(w1 + dW1, w2 + dW2), E[f dW1] / tau, E[f dW2] / tau)``,
        the last two by Gaussian integration by parts.
        """
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        shape = np.broadcast(w1, w2).shape
        if self.kind == "zero":
            z = np.zeros(shape)
            return z, z.copy(), z.copy()
        if self.kind == "lognormal":
            a, b, c = self.params
            m = self.scalar(w1, w2, horizon) * np.exp(0.5 * (b * b + c * c) * tau)
            return m, b * m, c * m
        const, terms = self.params
        mean = np.full(shape, const)
        g1 = np.zeros(shape)
        g2 = np.zeros(shape)
        for g, amp, a1, a2 in terms:
            arg = a1 * w1 + a2 * w2
            damp = np.exp(-0.5 * (a1 * a1 + a2 * a2) * tau)
            if g == "affine":
                mean = mean + amp * arg
                d = np.full(shape, amp)
            elif g == "sin":
                mean = mean + amp * damp * np.sin(arg)
                d = amp * damp * np.cos(arg)
            else:
                mean = mean + amp * damp * np.cos(arg)
                d = -amp * damp * np.sin(arg)
            g1 = g1 + a1 * d
            g2 = g2 + a2 * d
        return mean, g1, g2

    def second_moment(self, horizon):
        """``E[f(W1_T, W2_T)^2]`` (scalar functional, before loading)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "lognormal":
            a, b, c = self.params
            return float(np.exp((2 * a + b * b + c * c) * horizon))
        x, w = np.polynomial.hermite_e.hermegauss(80)
        w = w / w.sum()
        s = np.sqrt(horizon)
        f = self.scalar(s * x[:, None], s * x[None, :], horizon)
        return float(np.einsum("i,j,ij->", w, w, f * f))

    def to_dict(self):
        if self.kind == "lognormal":
            params = dict(zip("abc", self.params))
        elif self.kind == "smooth":
            params = {"constant": self.params[0],
                      "terms": [list(t) for t in self.params[1]]}
        else:
            params = {}
        return {"kind": self.kind, "loading": list(self.loading), **params}


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficients of the controlled backward equation and its cost.

    ``grid`` is the simulation grid; Riccati solvers use their own (finer)
    grid on the same horizon.
    """

    n: int
    m: int
    grid: TimeGrid
    A: Coefficient
    B: Coefficient
    C1: Coefficient
    C2: Coefficient
    H: Coefficient
    R: Coefficient
    N1: Coefficient
    N2: Coefficient
    G: np.ndarray
    terminal: TerminalSpec = None
    name: str = "custom"

    def __post_init__(self):
        if self.terminal is None:
            object.__setattr__(self, "terminal", TerminalSpec.zero((1.0,) * self.n))
        for name in COEFFICIENT_NAMES:
            object.__setattr__(self, name, Coefficient.coerce(getattr(self, name)))
        G = _as_matrix(self.G)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        n, m = self.n, self.m
        shapes = {"A": (n, n), "B": (n, m), "C1": (n, n), "C2": (n, n),
                  "H": (n, n), "R": (m, m), "N1": (n, n), "N2": (n, n)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if G.shape != (n, n):
            raise ValueError(f"G has shape {G.shape}, expected {(n, n)}")
        if len(self.terminal.loading) != n:
            raise ValueError("terminal loading must have length n")

    @property
    def horizon(self):
        return self.grid.horizon

    def with_grid(self, grid):
        return ProblemSpec(self.n, self.m, grid, self.A, self.B, self.C1, self.C2,
                           self.H, self.R, self.N1, self.N2, self.G, self.terminal, self.name)

    def replace(self, **changes):
        fields = {name: getattr(self, name) for name in
                  ("n", "m", "grid", *COEFFICIENT_NAMES, "G", "terminal", "name")}
        fields.update(changes)
        return ProblemSpec(**fields)

    def coefficients_at(self, t):
        return {name: eval_coefficient(getattr(self, name), t, self.horizon)
                for name in COEFFICIENT_NAMES}


def coefficient_table(spec, times):
    """All coefficients stacked on ``times`` plus derived ``Rinv`` and ``BRB = B R^-1 B^T``."""
    times = np.asarray(times, dtype=float)
    tab = {name: getattr(spec, name).on(times) for name in COEFFICIENT_NAMES}
    tab["Rinv"] = np.linalg.inv(tab["R"])
    tab["BRB"] = tab["B"] @ tab["Rinv"] @ np.swapaxes(tab["B"], -1, -2)
    tab["t"] = times
    return SimpleNamespace(**tab)


def symmetrize(S):
    return 0.5 * (S + np.swapaxes(S, -1, -2))


@dataclass(eq=False)
class MatrixPath:
    """Symmetric matrix-valued function sampled on a grid, ``values[k]`` at ``grid.nodes[k]``."""

    grid: TimeGrid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.grid):
            raise ValueError("one matrix per grid node required")

    def __getitem__(self, k):
        return self.values[k]

    @property
    def nodes(self):
        return self.grid.nodes

    def at(self, t):
        """Linear interpolation between nodes (exact at nodes)."""
        t = np.asarray(t, dtype=float)
        pos = np.clip(t / self.grid.dt, 0.0, self.grid.n_steps)
        k = np.minimum(np.floor(pos).astype(int), self.grid.n_steps - 1)
        w = (pos - k)[..., None, None]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def on(self, grid):
        """Resample onto another grid of the same horizon."""
        if grid == self.grid:
            return self
        if not np.isclose(grid.horizon, self.grid.horizon):
            raise ValueError("cannot resample across different horizons")
        return MatrixPath(grid, symmetrize(self.at(grid.nodes)), self.name)

    def symmetry_defect(self):
        return float(np.max(np.abs(self.values - np.swapaxes(self.values, -1, -2))))

    def min_eigenvalues(self):
        return np.linalg.eigvalsh(symmetrize(self.values))[:, 0]


@dataclass
class ValidationReport:
    nodes: np.ndarray
    min_eigenvalues: dict
    symmetry_defects: dict
    accepted: bool
    error: str = None
    message: str = ""

    def raise_if_rejected(self):
        if not self.accepted:
            raise ValidationError(self.message, code=self.error, module="core",
                                  details={"error": self.error})
        return self


def validate_spec(spec, eig_tol=EIG_TOL, sym_tol=SYM_TOL):
    """Check positivity and symmetry of the cost weights at every grid node.

    ``H, N1, N2, G`` must be symmetric positive semidefinite and ``R``
    uniformly positive definite with smallest eigenvalue at least ``eig_tol``.
    The report is returned in both cases; call
    :meth:`ValidationReport.raise_if_rejected` to turn a rejection into an
    exception.
    """
    nodes = spec.grid.nodes
    weights = {name: getattr(spec, name).on(nodes) for name in ("H", "N1", "N2", "R")}
    weights["G"] = spec.G[None]
    min_eigs, defects = {}, {}
    for name, mats in weights.items():
        defects[name] = np.max(np.abs(mats - np.swapaxes(mats, -1, -2)), axis=(-2, -1))
        min_eigs[name] = np.linalg.eigvalsh(symmetrize(mats))[:, 0]

    error, message = None, "accepted"
    for name in weights:
        if np.max(defects[name]) > sym_tol:
            error = "REJECT_ASYMMETRIC"
            message = f"{name} is not symmetric (defect {np.max(defects[name]):.3e})"
            break
    if error is None:
        for name in weights:
            lo = np.min(min_eigs[name])
            bad = lo < eig_tol if name == "R" else lo < -eig_tol
            if bad:
                error = "REJECT_INDEFINITE"
                kind = "uniformly positive definite" if name == "R" else "positive semidefinite"
                message = f"{name} is not {kind} (min eigenvalue {lo:.3e})"
                break
    return ValidationReport(nodes, min_eigs, defects, error is None, error, message)
