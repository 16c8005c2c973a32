import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backward_lq import (FULL, OBSERVABLE, NumericalError, RegressionBasis, TerminalFeatures,
                         TerminalSpec, TimeGrid, condexp_regress, generate_brownian, tower_check)
from backward_lq.condexp import Projector, projection_noise, projector, rms

GRID = TimeGrid(1.0, 8)


@pytest.fixture(scope="module")
def ens():
    return generate_brownian(21, 20_000, GRID)


BASIS = RegressionBasis()
K = 6


def test_basis_function_is_fixed(ens):
    w = ens.W1[K]
    out = condexp_regress(w ** 2, BASIS, ens, K)
    assert rms(out - w ** 2) < 1e-8


def test_idempotent(ens):
    vals = np.sin(ens.W1[K]) + ens.W2[K] ** 2
    once = condexp_regress(vals, BASIS, ens, K)
    twice = condexp_regress(once, BASIS, ens, K)
    assert rms(twice - once) < 1e-10


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_linear(ens, alpha, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=ens.n_paths) + ens.W1[K]
    v = np.cos(ens.W2[K]) * ens.W1[K]
    lhs = condexp_regress(alpha * u + v, BASIS, ens, K)
    rhs = alpha * condexp_regress(u, BASIS, ens, K) + condexp_regress(v, BASIS, ens, K)
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * (1 + abs(alpha))


@pytest.mark.parametrize("filtration", [OBSERVABLE, FULL])
def test_mean_preserved(ens, filtration):
    vals = np.exp(ens.W1[K] + ens.W2[K])
    assert tower_check(vals, BASIS, ens, K, filtration) < 1e-10


def test_constant_is_reproduced(ens):
    out = condexp_regress(np.full(ens.n_paths, 7.0), BASIS, ens, K)
    assert np.allclose(out, 7.0, atol=1e-12)


def test_independent_input_projects_to_statistical_zero(ens):
    vals = ens.W2[K]
    proj = projector(BASIS, ens, K)
    assert rms(proj(vals)) <= 3 * proj.null_rms(vals)


def test_null_rms_is_calibrated():
    # over many independent samples, the RMS of the projection of pure noise
    # matches the sandwich prediction
    grid = TimeGrid(1.0, 4)
    seen, predicted = [], []
    for seed in range(40):
        ens = generate_brownian(seed, 2000, grid)
        proj = projector(BASIS, ens, 4)
        noise = ens.W2[4] * (1 + ens.W1[4] ** 2)
        seen.append(rms(proj(noise)) ** 2)
        predicted.append(proj.null_rms(noise) ** 2)
    assert np.mean(seen) / np.mean(predicted) == pytest.approx(1.0, abs=0.25)


def test_projection_noise_scale(ens):
    vals = ens.W2[K]
    assert projection_noise(vals, 4) == pytest.approx(np.sqrt(4 / ens.n_paths) * vals.std(),
                                                      rel=1e-12)


def test_full_filtration_reproduces_products(ens):
    vals = ens.W1[K] * ens.W2[K]
    assert rms(condexp_regress(vals, BASIS, ens, K, FULL) - vals) < 1e-8


def test_vector_values(ens):
    vals = np.column_stack([ens.W1[K], ens.W2[K]])
    out = condexp_regress(vals, BASIS, ens, K)
    assert out.shape == vals.shape
    assert rms(out[:, 0] - ens.W1[K]) < 1e-10


def test_too_few_paths():
    small = generate_brownian(0, 30, GRID)
    with pytest.raises(ValueError):
        condexp_regress(small.W1[2], BASIS, small, 2)


def test_rank_deficient():
    Phi = np.column_stack([np.ones(100), np.arange(100.0), 2 * np.arange(100.0)])
    with pytest.raises(NumericalError) as exc:
        Projector(Phi, ridge=0.0)
    assert exc.value.code == "RANK_DEFICIENT"


def test_time_zero_uses_constant_only(ens):
    vals = np.arange(ens.n_paths, dtype=float)
    out = condexp_regress(vals, BASIS, ens, 0, FULL)
    assert np.allclose(out, vals.mean())


def test_extra_features_drop_spanned_columns(ens):
    w = ens.W1[K]
    Phi = BASIS.design(ens, K, OBSERVABLE, extra=np.column_stack([2 * w + 1, np.sin(3 * w)]))
    assert Phi.shape[1] == BASIS.degree + 2


def test_terminal_features_span_smooth_terminal(ens):
    term = TerminalSpec.smooth(1.0, [("sin", 1.0, 1.0, 0.0), ("cos", 1.0, 0.0, 2.0)])
    basis = RegressionBasis(features=(TerminalFeatures(term),))
    vals = np.cos(2 * ens.W2[K]) + np.sin(ens.W1[K])
    assert rms(condexp_regress(vals, basis, ens, K, FULL) - vals) < 1e-8
    # the cos(2 W2) term is not observable and collapses onto its mean
    assert basis.design(ens, K, OBSERVABLE).shape[1] == BASIS.degree + 1 + 2
    assert basis.n_functions(FULL) == 10 + 4


def test_terminal_features_lognormal(ens):
    term = TerminalSpec.lognormal(0.1, 0.3, 0.2)
    basis = RegressionBasis(features=(TerminalFeatures(term),))
    vals = np.exp(0.3 * ens.W1[K] + 0.2 * ens.W2[K])
    assert rms(condexp_regress(vals, basis, ens, K, FULL) - vals) < 1e-8


def test_converges_to_lognormal_filter(blqa):
    # E[phi_t | W1_t] in closed form; error shrinks with paths
    grid = TimeGrid(1.0, 4)
    t = grid.nodes[3]
    errs = []
    for n in (1000, 10_000, 100_000):
        ens = generate_brownian(3, n, grid)
        phi = blqa.phi(t, ens.W1[3], ens.W2[3])
        est = condexp_regress(phi, BASIS, ens, 3)
        errs.append(rms(est - blqa.phi_hat(t, ens.W1[3])))
    assert errs[0] > errs[1] > errs[2]
