import numpy as np
import pytest

from backward_lq import (BlqaClosedForm, assemble_open_loop, evaluate_cost_mc,
                         generate_brownian, optimal_cost_formula, solve_phi, solve_riccati)
from backward_lq.cost import TERM_NAMES, CostEstimate, per_path_cost
from backward_lq.hamiltonian import HamiltonianTrajectory


def _constant_traj(grid, n_paths, y, v, z1=0.0, z2=0.0):
    shape = (len(grid), n_paths, 1)
    return HamiltonianTrajectory(np.zeros(shape), np.zeros(shape), np.full(shape, y),
                                 np.full(shape, y), np.full(shape, z1), np.full(shape, z2),
                                 np.full(shape, v), np.array([y]))


def test_per_path_cost_deterministic(blqa_small):
    spec, _, ens, _ = blqa_small
    spec = spec.replace(H=2.0, N1=3.0)
    traj = _constant_traj(spec.grid, 5, y=1.0, v=2.0, z1=1.0, z2=1.0)
    # 1/2 [G + (H + R v^2 + N1 + N2) T] = 1/2 [1 + 2 + 4 + 3 + 1]
    assert np.allclose(per_path_cost(spec, traj, spec.grid), 5.5)


def test_cost_estimate_iterable():
    value, stderr = CostEstimate(1.0, 0.1, np.ones(3))
    assert (value, stderr) == (1.0, 0.1)


def test_formula_matches_closed_form(blqa, blqa_small):
    spec, riccati, ens, sol = blqa_small
    traj = assemble_open_loop(spec, riccati.upsilon, sol, ens)
    report = optimal_cost_formula(spec, riccati, sol, ens, trajectory=traj)
    assert set(report.decomposition) == set(TERM_NAMES)
    assert report.decomposition["h_variance"] == 0.0
    assert abs(report.j_formula - blqa.cost()) < 3 * report.formula_stderr + 5e-4
    assert report.agreement < 3


def test_zero_g_cost(blqa):
    # G = 0 removes the initial-value term
    cf = BlqaClosedForm(G=0.0)
    integral = cf.cost() * 2 / (cf.N2 * cf.c ** 2)
    assert cf.cost() == pytest.approx(0.5 * cf.c ** 2 * cf.N2 * integral)
    spec = cf.spec(64)
    riccati = solve_riccati(spec, 640)
    ens = generate_brownian(5, 4000, spec.grid)
    sol = solve_phi(spec, riccati.upsilon, ens)
    report = optimal_cost_formula(spec, riccati, sol, ens)
    assert report.decomposition["terminal_sigma"] == pytest.approx(0.0, abs=1e-12)
    assert report.j_formula == pytest.approx(cf.cost(), rel=0.05)


def test_second_moment_oracle_by_simulation(blqa):
    rng = np.random.default_rng(0)
    t = 0.7
    w1, w2 = rng.normal(scale=np.sqrt(t), size=(2, 400_000))
    mc = np.mean(blqa.phi(t, w1, w2) ** 2)
    assert mc == pytest.approx(blqa.phi_second_moment(t), rel=5e-3)


def test_mc_cost_increases_off_optimum(blqa_small):
    spec, riccati, ens, sol = blqa_small
    traj = assemble_open_loop(spec, riccati.upsilon, sol, ens)
    base = evaluate_cost_mc(spec, traj, ens)
    # changing v alone (without re-solving the state) still raises R v^2
    worse = evaluate_cost_mc(spec, traj.with_control(traj.v + 1.0), ens)
    assert worse.value > base.value
