"""Solve the blqa preset and compare every stage with its closed form.

blqa has constant coefficients and a lognormal terminal value, so the
Riccati solutions, the BSDE solution, the optimal control and the optimal
cost are all explicit. Run with ``python demos/closed_form_check.py``.
"""

import numpy as np

from backward_lq import BlqaClosedForm, run_pipeline
from backward_lq.condexp import rms


def main(n_paths=10_000, seed=42):
    cf = BlqaClosedForm()
    result = run_pipeline(cf.spec(), n_paths=n_paths, seed=seed, margins=False, n_batches=0)
    ens, sol, traj = result.ensemble, result.bsde, result.trajectory
    t = ens.grid.nodes[:, None]

    ups = result.riccati.upsilon
    print("Riccati, max error on the ODE grid")
    print(f"  Upsilon  {np.max(np.abs(ups.values[:, 0, 0] - cf.upsilon(ups.nodes))):.2e}")
    g2 = result.riccati.gamma2
    print(f"  Gamma2   {np.max(np.abs(g2.values[::100, 0, 0] - cf.gamma2(g2.nodes[::100]))):.2e}")

    print("BSDE, RMS error over paths and nodes")
    print(f"  phi      {rms(sol.phi[..., 0] - cf.phi(t, ens.W1, ens.W2)):.4f}")
    print(f"  eta1     {rms(sol.eta1[..., 0] - cf.eta1(t, ens.W1, ens.W2)):.4f}")
    print(f"  eta2     {rms(sol.eta2[..., 0] - cf.eta2(t, ens.W1, ens.W2)):.4f}")
    print(f"  phi0     {sol.phi0[0]:.5f} (exact {cf.phi0:.5f})")

    print("Control")
    print(f"  open loop vs closed form   {rms(traj.v[..., 0] - cf.v(t, ens.W1)):.5f}")
    print(f"  feedback vs closed form    {rms(result.closed_loop.v[..., 0] - cf.v(t, ens.W1)):.5f}")
    print(f"  Y0       {traj.Y0[0]:.5f} (exact {cf.phi0 / (1 + cf.G * cf.upsilon0):.5f})")

    cost = result.cost
    print("Cost")
    print(f"  simulated  {cost.j_mc:.5f} +- {cost.j_mc_stderr:.5f}")
    print(f"  formula    {cost.j_formula:.5f} +- {cost.formula_stderr:.5f}")
    print(f"  exact      {cf.cost():.5f}")


if __name__ == "__main__":
    main()
