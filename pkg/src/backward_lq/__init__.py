"""Linear-quadratic control of a backward SDE under partial information.

The controller observes only the Brownian motion ``W1``. The optimal control
is computed from three Riccati equations, a filtered BSDE solved by
least-squares Monte Carlo and the decoupling relations of the stochastic
Hamiltonian system.
"""

from .bsde import (FilteredBsdeSolution, GeneratorSpec, solve_filtered_bsde, solve_phi,
                   solve_phi_hat_direct)
from .condexp import (FULL, OBSERVABLE, RegressionBasis, TerminalFeatures, condexp_regress,
                      tower_check)
from .core import (Coefficient, MatrixPath, ProblemSpec, TerminalSpec, TimeGrid,
                   eval_coefficient, validate_spec)
from .cost import CostReport, evaluate_cost_mc, optimal_cost_formula
from .errors import NumericalError, OutOfRangeError, SolverError, ValidationError
from .hamiltonian import (HamiltonianTrajectory, OptimalityDiagnostics, assemble_open_loop,
                          closed_loop_simulate, diagnose, feedback_control,
                          optimality_margin, solve_psi, stationarity_residual)
from .pathsim import PathEnsemble, euler_sde, generate_brownian, simulate_x, simulate_xhat
from .pipeline import PipelineResult, default_basis, replicate, run_pipeline
from .presets import (PRESETS, BlqaClosedForm, blqa_cost, blqa_gammas, blqa_phi, blqa_preset,
                      blqa_psi_hat, blqa_upsilon, blqa_v, blqa_x, blqb_preset)
from .riccati import (RiccatiBundle, solve_gamma1, solve_gamma2, solve_riccati, solve_sigma,
                      solve_upsilon)

__version__ = "0.1.0"

__all__ = [
    "BlqaClosedForm", "Coefficient", "CostReport", "FULL", "FilteredBsdeSolution",
    "GeneratorSpec", "HamiltonianTrajectory", "MatrixPath", "NumericalError", "OBSERVABLE",
    "OptimalityDiagnostics", "OutOfRangeError", "PRESETS", "PathEnsemble", "PipelineResult",
    "ProblemSpec", "RegressionBasis", "RiccatiBundle", "SolverError", "TerminalFeatures",
    "TerminalSpec", "TimeGrid", "ValidationError", "assemble_open_loop", "blqa_cost",
    "blqa_gammas", "blqa_phi", "blqa_preset", "blqa_psi_hat", "blqa_upsilon", "blqa_v", "blqa_x",
    "blqb_preset", "closed_loop_simulate", "condexp_regress", "default_basis", "diagnose",
    "euler_sde", "eval_coefficient", "evaluate_cost_mc", "feedback_control", "generate_brownian",
    "optimal_cost_formula", "optimality_margin", "replicate", "run_pipeline", "simulate_x",
    "simulate_xhat", "solve_filtered_bsde", "solve_gamma1", "solve_gamma2", "solve_phi",
    "solve_phi_hat_direct", "solve_psi", "solve_riccati", "solve_sigma", "solve_upsilon",
    "stationarity_residual", "tower_check", "validate_spec",
]
