"""Explicit solution triplet (Y, Z, K) for linear backward stochastic Volterra
integral equations driven by Brownian motion and compound Poisson jumps, with
built-in Monte Carlo verification against regression oracles.

The pipeline: parse a scenario, build the Neumann-series resolvent of the
kernel, form the affine representation of Y under the drift-absorbing change
of measure, read off the deterministic integrands Z and K, then verify
everything pathwise and statistically.
"""

from .resolvent import (KernelGrid, ResolventTable, apply_resolvent, iterated_kernel,
                        kernel_compose, kernel_from_scenario, neumann_resolvent,
                        resolvent_residual, tail_weights, truncation_order, volterra_solve)
from .scenario import (CoefficientSet, LevyModel, MonteCarloParams, Scenario,
                       ScenarioError, TerminalFunctional, TimeGrid, Tolerances,
                       Violation, compile_expression, load_scenario, parse_scenario,
                       rebuild, render_scenario, scenario_hash, validate_bounds)
from .simulate import (CHUNK, GirsanovWeights, PathEnsemble, QIncrements,
                       girsanov_weights, q_increments, simulate_paths)
from .solver import (AffineSolution, MartingalePart, SolutionTriplet,
                     conditional_terminal, drift_tail_integrals, martingale_part,
                     solve_k, solve_triplet, solve_y, solve_z)
from .verify import (ConvergenceStudy, OracleComparison, OracleEstimate,
                     ResidualRefinement, ResidualStats, SmoothnessReport, StatCheck,
                     VerificationReport, bsvie_residual, compare_oracle, format_report,
                     martingale_suite, regression_k_oracle, regression_z_oracle,
                     report_to_dict, report_to_json, residual_refinement,
                     resolvent_convergence, run_verification, smoothness_check)

__version__ = "0.1.0"

__all__ = [
    "AffineSolution", "CHUNK", "CoefficientSet", "ConvergenceStudy", "GirsanovWeights",
    "KernelGrid", "LevyModel", "MartingalePart", "MonteCarloParams", "OracleComparison",
    "OracleEstimate", "PathEnsemble", "QIncrements", "ResidualRefinement", "ResidualStats",
    "ResolventTable", "Scenario", "ScenarioError", "SmoothnessReport", "SolutionTriplet",
    "StatCheck", "TerminalFunctional", "TimeGrid", "Tolerances", "VerificationReport",
    "Violation", "apply_resolvent", "bsvie_residual", "compare_oracle", "compile_expression",
    "conditional_terminal", "drift_tail_integrals", "format_report", "girsanov_weights",
    "iterated_kernel", "kernel_compose", "kernel_from_scenario", "load_scenario",
    "martingale_part", "martingale_suite", "neumann_resolvent", "parse_scenario",
    "q_increments", "rebuild", "regression_k_oracle", "regression_z_oracle",
    "render_scenario", "report_to_dict", "report_to_json", "residual_refinement",
    "resolvent_convergence", "resolvent_residual", "run_verification", "scenario_hash",
    "simulate_paths", "smoothness_check", "solve_k", "solve_triplet", "solve_y", "solve_z",
    "tail_weights", "truncation_order", "validate_bounds", "volterra_solve",
]
