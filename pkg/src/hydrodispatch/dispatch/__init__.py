"""Integrated heat-and-power dispatch: model, decomposition solver and tools."""

from .gbd import Cut, GbdState, LlpInfeasible, TraceRow, gbd_solve, make_cut, solve_llp, solve_ulp
from .model import Coupling, DispatchModel
from .refine import refine_local
from .scenarios import ScenarioResult, grid_scenarios, montecarlo_scenarios, run_scenarios, scale_instance
from .solution import DispatchSolution, solution_to_dict, write_convergence_csv, write_solution_csvs, write_solution_json
from .steady import SteadyFailure, solve_steady
from .verify import FeasibilityReport, check_feasibility

__all__ = [
    "Cut",
    "GbdState",
    "LlpInfeasible",
    "TraceRow",
    "gbd_solve",
    "make_cut",
    "solve_llp",
    "solve_ulp",
    "Coupling",
    "DispatchModel",
    "refine_local",
    "ScenarioResult",
    "grid_scenarios",
    "montecarlo_scenarios",
    "run_scenarios",
    "scale_instance",
    "DispatchSolution",
    "solution_to_dict",
    "write_convergence_csv",
    "write_solution_csvs",
    "write_solution_json",
    "SteadyFailure",
    "solve_steady",
    "FeasibilityReport",
    "check_feasibility",
]
