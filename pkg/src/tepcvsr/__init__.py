"""Transmission expansion planning with continuously variable series reactors."""

from .netcase import (
    Branch,
    Bus,
    CaseError,
    Generator,
    Load,
    NetworkCase,
    ParseError,
    ValidationError,
    islanding_contingencies,
    parse_matpower,
    to_matpower_text,
)
from .problem import PlanningProblem, load_problem, load_problem_file
from .formulation import (
    ExpansionPlan,
    build_integrated_model,
    cvsr_susceptance_bounds,
    discounted_cost,
    extract_plan,
)
from .decomp import (
    SecurityReport,
    enumerate_plans_oracle,
    iterative_plan,
    rank_contingencies,
    verify_plan,
)
from .solver_iface import SolveRequest, SolveResult, solve, solve_lp_relaxation

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "CaseError",
    "ExpansionPlan",
    "Generator",
    "Load",
    "NetworkCase",
    "ParseError",
    "PlanningProblem",
    "SecurityReport",
    "SolveRequest",
    "SolveResult",
    "ValidationError",
    "build_integrated_model",
    "cvsr_susceptance_bounds",
    "discounted_cost",
    "enumerate_plans_oracle",
    "extract_plan",
    "islanding_contingencies",
    "iterative_plan",
    "load_problem",
    "load_problem_file",
    "parse_matpower",
    "rank_contingencies",
    "solve",
    "solve_lp_relaxation",
    "to_matpower_text",
    "verify_plan",
]
