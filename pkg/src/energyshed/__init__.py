"""Energyshed policy design: network models, closed-form analysis,
dispatch optimization and ratio-floor policy search."""

from .analytic import (
    AnalysisError,
    CapacityCurvePoint,
    CommunitySeries,
    capacity_curve,
    max_ratio_constrained,
    max_ratio_unconstrained,
    required_budget,
)
from .netmodel import (
    Branch,
    Bus,
    CaseParseError,
    CostWeights,
    FlexBudget,
    Network,
    Partition,
    ProfileError,
    Profiles,
    Scenario,
    ScenarioError,
    TimeGrid,
    ValidationReport,
    baseline_ratio,
    load_scenario,
    parse_matpower_case,
    parse_profiles,
    total_demand,
    validate_scenario,
)
from .policy import (
    InfeasibleError,
    PolicyConfig,
    PolicyError,
    PolicyResult,
    baseline,
    pareto_front,
    solve_p2,
    solve_p4,
)
from .problems import (
    BuildError,
    OperationReport,
    VariableLayout,
    build_p1,
    build_p3,
    evaluate_f_tau,
    extract_report,
)
from .qpcore import QuadProgram, Solution, SolverConfig, check_feasibility, solve_qp

__version__ = "1.0.0"

__all__ = [
    "AnalysisError", "CapacityCurvePoint", "CommunitySeries",
    "capacity_curve", "max_ratio_constrained", "max_ratio_unconstrained",
    "required_budget",
    "Branch", "Bus", "CaseParseError", "CostWeights", "FlexBudget",
    "Network", "Partition", "ProfileError", "Profiles", "Scenario",
    "ScenarioError", "TimeGrid", "ValidationReport", "baseline_ratio",
    "load_scenario", "parse_matpower_case", "parse_profiles",
    "total_demand", "validate_scenario",
    "InfeasibleError", "PolicyConfig", "PolicyError", "PolicyResult",
    "baseline", "pareto_front", "solve_p2", "solve_p4",
    "BuildError", "OperationReport", "VariableLayout", "build_p1",
    "build_p3", "evaluate_f_tau", "extract_report",
    "QuadProgram", "Solution", "SolverConfig", "check_feasibility",
    "solve_qp",
]
