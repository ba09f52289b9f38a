"""UCLK-C for average-reward linear mixture MDPs."""

from .agent import AgentConfig, RegretTrace, compute_regret, run_baseline_noclip, run_uclkc
from .confidence import ConfidenceSet, RadiusParams
from .hard_instance import HardInstanceParams
from .linalg_stats import GramAccumulator
from .mdp import FeatureMap, LinearMixtureMDP, OracleSolution, solve_average_oracle, solve_discounted_oracle
from .planner import PlanningContext, ValueFunctions, run_value_iteration

__all__ = [
    "AgentConfig", "ConfidenceSet", "FeatureMap", "GramAccumulator", "HardInstanceParams",
    "LinearMixtureMDP", "OracleSolution", "PlanningContext", "RadiusParams", "RegretTrace",
    "ValueFunctions", "compute_regret", "run_baseline_noclip", "run_uclkc", "run_value_iteration",
    "solve_average_oracle", "solve_discounted_oracle",
]

__version__ = "0.1.0"
