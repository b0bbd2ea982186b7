"""Bounded-rational iterative best-response planning for multi-agent navigation."""
from .planner import (Execution, PlannerConfig, PlanResult, best_response_step, plan,
                      receding_horizon_execute, update_mean)
from .policy import InformedPolicyParams, NoiseSpec, refine_informed_policy
from .scenario import AgentSpec, Scenario, ScenarioError, load, loads
from .world import Environment, RewardSpec, make_env

__version__ = "0.1.0"

__all__ = [
    "Execution", "PlannerConfig", "PlanResult", "best_response_step", "plan",
    "receding_horizon_execute", "update_mean", "InformedPolicyParams", "NoiseSpec",
    "refine_informed_policy", "AgentSpec", "Scenario", "ScenarioError", "load", "loads",
    "Environment", "RewardSpec", "make_env",
]
