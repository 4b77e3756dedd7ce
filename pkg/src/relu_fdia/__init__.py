"""Minimal-perturbation attacks on ReLU networks, encoded and solved as MILPs."""

__version__ = "0.1.0"

from .attack import (
    AttackConfig,
    AttackResult,
    AttackStatus,
    CampaignReport,
    Scenario,
    brute_force,
    enumerate_scenarios,
    run_campaign,
    synthesize,
    verify,
)
from .bb import MilpStatus, SolverConfig, lexicographic_solve, solve_milp
from .encoder import (
    Hierarchical,
    MinOutputIncrease,
    MinPerturbation,
    MinScore,
    OutputRange,
    PartialOrdering,
    PerturbationSpec,
    TotalOrdering,
    add_attack_constraint,
    encode,
    fix_pattern,
    set_objective,
)
from .lp import LpProblem, LpStatus, solve_lp
from .milp import MilpModel
from .network import Layer, Network, forward, load_network, random_network, save_network

__all__ = [
    "AttackConfig",
    "AttackResult",
    "AttackStatus",
    "CampaignReport",
    "Hierarchical",
    "Layer",
    "LpProblem",
    "LpStatus",
    "MilpModel",
    "MilpStatus",
    "MinOutputIncrease",
    "MinPerturbation",
    "MinScore",
    "Network",
    "OutputRange",
    "PartialOrdering",
    "PerturbationSpec",
    "Scenario",
    "SolverConfig",
    "TotalOrdering",
    "add_attack_constraint",
    "brute_force",
    "encode",
    "enumerate_scenarios",
    "fix_pattern",
    "forward",
    "lexicographic_solve",
    "load_network",
    "random_network",
    "run_campaign",
    "save_network",
    "set_objective",
    "solve_lp",
    "solve_milp",
    "synthesize",
    "verify",
]
