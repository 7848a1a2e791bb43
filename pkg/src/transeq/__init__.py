"""Equilibrium solvers for congested transport networks and markets.

The package stacks four layers: traffic assignment on a congested
network (`assignment`), trip distribution between production and
consumption sites (`distribution`), a competitive market of producers,
consumers, and a transporter (`market`), and the combined model where
shipment costs come from the congested network itself (`fullmodel`).
A generic convex-concave engine (`saddle`) powers the coupled solvers,
`dynamics` simulates the learning dynamics whose rest points are the
equilibria, and `cli` exposes everything over JSON instance files.
"""

from .assignment import (AssignmentResult, CostMap, DemandMatrix,
                         LpLimitResult, PathBudgetError, SolveConfig,
                         StochasticResult, beckmann, cost_map, dual_value,
                         enumerate_simple_paths, lp_limit,
                         reconstruct_path_flows, solve_stochastic,
                         solve_wardrop, wardrop_residual)
from .distribution import (Constrained, DistributionInstance,
                           DistributionResult, FixedCosts, Potential,
                           SigmaSite, SinkhornResult, assemble_constrained,
                           gravity_sinkhorn, solve_constrained,
                           solve_potential)
from .dynamics import (DynamicsConfig, Trajectory, simulate_corr_logit,
                       simulate_path_logit)
from .fullmodel import FullEquilibrium, FullInstance, assemble_full, solve_full
from .market import (Consumer, MarketEquilibrium, MarketInstance, Producer,
                     ProductivityReport, WalrasResiduals,
                     consumer_best_response, producer_best_response,
                     productivity_check, solve_market, walras_residuals)
from .network import (BPR, Affine, Edge, HardCap, Network, edge_sigma,
                      edge_sigma_conjugate, edge_tau, shortest_path)
from .saddle import (BlockSpec, Box, HalfBounded, Orthant, Reals,
                     SaddleProblem, SaddleSolution, Simplex, SwapCheckResult,
                     best_response_gap, mirror_prox, order_swap_check)

__version__ = "0.1.0"

__all__ = [
    "Affine", "AssignmentResult", "BPR", "BlockSpec", "Box", "Constrained",
    "Consumer", "CostMap", "DemandMatrix", "DistributionInstance",
    "DistributionResult", "DynamicsConfig", "Edge", "FixedCosts",
    "FullEquilibrium", "FullInstance", "HalfBounded", "HardCap",
    "LpLimitResult", "MarketEquilibrium", "MarketInstance", "Network",
    "Orthant", "PathBudgetError", "Potential", "Producer",
    "ProductivityReport", "Reals", "SaddleProblem", "SaddleSolution",
    "SigmaSite", "Simplex", "SinkhornResult", "SolveConfig",
    "StochasticResult", "SwapCheckResult", "Trajectory", "WalrasResiduals",
    "assemble_constrained", "assemble_full", "beckmann",
    "best_response_gap", "consumer_best_response", "cost_map", "dual_value",
    "edge_sigma", "edge_sigma_conjugate", "edge_tau",
    "enumerate_simple_paths", "gravity_sinkhorn", "lp_limit", "mirror_prox",
    "order_swap_check", "producer_best_response", "productivity_check",
    "reconstruct_path_flows", "shortest_path", "simulate_corr_logit",
    "simulate_path_logit", "solve_constrained", "solve_full", "solve_market",
    "solve_potential", "solve_stochastic", "solve_wardrop",
    "wardrop_residual", "walras_residuals",
]
