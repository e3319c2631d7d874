"""Lagrangian-relaxation-guided score-based generation for MILP.

Desk-scale pipeline: benchmark instance generators, an exact LP/B&B engine,
Lagrangian dual machinery, a conditional denoiser trained on guided targets,
diverse candidate sampling, and trust-region refinement.
"""

from srg.milp import (
    MilpInstance,
    Solution,
    evaluate_objective,
    is_feasible,
    make_solution,
    to_canonical_min,
    violation_vector,
)

__all__ = [
    "MilpInstance",
    "Solution",
    "evaluate_objective",
    "is_feasible",
    "make_solution",
    "to_canonical_min",
    "violation_vector",
]

__version__ = "0.1.0"
