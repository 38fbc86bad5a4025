"""Convex QCQP solver and the two block sub-problems built on it."""

from .qcqp import (ConvexQcqp, NotPSDError, QuadConstraint, SolveResult, Status, check_psd,
                   solve_qcqp, write_residual_log)
from .subproblems import (SubproblemInfeasible, beamforming_qcqp, ris_qcqp, solve_beamforming,
                          solve_ris)

__all__ = [
    "ConvexQcqp", "NotPSDError", "QuadConstraint", "SolveResult", "Status", "check_psd",
    "solve_qcqp", "write_residual_log", "SubproblemInfeasible", "beamforming_qcqp", "ris_qcqp",
    "solve_beamforming", "solve_ris",
]
