"""LP and MILP solvers used by the controller."""

from .branch_bound import relative_gap, solve_milp
from .lpfile import read_lp, write_lp
from .problem import LinearProgram, LpResult, Milp, MilpResult, Status
from .session import LpSession
from .simplex import solve_lp

__all__ = [
    "LinearProgram",
    "LpResult",
    "LpSession",
    "Milp",
    "MilpResult",
    "Status",
    "read_lp",
    "relative_gap",
    "solve_lp",
    "solve_milp",
    "write_lp",
]
