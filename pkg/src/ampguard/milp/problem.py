"""Problem and result containers for the LP / MILP solvers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    GAP_FEASIBLE = "gap_feasible"
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time_limit"
    UNBOUNDED = "unbounded"


def _as_csr(A, n: int) -> sp.csr_matrix:
    if A is None:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(A, dtype=float)


@dataclass
class LinearProgram:
    """minimize c @ x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub."""

    c: np.ndarray
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    A_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    names: list[str] | None = None
    obj_offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = _as_csr(self.A_eq, n)
        self.A_ub = _as_csr(self.A_ub, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).ravel()
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, float).ravel().copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).ravel().copy()
        if self.A_eq.shape != (self.b_eq.size, n):
            raise ValueError(f"A_eq shape {self.A_eq.shape} inconsistent with b_eq {self.b_eq.size}, n={n}")
        if self.A_ub.shape != (self.b_ub.size, n):
            raise ValueError(f"A_ub shape {self.A_ub.shape} inconsistent with b_ub {self.b_ub.size}, n={n}")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must have one entry per variable")
        if np.any(self.lb > self.ub):
            bad = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ValueError(f"lb > ub for variable {bad}")
        if self.names is not None and len(self.names) != n:
            raise ValueError("names must have one entry per variable")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.obj_offset

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x`` (0 when feasible)."""
        viol = [0.0]
        if self.b_eq.size:
            viol.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.b_ub.size:
            viol.append(float(np.max(self.A_ub @ x - self.b_ub)))
        viol.append(float(np.max(self.lb - x, initial=0.0)))
        viol.append(float(np.max(x - self.ub, initial=0.0)))
        return max(viol)


@dataclass
class Milp:
    """A linear program plus integrality marks.

    ``domains`` maps a variable index to the sorted tuple of values it may take,
    e.g. ``(0, 1)`` for a binary or ``(0, 2, 3, 4)`` for a staged heater.
    """

    lp: LinearProgram
    domains: dict[int, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for j, vals in self.domains.items():
            vals = tuple(sorted(float(v) for v in vals))
            if not vals:
                raise ValueError(f"empty domain for variable {j}")
            clean[int(j)] = vals
            self.lp.lb[j] = max(self.lp.lb[j], vals[0])
            self.lp.ub[j] = min(self.lp.ub[j], vals[-1])
        self.domains = clean

    @property
    def integer_indices(self) -> np.ndarray:
        return np.array(sorted(self.domains), dtype=int)

    def is_domain_feasible(self, x: np.ndarray, tol: float = 1e-6) -> bool:
        for j, vals in self.domains.items():
            if min(abs(x[j] - v) for v in vals) > tol:
                return False
        return True


@dataclass
class LpResult:
    x: np.ndarray | None
    objective: float
    status: Status
    iterations: int = 0
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None


@dataclass
class MilpResult:
    x: np.ndarray | None
    objective: float
    gap: float
    status: Status
    nodes: int = 0
    bound: float = -np.inf
    infeasible_so_far: bool = False
    incumbent_history: list[float] = field(default_factory=list)
