"""Branch-and-bound over the in-tree simplex, plus a HiGHS bridge.

Node selection is best-bound with depth-first plunging: after a node is
branched, the child on the rounding side of the LP value is solved at once by
warm-started dual simplex; its sibling goes on the heap with the parent's
basis.  Integer variables may carry arbitrary finite value sets; a fractional
value (or an integral value outside the set, such as 1 in ``{0, 2, 3, 4}``) is
split into ``x <= v_below`` and ``x >= v_above``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np

from .problem import LinearProgram, Milp, MilpResult, Status
from .simplex import SimplexEngine, SingularBasis

log = logging.getLogger(__name__)

INT_TOL = 1e-6
GAP_FLOOR = 1e-9  # gaps this small count as closed even when gap_tol == 0


def _split(x: float, vals: tuple[float, ...]) -> tuple[float, float] | None:
    """Domain values bracketing ``x``, or None if ``x`` is already in the domain."""
    for v in vals:
        if abs(x - v) <= INT_TOL:
            return None
    below = [v for v in vals if v < x]
    above = [v for v in vals if v > x]
    return (below[-1] if below else vals[0], above[0] if above else vals[-1])


def _select_branch(x: np.ndarray, domains: dict, lo: np.ndarray, hi: np.ndarray):
    """Most-fractional variable among those not yet in their domain."""
    best, best_score = None, -1.0
    for j in sorted(domains):
        vals = tuple(v for v in domains[j] if lo[j] - INT_TOL <= v <= hi[j] + INT_TOL)
        if not vals:
            return j, None
        sp_ = _split(x[j], vals)
        if sp_ is None:
            continue
        v_lo, v_hi = sp_
        width = v_hi - v_lo
        score = min(x[j] - v_lo, v_hi - x[j]) / width if width > 0 else 1.0
        if score > best_score + 1e-12:
            best, best_score = (j, sp_), score
    return best


def relative_gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return np.inf
    if not np.isfinite(bound):
        return np.inf
    return max(0.0, incumbent - bound) / max(abs(incumbent), 1e-6)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = 0
    snap: tuple | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


class BranchAndBound:
    def __init__(self, milp: Milp, gap_tol: float = 0.01, time_limit: float = 60.0,
                 node_limit: int = 10**6, heuristic_every: int = 25):
        self.milp = milp
        self.lp = milp.lp
        self.gap_tol = gap_tol
        self.time_limit = time_limit
        self.node_limit = node_limit
        self.heuristic_every = heuristic_every
        self.domains = milp.domains
        self.int_idx = milp.integer_indices
        self.incumbent = np.inf
        self.x_best: np.ndarray | None = None
        self.history: list[float] = []
        self.nodes = 0
        self.pruned_bound = np.inf
        self._seq = itertools.count()

    # ----------------------------------------------------------- utilities
    def _engine_solve(self, eng: SimplexEngine, remaining: float, warm: bool) -> Status:
        try:
            return eng.dual(time_limit=remaining) if warm else eng.primal(time_limit=remaining)
        except SingularBasis:
            return self._fresh_solve(eng, remaining)

    def _fresh_solve(self, eng: SimplexEngine, remaining: float) -> Status:
        lo, hi = eng.bounds()
        lp = LinearProgram(self.lp.c, self.lp.A_eq, self.lp.b_eq, self.lp.A_ub, self.lp.b_ub,
                           lo, hi, obj_offset=self.lp.obj_offset)
        fresh = SimplexEngine(lp, refactor_every=16)
        st = fresh.primal(time_limit=remaining)
        eng.__dict__.update(fresh.__dict__)
        return st

    def _try_incumbent(self, x: np.ndarray, obj: float):
        if obj < self.incumbent - 1e-12:
            self.incumbent = obj
            self.x_best = x.copy()
            self.history.append(obj)

    def _rounding_heuristic(self, eng: SimplexEngine, x: np.ndarray, remaining: float):
        """Snap integer variables to the nearest allowed value and re-solve the LP."""
        snap = eng.snapshot()
        lo, hi = eng.bounds()
        for j in self.int_idx:
            vals = [v for v in self.domains[j] if lo[j] - INT_TOL <= v <= hi[j] + INT_TOL]
            if not vals:
                eng.restore(snap)
                return
            v = min(vals, key=lambda v: (abs(x[j] - v), v))
            eng.set_bounds(j, v, v)
        st = self._engine_solve(eng, remaining, warm=True)
        if st is Status.OPTIMAL:
            xs = eng.solution()
            for j in self.int_idx:
                xs[j] = round(xs[j] * 1e6) / 1e6
            if self.milp.is_domain_feasible(xs):
                self._try_incumbent(xs, eng.objective())
        eng.restore(snap)

    def _reduced_cost_fix(self, eng: SimplexEngine, obj: float, x: np.ndarray):
        """Fix integer variables whose reduced cost proves they cannot move."""
        if not np.isfinite(self.incumbent):
            return
        _, d = eng.duals()
        slack = self.incumbent - obj
        lo, hi = eng.bounds()
        for j in self.int_idx:
            if lo[j] == hi[j]:
                continue
            vals = [v for v in self.domains[j] if lo[j] - INT_TOL <= v <= hi[j] + INT_TOL]
            if len(vals) < 2:
                continue
            if abs(x[j] - vals[0]) <= INT_TOL and d[j] > 0 and d[j] * (vals[1] - vals[0]) > slack:
                eng.set_bounds(j, lo[j], vals[0])
            elif abs(x[j] - vals[-1]) <= INT_TOL and d[j] < 0 and -d[j] * (vals[-1] - vals[-2]) > slack:
                eng.set_bounds(j, vals[-1], hi[j])

    # ---------------------------------------------------------------- main
    def solve(self) -> MilpResult:
        start = time.perf_counter()
        deadline = start + self.time_limit
        eng = SimplexEngine(self.lp)
        try:
            st = eng.primal(time_limit=self.time_limit)
        except SingularBasis:
            st = self._fresh_solve(eng, self.time_limit)
        if st is Status.INFEASIBLE or st is Status.UNBOUNDED:
            return MilpResult(None, np.nan, np.inf, st, 0)
        if st is not Status.OPTIMAL:
            return MilpResult(None, np.nan, np.inf, Status.TIME_LIMIT, 0, infeasible_so_far=True)

        heap: list[_Node] = []
        node = _Node(eng.objective(), next(self._seq), 0)
        current_ready = True  # engine holds the LP optimum of `node`
        root_bound = node.bound
        timed_out = False

        while True:
            if not current_ready:
                # pull the best open node
                while heap and heap[0].bound >= self.incumbent - self._prune_tol():
                    self._prune(heapq.heappop(heap).bound)
                if not heap:
                    break
                if relative_gap(self.incumbent, heap[0].bound) <= self.gap_tol + GAP_FLOOR:
                    break
                node = heapq.heappop(heap)
                eng.restore(node.snap)
                for j in np.flatnonzero((node.lo != eng.bounds()[0]) | (node.hi != eng.bounds()[1])):
                    eng.set_bounds(int(j), node.lo[j], node.hi[j])
                eng._recompute_xb()
                remaining = deadline - time.perf_counter()
                st = self._engine_solve(eng, remaining, warm=True)
                self.nodes += 1
                if st is Status.TIME_LIMIT:
                    heapq.heappush(heap, node)
                    timed_out = True
                    break
                if st is not Status.OPTIMAL:
                    continue
                node.bound = max(node.bound, eng.objective())
            current_ready = False

            obj = eng.objective()
            if obj >= self.incumbent - self._prune_tol():
                self._prune(obj)
                continue
            x = eng.solution()
            self._reduced_cost_fix(eng, obj, x)
            lo, hi = eng.bounds()
            pick = _select_branch(x, self.domains, lo, hi)
            if pick is None:
                self._try_incumbent(x, obj)
                continue
            j, split = pick
            if split is None:  # empty domain within bounds
                continue
            if self.heuristic_every and (self.nodes % self.heuristic_every == 0):
                self._rounding_heuristic(eng, x, deadline - time.perf_counter())
                if obj >= self.incumbent - self._prune_tol():
                    self._prune(obj)
                    continue
            v_lo, v_hi = split
            frac_up = (x[j] - v_lo) / (v_hi - v_lo)
            down = (lo[j], v_lo)
            up = (v_hi, hi[j])
            first, second = (up, down) if frac_up >= 0.5 else (down, up)

            snap = eng.snapshot()
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[j], hi2[j] = second
            heapq.heappush(heap, _Node(obj, next(self._seq), node.depth + 1, snap, lo2, hi2))

            if time.perf_counter() > deadline or self.nodes >= self.node_limit:
                timed_out = True
                break
            # plunge into the first child
            eng.set_bounds(j, *first)
            eng._recompute_xb()
            st = self._engine_solve(eng, deadline - time.perf_counter(), warm=True)
            self.nodes += 1
            if st is Status.TIME_LIMIT:
                timed_out = True
                lo3, hi3 = lo.copy(), hi.copy()
                lo3[j], hi3[j] = first
                heapq.heappush(heap, _Node(obj, next(self._seq), node.depth + 1, snap, lo3, hi3))
                break
            if st is Status.OPTIMAL:
                node = _Node(eng.objective(), next(self._seq), node.depth + 1)
                current_ready = True

        bound = min([n.bound for n in heap] + [self.pruned_bound, self.incumbent])
        bound = max(bound, root_bound)
        gap = relative_gap(self.incumbent, bound)
        if self.x_best is None:
            if timed_out:
                return MilpResult(None, np.nan, np.inf, Status.TIME_LIMIT, self.nodes, bound,
                                  infeasible_so_far=True)
            return MilpResult(None, np.nan, np.inf, Status.INFEASIBLE, self.nodes, bound)
        status = Status.OPTIMAL if gap <= self.gap_tol + GAP_FLOOR else Status.GAP_FEASIBLE
        x = self.x_best.copy()
        for j in self.int_idx:
            x[j] = min(self.domains[j], key=lambda v: abs(x[j] - v))
        return MilpResult(x, self.incumbent, gap, status, self.nodes, bound,
                          incumbent_history=list(self.history))

    def _prune(self, bound: float):
        if bound < self.incumbent:
            self.pruned_bound = min(self.pruned_bound, bound)

    def _prune_tol(self) -> float:
        if not np.isfinite(self.incumbent):
            return 0.0
        return max(1e-9, self.gap_tol * max(abs(self.incumbent), 1e-6)) if self.gap_tol > 0 else 1e-9 * max(1.0, abs(self.incumbent))


def _solve_highs(milp: Milp, gap_tol: float, time_limit: float) -> MilpResult:
    """Solve via scipy's HiGHS, expanding non-contiguous value sets into binaries."""
    import scipy.sparse as sp
    from scipy.optimize import Bounds, LinearConstraint, milp as highs_milp

    lp = milp.lp
    n = lp.n
    c = list(lp.c)
    lb, ub = list(lp.lb), list(lp.ub)
    integrality = [0] * n
    extra_rows: list[tuple[dict[int, float], float, float]] = []
    for j, vals in milp.domains.items():
        contiguous = all(float(v).is_integer() for v in vals) and (
            list(vals) == list(np.arange(vals[0], vals[-1] + 1))
        )
        if contiguous:
            integrality[j] = 1
            continue
        ys = []
        for _ in vals:
            ys.append(len(c))
            c.append(0.0)
            lb.append(0.0)
            ub.append(1.0)
            integrality.append(1)
        row = {j: 1.0}
        row.update({y: -v for y, v in zip(ys, vals)})
        extra_rows.append((row, 0.0, 0.0))
        extra_rows.append(({y: 1.0 for y in ys}, 1.0, 1.0))
    N = len(c)
    blocks, lo_r, hi_r = [], [], []
    if lp.b_eq.size:
        blocks.append(sp.hstack([lp.A_eq, sp.csr_matrix((lp.b_eq.size, N - n))]))
        lo_r.append(lp.b_eq)
        hi_r.append(lp.b_eq)
    if lp.b_ub.size:
        blocks.append(sp.hstack([lp.A_ub, sp.csr_matrix((lp.b_ub.size, N - n))]))
        lo_r.append(np.full(lp.b_ub.size, -np.inf))
        hi_r.append(lp.b_ub)
    if extra_rows:
        rows, cols, vals_ = [], [], []
        for i, (row, _, _) in enumerate(extra_rows):
            for k, v in row.items():
                rows.append(i)
                cols.append(k)
                vals_.append(v)
        blocks.append(sp.csr_matrix((vals_, (rows, cols)), shape=(len(extra_rows), N)))
        lo_r.append(np.array([r[1] for r in extra_rows]))
        hi_r.append(np.array([r[2] for r in extra_rows]))
    constraints = []
    if blocks:
        constraints = [LinearConstraint(sp.vstack(blocks).tocsr(), np.concatenate(lo_r), np.concatenate(hi_r))]
    res = highs_milp(np.array(c), integrality=np.array(integrality), bounds=Bounds(lb, ub),
                     constraints=constraints,
                     options={"mip_rel_gap": gap_tol, "time_limit": time_limit, "presolve": True})
    if res.x is None:
        status = {2: Status.INFEASIBLE, 3: Status.UNBOUNDED}.get(res.status, Status.TIME_LIMIT)
        return MilpResult(None, np.nan, np.inf, status, 0, infeasible_so_far=status is Status.TIME_LIMIT)
    x = np.asarray(res.x[:n], dtype=float)
    for j, vals in milp.domains.items():
        x[j] = min(vals, key=lambda v: abs(x[j] - v))
    obj = float(lp.c @ x) + lp.obj_offset
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not np.isfinite(bound) else float(bound) + lp.obj_offset
    gap = relative_gap(obj, bound)
    status = Status.OPTIMAL if res.status == 0 else Status.GAP_FEASIBLE
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    return MilpResult(x, obj, gap, status, nodes, bound, incumbent_history=[obj])


def solve_milp(milp: Milp, gap_tol: float = 0.01, time_limit: float = 60.0,
               backend: str = "native", node_limit: int = 10**6) -> MilpResult:
    """Minimize a MILP to a relative optimality gap of ``gap_tol``.

    ``backend="native"`` runs the in-tree branch-and-bound; ``"highs"`` hands
    the problem to scipy's HiGHS build, which serves as a cross-check and as the
    fast path for long closed-loop simulations.
    """
    if backend == "highs":
        return _solve_highs(milp, gap_tol, time_limit)
    if backend != "native":
        raise ValueError(f"unknown MILP backend {backend!r}")
    return BranchAndBound(milp, gap_tol, time_limit, node_limit).solve()
