"""Warm-started LP re-solves under changing variable bounds.

Heuristics that fix integer variables one batch at a time re-solve nearly the
same LP many times.  A session keeps the last optimal basis and re-optimizes
with the dual simplex after each bound change.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .problem import LinearProgram, LpResult, Status
from .simplex import SimplexEngine, SingularBasis


class LpSession:
    def __init__(self, lp: LinearProgram, backend: str = "native"):
        if backend not in ("native", "highs"):
            raise ValueError(f"unknown LP backend {backend!r}")
        self.lp = lp
        self.backend = backend
        self.solves = 0
        self._started = False
        self.lb, self.ub = lp.lb.copy(), lp.ub.copy()
        if backend == "native":
            self._eng = SimplexEngine(lp)
        else:
            self._highs = _load_highs(lp)

    def set_bounds(self, idx, lo, hi):
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        lo = np.broadcast_to(np.asarray(lo, dtype=float), idx.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), idx.shape)
        self.lb[idx], self.ub[idx] = lo, hi
        if self.backend == "native":
            for j, a, b in zip(idx, lo, hi):
                self._eng.set_bounds(int(j), float(a), float(b))
        else:
            import highspy

            inf = highspy.kHighsInf
            self._highs.changeColsBounds(idx.size, idx.astype(np.int32),
                                         np.where(np.isneginf(lo), -inf, lo),
                                         np.where(np.isposinf(hi), inf, hi))

    def solve(self) -> LpResult:
        self.solves += 1
        if self.backend == "highs":
            return self._solve_highs()
        eng = self._eng
        try:
            status = eng.dual() if self._started else eng.primal()
        except SingularBasis:
            eng = self._eng = SimplexEngine(self.lp, refactor_every=16)
            for j in np.flatnonzero((self.lb != self.lp.lb) | (self.ub != self.lp.ub)):
                eng.set_bounds(int(j), self.lb[j], self.ub[j])
            status = eng.primal()
        self._started = status is Status.OPTIMAL
        if status is not Status.OPTIMAL:
            return LpResult(None, np.nan, status, eng.iterations)
        return LpResult(eng.solution(), eng.objective(), status, eng.iterations)

    def _solve_highs(self) -> LpResult:
        import highspy

        h = self._highs
        h.run()
        ms = h.getModelStatus()
        if ms == highspy.HighsModelStatus.kOptimal:
            x = np.array(h.getSolution().col_value, dtype=float)
            return LpResult(x, float(self.lp.c @ x) + self.lp.obj_offset, Status.OPTIMAL,
                            int(h.getInfo().simplex_iteration_count))
        status = {highspy.HighsModelStatus.kInfeasible: Status.INFEASIBLE,
                  highspy.HighsModelStatus.kUnbounded: Status.UNBOUNDED}.get(ms, Status.TIME_LIMIT)
        return LpResult(None, np.nan, status)


def _load_highs(lp: LinearProgram):
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    inf = highspy.kHighsInf
    A = sp.vstack([lp.A_eq, lp.A_ub]).tocsc()
    model = highspy.HighsLp()
    model.num_col_ = lp.n
    model.num_row_ = A.shape[0]
    model.col_cost_ = lp.c
    model.col_lower_ = np.where(np.isneginf(lp.lb), -inf, lp.lb)
    model.col_upper_ = np.where(np.isposinf(lp.ub), inf, lp.ub)
    model.row_lower_ = np.concatenate([lp.b_eq, np.full(lp.b_ub.size, -inf)])
    model.row_upper_ = np.concatenate([lp.b_eq, lp.b_ub])
    model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    model.a_matrix_.start_ = A.indptr
    model.a_matrix_.index_ = A.indices
    model.a_matrix_.value_ = A.data
    h.passModel(model)
    return h
