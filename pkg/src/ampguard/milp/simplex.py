"""Bounded-variable revised simplex on a sparse LU factorization.

The engine keeps the basis inverse as ``splu(B0)`` followed by a product-form
eta file, refactoring every ``refactor_every`` pivots.  Two drivers share it:

* :meth:`SimplexEngine.primal` -- two-phase primal simplex (artificial
  variables, Dantzig pricing, Harris ratio test, Bland's rule after a run of
  degenerate pivots).
* :meth:`SimplexEngine.dual` -- dual simplex from a dual-feasible basis, used by
  branch-and-bound after a bound change.

Everything is solved on an equilibrated copy of the problem; the public
methods take and return values in original units.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import LinearProgram, LpResult, Status

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9

_BASIC, _LOWER, _UPPER, _FREE, _FIXED = 0, 1, 2, 3, 4


class SingularBasis(RuntimeError):
    pass


def _equilibrate(A: sp.csr_matrix, passes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Geometric-mean row/column scaling factors, rounded to powers of two."""
    m, n = A.shape
    r = np.ones(m)
    c = np.ones(n)
    if A.nnz == 0:
        return r, c
    coo = A.tocoo()
    v = np.abs(coo.data)
    keep = v > 0
    rows, cols, v = coo.row[keep], coo.col[keep], v[keep]
    logv = np.log2(v)
    for _ in range(passes):
        s = logv + np.log2(r)[rows] + np.log2(c)[cols]
        rmax = np.full(m, -np.inf)
        rmin = np.full(m, np.inf)
        np.maximum.at(rmax, rows, s)
        np.minimum.at(rmin, rows, s)
        ok = np.isfinite(rmax)
        r[ok] *= 2.0 ** (-(rmax[ok] + rmin[ok]) / 2)
        s = logv + np.log2(r)[rows] + np.log2(c)[cols]
        cmax = np.full(n, -np.inf)
        cmin = np.full(n, np.inf)
        np.maximum.at(cmax, cols, s)
        np.minimum.at(cmin, cols, s)
        ok = np.isfinite(cmax)
        c[ok] *= 2.0 ** (-(cmax[ok] + cmin[ok]) / 2)
    return 2.0 ** np.round(np.log2(r)), 2.0 ** np.round(np.log2(c))


class SimplexEngine:
    """Stateful simplex solver for one LP; bounds may be changed between solves."""

    def __init__(self, lp: LinearProgram, refactor_every: int = 64, scale: bool = True):
        self.lp = lp
        n = lp.n
        m_eq, m_ub = lp.b_eq.size, lp.b_ub.size
        m = m_eq + m_ub
        self.n, self.m, self.m_ub = n, m, m_ub
        A = sp.vstack([lp.A_eq, lp.A_ub], format="csr") if m else sp.csr_matrix((0, n))
        b = np.concatenate([lp.b_eq, lp.b_ub])
        if scale and m:
            rs, cs = _equilibrate(A)
        else:
            rs, cs = np.ones(m), np.ones(n)
        self.row_scale, self.col_scale = rs, cs
        As = sp.diags(rs) @ A @ sp.diags(cs)
        # columns: structurals | slacks of <= rows | one artificial per row
        slack = sp.csr_matrix(
            (np.ones(m_ub), (np.arange(m_eq, m), np.arange(m_ub))), shape=(m, m_ub)
        )
        art = sp.identity(m, format="csr")
        self.A = sp.hstack([As, slack, art], format="csc")
        self.N = n + m_ub + m
        self.art0 = n + m_ub
        self.b = b * rs
        self.c = np.zeros(self.N)
        self.c[:n] = lp.c * cs
        lo = np.concatenate([lp.lb / cs, np.zeros(m_ub), np.zeros(m)])
        hi = np.concatenate([lp.ub / cs, np.full(m_ub, np.inf), np.full(m, np.inf)])
        self.lo, self.hi = lo, hi
        self.refactor_every = refactor_every
        self.iterations = 0
        self.phase1_done = False
        self.basis = np.zeros(m, dtype=int)
        self.status = np.zeros(self.N, dtype=np.int8)
        self.x = np.zeros(self.N)
        self._lu = None
        self._etas: list[tuple[int, np.ndarray]] = []
        self._crash()

    # ------------------------------------------------------------------ basis
    def _nonbasic_value(self, j: int) -> tuple[int, float]:
        lo, hi = self.lo[j], self.hi[j]
        if lo == hi:
            return _FIXED, lo
        if np.isfinite(lo):
            return _LOWER, lo
        if np.isfinite(hi):
            return _UPPER, hi
        return _FREE, 0.0

    def _crash(self):
        """Slack/artificial starting basis."""
        n, m, m_eq = self.n, self.m, self.m - self.m_ub
        for j in range(n):
            self.status[j], self.x[j] = self._nonbasic_value(j)
        self.x[n:] = 0.0
        resid = self.b - self.A[:, :n] @ self.x[:n]
        self.art_sign = np.ones(m)
        for i in range(m):
            art = self.art0 + i
            if i >= m_eq and resid[i] >= 0:
                s = n + (i - m_eq)
                self.basis[i] = s
                self.status[s] = _BASIC
                self.x[s] = resid[i]
                self.hi[art] = 0.0
                self.status[art] = _FIXED
                self.x[art] = 0.0
            else:
                if i >= m_eq:
                    s = n + (i - m_eq)
                    self.status[s] = _LOWER
                    self.x[s] = 0.0
                sign = 1.0 if resid[i] >= 0 else -1.0
                self.art_sign[i] = sign
                self.basis[i] = art
                self.status[art] = _BASIC
                self.x[art] = abs(resid[i])
        # artificial columns carry the row sign so that they start non-negative
        A = self.A.tocsc(copy=True)
        for i in range(m):
            col = self.art0 + i
            A.data[A.indptr[col]:A.indptr[col + 1]] = self.art_sign[i]
        self.A = A
        self._refactor()

    def _refactor(self):
        self._etas = []
        if self.m == 0:
            self._lu = None
            return
        B = self.A[:, self.basis].tocsc()
        try:
            self._lu = spla.splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:  # exactly singular
            raise SingularBasis(str(exc)) from exc
        self._recompute_xb()

    def _recompute_xb(self):
        nb = self.status != _BASIC
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.ftran(rhs)

    def ftran(self, a: np.ndarray) -> np.ndarray:
        v = self._lu.solve(a)
        for r, alpha in self._etas:
            t = v[r] / alpha[r]
            v -= alpha * t
            v[r] = t
        return v

    def btran(self, c: np.ndarray) -> np.ndarray:
        w = np.array(c, dtype=float)
        for r, alpha in reversed(self._etas):
            w[r] = w[r] + (w[r] - w @ alpha) / alpha[r]
        return self._lu.solve(w, trans="T")

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        s, e = self.A.indptr[j], self.A.indptr[j + 1]
        col[self.A.indices[s:e]] = self.A.data[s:e]
        return col

    def _pivot(self, r: int, q: int, alpha: np.ndarray):
        self.basis[r] = q
        self.status[q] = _BASIC
        self._etas.append((r, alpha))
        self.iterations += 1
        if len(self._etas) >= self.refactor_every:
            self._refactor()

    def _reduced_costs(self, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = self.btran(cost[self.basis])
        d = cost - self.A.T @ y
        d[self.basis] = 0.0
        return y, d

    # ----------------------------------------------------------------- primal
    def _entering(self, d: np.ndarray, bland: bool) -> int:
        st = self.status
        score = np.zeros_like(d)
        lower = (st == _LOWER) & (d < -OPT_TOL)
        upper = (st == _UPPER) & (d > OPT_TOL)
        free = (st == _FREE) & (np.abs(d) > OPT_TOL)
        score[lower] = -d[lower]
        score[upper] = d[upper]
        score[free] = np.abs(d[free])
        if bland:
            idx = np.flatnonzero(score > 0)
            return int(idx[0]) if idx.size else -1
        j = int(np.argmax(score))
        return j if score[j] > 0 else -1

    def _primal_loop(self, cost: np.ndarray, deadline: float, max_iter: int) -> Status | None:
        degenerate = 0
        bland = False
        while True:
            if self.iterations >= max_iter or time.perf_counter() > deadline:
                return Status.TIME_LIMIT
            _, d = self._reduced_costs(cost)
            q = self._entering(d, bland)
            if q < 0:
                return None
            direction = 1.0 if d[q] < 0 else -1.0
            alpha = self.ftran(self._column(q))
            delta = -direction * alpha
            xb = self.x[self.basis]
            lb = self.lo[self.basis]
            ub = self.hi[self.basis]
            # Harris pass 1 with relaxed bounds
            dec = delta < -PIVOT_TOL
            inc = delta > PIVOT_TOL
            with np.errstate(divide="ignore", invalid="ignore"):
                lim_relaxed = np.full(self.m, np.inf)
                lim_relaxed[dec] = (xb[dec] - lb[dec] + FEAS_TOL) / -delta[dec]
                lim_relaxed[inc] = (ub[inc] - xb[inc] + FEAS_TOL) / delta[inc]
            theta1 = lim_relaxed.min() if self.m else np.inf
            flip = self.hi[q] - self.lo[q]
            if not np.isfinite(theta1) and not np.isfinite(flip):
                return Status.UNBOUNDED
            if flip <= theta1:
                self.x[self.basis] = xb + flip * delta
                self.x[q] += direction * flip
                self.status[q] = _UPPER if direction > 0 else _LOWER
                self.iterations += 1
                degenerate = 0
                bland = False
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.full(self.m, np.inf)
                lim[dec] = (xb[dec] - lb[dec]) / -delta[dec]
                lim[inc] = (ub[inc] - xb[inc]) / delta[inc]
            cand = np.flatnonzero(lim <= theta1)
            if bland:
                r = int(cand[np.argmin(self.basis[cand])])
            else:
                r = int(cand[np.argmax(np.abs(delta[cand]))])
            theta = max(lim[r], 0.0)
            leaving = self.basis[r]
            self.x[self.basis] = xb + theta * delta
            self.x[q] += direction * theta
            if delta[r] < 0:
                self.x[leaving] = self.lo[leaving]
                self.status[leaving] = _LOWER
            else:
                self.x[leaving] = self.hi[leaving]
                self.status[leaving] = _UPPER
            if self.lo[leaving] == self.hi[leaving]:
                self.status[leaving] = _FIXED
            self._pivot(r, q, alpha)
            if theta * abs(d[q]) < 1e-12:
                degenerate += 1
                if degenerate > 50:
                    bland = True
            else:
                degenerate = 0
                bland = False

    def primal(self, time_limit: float = np.inf, max_iter: int = 10**7) -> Status:
        deadline = time.perf_counter() + time_limit
        if not self.phase1_done:
            cost1 = np.zeros(self.N)
            cost1[self.art0:] = 1.0
            st = self._primal_loop(cost1, deadline, max_iter)
            if st is not None:
                return st
            infeas = self.x[self.art0:].sum()
            if infeas > FEAS_TOL * max(1.0, np.abs(self.b).max(initial=0.0)):
                return Status.INFEASIBLE
            self.hi[self.art0:] = 0.0
            self.x[self.art0:] = np.where(self.status[self.art0:] == _BASIC, self.x[self.art0:], 0.0)
            nb_art = np.flatnonzero(self.status[self.art0:] != _BASIC) + self.art0
            self.status[nb_art] = _FIXED
            self.phase1_done = True
            self._refactor()
        st = self._primal_loop(self.c, deadline, max_iter)
        return Status.OPTIMAL if st is None else st

    # ------------------------------------------------------------------- dual
    def dual(self, time_limit: float = np.inf, max_iter: int = 10**7) -> Status:
        """Dual simplex; assumes the current basis is dual feasible."""
        deadline = time.perf_counter() + time_limit
        self._recompute_xb()
        while True:
            if self.iterations >= max_iter or time.perf_counter() > deadline:
                return Status.TIME_LIMIT
            xb = self.x[self.basis]
            lb = self.lo[self.basis]
            ub = self.hi[self.basis]
            below = lb - xb
            above = xb - ub
            infeas = np.maximum(below, above)
            r = int(np.argmax(infeas)) if self.m else 0
            if self.m == 0 or infeas[r] <= FEAS_TOL:
                # clean up any dual infeasibility left by tolerances
                st = self._primal_loop(self.c, deadline, max_iter)
                return Status.OPTIMAL if st is None else st
            to_lower = below[r] > above[r]
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self.btran(e)
            arow = self.A.T @ rho
            _, d = self._reduced_costs(self.c)
            st = self.status
            if to_lower:
                elig = ((st == _LOWER) & (arow < -PIVOT_TOL)) | ((st == _UPPER) & (arow > PIVOT_TOL))
            else:
                elig = ((st == _LOWER) & (arow > PIVOT_TOL)) | ((st == _UPPER) & (arow < -PIVOT_TOL))
            elig |= (st == _FREE) & (np.abs(arow) > PIVOT_TOL)
            idx = np.flatnonzero(elig)
            if idx.size == 0:
                return Status.INFEASIBLE
            ratios = np.abs(d[idx]) / np.abs(arow[idx])
            tmin = ratios.min()
            near = idx[ratios <= tmin + OPT_TOL]
            q = int(near[np.argmax(np.abs(arow[near]))])
            alpha = self.ftran(self._column(q))
            target = lb[r] if to_lower else ub[r]
            step = (xb[r] - target) / alpha[r]
            leaving = self.basis[r]
            self.x[self.basis] = xb - alpha * step
            self.x[q] += step
            self.x[leaving] = target
            self.status[leaving] = _LOWER if to_lower else _UPPER
            if self.lo[leaving] == self.hi[leaving]:
                self.status[leaving] = _FIXED
            self._pivot(r, q, alpha)

    # ---------------------------------------------------------------- bounds
    def set_bounds(self, j: int, lo: float, hi: float):
        """Change bounds of structural ``j`` (original units)."""
        s = self.col_scale[j]
        self.lo[j], self.hi[j] = lo / s, hi / s
        if self.status[j] != _BASIC:
            old = self.status[j]
            if self.lo[j] == self.hi[j]:
                self.status[j], self.x[j] = _FIXED, self.lo[j]
            elif old == _UPPER and np.isfinite(self.hi[j]):
                self.x[j] = self.hi[j]
            elif old in (_LOWER, _FIXED) and np.isfinite(self.lo[j]):
                self.status[j], self.x[j] = _LOWER, self.lo[j]
            else:
                self.status[j], self.x[j] = self._nonbasic_value(j)
                if self.status[j] == _FIXED:
                    self.status[j] = _LOWER

    def dual_feasible(self) -> bool:
        _, d = self._reduced_costs(self.c)
        st = self.status
        bad = ((st == _LOWER) & (d < -1e-7)) | ((st == _UPPER) & (d > 1e-7)) | (
            (st == _FREE) & (np.abs(d) > 1e-7)
        )
        return not bad.any()

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.col_scale
        return self.lo[: self.n] * s, self.hi[: self.n] * s

    def snapshot(self) -> tuple:
        return (self.basis.copy(), self.status.copy(), self.x.copy(), self.lo.copy(), self.hi.copy())

    def restore(self, snap: tuple):
        basis, status, x, lo, hi = snap
        self.basis, self.status, self.x = basis.copy(), status.copy(), x.copy()
        self.lo, self.hi = lo.copy(), hi.copy()
        self._refactor()

    # --------------------------------------------------------------- results
    def solution(self) -> np.ndarray:
        return self.x[: self.n] * self.col_scale

    def objective(self) -> float:
        return float(self.c[: self.n] @ self.x[: self.n]) + self.lp.obj_offset

    def duals(self) -> tuple[np.ndarray, np.ndarray]:
        y, d = self._reduced_costs(self.c)
        return y * self.row_scale, d[: self.n] / self.col_scale


def _solve_lp_highs(lp: LinearProgram) -> LpResult:
    from scipy.optimize import linprog

    res = linprog(lp.c, A_ub=lp.A_ub if lp.b_ub.size else None, b_ub=lp.b_ub if lp.b_ub.size else None,
                  A_eq=lp.A_eq if lp.b_eq.size else None, b_eq=lp.b_eq if lp.b_eq.size else None,
                  bounds=np.column_stack([lp.lb, lp.ub]), method="highs")
    if res.status != 0:
        status = {2: Status.INFEASIBLE, 3: Status.UNBOUNDED}.get(res.status, Status.TIME_LIMIT)
        return LpResult(None, np.nan, status, int(res.nit))
    return LpResult(np.asarray(res.x, dtype=float), float(res.fun) + lp.obj_offset, Status.OPTIMAL, int(res.nit))


def solve_lp(lp: LinearProgram, time_limit: float = np.inf, backend: str = "native") -> LpResult:
    """Solve ``lp`` with the in-tree primal simplex (or scipy's HiGHS).

    Infeasible and unbounded problems are reported through ``status``; the
    solver never raises for them.
    """
    if backend == "highs":
        return _solve_lp_highs(lp)
    if backend != "native":
        raise ValueError(f"unknown LP backend {backend!r}")
    if lp.n == 0:
        return LpResult(np.zeros(0), lp.obj_offset, Status.OPTIMAL)
    eng = SimplexEngine(lp)
    try:
        status = eng.primal(time_limit=time_limit)
    except SingularBasis:
        eng = SimplexEngine(lp, refactor_every=16)
        status = eng.primal(time_limit=time_limit)
    if status is not Status.OPTIMAL:
        return LpResult(None, np.nan, status, eng.iterations)
    y, d = eng.duals()
    return LpResult(eng.solution(), eng.objective(), status, eng.iterations, y, d)
