"""Exact solver for small MILPs.

LP relaxations are solved with a bounded-variable revised primal simplex
(explicit basis inverse with rank-one updates, two phases, Dantzig pricing
with a Bland fallback under degeneracy).
Binary variables are handled by best-first branch-and-bound, branching on the
most fractional binary. ``backend="highs"`` hands the same model to SciPy's
HiGHS interface instead; it exists for instances too large for the native
simplex and for cross-checking.
"""
from __future__ import annotations

import csv
import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.blas import dger as _dger
from scipy.sparse import csc_matrix

from .milp import MilpModel, evaluate

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NODE_LIMIT = "node_limit"
NUMERICAL = "numerical"

FEAS_TOL = 1e-6
INT_TOL = 1e-6
_PIV_TOL = 1e-9
_OPT_TOL = 1e-9


@dataclass
class SolveOptions:
    gap_tol: float = 1e-6
    node_limit: int = 1_000_000
    seed: int = 0  # branching is deterministic; kept so runs are keyed by seed
    bland: bool = False
    max_iter: int = 200_000
    backend: str = "native"
    node_log_path: str | None = None


@dataclass
class SolveStats:
    nodes: int = 0
    iterations: int = 0
    wall_time: float = 0.0


@dataclass
class SolveResult:
    status: str
    objective: float = math.nan
    assignment: dict[str, float] = field(default_factory=dict)
    x: np.ndarray | None = None
    bound: float = math.nan
    stats: SolveStats = field(default_factory=SolveStats)
    node_log: list[tuple[int, int, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def value(self, name: str) -> float:
        return self.assignment[name]


# -- LP core --------------------------------------------------------------------

@dataclass
class _LPOut:
    status: str
    x: np.ndarray | None
    obj: float
    iterations: int


class _Tableau:
    """Revised bounded-variable simplex over ``[A | D]`` with an explicit dense B^-1.

    ``D = diag(sgn)`` holds one artificial per row. The starting basis is
    lower triangular (see ``_crash``), so models built row by row, where each
    equality introduces a fresh variable, start with few artificials.
    """

    def __init__(self, A, b, lo, hi, bland):
        m, n = A.shape
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        basis, sgn, x_art = self._crash(A, b, lo, hi, x)
        art_hi = np.where(basis >= n, np.inf, 0.0)
        At = np.hstack([A, np.diag(sgn)])
        B = At[:, basis]
        self.Binv = np.asfortranarray(solve_triangular(B, np.eye(m), lower=True,
                                                       check_finite=False))
        self.csc = csc_matrix(At)
        self.rows_t = self.csc.T.tocsr()  # row r of B^-1 A is rows_t @ Binv[r]
        self.bt = b
        self.m, self.n = m, n
        self.lo = np.concatenate([lo, np.zeros(m)])
        self.hi = np.concatenate([hi, art_hi])
        self.x = np.concatenate([x, x_art])
        self.basis = basis
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[basis] = True
        self.bland = bland
        self.iterations = 0

    @staticmethod
    def _crash(A, b, lo, hi, x):
        """Lower-triangular starting basis.

        Rows are visited in order; a row takes a column whose first nonzero is
        in that row when the value solving the row fits the column's bounds,
        otherwise an artificial. ``x`` is updated in place.
        """
        m, n = A.shape
        nz = A != 0.0
        has = nz.any(axis=0)
        first = np.where(has, np.argmax(nz, axis=0), -1)
        width = hi - lo
        cands: dict[int, list[int]] = {}
        for j in np.flatnonzero(has & (width > 0)):
            cands.setdefault(int(first[j]), []).append(int(j))
        basis = n + np.arange(m)
        sgn = np.ones(m)
        x_art = np.zeros(m)
        for i in range(m):
            r = b[i] - A[i] @ x
            row = cands.get(i)
            if row:
                row.sort(key=lambda j: (-width[j], -abs(A[i, j]), j))
                for j in row:
                    val = x[j] + r / A[i, j]
                    if lo[j] - 1e-9 <= val <= hi[j] + 1e-9:
                        x[j] = min(max(val, lo[j]), hi[j])
                        basis[i] = j
                        break
            if basis[i] >= n:
                sgn[i] = 1.0 if r >= 0 else -1.0
                x_art[i] = abs(r)
        return basis, sgn, x_art

    def refresh(self, refactor=False):
        if refactor:
            B = self.csc[:, self.basis].toarray()
            try:
                self.Binv = np.asfortranarray(np.linalg.inv(B))
            except np.linalg.LinAlgError:
                return False
        xn = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = self.Binv @ (self.bt - self.csc @ xn)
        return True

    def _column(self, q):
        c = self.csc
        lo, hi = c.indptr[q], c.indptr[q + 1]
        return self.Binv[:, c.indices[lo:hi]] @ c.data[lo:hi]

    def run(self, cost, max_iter):
        x, lo, hi = self.x, self.lo, self.hi
        basis, is_basic = self.basis, self.is_basic
        d = cost - self.rows_t @ (cost[basis] @ self.Binv)
        movable = hi > lo
        degenerate = 0
        since_refresh = 0
        while True:
            if self.iterations >= max_iter:
                return NUMERICAL
            cand = movable & ~is_basic
            can_up = cand & (d < -_OPT_TOL) & (x < hi - 1e-12)
            can_dn = cand & (d > _OPT_TOL) & (x > lo + 1e-12)
            elig = can_up | can_dn
            use_bland = self.bland or degenerate > 50
            if use_bland:
                idx = np.flatnonzero(elig)
                if idx.size == 0:
                    return OPTIMAL
                q = int(idx[0])
            else:
                score = np.abs(d) * elig
                q = int(np.argmax(score))
                if score[q] == 0.0:
                    return OPTIMAL
            direction = 1.0 if d[q] < 0 else -1.0
            col = self._column(q)
            alpha = col * direction
            xb = x[basis]
            ratios = np.full(self.m, np.inf)
            dec = alpha > _PIV_TOL
            inc = alpha < -_PIV_TOL
            if dec.any():
                ratios[dec] = np.maximum(xb[dec] - lo[basis[dec]], 0.0) / alpha[dec]
            if inc.any():
                ratios[inc] = np.maximum(hi[basis[inc]] - xb[inc], 0.0) / -alpha[inc]
            r = int(np.argmin(ratios))
            theta_row = ratios[r]
            flip = hi[q] - lo[q]
            if theta_row == np.inf and flip == np.inf:
                return UNBOUNDED
            self.iterations += 1
            if flip <= theta_row:
                x[q] += direction * flip
                x[basis] = xb - flip * alpha
                degenerate = 0
                continue
            theta = theta_row
            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if ties.size > 1:
                if use_bland:
                    r = int(ties[np.argmin(basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leaving = basis[r]
            x[q] += direction * theta
            x[basis] = xb - theta * alpha
            x[leaving] = lo[leaving] if alpha[r] > 0 else hi[leaving]
            degenerate = degenerate + 1 if theta < 1e-11 else 0
            Binv = self.Binv
            brow = Binv[r] / col[r]
            d -= d[q] * (self.rows_t @ brow)
            col[r] = 0.0
            _ger(-1.0, col, brow, Binv)
            Binv[r] = brow
            basis[r] = q
            is_basic[q] = True
            is_basic[leaving] = False
            since_refresh += 1
            if since_refresh >= 400:
                since_refresh = 0
                if not self.refresh(refactor=True):
                    return NUMERICAL
                d = cost - self.rows_t @ (cost[basis] @ self.Binv)
            elif since_refresh % 50 == 0:
                self.refresh()


def _ger(alpha, x, y, a):
    """In-place rank-one update ``a += alpha * outer(x, y)``."""
    if a.flags.f_contiguous:
        _dger(alpha, x, y, a=a, overwrite_a=True)
    else:
        a += alpha * np.outer(x, y)


def _simplex(A, b, c, lo, hi, bland=False, max_iter=200_000) -> _LPOut:
    """min c.x  s.t.  A x = b,  lo <= x <= hi  (bounds may be infinite)."""
    m, n = A.shape
    if m == 0:
        if np.any((c < 0) & ~np.isfinite(hi)) or np.any((c > 0) & ~np.isfinite(lo)):
            return _LPOut(UNBOUNDED, None, -math.inf, 0)
        x = np.where(c < 0, hi, np.where(c > 0, lo,
                     np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
        return _LPOut(OPTIMAL, x, float(c @ x), 0)
    tab = _Tableau(A, b, lo, hi, bland)
    cost1 = np.concatenate([np.zeros(n), np.ones(m)])
    status = tab.run(cost1, max_iter)
    if status != OPTIMAL:
        return _LPOut(NUMERICAL, None, math.nan, tab.iterations)
    tab.refresh()
    scale = 1.0 + float(np.max(np.abs(b))) if m else 1.0
    if tab.x[n:].sum() > FEAS_TOL * 1e-2 * scale:
        return _LPOut(INFEASIBLE, None, math.nan, tab.iterations)
    tab.hi[n:] = 0.0
    tab.x[n:] = np.clip(tab.x[n:], 0.0, 0.0)
    cost2 = np.concatenate([c, np.zeros(m)])
    status = tab.run(cost2, max_iter)
    if status == UNBOUNDED:
        return _LPOut(UNBOUNDED, None, -math.inf, tab.iterations)
    if status != OPTIMAL:
        return _LPOut(NUMERICAL, None, math.nan, tab.iterations)
    tab.refresh()
    x = tab.x[:n].copy()
    return _LPOut(OPTIMAL, x, float(c @ x), tab.iterations)


class _Relaxation:
    """The model's LP relaxation in equality form, reused across B&B nodes."""

    def __init__(self, model: MilpModel):
        A, rel, b, c, lo, hi, binary = model.to_arrays()
        self.model = model
        self.n = model.n_vars
        ineq = np.flatnonzero(rel != "=")
        S = np.zeros((A.shape[0], ineq.size))
        S[ineq, np.arange(ineq.size)] = 1.0
        self.A = np.hstack([A, S])
        self.b = b
        self.A_orig = A
        self.rel = rel
        slo = np.where(rel[ineq] == "<=", 0.0, -np.inf)
        shi = np.where(rel[ineq] == "<=", np.inf, 0.0)
        self.slack_lo, self.slack_hi = slo, shi
        self.sign = -1.0 if model.sense == "max" else 1.0
        self.c = np.concatenate([self.sign * c, np.zeros(ineq.size)])
        self.lo, self.hi = lo, hi
        self.binary = binary
        self.const = model.objective_constant

    def solve(self, lo, hi, bland=False, max_iter=200_000) -> _LPOut:
        lo_all = np.concatenate([lo, self.slack_lo])
        hi_all = np.concatenate([hi, self.slack_hi])
        if np.any(lo_all > hi_all):
            return _LPOut(INFEASIBLE, None, math.nan, 0)
        fixed = lo_all == hi_all
        free = ~fixed
        b = self.b - self.A[:, fixed] @ lo_all[fixed]
        A = self.A[:, free]
        out = _simplex(A, b, self.c[free], lo_all[free], hi_all[free], bland, max_iter)
        if out.status == NUMERICAL and not bland:
            out2 = _simplex(A, b, self.c[free], lo_all[free], hi_all[free], True, max_iter)
            out2.iterations += out.iterations
            out = out2
        if out.status != OPTIMAL:
            return out
        x = lo_all.copy()
        x[free] = out.x
        xv = x[: self.n]
        if not self._check(xv, lo, hi):
            return _LPOut(NUMERICAL, None, math.nan, out.iterations)
        obj = float(self.c[: self.n] @ xv)
        return _LPOut(OPTIMAL, xv, obj, out.iterations)

    def _check(self, x, lo, hi) -> bool:
        # guard against drift: a reported optimum must be primal feasible
        act = self.A_orig @ x
        scale = 1.0 + np.abs(self.b)
        viol = np.where(self.rel == "<=", act - self.b,
                        np.where(self.rel == ">=", self.b - act, np.abs(act - self.b)))
        if viol.size and np.max(viol / scale) > FEAS_TOL:
            return False
        return bool(np.all(x >= lo - FEAS_TOL) and np.all(x <= hi + FEAS_TOL))

    def model_objective(self, internal: float) -> float:
        return self.sign * internal + self.const


def _assignment(model: MilpModel, x) -> dict[str, float]:
    return {v.name: float(x[i]) for i, v in enumerate(model.variables)}


def solve_lp(model: MilpModel, options: SolveOptions | None = None) -> SolveResult:
    """Solve the LP relaxation (binaries relaxed to [0, 1])."""
    options = options or SolveOptions()
    if options.backend == "highs":
        return _solve_highs(model, options, relax=True)
    t0 = time.perf_counter()
    relax = _Relaxation(model)
    out = relax.solve(relax.lo, relax.hi, options.bland, options.max_iter)
    stats = SolveStats(nodes=0, iterations=out.iterations, wall_time=time.perf_counter() - t0)
    if out.status != OPTIMAL:
        obj = {UNBOUNDED: math.inf if model.sense == "max" else -math.inf}.get(out.status, math.nan)
        return SolveResult(out.status, obj, stats=stats)
    obj = model.objective_value(out.x)
    return SolveResult(OPTIMAL, obj, _assignment(model, out.x), out.x, obj, stats)


def solve_milp(model: MilpModel, options: SolveOptions | None = None) -> SolveResult:
    """Best-first branch-and-bound over the binary variables."""
    options = options or SolveOptions()
    if options.backend == "highs":
        return _solve_highs(model, options, relax=False)
    t0 = time.perf_counter()
    relax = _Relaxation(model)
    binaries = np.flatnonzero(relax.binary)
    stats = SolveStats()
    node_log: list[tuple[int, int, float, float]] = []

    inc_x, inc_obj = None, math.inf  # internal (minimisation) units
    numerical = False
    counter = 0
    heap = [(-math.inf, 0, counter, relax.lo.copy(), relax.hi.copy())]
    best_bound = -math.inf
    status = None

    while heap:
        bound, negdepth, nid, lo, hi = heapq.heappop(heap)
        if bound >= inc_obj - options.gap_tol:
            continue
        if stats.nodes >= options.node_limit:
            status = NODE_LIMIT
            heapq.heappush(heap, (bound, negdepth, nid, lo, hi))
            break
        stats.nodes += 1
        out = relax.solve(lo, hi, options.bland, options.max_iter)
        stats.iterations += out.iterations
        if out.status == INFEASIBLE:
            continue
        if out.status == UNBOUNDED:
            status = UNBOUNDED
            break
        if out.status != OPTIMAL:
            numerical = True
            log.warning("node %d: LP relaxation failed numerically", nid)
            continue
        obj = out.obj
        if obj >= inc_obj - options.gap_tol:
            continue
        xb = out.x[binaries]
        frac = np.abs(xb - np.round(xb))
        frac[hi[binaries] == lo[binaries]] = 0.0
        if binaries.size == 0 or frac.max() <= INT_TOL:
            x = out.x.copy()
            x[binaries] = np.round(x[binaries])
            inc_x = x
            inc_obj = float(relax.c[: relax.n] @ x)
            node_log.append((nid, -negdepth, relax.model_objective(obj),
                             relax.model_objective(inc_obj)))
            continue
        node_log.append((nid, -negdepth, relax.model_objective(obj),
                         relax.model_objective(inc_obj) if inc_x is not None else math.nan))
        # most fractional, ties to the lowest id (argmax returns the first)
        k = int(np.argmax(frac))
        j = int(binaries[k])
        down_hi = hi.copy()
        down_hi[j] = 0.0
        up_lo = lo.copy()
        up_lo[j] = 1.0
        children = [(lo, down_hi), (up_lo, hi)]
        if out.x[j] >= 0.5:
            children.reverse()
        for clo, chi in children:
            counter += 1
            heapq.heappush(heap, (obj, negdepth - 1, counter, clo, chi))

    if status is None:
        status = OPTIMAL if inc_x is not None else INFEASIBLE
        if numerical:
            status = NUMERICAL
    if heap and status == NODE_LIMIT:
        best_bound = min(h[0] for h in heap)
    elif status == OPTIMAL:
        best_bound = inc_obj
    stats.wall_time = time.perf_counter() - t0
    if options.node_log_path:
        write_node_log(options.node_log_path, node_log)

    if status == UNBOUNDED:
        return SolveResult(UNBOUNDED, math.inf if model.sense == "max" else -math.inf,
                           stats=stats, node_log=node_log)
    if inc_x is None:
        return SolveResult(status, math.nan, stats=stats, node_log=node_log,
                           bound=relax.model_objective(best_bound))
    objective = model.objective_value(inc_x)
    return SolveResult(status, objective, _assignment(model, inc_x), inc_x,
                       relax.model_objective(best_bound), stats, node_log)


def write_node_log(path, node_log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "depth", "bound", "incumbent"])
        for nid, depth, bound, inc in node_log:
            w.writerow([nid, depth, repr(bound), repr(inc)])


# -- HiGHS backend --------------------------------------------------------------

def _solve_highs(model: MilpModel, options: SolveOptions, relax: bool) -> SolveResult:
    from scipy.optimize import Bounds, LinearConstraint, linprog, milp
    from scipy.sparse import csr_matrix

    t0 = time.perf_counter()
    A, rel, b, c, lo, hi, binary = model.to_arrays()
    sign = -1.0 if model.sense == "max" else 1.0
    unbounded = math.inf if model.sense == "max" else -math.inf
    stats = SolveStats()

    def lp(lo=lo, hi=hi):
        ub = rel != "="
        A_ub = np.where((rel == ">=")[:, None], -A, A)[ub]
        b_ub = np.where(rel == ">=", -b, b)[ub]
        return linprog(sign * c, A_ub=A_ub if ub.any() else None, b_ub=b_ub if ub.any() else None,
                       A_eq=A[~ub] if (~ub).any() else None, b_eq=b[~ub] if (~ub).any() else None,
                       bounds=list(zip(lo, hi)), method="highs",
                       options={"primal_feasibility_tolerance": 1e-10,
                                "dual_feasibility_tolerance": 1e-10})

    if relax or not binary.any():
        res = lp()
        code = {0: 0, 2: 2, 3: 3}.get(res.status, 4)
    else:
        rlo = np.where(rel == "<=", -np.inf, b)
        rhi = np.where(rel == ">=", np.inf, b)
        cons = [LinearConstraint(csr_matrix(A), rlo, rhi)] if A.shape[0] else []
        res = milp(sign * c, constraints=cons, integrality=binary.astype(float),
                   bounds=Bounds(lo, hi),
                   options={"mip_rel_gap": 0.0, "presolve": True, "disp": False})
        code = res.status
        stats.nodes = int(getattr(res, "mip_node_count", 0) or 0)
        if code == 4 and res.x is None:
            # HiGHS reports "infeasible or unbounded"; the relaxation tells which
            code = {2: 2, 3: 3}.get(lp().status, 4)
    stats.wall_time = time.perf_counter() - t0
    if code == 2:
        return SolveResult(INFEASIBLE, stats=stats)
    if code == 3:
        return SolveResult(UNBOUNDED, unbounded, stats=stats)
    if res.x is None:
        return SolveResult(NODE_LIMIT if code == 1 else NUMERICAL, stats=stats)
    x = np.asarray(res.x, dtype=float)
    if not relax and binary.any():
        # HiGHS MIP tolerances are looser than ours: fix the binaries and
        # re-solve the continuous part with tight LP tolerances
        x[binary] = np.round(x[binary])
        flo, fhi = lo.copy(), hi.copy()
        flo[binary] = fhi[binary] = x[binary]
        polished = lp(flo, fhi)
        if polished.status == 0:
            x = np.asarray(polished.x, dtype=float)
            x[binary] = flo[binary]
    _, viol = evaluate(model, x)
    if relax:
        viol = [v for v in viol if v.kind != "integrality"]
    status = OPTIMAL if code == 0 else NODE_LIMIT
    if viol:
        status = NUMERICAL
    obj = model.objective_value(x)
    return SolveResult(status, obj, _assignment(model, x), x, obj, stats)
