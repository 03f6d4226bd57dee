"""Dense primal-dual interior-point linear programming with exact duals.

Problem form:

    minimize    c . x
    subject to  a_eq x = b_eq
                lo_in <= a_in x <= hi_in     (either side may be infinite)
                lb <= x <= ub                (either side may be infinite)

The solver is a Mehrotra-style predictor-corrector method.  Inequality rows
receive slack variables boxed by their row ranges, after which every Newton
step reduces to one symmetric system of size (n + m_eq): the inequality
block folds into the variable Hessian, so wide constraint sets stay cheap.
Duals are read straight off the final iterate (no crossover); the convention
is dObj/d(b_eq) for equality rows, dObj/d(shift) for inequality rows and
reduced costs for variable bounds.

Many instances sharing one (a_eq, a_in) structure - hourly market clearings
over a week, say - can be solved together through LpBatch: iterations run as
stacked array operations and each member follows exactly the arithmetic it
would follow alone, so batched and one-at-a-time solves agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError

_TOL = 1e-8
_MAX_ITER = 100
_STEP_SCALE = 0.99995  # fraction of the distance to the boundary taken per step
_REG_PRIMAL = 1e-10
_REG_DUAL = 1e-10
_MIN_BOX = 1e-9  # boxes at most this wide are treated as fixed variables
_PIN = 1e12  # diagonal penalty pinning fixed variables in the Newton system
_STALL_STEP = 1e-10
_STALL_LIMIT = 3


class LpInfeasible(DomainError):
    """No point satisfies all constraints."""


class LpUnbounded(DomainError):
    """The objective decreases without bound over the feasible set."""


class IterationLimit(DomainError):
    """The solver stopped before reaching its tolerance."""


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class LpProblem:
    """One LP instance plus row/variable metadata.

    eq_tags / in_tags carry one free-form label per row so callers can map
    rows back to whatever produced them (the flexibility market tags its
    nodal active-balance rows here for price extraction).
    """

    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    lo_in: np.ndarray
    hi_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    eq_tags: list = field(default_factory=list)
    in_tags: list = field(default_factory=list)
    var_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.shape[0]
        self.a_eq = np.asarray(self.a_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.a_in = np.asarray(self.a_in, dtype=float).reshape(-1, n)
        self.lo_in = np.asarray(self.lo_in, dtype=float).reshape(-1)
        self.hi_in = np.asarray(self.hi_in, dtype=float).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        if self.a_eq.shape[0] != self.b_eq.shape[0]:
            raise ValueError("a_eq and b_eq row counts differ")
        if self.a_in.shape[0] != self.lo_in.shape[0] or self.a_in.shape[0] != self.hi_in.shape[0]:
            raise ValueError("a_in and its ranges differ in row count")
        if self.lb.shape[0] != n or self.ub.shape[0] != n:
            raise ValueError("bound vectors must match the variable count")

    @property
    def n_var(self) -> int:
        return self.c.shape[0]


@dataclass
class LpBatch:
    """Several LP instances sharing one (a_eq, a_in) structure.

    Per-member data is stacked along the first axis: c and the variable
    bounds are (B, n), b_eq is (B, m_eq), the row ranges are (B, m_in).
    """

    a_eq: np.ndarray
    a_in: np.ndarray
    c: np.ndarray
    b_eq: np.ndarray
    lo_in: np.ndarray
    hi_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    eq_tags: list = field(default_factory=list)
    in_tags: list = field(default_factory=list)
    var_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.c.shape[0]

    def member(self, k: int) -> LpProblem:
        return LpProblem(
            c=self.c[k], a_eq=self.a_eq, b_eq=self.b_eq[k],
            a_in=self.a_in, lo_in=self.lo_in[k], hi_in=self.hi_in[k],
            lb=self.lb[k], ub=self.ub[k],
            eq_tags=self.eq_tags, in_tags=self.in_tags,
            var_names=self.var_names, meta=self.meta,
        )


@dataclass
class LpSolution:
    """Primal and dual outcome of one instance."""

    status: LpStatus
    x: np.ndarray | None
    objective: float
    y_eq: np.ndarray | None
    y_in: np.ndarray | None
    z_lb: np.ndarray | None
    z_ub: np.ndarray | None
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    problem: LpProblem | None = None

    def dual_objective(self) -> float:
        p = self.problem
        val = float(p.b_eq @ self.y_eq) if p.b_eq.size else 0.0
        zin_lo = np.clip(self.y_in, 0.0, None)
        zin_hi = np.clip(-self.y_in, 0.0, None)
        for bound, z in (
            (p.lo_in, zin_lo), (p.hi_in, -zin_hi),
            (p.lb, self.z_lb), (p.ub, -self.z_ub),
        ):
            finite = np.isfinite(bound)
            if finite.any():
                val += float(bound[finite] @ z[finite])
        return val


def _as_batch(problem: LpProblem) -> LpBatch:
    return LpBatch(
        a_eq=problem.a_eq, a_in=problem.a_in,
        c=problem.c[None, :], b_eq=problem.b_eq[None, :],
        lo_in=problem.lo_in[None, :], hi_in=problem.hi_in[None, :],
        lb=problem.lb[None, :], ub=problem.ub[None, :],
        eq_tags=problem.eq_tags, in_tags=problem.in_tags,
        var_names=problem.var_names, meta=problem.meta,
    )


def solve_lp(problem: LpProblem, tol: float = _TOL, max_iter: int = _MAX_ITER) -> LpSolution:
    """Solve one instance; raises on any non-optimal outcome."""
    sol = solve_lp_batch(_as_batch(problem), tol=tol, max_iter=max_iter)[0]
    sol.problem = problem
    if sol.status is LpStatus.INFEASIBLE:
        raise LpInfeasible("problem is primal infeasible")
    if sol.status is LpStatus.UNBOUNDED:
        raise LpUnbounded("objective is unbounded below")
    if sol.status is LpStatus.ITERATION_LIMIT:
        raise IterationLimit(f"no convergence within {max_iter} iterations")
    return sol


def solve_lp_batch(batch: LpBatch, tol: float = _TOL, max_iter: int = _MAX_ITER,
                   _certify: bool = True) -> list[LpSolution]:
    """Solve all members; returns one LpSolution per member, never raises.

    Members that fail to converge are classified by auxiliary solves: an
    elastic feasibility LP decides INFEASIBLE, a recession-direction LP
    decides UNBOUNDED, anything else is ITERATION_LIMIT.
    """
    B = batch.size
    n = batch.c.shape[1]
    me = batch.a_eq.shape[0]
    mi = batch.a_in.shape[0]

    # Combined variable vector w = [x; slacks], one boxed slack per row.
    L = np.concatenate([batch.lb, batch.lo_in], axis=1)
    U = np.concatenate([batch.ub, batch.hi_in], axis=1)
    ctil = np.concatenate([batch.c, np.zeros((B, mi))], axis=1)
    d = np.concatenate([batch.b_eq, np.zeros((B, mi))], axis=1)

    has_l = np.isfinite(L)
    has_u = np.isfinite(U)
    both = has_l & has_u
    crossed = (both & (L > U + 1e-12)).any(axis=1)
    Lf = np.where(has_l, L, 0.0)
    Uf = np.where(has_u, U, 0.0)

    # Zero-width boxes (fixed variables, e.g. an offered capacity of exactly
    # zero) get no complementarity pair: they are pinned at their value by a
    # large diagonal penalty and their multipliers recovered afterwards.
    fixed = both & (np.abs(Uf - Lf) <= _MIN_BOX)
    has_l = has_l & ~fixed
    has_u = has_u & ~fixed

    w = np.where(fixed, Lf,
                 np.where(both, 0.5 * (Lf + Uf),
                          np.where(has_l, Lf + 1.0, np.where(has_u, Uf - 1.0, 0.0))))
    y = np.zeros((B, me + mi))
    zl = np.where(has_l, 1.0, 0.0)
    zu = np.where(has_u, 1.0, 0.0)

    n_sides = np.maximum(has_l.sum(axis=1) + has_u.sum(axis=1), 1)
    d_scale = 1.0 + np.abs(d).max(axis=1, initial=0.0)
    c_scale = 1.0 + np.abs(ctil).max(axis=1, initial=0.0)

    active = ~crossed
    converged = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    stall = np.zeros(B, dtype=int)

    a_in_t = batch.a_in.T
    kkt_template = np.zeros((B, n + me, n + me))
    if me:
        kkt_template[:, :n, n:] = batch.a_eq.T
        kkt_template[:, n:, :n] = batch.a_eq
        kkt_template[:, n:, n:] -= _REG_DUAL * np.eye(me)
    diag_idx = np.arange(n)

    def apply_e(vec):  # E v with E = [[a_eq, 0], [a_in, -I]]
        out = np.empty((B, me + mi))
        if me:
            out[:, :me] = vec[:, :n] @ batch.a_eq.T
        if mi:
            out[:, me:] = vec[:, :n] @ a_in_t - vec[:, n:]
        return out

    def apply_et(vec):  # E' y
        out = np.zeros((B, n + mi))
        if me:
            out[:, :n] += vec[:, :me] @ batch.a_eq
        if mi:
            out[:, :n] += vec[:, me:] @ batch.a_in
            out[:, n:] = -vec[:, me:]
        return out

    def check_convergence():
        rd = ctil - apply_et(y) - zl + zu
        rp = d - apply_e(w)
        pobj = (ctil * w).sum(axis=1)
        dobj = (d * y).sum(axis=1)
        dobj += (np.where(has_l, L, 0.0) * zl).sum(axis=1)
        dobj -= (np.where(has_u, U, 0.0) * zu).sum(axis=1)
        # Fixed variables have sign-free multipliers equal to their reduced
        # cost: fold those into the dual objective and exempt them from the
        # dual feasibility check.
        dobj += (np.where(fixed, Lf, 0.0) * rd).sum(axis=1)
        rd_check = np.where(fixed, 0.0, rd)
        pri = np.abs(rp).max(axis=1, initial=0.0) / d_scale
        dua = np.abs(rd_check).max(axis=1, initial=0.0) / c_scale
        gap = np.abs(pobj - dobj) / (1.0 + np.abs(pobj))
        import os as _os  # TEMP DEBUG
        if _os.environ.get("LM_LP_DEBUG"):
            print("CHK pri", pri, "dua", dua, "gap", gap, "pobj", pobj, "dobj", dobj)
        return rd, rp, (pri <= tol) & (dua <= tol) & (gap <= tol)

    # Lanes belonging to frozen or diverging members can hold extreme values;
    # their results are discarded via masks, so FP warnings are suppressed
    # for the whole iteration like other array IP implementations do.
    err_state = np.seterr(over="ignore", invalid="ignore", divide="ignore")

    for _ in range(max_iter):
        wl = np.where(has_l, np.maximum(w - L, 1e-300), 1.0)
        wu = np.where(has_u, np.maximum(U - w, 1e-300), 1.0)
        mu = (np.where(has_l, wl * zl, 0.0) + np.where(has_u, wu * zu, 0.0)).sum(axis=1) / n_sides

        rd, rp, ok = check_convergence()
        newly = active & ok
        converged |= newly
        active &= ~newly
        # Diverging members (typically unbounded problems) are frozen here
        # and classified after the loop, so they cannot poison the batch.
        scale_w = np.abs(w).max(axis=1, initial=0.0)
        scale_z = np.maximum(zl.max(axis=1, initial=0.0), zu.max(axis=1, initial=0.0))
        active &= (scale_w < 1e14) & (scale_z < 1e14)
        if not active.any():
            break
        iters[active] += 1

        dd = np.where(has_l, zl / wl, 0.0) + np.where(has_u, zu / wu, 0.0)
        dd = np.where(fixed, _PIN, dd)
        dx_diag = dd[:, :n]
        ds_diag = dd[:, n:]

        kkt = kkt_template.copy()
        if mi:
            kkt[:, :n, :n] = a_in_t @ (batch.a_in[None, :, :] * ds_diag[:, :, None])
        kkt[:, diag_idx, diag_idx] += dx_diag + _REG_PRIMAL
        healthy = np.isfinite(kkt).all(axis=(1, 2))
        if not healthy.all():
            active &= healthy
            kkt[~healthy] = np.eye(n + me)

        def kkt_solve(rl, ru):
            rhat = rd - np.where(has_l, rl / wl, 0.0) + np.where(has_u, ru / wu, 0.0)
            rp_e, rp_i = rp[:, :me], rp[:, me:]
            g1 = -rhat[:, :n]
            if mi:
                g1 = g1 - rhat[:, n:] @ batch.a_in + (ds_diag * rp_i) @ batch.a_in
            rhs = np.concatenate([g1, rp_e], axis=1)
            try:
                sol = np.linalg.solve(kkt, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                # Bump the regularization in proportion to each member's
                # scale; members that stay singular are frozen with a null
                # step and classified after the loop.
                scale = np.abs(kkt).max(axis=(1, 2), initial=1.0)
                bumped = kkt.copy()
                bumped[:, diag_idx, diag_idx] += (1e-10 * scale)[:, None]
                sol = np.empty_like(rhs)
                for kk in range(B):
                    try:
                        sol[kk] = np.linalg.solve(bumped[kk], rhs[kk])
                    except np.linalg.LinAlgError:
                        sol[kk] = 0.0
                        active[kk] = False
            dx = sol[:, :n]
            dw = np.empty_like(w)
            dw[:, :n] = dx
            dy = np.empty_like(y)
            if me:
                dy[:, :me] = -sol[:, n:]
            if mi:
                ds = dx @ a_in_t - rp_i
                dw[:, n:] = ds
                dy[:, me:] = -rhat[:, n:] - ds_diag * ds
            dzl = np.where(has_l, (rl - zl * dw) / wl, 0.0)
            dzu = np.where(has_u, (ru + zu * dw) / wu, 0.0)
            return dw, dy, dzl, dzu

        def primal_step(dw):
            shrink = has_l & (dw < 0)
            grow = has_u & (dw > 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(shrink, wl / np.where(shrink, -dw, 1.0), np.inf)
                r2 = np.where(grow, wu / np.where(grow, dw, 1.0), np.inf)
            return np.minimum(r1.min(axis=1, initial=np.inf), r2.min(axis=1, initial=np.inf))

        def dual_step(dzl, dzu):
            neg_l = has_l & (dzl < 0)
            neg_u = has_u & (dzu < 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(neg_l, zl / np.where(neg_l, -dzl, 1.0), np.inf)
                r2 = np.where(neg_u, zu / np.where(neg_u, -dzu, 1.0), np.inf)
            return np.minimum(r1.min(axis=1, initial=np.inf), r2.min(axis=1, initial=np.inf))

        # Predictor: pure affine step toward zero complementarity.
        rl_aff = -np.where(has_l, wl * zl, 0.0)
        ru_aff = -np.where(has_u, wu * zu, 0.0)
        dw_a, dy_a, dzl_a, dzu_a = kkt_solve(rl_aff, ru_aff)
        ap_a = np.minimum(1.0, primal_step(dw_a))
        ad_a = np.minimum(1.0, dual_step(dzl_a, dzu_a))

        wl_aff = wl + ap_a[:, None] * dw_a
        wu_aff = wu - ap_a[:, None] * dw_a
        mu_aff = (np.where(has_l, wl_aff * (zl + ad_a[:, None] * dzl_a), 0.0)
                  + np.where(has_u, wu_aff * (zu + ad_a[:, None] * dzu_a), 0.0)).sum(axis=1) / n_sides
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = np.where(mu > 0, np.clip(mu_aff / np.where(mu > 0, mu, 1.0), 0.0, 1.0) ** 3, 0.0)

        # Corrector: recenter plus the affine second-order compensation.
        target = (sigma * mu)[:, None]
        rl_c = np.where(has_l, target - wl * zl - dw_a * dzl_a, 0.0)
        ru_c = np.where(has_u, target - wu * zu + dw_a * dzu_a, 0.0)
        dw, dy, dzl, dzu = kkt_solve(rl_c, ru_c)

        ap = np.minimum(1.0, _STEP_SCALE * primal_step(dw))
        ad = np.minimum(1.0, _STEP_SCALE * dual_step(dzl, dzu))

        stalled = active & (ap < _STALL_STEP) & (ad < _STALL_STEP)
        stall = np.where(stalled, stall + 1, 0)
        active &= ~(stall >= _STALL_LIMIT)

        live = active[:, None]
        w = np.where(live, w + ap[:, None] * dw, w)
        y = np.where(live, y + ad[:, None] * dy, y)
        zl = np.where(live & has_l, zl + ad[:, None] * dzl, zl)
        zu = np.where(live & has_u, zu + ad[:, None] * dzu, zu)

    if active.any():
        _, _, ok = check_convergence()
        converged |= active & ok
    np.seterr(**err_state)

    solutions: list[LpSolution] = []
    for k in range(B):
        member = batch.member(k)
        if converged[k]:
            solutions.append(_finish(member, w[k, :n], y[k, :me], y[k, me:],
                                     zl[k, :n], zu[k, :n], int(iters[k])))
        else:
            status = LpStatus.ITERATION_LIMIT
            if _certify:
                status = _classify_failure(member, tol, max_iter)
            solutions.append(LpSolution(
                status=status, x=None, objective=np.nan, y_eq=None, y_in=None,
                z_lb=None, z_ub=None, gap=np.nan, primal_residual=np.nan,
                dual_residual=np.nan, iterations=int(iters[k]), problem=member,
            ))
    return solutions


def _finish(problem, x, y_eq, y_in, zl, zu, iterations) -> LpSolution:
    x = np.clip(x, problem.lb, problem.ub)
    z_lb = np.where(np.isfinite(problem.lb), zl, 0.0)
    z_ub = np.where(np.isfinite(problem.ub), zu, 0.0)
    # Fixed variables carried no multipliers during the solve; their reduced
    # cost is recovered here and split into the bound pair.
    fixed = (np.isfinite(problem.lb) & np.isfinite(problem.ub)
             & (np.abs(problem.ub - problem.lb) <= _MIN_BOX))
    if fixed.any():
        rc = problem.c.astype(float).copy()
        if problem.b_eq.size:
            rc -= y_eq @ problem.a_eq
        if problem.a_in.shape[0]:
            rc -= y_in @ problem.a_in
        z_lb = np.where(fixed, np.clip(rc, 0.0, None), z_lb)
        z_ub = np.where(fixed, np.clip(-rc, 0.0, None), z_ub)
    sol = LpSolution(
        status=LpStatus.OPTIMAL, x=x, objective=float(problem.c @ x),
        y_eq=y_eq.copy(), y_in=y_in.copy(), z_lb=z_lb, z_ub=z_ub,
        gap=0.0, primal_residual=0.0, dual_residual=0.0,
        iterations=iterations, problem=problem,
    )
    viol = 0.0
    if problem.b_eq.size:
        viol = float(np.abs(problem.b_eq - problem.a_eq @ x).max())
    if problem.a_in.shape[0]:
        act = problem.a_in @ x
        lo_gap = np.where(np.isfinite(problem.lo_in), problem.lo_in - act, 0.0)
        hi_gap = np.where(np.isfinite(problem.hi_in), act - problem.hi_in, 0.0)
        viol = max(viol, float(np.maximum(lo_gap, hi_gap).max(initial=0.0)))
    sol.primal_residual = viol
    rd = problem.c - (y_eq @ problem.a_eq if problem.b_eq.size else 0.0)
    if problem.a_in.shape[0]:
        rd = rd - y_in @ problem.a_in
    rd = rd - z_lb + z_ub
    sol.dual_residual = float(np.abs(rd).max(initial=0.0))
    sol.gap = abs(sol.objective - sol.dual_objective()) / (1.0 + abs(sol.objective))
    return sol


def _classify_failure(problem: LpProblem, tol: float, max_iter: int) -> LpStatus:
    """Decide why a member failed, via two always-solvable auxiliary LPs."""
    lb, ub = problem.lb, problem.ub
    if (np.isfinite(lb) & np.isfinite(ub) & (lb > ub + 1e-12)).any():
        return LpStatus.INFEASIBLE
    if (np.isfinite(problem.lo_in) & np.isfinite(problem.hi_in)
            & (problem.lo_in > problem.hi_in + 1e-12)).any():
        return LpStatus.INFEASIBLE

    n = problem.n_var
    me = problem.a_eq.shape[0]
    mi = problem.a_in.shape[0]

    # Elastic feasibility: minimal total violation over all rows.
    n_el = 2 * (me + mi)
    if n_el:
        c = np.concatenate([np.zeros(n), np.ones(n_el)])
        a_eq = np.zeros((me, n + n_el))
        a_eq[:, :n] = problem.a_eq
        a_eq[:, n:n + me] = np.eye(me)
        a_eq[:, n + me:n + 2 * me] = -np.eye(me)
        a_in = np.zeros((mi, n + n_el))
        a_in[:, :n] = problem.a_in
        a_in[:, n + 2 * me:n + 2 * me + mi] = np.eye(mi)
        a_in[:, n + 2 * me + mi:] = -np.eye(mi)
        feas = LpProblem(
            c=c, a_eq=a_eq, b_eq=problem.b_eq, a_in=a_in,
            lo_in=problem.lo_in, hi_in=problem.hi_in,
            lb=np.concatenate([lb, np.zeros(n_el)]),
            ub=np.concatenate([ub, np.full(n_el, np.inf)]),
        )
        out = solve_lp_batch(_as_batch(feas), tol=tol, max_iter=max_iter, _certify=False)[0]
        if out.status is not LpStatus.OPTIMAL:
            return LpStatus.ITERATION_LIMIT
        scale = 1.0 + (np.abs(problem.b_eq).max() if me else 0.0)
        if out.objective > 1e-6 * scale:
            return LpStatus.INFEASIBLE

    # The problem is feasible, so look for a recession ray: a normalized
    # improving direction over the constraint cone proves unboundedness.
    # Variables with two finite bounds cannot move along a ray and are
    # dropped; rows bounded on both sides become homogeneous equalities.
    movable = ~(np.isfinite(lb) & np.isfinite(ub))
    if not movable.any():
        return LpStatus.ITERATION_LIMIT
    cols = np.flatnonzero(movable)
    lo_fin = np.isfinite(problem.lo_in)
    hi_fin = np.isfinite(problem.hi_in)
    two_sided = lo_fin & hi_fin
    a_eq_ray = np.vstack([problem.a_eq[:, cols], problem.a_in[two_sided][:, cols]])
    a_in_ray = problem.a_in[~two_sided][:, cols]
    ray = LpProblem(
        c=problem.c[cols],
        a_eq=a_eq_ray, b_eq=np.zeros(a_eq_ray.shape[0]),
        a_in=a_in_ray,
        lo_in=np.where(lo_fin[~two_sided], 0.0, -np.inf),
        hi_in=np.where(hi_fin[~two_sided], 0.0, np.inf),
        lb=np.where(np.isfinite(lb[cols]), 0.0, -1.0),
        ub=np.where(np.isfinite(ub[cols]), 0.0, 1.0),
    )
    out = solve_lp_batch(_as_batch(ray), tol=tol, max_iter=max_iter, _certify=False)[0]
    if out.status is LpStatus.OPTIMAL and out.objective < -1e-7 * (1.0 + np.abs(problem.c).max()):
        return LpStatus.UNBOUNDED
    return LpStatus.ITERATION_LIMIT


def write_lp_file(problem: LpProblem, path) -> None:
    """Dump one instance in CPLEX LP text format for external cross-checks."""
    names = problem.var_names or [f"x{j}" for j in range(problem.n_var)]

    def row(coefs):
        parts = [f"{'+' if c >= 0 else '-'} {abs(c):.12g} {names[j]} "
                 for j, c in enumerate(coefs) if c != 0.0]
        return "".join(parts) or f"0 {names[0]} "

    lines = ["Minimize", " obj: " + row(problem.c), "Subject To"]
    for i, coefs in enumerate(problem.a_eq):
        tag = problem.eq_tags[i] if i < len(problem.eq_tags) else f"eq{i}"
        lines.append(f" {_lp_name(tag, i, 'eq')}: {row(coefs)}= {problem.b_eq[i]:.12g}")
    for i, coefs in enumerate(problem.a_in):
        tag = problem.in_tags[i] if i < len(problem.in_tags) else f"in{i}"
        base = _lp_name(tag, i, "in")
        if np.isfinite(problem.lo_in[i]):
            lines.append(f" {base}_lo: {row(coefs)}>= {problem.lo_in[i]:.12g}")
        if np.isfinite(problem.hi_in[i]):
            lines.append(f" {base}_hi: {row(coefs)}<= {problem.hi_in[i]:.12g}")
    lines.append("Bounds")
    for j, name in enumerate(names):
        lo = f"{problem.lb[j]:.12g}" if np.isfinite(problem.lb[j]) else "-inf"
        hi = f"{problem.ub[j]:.12g}" if np.isfinite(problem.ub[j]) else "+inf"
        lines.append(f" {lo} <= {name} <= {hi}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _lp_name(tag, i: int, kind: str) -> str:
    clean = "".join(ch if ch.isalnum() else "_" for ch in str(tag))
    return f"{kind}{i}_{clean}"[:48]
