"""Local SQP solver for smooth NLPs with equality, inequality and bound constraints.

Problem form::

    min f(z)  s.t.  c(z) = 0,  g(z) >= 0,  lb <= z <= ub

Each major iteration solves a convex QP built from a damped-BFGS approximation
of the Lagrangian Hessian; steps are globalized with an l1 exact-penalty merit
function and Armijo backtracking, with a second-order correction against the
Maratos effect. When a QP subproblem is infeasible the solver switches to an
elastic QP that minimizes the l1 violation of the linearized inequalities.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .qp import CONVERGED as QP_OK
from .qp import INFEASIBLE as QP_INFEASIBLE
from .qp import solve_qp

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible_detected"


@dataclass
class NlpProblem:
    """Flattened NLP. Callbacks return ``(value, derivative)`` pairs.

    ``objective(z) -> (f, grad)``, ``eq(z) -> (c, J)``, ``ineq(z) -> (g, J)``.
    ``hessian0`` seeds the quasi-Newton matrix (e.g. the exact Hessian of a
    quadratic objective).
    """

    n: int
    objective: Callable
    eq: Optional[Callable] = None
    ineq: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    hessian0: Optional[np.ndarray] = None

    def bounds(self):
        lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        return lb, ub

    def eval_eq(self, z):
        if self.eq is None:
            return np.zeros(0), np.zeros((0, self.n))
        c, J = self.eq(z)
        return np.atleast_1d(np.asarray(c, dtype=float)), np.atleast_2d(np.asarray(J, dtype=float)).reshape(-1, self.n)

    def eval_ineq(self, z):
        if self.ineq is None:
            return np.zeros(0), np.zeros((0, self.n))
        g, J = self.ineq(z)
        return np.atleast_1d(np.asarray(g, dtype=float)), np.atleast_2d(np.asarray(J, dtype=float)).reshape(-1, self.n)


@dataclass
class SolveOptions:
    tol: float = 1e-6
    max_iter: int = 200
    max_qp_pivots: int = 500
    bfgs_reset_after: int = 5
    hessian_reg: float = 1e-4
    armijo: float = 1e-4
    min_step: float = 1e-10
    elastic_penalty: float = 1e4


@dataclass
class KKTResidual:
    stationarity: float
    feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass
class Multipliers:
    eq: np.ndarray
    ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray


@dataclass
class SolveResult:
    z_star: np.ndarray
    objective_value: float
    kkt_residual: KKTResidual
    status: str
    iterations: int
    multipliers: Multipliers
    solve_time: float = 0.0
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def kkt_residuals(problem: NlpProblem, z, mult: Multipliers) -> KKTResidual:
    """Recompute KKT residuals of ``z`` from scratch with the given multipliers."""
    lb, ub = problem.bounds()
    _, gf = problem.objective(z)
    c, Jc = problem.eval_eq(z)
    g, Jg = problem.eval_ineq(z)
    r = np.asarray(gf, dtype=float) - Jc.T @ mult.eq - Jg.T @ mult.ineq - mult.lb + mult.ub
    feas = max(
        np.max(np.abs(c), initial=0.0),
        np.max(-g, initial=0.0),
        np.max(lb - z, initial=0.0),
        np.max(z - ub, initial=0.0),
    )
    dual_neg = max(
        np.max(-mult.ineq, initial=0.0), np.max(-mult.lb, initial=0.0), np.max(-mult.ub, initial=0.0)
    )
    with np.errstate(invalid="ignore"):
        comp_b = np.concatenate([
            np.where(np.isfinite(lb), mult.lb * (z - lb), 0.0),
            np.where(np.isfinite(ub), mult.ub * (ub - z), 0.0),
        ])
    comp = max(np.max(np.abs(mult.ineq * g), initial=0.0), np.max(np.abs(comp_b), initial=0.0), dual_neg)
    return KKTResidual(float(np.max(np.abs(r), initial=0.0)), float(feas), float(comp))


def _violation(c, g):
    return float(np.sum(np.abs(c)) + np.sum(np.maximum(-g, 0.0)))


class _Evaluator:
    def __init__(self, problem: NlpProblem):
        self.p = problem

    def __call__(self, z):
        f, gf = self.p.objective(z)
        c, Jc = self.p.eval_eq(z)
        g, Jg = self.p.eval_ineq(z)
        return float(f), np.asarray(gf, dtype=float), c, Jc, g, Jg


def _bound_rows(lb, ub, z):
    n = z.size
    lo_idx = np.flatnonzero(np.isfinite(lb))
    hi_idx = np.flatnonzero(np.isfinite(ub))
    A = np.zeros((lo_idx.size + hi_idx.size, n))
    A[np.arange(lo_idx.size), lo_idx] = 1.0
    A[lo_idx.size + np.arange(hi_idx.size), hi_idx] = -1.0
    b = np.concatenate([lb[lo_idx] - z[lo_idx], -(ub[hi_idx] - z[hi_idx])])
    return A, b, lo_idx, hi_idx


def _solve_subproblem(B, gf, c, Jc, g, Jg, lb, ub, z, opts: SolveOptions):
    """Return step, multipliers and whether the elastic mode was needed."""
    n = z.size
    A_b, b_b, lo_idx, hi_idx = _bound_rows(lb, ub, z)
    m_g = g.size
    A_in = np.vstack([Jg, A_b])
    b_in = np.concatenate([-g, b_b])
    res = solve_qp(B, gf, Jc, -c, A_in, b_in, max_pivots=opts.max_qp_pivots)
    elastic = False
    if res.status != QP_OK:
        elastic = True
        # elastic QP: Jg p + t >= -g, t >= 0, penalty rho*sum(t) + small quadratic
        rho = opts.elastic_penalty
        Bx = np.zeros((n + m_g, n + m_g))
        Bx[:n, :n] = B
        Bx[n:, n:] = np.eye(m_g) * 1e-6 * max(1.0, np.max(np.diag(B)))
        gx = np.concatenate([gf, np.full(m_g, rho)])
        Jcx = np.hstack([Jc, np.zeros((Jc.shape[0], m_g))])
        Ain_x = np.vstack([
            np.hstack([Jg, np.eye(m_g)]),
            np.hstack([np.zeros((m_g, n)), np.eye(m_g)]),
            np.hstack([A_b, np.zeros((A_b.shape[0], m_g))]),
        ])
        bin_x = np.concatenate([-g, np.zeros(m_g), b_b])
        res = solve_qp(Bx, gx, Jcx, -c, Ain_x, bin_x, max_pivots=opts.max_qp_pivots + 4 * m_g)
        if res.status == QP_INFEASIBLE:
            return None
        p = res.x[:n]
        mu = np.concatenate([res.mu_in[:m_g], res.mu_in[2 * m_g:]])
        t = res.x[n:]
        return p, res.y_eq, mu, lo_idx, hi_idx, elastic, float(np.sum(np.maximum(t, 0.0)))
    return res.x, res.y_eq, res.mu_in, lo_idx, hi_idx, elastic, 0.0


def solve(problem: NlpProblem, z0, opts: SolveOptions | None = None, warm_multipliers: Multipliers | None = None) -> SolveResult:
    """Run SQP from ``z0``; deterministic for identical inputs."""
    opts = opts or SolveOptions()
    t_start = time.perf_counter()
    n = problem.n
    lb, ub = problem.bounds()
    z = np.clip(np.asarray(z0, dtype=float).copy(), lb, ub)
    if not np.all(np.isfinite(z)):
        raise ValueError("initial guess must be finite")
    ev = _Evaluator(problem)

    H0 = np.eye(n) if problem.hessian0 is None else np.asarray(problem.hessian0, dtype=float).copy()
    H0 = 0.5 * (H0 + H0.T) + opts.hessian_reg * np.eye(n)
    B = H0.copy()
    fail_count = 0
    nu = 1.0
    trace = []

    f, gf, c, Jc, g, Jg = ev(z)
    m_eq, m_in = c.size, g.size
    mult = warm_multipliers or Multipliers(np.zeros(m_eq), np.zeros(m_in), np.zeros(n), np.zeros(n))
    status = MAX_ITER
    elastic_streak = 0
    it = 0
    for it in range(1, opts.max_iter + 1):
        sub = _solve_subproblem(B, gf, c, Jc, g, Jg, lb, ub, z, opts)
        if sub is None:
            status = INFEASIBLE
            break
        p, y, mu_all, lo_idx, hi_idx, elastic, elastic_viol = sub
        mu_g = mu_all[:m_in]
        mu_lb = np.zeros(n)
        mu_ub = np.zeros(n)
        mu_lb[lo_idx] = mu_all[m_in:m_in + lo_idx.size]
        mu_ub[hi_idx] = mu_all[m_in + lo_idx.size:]
        qp_mult = Multipliers(y, mu_g, mu_lb, mu_ub)

        kkt = kkt_residuals(problem, z, qp_mult)
        trace.append((it, f, _violation(c, g), kkt.max(), float(np.max(np.abs(p), initial=0.0))))
        if not elastic and kkt.max() <= opts.tol:
            mult = qp_mult
            status = CONVERGED
            break

        if elastic:
            elastic_streak += 1
            viol = _violation(c, g)
            # elastic QP cannot reduce the linearized violation at a stationary point of it
            if elastic_viol > 1e-8 * (1.0 + viol) and np.max(np.abs(p), initial=0.0) < 1e-10 * (1.0 + np.max(np.abs(z))):
                status = INFEASIBLE
                mult = qp_mult
                break
            if elastic_streak > 25:
                status = INFEASIBLE
                mult = qp_mult
                break
        else:
            elastic_streak = 0

        lam_max = max(np.max(np.abs(y), initial=0.0), np.max(np.abs(mu_g), initial=0.0))
        if nu < 1.1 * lam_max:
            nu = max(1.5 * lam_max, 2.0 * nu)
        if elastic:
            nu = max(nu, opts.elastic_penalty)

        viol0 = _violation(c, g)
        phi0 = f + nu * viol0
        D = float(gf @ p) - nu * viol0
        if D > 0:  # not a descent direction for the merit; fall back to violation decrease
            D = -nu * viol0 if viol0 > 0 else -abs(D)
        alpha = 1.0
        accepted = False
        z_new = None
        while alpha >= opts.min_step:
            z_try = np.clip(z + alpha * p, lb, ub)
            f_t, gf_t, c_t, Jc_t, g_t, Jg_t = ev(z_try)
            phi_t = f_t + nu * _violation(c_t, g_t)
            if phi_t <= phi0 + opts.armijo * alpha * D:
                accepted = True
                z_new, new_eval = z_try, (f_t, gf_t, c_t, Jc_t, g_t, Jg_t)
                break
            if alpha == 1.0:
                soc = _second_order_correction(z, p, c_t, g_t, Jc, Jg, g, mu_g)
                if soc is not None:
                    z_soc = np.clip(z + p + soc, lb, ub)
                    f_s, gf_s, c_s, Jc_s, g_s, Jg_s = ev(z_soc)
                    phi_s = f_s + nu * _violation(c_s, g_s)
                    if phi_s <= phi0 + opts.armijo * D:
                        accepted = True
                        z_new, new_eval = z_soc, (f_s, gf_s, c_s, Jc_s, g_s, Jg_s)
                        break
            alpha *= 0.5
        if not accepted:
            # line search failure: restart the quasi-Newton model and take the tiny step anyway
            B = H0.copy()
            fail_count = 0
            z_new = np.clip(z + opts.min_step * p, lb, ub)
            new_eval = ev(z_new)

        f_n, gf_n, c_n, Jc_n, g_n, Jg_n = new_eval
        s = z_new - z
        gl_old = gf - Jc.T @ y - Jg.T @ mu_g
        gl_new = gf_n - Jc_n.T @ y - Jg_n.T @ mu_g
        yv = gl_new - gl_old
        Bs = B @ s
        sBs = float(s @ Bs)
        if sBs > 1e-16:
            sy = float(s @ yv)
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                yv = theta * yv + (1 - theta) * Bs
                sy = float(s @ yv)
                fail_count += 1
            else:
                fail_count = 0
            if fail_count >= opts.bfgs_reset_after:
                B = H0.copy()
                fail_count = 0
            else:
                B = B - np.outer(Bs, Bs) / sBs + np.outer(yv, yv) / sy
                B = 0.5 * (B + B.T)
        z = z_new
        f, gf, c, Jc, g, Jg = f_n, gf_n, c_n, Jc_n, g_n, Jg_n
        mult = qp_mult

    if status == MAX_ITER:
        log.debug("SQP hit the iteration cap (%d)", opts.max_iter)
    kkt = kkt_residuals(problem, z, mult)
    return SolveResult(
        z_star=z,
        objective_value=float(f),
        kkt_residual=kkt,
        status=status,
        iterations=it,
        multipliers=mult,
        solve_time=time.perf_counter() - t_start,
        trace=trace,
    )


def _second_order_correction(z, p, c_t, g_t, Jc, Jg, g, mu_g):
    """Minimum-norm correction pulling equalities and active inequalities back to zero."""
    act = np.flatnonzero((mu_g > 0) | (g + Jg @ p <= 1e-9 * (1 + np.abs(g))))
    rows = [Jc] + ([Jg[act]] if act.size else [])
    rhs = [-c_t] + ([-g_t[act]] if act.size else [])
    A = np.vstack(rows)
    if A.shape[0] == 0:
        return None
    b = np.concatenate(rhs)
    # only correct active inequalities that are violated at the trial point
    if act.size:
        keep = np.concatenate([np.ones(Jc.shape[0], bool), g_t[act] < 0])
        A, b = A[keep], b[keep]
    if A.shape[0] == 0:
        return None
    try:
        lam = np.linalg.lstsq(A @ A.T, b, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    return A.T @ lam
