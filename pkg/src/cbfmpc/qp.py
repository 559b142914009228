"""Dense strictly convex QP solver.

Solves::

    min  1/2 x'Hx + g'x
    s.t. A_eq x  = b_eq
         A_in x >= b_in

Equality constraints are eliminated with an orthonormal null-space basis, the
remaining inequality-constrained problem is solved with the Goldfarb-Idnani
dual active-set method. The dual method starts from the unconstrained minimizer,
so no feasible starting point (phase 1) is required, and it detects
infeasibility when a violated constraint cannot be added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

CONVERGED = "converged"
INFEASIBLE = "infeasible"
MAX_PIVOTS = "max_pivots"


@dataclass
class QPResult:
    x: np.ndarray
    y_eq: np.ndarray
    mu_in: np.ndarray
    status: str
    pivots: int
    active: list


def _nullspace(A_eq: np.ndarray, b_eq: np.ndarray, n: int, rtol: float = 1e-12):
    if A_eq.shape[0] == 0:
        return np.zeros(n), np.eye(n), None
    Q, R, piv = sla.qr(A_eq.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * max(1.0, diag.max(initial=0.0))))
    Y, Z = Q[:, :rank], Q[:, rank:]
    # A_eq[piv].T = Q R  ->  A_eq[piv] = R' Q'; solve R[:rank,:rank]' (Y' x) = b[piv]
    Rr = R[:rank, :rank]
    b_p = b_eq[piv]
    u = sla.solve_triangular(Rr, b_p[:rank], trans="T")
    x_p = Y @ u
    resid = A_eq @ x_p - b_eq
    if np.max(np.abs(resid), initial=0.0) > 1e-8 * (1.0 + np.max(np.abs(b_eq))):
        return x_p, Z, None  # inconsistent equalities
    return x_p, Z, (Q, R, piv, rank)


def solve_qp(H, g, A_eq=None, b_eq=None, A_in=None, b_in=None, max_pivots: int = 500,
             feas_tol: float = 1e-10) -> QPResult:
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    A_in = np.zeros((0, n)) if A_in is None else np.atleast_2d(np.asarray(A_in, dtype=float))
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float).ravel()
    m_in = A_in.shape[0]

    x_p, Z, fac = _nullspace(A_eq, b_eq, n)
    if fac is None and A_eq.shape[0] > 0:
        return QPResult(x_p, np.zeros(A_eq.shape[0]), np.zeros(m_in), INFEASIBLE, 0, [])

    Hr = Z.T @ H @ Z
    Hr = 0.5 * (Hr + Hr.T)
    gr = Z.T @ (H @ x_p + g)
    C = A_in @ Z
    d = b_in - A_in @ x_p
    row_norm = np.linalg.norm(C, axis=1)
    row_scale = np.where(row_norm > 0, row_norm, 1.0)

    nr = Hr.shape[0]
    if nr > 0:
        cho = sla.cho_factor(Hr)
        solveH = lambda r: sla.cho_solve(cho, r)  # noqa: E731
    else:
        solveH = lambda r: np.zeros(0)  # noqa: E731

    w = -solveH(gr) if nr else np.zeros(0)
    lam = np.zeros(m_in)
    active: list[int] = []
    pivots = 0
    status = CONVERGED

    # constant rows (C_j == 0) are either trivially satisfied or infeasible
    zero_rows = row_norm == 0
    if np.any(zero_rows & (d > feas_tol * (1.0 + np.abs(d)))):
        status = INFEASIBLE

    thr = feas_tol * (1.0 + np.abs(d) / row_scale)
    while status == CONVERGED and m_in:
        s = (C @ w - d) / row_scale + thr
        s[zero_rows] = 0.0
        s[active] = 0.0
        if s.min() >= 0:
            break
        q = int(np.argmin(s))
        nq = C[q]
        lam_q = 0.0
        while True:
            pivots += 1
            if pivots > max_pivots:
                status = MAX_PIVOTS
                break
            Hn = solveH(nq)
            if active:
                N = C[active].T
                HN = np.column_stack([solveH(N[:, k]) for k in range(N.shape[1])])
                M = N.T @ HN
                try:
                    rho = -np.linalg.solve(M, N.T @ Hn)
                except np.linalg.LinAlgError:
                    rho = -np.linalg.lstsq(M, N.T @ Hn, rcond=None)[0]
                z = Hn + HN @ rho
            else:
                rho = np.zeros(0)
                z = Hn
            nz = nq @ z
            # nz / (nq' H^-1 nq) in [0, 1] measures independence of nq from the active rows
            dependent = len(active) >= nr or nz <= 1e-10 * (nq @ Hn)
            t1 = np.inf if dependent else -(nq @ w - d[q]) / nz
            t2, j_block = np.inf, -1
            for k, j in enumerate(active):
                if rho[k] < 0:
                    t = lam[j] / -rho[k]
                    if t < t2:
                        t2, j_block = t, k
            if not np.isfinite(t1) and not np.isfinite(t2):
                status = INFEASIBLE
                break
            if t1 <= t2:
                w = w + t1 * z
                for k, j in enumerate(active):
                    lam[j] += t1 * rho[k]
                lam_q += t1
                lam[q] = lam_q
                active.append(q)
                break
            # partial step: drop the blocking constraint and keep adding q
            if not dependent:
                w = w + t2 * z
            for k, j in enumerate(active):
                lam[j] += t2 * rho[k]
            lam_q += t2
            j = active.pop(j_block)
            lam[j] = 0.0
        if status != CONVERGED:
            break

    lam = np.maximum(lam, 0.0)
    x = x_p + Z @ w
    y = np.zeros(A_eq.shape[0])
    if A_eq.shape[0] and fac is not None:
        Q, R, piv, rank = fac
        r = H @ x + g - A_in.T @ lam
        u = Q[:, :rank].T @ r
        yp = np.zeros(A_eq.shape[0])
        yp[:rank] = sla.solve_triangular(R[:rank, :rank], u)
        y[piv] = yp
    return QPResult(x, y, lam, status, pivots, list(active))
