"""Multiple-shooting transcription of the lane-merging MPC problems.

Decision vector layout: ``z = (u_0, ..., u_{N-1}, x_1, ..., x_N)`` with
``u_j = (a1, a2)`` and ``x_j = (s1, v1, s2, v2)``, so ``n = 6N``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .ad import Dual
from .dynamics import ControlInput, rollout, step_array
from .errors import InvalidParameterError, SolverInfeasibleError
from .nlp import INFEASIBLE, NlpProblem, SolveOptions, SolveResult, solve
from .safety import ActivationParams, SafetyParams, H_d, delta_v, h_d

log = logging.getLogger(__name__)

BASELINE = "baseline"
CERTIFIED = "certified"


@dataclass(frozen=True)
class CertificateParams:
    gamma_v: float = 0.8
    gamma_d: float = 0.15
    pN: ActivationParams = field(default_factory=lambda: ActivationParams(0.06, -75.0))
    dv_min: float = 0.01

    def __post_init__(self):
        for name in ("gamma_v", "gamma_d"):
            g = getattr(self, name)
            if not 0.0 < g <= 1.0:
                raise InvalidParameterError(f"{name} must lie in (0, 1], got {g}")


@dataclass(frozen=True)
class OcpConfig:
    N: int = 15
    Q: tuple = (0.0, 10.0, 0.0, 10.0)
    Q_N: tuple = (0.0, 10.0, 0.0, 10.0)
    R: tuple = (1.0, 1.0)
    v_refs: tuple = (13.0, 12.5)
    input_bounds: tuple = ((-3.0, 3.0), (-3.0, 3.0))
    v_max: float = 15.0
    Ts: float = 0.1
    safety: SafetyParams = field(default_factory=SafetyParams)
    cert: CertificateParams = field(default_factory=CertificateParams)
    mode: str = CERTIFIED

    def __post_init__(self):
        if self.mode not in (BASELINE, CERTIFIED):
            raise InvalidParameterError(f"mode must be baseline or certified, got {self.mode!r}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidParameterError(f"horizon must be a positive integer, got {self.N}")
        if self.mode == CERTIFIED and self.N < 3:
            raise InvalidParameterError("certified mode needs N >= 3")
        if len(self.Q) != 4 or len(self.Q_N) != 4 or len(self.R) != 2:
            raise InvalidParameterError("Q, Q_N need 4 diagonal entries and R needs 2")
        if min(self.Q) < 0 or min(self.Q_N) < 0 or min(self.R) < 0:
            raise InvalidParameterError("cost weights must be nonnegative")
        if len(self.input_bounds) != 2:
            raise InvalidParameterError("input_bounds needs one (lo, hi) pair per agent")
        for lo, hi in self.input_bounds:
            if not lo <= 0.0 <= hi:
                raise InvalidParameterError(f"input bounds must satisfy lo <= 0 <= hi, got ({lo}, {hi})")
        if not self.Ts > 0:
            raise InvalidParameterError(f"Ts must be > 0, got {self.Ts}")
        if not self.v_max > 0:
            raise InvalidParameterError(f"v_max must be > 0, got {self.v_max}")

    @property
    def x_ref(self) -> np.ndarray:
        return np.array([0.0, self.v_refs[0], 0.0, self.v_refs[1]])

    @property
    def u_lo(self) -> np.ndarray:
        return np.array([self.input_bounds[0][0], self.input_bounds[1][0]])

    @property
    def u_hi(self) -> np.ndarray:
        return np.array([self.input_bounds[0][1], self.input_bounds[1][1]])

    def with_mode(self, mode: str) -> "OcpConfig":
        return replace(self, mode=mode)


def split(z: np.ndarray, N: int):
    """``(U, X)`` views of a decision vector: shapes ``(N, 2)`` and ``(N, 4)``."""
    return z[: 2 * N].reshape(N, 2), z[2 * N:].reshape(N, 4)


def join(U: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(U, dtype=float).ravel(), np.asarray(X, dtype=float).ravel()])


def stage_costs(X: np.ndarray, U: np.ndarray, cfg: OcpConfig):
    """Tracking ``e'Qe`` and actuation ``u'Ru`` per row."""
    e = np.asarray(X) - cfg.x_ref
    return e * e @ np.asarray(cfg.Q, dtype=float), np.asarray(U) ** 2 @ np.asarray(cfg.R, dtype=float)


def _state_fn(fn, X: np.ndarray):
    """Values ``(M,)`` and gradients ``(M, 4)`` of ``fn`` over rows of ``X``."""
    out = fn(Dual.variables([X[:, i] for i in range(4)]))
    return np.asarray(out.value, dtype=float), np.asarray(out.partials, dtype=float)


class _Transcription:
    """Shared pieces of both OCPs; subclasses supply the path/terminal constraints."""

    def __init__(self, cfg: OcpConfig, x_k):
        self.cfg = cfg
        self.N = cfg.N
        self.n = 6 * cfg.N
        self.x_k = np.asarray(list(x_k), dtype=float)
        Ts = cfg.Ts
        N = self.N
        # dynamics defects x_{j+1} - A x_j - B u_j are linear: constant Jacobian
        Aa = np.array([[1.0, Ts], [0.0, 1.0]])
        Ba = np.array([0.5 * Ts * Ts, Ts])
        A = np.zeros((4, 4))
        A[:2, :2] = Aa
        A[2:, 2:] = Aa
        B = np.zeros((4, 2))
        B[:2, 0] = Ba
        B[2:, 1] = Ba
        J = np.zeros((4 * N, self.n))
        for j in range(N):
            rows = slice(4 * j, 4 * j + 4)
            J[rows, 2 * j:2 * j + 2] = -B
            J[rows, 2 * N + 4 * j:2 * N + 4 * j + 4] = np.eye(4)
            if j > 0:
                J[rows, 2 * N + 4 * (j - 1):2 * N + 4 * j] = -A
        self.J_eq = J
        q = np.tile(np.asarray(cfg.Q, dtype=float), N)
        q[-4:] = cfg.Q_N
        r = np.tile(np.asarray(cfg.R, dtype=float), N)
        self.w = np.concatenate([r, q])
        self.z_ref = np.concatenate([np.zeros(2 * N), np.tile(cfg.x_ref, N)])
        e0 = self.x_k - cfg.x_ref
        self.cost0 = float(e0 * e0 @ np.asarray(cfg.Q, dtype=float))

    def objective(self, z):
        e = z - self.z_ref
        return self.cost0 + float(self.w @ (e * e)), 2.0 * self.w * e

    def eq(self, z):
        U, X = split(z, self.N)
        prev = np.vstack([self.x_k[None, :], X[:-1]])
        return (X - step_array(prev, U, self.cfg.Ts)).ravel(), self.J_eq

    def ineq(self, z):
        raise NotImplementedError

    def xcol(self, j: int) -> int:
        """Column of the first entry of ``x_j`` (1-based stage index)."""
        return 2 * self.N + 4 * (j - 1)

    def _place(self, J: np.ndarray, row0: int, stages, grads: np.ndarray):
        for i, (j, g) in enumerate(zip(stages, grads)):
            c = self.xcol(j)
            J[row0 + i, c:c + 4] += g

    def _velocity_rows(self, X, stages, J, row0):
        """``v_i >= 0`` and ``v_max - v_i >= 0`` for both agents at ``stages``."""
        vals = []
        for k, j in enumerate(stages):
            c = self.xcol(j)
            x = X[j - 1]
            vals.extend([x[1], x[3], self.cfg.v_max - x[1], self.cfg.v_max - x[3]])
            r = row0 + 4 * k
            J[r, c + 1] = 1.0
            J[r + 1, c + 3] = 1.0
            J[r + 2, c + 1] = -1.0
            J[r + 3, c + 3] = -1.0
        return np.array(vals)

    def problem(self) -> NlpProblem:
        N = self.N
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        lb[: 2 * N] = np.tile(self.cfg.u_lo, N)
        ub[: 2 * N] = np.tile(self.cfg.u_hi, N)
        return NlpProblem(
            n=self.n, objective=self.objective, eq=self.eq, ineq=self.ineq,
            lb=lb, ub=ub, hessian0=np.diag(2.0 * self.w),
        )


class _Baseline(_Transcription):
    def ineq(self, z):
        cfg, N = self.cfg, self.N
        _, X = split(z, N)
        m = N + 4 * N
        J = np.zeros((m, self.n))
        hv, hg = _state_fn(lambda x: h_d(x, cfg.safety.p0, cfg.safety), X)
        self._place(J, 0, range(1, N + 1), hg)
        vv = self._velocity_rows(X, range(1, N + 1), J, N)
        return np.concatenate([hv, vv]), J


class _Certified(_Transcription):
    def ineq(self, z):
        cfg, N = self.cfg, self.N
        sp, ce = cfg.safety, cfg.cert
        _, X = split(z, N)
        m = (N - 2) + 1 + 4 * (N - 1) + 1 + 4 + 1
        J = np.zeros((m, self.n))
        vals = []
        row = 0
        # relaxed in-horizon distance constraints, stages 1..N-2
        Hv, Hg = _state_fn(lambda x: H_d(x, sp.p0, ce.pN, sp), X[: N - 2])
        self._place(J, row, range(1, N - 1), Hg)
        vals.append(Hv)
        row += N - 2
        # h_d(.; pN) at the last two stages
        hv, hg = _state_fn(lambda x: h_d(x, ce.pN, sp), X[N - 2:])
        self._place(J, row, [N - 1], hg[:1])
        vals.append(hv[:1])
        row += 1
        vals.append(self._velocity_rows(X, range(1, N), J, row))
        row += 4 * (N - 1)
        # terminal distance certificate h(x_N) - (1 - gamma_d) h(x_{N-1}) >= 0
        gd = 1.0 - ce.gamma_d
        vals.append(np.array([hv[1] - gd * hv[0]]))
        J[row, self.xcol(N):self.xcol(N) + 4] += hg[1]
        J[row, self.xcol(N - 1):self.xcol(N - 1) + 4] -= gd * hg[0]
        row += 1
        # velocity certificates with gamma_v
        gv = 1.0 - ce.gamma_v
        xa, xb = X[N - 2], X[N - 1]
        ca, cb = self.xcol(N - 1), self.xcol(N)
        for k, (idx, sign) in enumerate([(1, 1.0), (3, 1.0), (1, -1.0), (3, -1.0)]):
            off = 0.0 if sign > 0 else cfg.v_max
            ha = off + sign * xa[idx]
            hb = off + sign * xb[idx]
            vals.append(np.array([hb - gv * ha]))
            J[row + k, cb + idx] = sign
            J[row + k, ca + idx] = -gv * sign
        row += 4
        # relative velocity floor at stage N-1
        dv, dg = _state_fn(lambda x: delta_v(x, sp.m_lf), X[N - 2:N - 1])
        vals.append(dv - ce.dv_min)
        self._place(J, row, [N - 1], dg)
        row += 1
        assert row == m
        return np.concatenate(vals), J


def build_baseline(cfg: OcpConfig, x_k) -> NlpProblem:
    if cfg.mode != BASELINE:
        raise InvalidParameterError("build_baseline needs mode='baseline'")
    return _Baseline(cfg, x_k).problem()


def build_certified(cfg: OcpConfig, x_k) -> NlpProblem:
    if cfg.mode != CERTIFIED:
        raise InvalidParameterError("build_certified needs mode='certified'")
    return _Certified(cfg, x_k).problem()


def build(cfg: OcpConfig, x_k) -> NlpProblem:
    return build_certified(cfg, x_k) if cfg.mode == CERTIFIED else build_baseline(cfg, x_k)


def cold_start(cfg: OcpConfig, x_k) -> np.ndarray:
    U = np.zeros((cfg.N, 2))
    return join(U, rollout(x_k, U, cfg.Ts))


def shift_warm_start(cfg: OcpConfig, x_k, z_prev: np.ndarray) -> np.ndarray:
    """Drop the first input, repeat the last one, and roll the states out from ``x_k``.

    Rolling out instead of copying the old states keeps every dynamics defect
    exactly zero, even if the previous solve left small residuals.
    """
    U_prev, _ = split(np.asarray(z_prev, dtype=float), cfg.N)
    U = np.vstack([U_prev[1:], U_prev[-1:]])
    U = np.clip(U, cfg.u_lo, cfg.u_hi)
    return join(U, rollout(x_k, U, cfg.Ts))


def mpc_step(cfg: OcpConfig, x_k, warm: Optional[SolveResult] = None,
             opts: Optional[SolveOptions] = None):
    """Solve the OCP at ``x_k`` and return the first input with the solver result.

    Raises :class:`SolverInfeasibleError` when the solver reports infeasibility.
    """
    problem = build(cfg, x_k)
    z0 = cold_start(cfg, x_k) if warm is None else shift_warm_start(cfg, x_k, warm.z_star)
    res = solve(problem, z0, opts)
    if res.status == INFEASIBLE:
        raise SolverInfeasibleError("OCP reported infeasible", result=res)
    if not res.converged:
        log.warning("MPC solve ended with status %s after %d iterations", res.status, res.iterations)
    U, _ = split(res.z_star, cfg.N)
    return ControlInput(float(U[0, 0]), float(U[0, 1])), res
