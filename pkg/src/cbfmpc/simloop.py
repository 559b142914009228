"""Closed-loop simulation of the lane-merging MPC with cost accounting and safety audit."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import LumpedState, step_array
from .errors import InvalidParameterError, SolverInfeasibleError
from .nlp import INFEASIBLE, SolveOptions, solve
from .ocp import CertificateParams, OcpConfig, build, cold_start, mpc_step
from .safety import SafetyParams, min_distance_interp

log = logging.getLogger(__name__)

AUDIT_TOL = 1e-6
OVERTAKE_HYSTERESIS = 0.1
S_LC = -39.5

CSV_COLUMNS = ("t", "s1", "v1", "s2", "v2", "a1", "a2", "dist", "min_dist",
               "tracking_cost", "actuation_cost", "solve_iters", "solve_time")


@dataclass(frozen=True)
class ScenarioConfig:
    x0: tuple = (-165.0, 13.0, -160.0, 12.5)
    duration: float = 12.0
    ocp: OcpConfig = field(default_factory=OcpConfig)
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidParameterError(f"duration must be > 0, got {self.duration}")
        if len(self.x0) != 4:
            raise InvalidParameterError("x0 needs (s1, v1, s2, v2)")

    @property
    def Ts(self) -> float:
        return self.ocp.Ts

    @property
    def v_refs(self):
        return self.ocp.v_refs

    @property
    def safety(self) -> SafetyParams:
        return self.ocp.safety

    @property
    def cert(self) -> CertificateParams:
        return self.ocp.cert

    @property
    def initial(self) -> LumpedState:
        return LumpedState.from_array(self.x0)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.Ts))

    def with_ocp(self, **kw) -> "ScenarioConfig":
        return replace(self, ocp=replace(self.ocp, **kw))


@dataclass
class TrajectoryLog:
    """Per-step record; ``states`` has one more row than ``inputs``.

    Row ``k`` of ``inputs``, ``tracking`` and ``actuation`` belongs to the
    state at time ``t[k]``. A run that aborted keeps the steps completed so far
    and sets ``feasible=False`` and ``failed_step``.
    """

    Ts: float
    states: np.ndarray
    inputs: np.ndarray
    tracking: np.ndarray
    actuation: np.ndarray
    dist: np.ndarray
    min_dist: np.ndarray
    solve_iters: np.ndarray
    solve_time: np.ndarray
    kkt: np.ndarray
    status: list
    feasible: bool = True
    failed_step: Optional[int] = None
    message: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.inputs)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.Ts

    @property
    def margin(self) -> np.ndarray:
        return self.dist - self.min_dist


def _empty_log(Ts: float, x0: np.ndarray) -> dict:
    return dict(states=[x0], inputs=[], tracking=[], actuation=[], dist=[], min_dist=[],
                solve_iters=[], solve_time=[], kkt=[], status=[])


def _finish(Ts: float, rows: dict, **kw) -> TrajectoryLog:
    arr = {k: (np.asarray(v, dtype=float) if k != "status" else v) for k, v in rows.items()}
    arr["states"] = arr["states"].reshape(-1, 4)
    arr["inputs"] = arr["inputs"].reshape(-1, 2)
    arr["solve_iters"] = arr["solve_iters"].astype(int)
    return TrajectoryLog(Ts=Ts, **arr, **kw)


def run_scenario(sc: ScenarioConfig, opts: Optional[SolveOptions] = None,
                 raise_on_infeasible: bool = False) -> TrajectoryLog:
    """Receding-horizon loop: solve, apply the first input, propagate the exact plant.

    The first OCP is solved from the zero-input rollout and later ones from the
    shifted previous solution. Solver infeasibility stops the run; the returned
    log then carries the step index (or the error propagates when
    ``raise_on_infeasible`` is set).
    """
    cfg, sp, pN = sc.ocp, sc.safety, sc.cert.pN
    Q, R = np.asarray(cfg.Q, dtype=float), np.asarray(cfg.R, dtype=float)
    x = np.asarray(sc.x0, dtype=float)
    rows = _empty_log(cfg.Ts, x)
    warm = None
    for k in range(sc.n_steps):
        try:
            u, res = mpc_step(cfg, x, warm, opts)
        except SolverInfeasibleError as exc:
            msg = f"OCP infeasible at step {k} (t={k * cfg.Ts:.1f}s, x={x.tolist()})"
            log.error(msg)
            if raise_on_infeasible:
                raise SolverInfeasibleError(msg, step=k, result=exc.result) from exc
            return _finish(cfg.Ts, rows, feasible=False, failed_step=k, message=msg)
        ua = np.array([u.a1, u.a2])
        e = x - cfg.x_ref
        rows["inputs"].append(ua)
        rows["tracking"].append(float(e * e @ Q))
        rows["actuation"].append(float(ua * ua @ R))
        rows["dist"].append(abs(x[0] - x[2]))
        rows["min_dist"].append(float(min_distance_interp(x, sp, sp.p0, pN)))
        rows["solve_iters"].append(res.iterations)
        rows["solve_time"].append(res.solve_time)
        rows["kkt"].append(res.kkt_residual.max())
        rows["status"].append(res.status)
        x = step_array(x, ua, cfg.Ts)
        rows["states"].append(x)
        warm = res
    return _finish(cfg.Ts, rows)


def cumulative_costs(log_: TrajectoryLog):
    """``(tracking, actuation, stage)`` summed over the logged steps."""
    tr = float(np.sum(log_.tracking))
    ac = float(np.sum(log_.actuation))
    return tr, ac, tr + ac


@dataclass
class AuditReport:
    min_margin: float
    first_violation: Optional[int]
    distance_violations: list
    velocity_violations: list
    input_violations: list
    tol: float = AUDIT_TOL

    @property
    def clean(self) -> bool:
        return not (self.distance_violations or self.velocity_violations or self.input_violations)

    def to_dict(self) -> dict:
        return asdict(self) | {"clean": self.clean}


def audit_safety(log_: TrajectoryLog, sp: SafetyParams, input_bounds=None, v_max: Optional[float] = None,
                 tol: float = AUDIT_TOL, pN=None) -> AuditReport:
    """Check ``|s1 - s2| >= d_s(x)`` and the box bounds at every logged state.

    ``d_s`` is the minimum safety distance under the interpolated activation
    built from ``sp.p0`` and ``pN`` (default ``sp.pN``). The final state after
    the last applied input is included.
    """
    v_max = sp.v_max if v_max is None else v_max
    pN = sp.pN if pN is None else pN
    X = log_.states
    dist = np.abs(X[:, 0] - X[:, 2])
    md = np.asarray(min_distance_interp(X.T, sp, sp.p0, pN), dtype=float)
    margin = dist - md
    dv = [int(i) for i in np.flatnonzero(margin < -tol)]
    V = X[:, [1, 3]]
    vv = [int(i) for i in np.flatnonzero(np.any((V < -tol) | (V > v_max + tol), axis=1))]
    iv = []
    if input_bounds is not None and log_.n_steps:
        lo = np.array([b[0] for b in input_bounds])
        hi = np.array([b[1] for b in input_bounds])
        U = log_.inputs
        iv = [int(i) for i in np.flatnonzero(np.any((U < lo - tol) | (U > hi + tol), axis=1))]
    return AuditReport(min_margin=float(margin.min()), first_violation=dv[0] if dv else None,
                       distance_violations=dv, velocity_violations=vv, input_violations=iv, tol=tol)


def overtake_step(log_: TrajectoryLog, hysteresis: float = OVERTAKE_HYSTERESIS) -> Optional[int]:
    """First state index where ``s1 - s2`` turns positive after having been negative.

    The sign only counts as changed once ``|s1 - s2|`` exceeds ``hysteresis``.
    """
    sign = 0
    for k, (s1, _, s2, _) in enumerate(log_.states):
        d = s1 - s2
        if d < -hysteresis:
            sign = -1
        elif d > hysteresis:
            if sign < 0:
                return k
            sign = 1
    return None


def first_reaction_step(log_: TrajectoryLog, threshold: float = 0.1) -> Optional[int]:
    """First step whose input has ``max |u_i| > threshold``."""
    idx = np.flatnonzero(np.max(np.abs(log_.inputs), axis=1) > threshold)
    return int(idx[0]) if idx.size else None


def replay(log_: TrajectoryLog) -> np.ndarray:
    """Propagate the logged inputs through the plant from the logged initial state."""
    X = [log_.states[0]]
    for u in log_.inputs:
        X.append(step_array(X[-1], u, log_.Ts))
    return np.array(X)


def initial_feasible(cfg: OcpConfig, x0, opts: Optional[SolveOptions] = None) -> bool:
    res = solve(build(cfg, x0), cold_start(cfg, x0), opts)
    return res.converged and res.status != INFEASIBLE


def sample_feasible_starts(cfg: OcpConfig, n: int, seed: int = 0, s2_range=(-160.0, -100.0),
                           gap=(-30.0, 30.0), v_lo: float = 5.0, max_tries: int = 100_000):
    """Draw ``n`` initial states for which the OCP at ``cfg`` solves (rejection sampling).

    ``s1 - s2`` is uniform on ``gap`` and both velocities on ``[v_lo, v_max]``;
    the agent-2 position ``s2`` is uniform on ``s2_range``, upstream of the
    merge zone so that a 10 s run crosses it.
    """
    rng = np.random.default_rng(seed)
    out, tries = [], 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"only {len(out)} feasible starts after {max_tries} draws")
        s2 = rng.uniform(*s2_range)
        g = rng.uniform(*gap)
        v1, v2 = rng.uniform(v_lo, cfg.v_max, size=2)
        x0 = np.array([s2 + g, v1, s2, v2])
        if initial_feasible(cfg, x0):
            out.append(x0)
    log.info("accepted %d of %d draws", n, tries)
    return out


def _fmt(v) -> str:
    return format(float(v), ".12g")


def write_csv(log_: TrajectoryLog, path) -> Path:
    """One row per applied step, numbers with 12 significant digits."""
    path = Path(path)
    X = log_.states
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(log_.n_steps):
            s1, v1, s2, v2 = X[k]
            a1, a2 = log_.inputs[k]
            w.writerow([_fmt(k * log_.Ts), _fmt(s1), _fmt(v1), _fmt(s2), _fmt(v2), _fmt(a1), _fmt(a2),
                        _fmt(log_.dist[k]), _fmt(log_.min_dist[k]), _fmt(log_.tracking[k]),
                        _fmt(log_.actuation[k]), str(int(log_.solve_iters[k])), _fmt(log_.solve_time[k])])
    return path


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


def summary(log_: TrajectoryLog, audit: AuditReport, sc: ScenarioConfig) -> dict:
    tr, ac, st = cumulative_costs(log_)
    kkt = log_.kkt[np.isfinite(log_.kkt)] if len(log_.kkt) else np.zeros(0)
    return {
        "scenario": sc.name,
        "mode": sc.ocp.mode,
        "steps": log_.n_steps,
        "feasible": log_.feasible,
        "failed_step": log_.failed_step,
        "message": log_.message,
        "tracking_cost": tr,
        "actuation_cost": ac,
        "stage_cost": st,
        "overtake_step": overtake_step(log_),
        "first_reaction_step": first_reaction_step(log_) if log_.n_steps else None,
        "max_kkt_residual": float(kkt.max()) if kkt.size else None,
        "nonconverged_steps": [k for k, s in enumerate(log_.status) if s != "converged"],
        "total_solve_time": float(np.sum(log_.solve_time)),
        "audit": audit.to_dict(),
    }


def write_summary(data: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def simulate_and_audit(sc: ScenarioConfig, opts: Optional[SolveOptions] = None):
    """Run, audit, and summarise; convenience for scripts and sweeps."""
    t0 = time.perf_counter()
    lg = run_scenario(sc, opts)
    audit = audit_safety(lg, sc.safety, sc.ocp.input_bounds, sc.ocp.v_max, pN=sc.cert.pN)
    data = summary(lg, audit, sc)
    data["wall_time"] = time.perf_counter() - t0
    return lg, audit, data
