"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from cbfmpc.certify import (CERTIFIED, FALSIFIED, INCONCLUSIVE, least_input_bound, two_step_terms,
                            verify_qdtcbf)
from cbfmpc.cli import resolve_jobs
from cbfmpc.config import load_bundled, with_overrides
from cbfmpc.interval import Box
from cbfmpc.simloop import (ScenarioConfig, audit_safety, cumulative_costs, overtake_step, run_scenario,
                            sample_feasible_starts)

from test_safety import gradient_check, interval_containment_failures

TOL = 1e-6
FEAS_TOL = 1e-8

# cumulative stage cost per (N, gamma_d) as tabulated for scenario 2
REFERENCE_STAGE_COST = {
    (4, 0.05): 65.9, (4, 0.2): 84.4, (4, 0.4): 89.6, (4, 0.6): 92.0,
    (6, 0.05): 62.9, (6, 0.2): 75.1, (6, 0.4): 78.6, (6, 0.6): 80.1,
}
TABLE_GAMMAS = (0.05, 0.2, 0.4, 0.6)
BOUND_GAMMAS = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


def _timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def scenario1():
    cfg = load_bundled("scenario1")
    log, wall = _timed(run_scenario, cfg.scenario)
    return cfg, log, wall


@pytest.fixture(scope="module")
def cost_table():
    base = load_bundled("scenario2")
    t0 = time.perf_counter()
    runs = {}
    for N in (4, 6):
        for g in TABLE_GAMMAS:
            cfg = with_overrides(base, ocp={"N": N}, certificate={"gamma_d": g})
            runs[(N, g)] = (cfg, run_scenario(cfg.scenario))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def stress():
    cfg = load_bundled("scenario1")
    starts = sample_feasible_starts(cfg.ocp, 100, seed=2024)
    logs = [run_scenario(ScenarioConfig(x0=tuple(x0), duration=10.0, ocp=cfg.ocp, name=f"stress{i}"))
            for i, x0 in enumerate(starts)]
    return cfg, starts, logs


# -- 1 --------------------------------------------------------------------------------

def test_criterion1_scenario1_safety(scenario1, criterion):
    cfg, log, wall = scenario1
    audit = audit_safety(log, cfg.scenario.safety, input_bounds=cfg.ocp.input_bounds, v_max=cfg.ocp.v_max,
                         tol=TOL, pN=cfg.scenario.cert.pN)
    v = log.states[:, [1, 3]]
    u = log.inputs
    checks = {
        "120 feasible steps": log.feasible and log.n_steps == 120,
        "distance margin": audit.min_margin >= -TOL,
        "velocity range": bool(np.all(v >= -TOL) and np.all(v <= 15.0 + TOL)),
        "input range": bool(np.all(np.abs(u) <= 3.0 + TOL)),
        "runtime <= 120 s": wall <= 120.0,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    criterion(1, ok, f"{log.n_steps} steps, min margin {audit.min_margin:.3g} m, {wall:.1f} s"
                     + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, failed


# -- 2 --------------------------------------------------------------------------------

def test_criterion2_overtake(scenario1, criterion):
    cfg, log, _ = scenario1
    k = overtake_step(log)
    ok = k is not None and log.states[k, 0] < cfg.s_lc
    if k is None:
        detail = f"s1 - s2 never turns positive (final {log.states[-1, 0] - log.states[-1, 2]:.2f} m)"
    else:
        detail = f"flip at step {k}, s1 = {log.states[k, 0]:.2f} m vs s_LC = {cfg.s_lc} m"
    criterion(2, ok, detail)
    assert ok, detail


# -- 3 --------------------------------------------------------------------------------

def test_criterion3_cost_table(cost_table, criterion):
    runs, wall = cost_table
    costs = {key: cumulative_costs(log) for key, (_, log) in runs.items()}
    problems = []
    for key, (cfg, log) in runs.items():
        if not log.feasible:
            problems.append(f"{key} infeasible")
    for N in (4, 6):
        stage = [costs[(N, g)][2] for g in sorted(TABLE_GAMMAS, reverse=True)]
        if not all(a > b for a, b in zip(stage, stage[1:])):
            problems.append(f"N={N} stage costs not strictly decreasing: {np.round(stage, 2).tolist()}")
    red = {N: 1.0 - costs[(N, 0.05)][1] / costs[(N, 0.6)][1] for N in (4, 6)}
    if not 0.40 <= red[4] <= 0.70:
        problems.append(f"N=4 actuation reduction {red[4]:.1%}")
    if not 0.30 <= red[6] <= 0.60:
        problems.append(f"N=6 actuation reduction {red[6]:.1%}")
    dev = {key: costs[key][2] / ref - 1.0 for key, ref in REFERENCE_STAGE_COST.items()}
    problems += [f"{key} stage cost off by {d:+.1%}" for key, d in dev.items() if abs(d) > 0.15]
    if wall > 600.0:
        problems.append(f"runtime {wall:.0f} s")
    ok = not problems
    criterion(3, ok, f"actuation reduction N=4 {red[4]:.1%}, N=6 {red[6]:.1%}; "
                     f"max stage-cost deviation {max(abs(d) for d in dev.values()):.1%}; {wall:.0f} s"
                     + (f"; {'; '.join(problems)}" if problems else ""))
    assert ok, problems


# -- 4 --------------------------------------------------------------------------------

def test_criterion4_least_input_bounds(criterion):
    cfg = load_bundled("scenario2")
    jobs = resolve_jobs(None)
    t0 = time.perf_counter()
    bounds = {}
    for mode in ("qdtcbf", "dtcbf"):
        for g in BOUND_GAMMAS:
            bounds[(mode, g)] = least_input_bound(mode, g, cfg.verify, bisection_tol=0.05, domain=cfg.domain,
                                                  tol=cfg.verifier_tol, budget=cfg.verifier_budget, jobs=jobs)
    wall = time.perf_counter() - t0
    q = [bounds[("qdtcbf", g)] for g in BOUND_GAMMAS]
    d = [bounds[("dtcbf", g)] for g in BOUND_GAMMAS]
    problems = []
    if not all(a <= b for a, b in zip(q, q[1:])):
        problems.append("qdtcbf bounds not nondecreasing")
    if not 1.1 <= bounds[("qdtcbf", 0.05)] <= 1.7:
        problems.append(f"qdtcbf(0.05) = {bounds[('qdtcbf', 0.05)]:.3f}")
    if not 4.4 <= bounds[("qdtcbf", 0.6)] <= 5.2:
        problems.append(f"qdtcbf(0.6) = {bounds[('qdtcbf', 0.6)]:.3f}")
    if not all(7.3 <= b <= 8.5 for b in d):
        problems.append(f"dtcbf outside [7.3, 8.5]: {np.round(d, 3).tolist()}")
    if not max(d) - min(d) < 0.3:
        problems.append(f"dtcbf spread {max(d) - min(d):.3f}")
    if not all(a >= b for a, b in zip(d, q)):
        problems.append("dtcbf < qdtcbf somewhere")
    if wall > 1800.0:
        problems.append(f"runtime {wall:.0f} s with {jobs} job(s)")
    ok = not problems
    criterion(4, ok, f"qdtcbf {np.round(q, 2).tolist()}, dtcbf {np.round(d, 2).tolist()}, {wall:.0f} s"
                     + (f"; {'; '.join(problems)}" if problems else ""))
    assert ok, problems


# -- 5 --------------------------------------------------------------------------------

ORACLE_S = (-120.0, -40.0)
ORACLE_V = (0.0, 14.5)
# (gamma_d, symmetric input bound) pairs on both sides of the gamma_d = 0.6 boundary
ORACLE_SETTINGS = [(0.4, 4.8), (0.5, 4.8), (0.55, 4.8), (0.6, 4.8), (0.65, 4.8), (0.7, 4.8), (0.8, 4.8),
                   (0.6, 4.5), (0.6, 5.2), (0.6, 5.5)]


def grid_oracle(params, s_step=0.5, v_step=0.25):
    """Most negative two-step gap over feasible points of the dense grid."""
    s = np.arange(ORACLE_S[0], ORACLE_S[1] + 1e-9, s_step)
    v = np.arange(ORACLE_V[0], ORACLE_V[1] + 1e-9, v_step)
    S2, V1, V2 = np.meshgrid(s, v, v, indexing="ij")
    worst = np.inf
    for s1 in s:
        gap, one, h0, dv = (np.asarray(t, float) for t in two_step_terms([np.full(S2.shape, s1), V1, S2, V2],
                                                                          params))
        feas = (one >= -FEAS_TOL) & (h0 >= -FEAS_TOL) & (dv >= -FEAS_TOL)
        if feas.any():
            worst = min(worst, float(gap[feas].min()))
    return worst


def test_criterion5_verifier_matches_grid_oracle(criterion):
    base = load_bundled("scenario2").verify
    dom = Box.from_bounds(ORACLE_S, ORACLE_V)
    rows, unsound, mismatch = [], 0, 0
    for g, b in ORACLE_SETTINGS:
        p = base.with_gamma_d(g).with_symmetric_bound(b)
        rep = verify_qdtcbf(p, dom, tol=TOL)
        worst = grid_oracle(p)
        grid_violates = worst < -10 * TOL
        if rep.verdict == CERTIFIED and grid_violates:
            unsound += 1
        agree = (rep.verdict == FALSIFIED) == grid_violates and rep.verdict != INCONCLUSIVE
        mismatch += not agree
        rows.append(f"g={g} U={b}: {rep.verdict} / grid min {worst:.2e}")
    ok = unsound == 0 and mismatch == 0
    criterion(5, ok, f"{len(rows) - mismatch}/{len(rows)} verdicts match, {unsound} unsound; " + "; ".join(rows))
    assert ok, rows


# -- 6 --------------------------------------------------------------------------------

def test_criterion6_numerical_hygiene(scenario1, cost_table, stress, criterion):
    rng = np.random.default_rng(6)
    grad_err = gradient_check(rng, n=100)
    encl_fail = interval_containment_failures(rng, n=1000)
    logs = [scenario1[1]] + [log for _, log in cost_table[0].values()] + list(stress[2])
    kkt = [float(k) for log in logs for k, st in zip(log.kkt, log.status) if st == "converged"]
    worst_kkt = max(kkt)
    ok = grad_err <= 1e-6 and encl_fail == 0 and worst_kkt <= 1e-6
    criterion(6, ok, f"gradient rel err {grad_err:.2e}, enclosure failures {encl_fail}, "
                     f"max KKT residual {worst_kkt:.2e} over {len(kkt)} converged solves")
    assert ok


# -- 7 --------------------------------------------------------------------------------

def test_criterion7_recursive_feasibility(stress, criterion):
    _, starts, logs = stress
    bad = [(i, log.failed_step) for i, log in enumerate(logs) if not log.feasible]
    steps = sum(log.n_steps for log in logs)
    ok = len(starts) == 100 and not bad and all(log.n_steps == 100 for log in logs)
    criterion(7, ok, f"{len(logs)} runs, {steps} MPC steps, {len(bad)} infeasible"
                     + (f" (run, step): {bad[:5]}" if bad else ""))
    assert ok, bad
