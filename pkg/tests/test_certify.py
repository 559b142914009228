import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbfmpc.certify import (CERTIFIED, FALSIFIED, INCONCLUSIVE, VerifyParams, admissible_inputs, kappa,
                            least_input_bound, two_step_gap, two_step_terms, verify_dtcbf, verify_qdtcbf)
from cbfmpc.config import load_bundled
from cbfmpc.errors import InvalidParameterError
from cbfmpc.interval import Box
from cbfmpc.ocp import CertificateParams
from cbfmpc.safety import delta_v, h_d

FEAS_TOL = 1e-8


@pytest.fixture(scope="module")
def s2params():
    return load_bundled("scenario2").verify


@pytest.fixture(scope="module")
def s1params():
    return load_bundled("scenario1").verify


def assert_genuine(rep, params):
    """A falsified report must carry a state that violates on direct evaluation."""
    assert rep.verdict == FALSIFIED and rep.counterexample is not None
    x = [float(c) for c in rep.counterexample]
    assert rep.domain.contains(x)
    if rep.mode == "qdtcbf":
        gap, one, h0, dv = two_step_gap(x, params)
        assert gap < -rep.tol
        assert min(one, h0, dv) >= -FEAS_TOL
        assert gap == pytest.approx(rep.counterexample_gap, rel=1e-9, abs=1e-12)
    else:
        assert h_d(x, params.cert.pN, params.safety) >= -FEAS_TOL
        assert delta_v(x, params.safety.m_lf) - params.cert.dv_min >= -FEAS_TOL
        assert rep.counterexample_gap < -rep.tol


# -- policy ---------------------------------------------------------------------

def test_kappa_agent2_leads():
    u = kappa((-200.0, 13.0, -100.0, 12.5), gamma_v=0.8, v_max=15.0, input_bounds=((-3, 3), (-3, 3)))
    assert u.a1 == pytest.approx(-3.0, abs=1e-12)
    assert u.a2 == pytest.approx(3.0, abs=1e-12)


def test_kappa_velocity_ceiling_zeroes_leader():
    u = kappa((-200.0, 10.0, -100.0, 15.0), gamma_v=0.8, v_max=15.0, input_bounds=((-3, 3), (-3, 3)))
    assert u.a2 == pytest.approx(0.0, abs=1e-12)


def test_kappa_standstill_follower_cannot_brake():
    # at v1 = 0 the velocity certificate forbids any deceleration
    u = kappa((-200.0, 0.0, -100.0, 5.0), gamma_v=0.8, v_max=15.0, input_bounds=((-3, 3), (-3, 3)))
    assert u.a1 == pytest.approx(0.0, abs=1e-12)


def test_kappa_side_by_side_blend_is_finite():
    u = kappa((-50.0, 0.0, -50.0, 0.0), gamma_v=0.8, v_max=15.0, input_bounds=((-3, 3), (-3, 3)))
    assert math.isfinite(u.a1) and math.isfinite(u.a2)
    assert -3 <= u.a1 <= 3 and -3 <= u.a2 <= 3


vel = st.floats(0.0, 15.0)
pos = st.floats(-300.0, 100.0)
bound = st.floats(0.1, 10.0)


@given(pos, vel, pos, vel, bound, bound)
def test_kappa_within_admissible_box(s1, v1, s2, v2, b1, b2):
    ib = ((-b1, b1), (-b2, b2))
    u = kappa((s1, v1, s2, v2), 0.8, 15.0, ib)
    for a, v, (lo, hi) in ((u.a1, v1, ib[0]), (u.a2, v2, ib[1])):
        alo, ahi = admissible_inputs(v, (lo, hi), 0.8, 15.0, 0.1)
        assert lo - 1e-12 <= a <= hi + 1e-12
        assert alo - 1e-9 <= a <= ahi + 1e-9


# -- two-step gap -----------------------------------------------------------------

def test_gap_positive_for_diverging_agents_upstream(s2params):
    gap, one, h0, dv = two_step_gap((-200.0, 13.0, -150.0, 13.0), s2params)
    assert h0 > 0 and one > 0 and gap > 0
    # far upstream the activation is negligible and h is nearly the squared gap
    assert h0 == pytest.approx(50.0 ** 2, rel=1e-3)


def test_gap_flags_state_outside_safe_set(s2params):
    _, _, h0, _ = two_step_gap((-60.0, 13.0, -59.0, 13.0), s2params)
    assert h0 < 0


def test_gap_velocity_floor_residual_zero_at_boundary(s2params):
    x = (-120.0, 11.0, -110.0, 13.0)
    dv = float(delta_v(x, s2params.safety.m_lf))
    p = VerifyParams(safety=s2params.safety, cert=CertificateParams(gamma_d=0.6, pN=s2params.cert.pN, dv_min=dv),
                     input_bounds=s2params.input_bounds, v_max=s2params.v_max)
    assert two_step_gap(x, p)[3] == 0.0


# -- verdicts -----------------------------------------------------------------------

def test_single_point_domain_certifies_in_one_node(s2params):
    x = (-200.0, 13.0, -150.0, 14.0)
    gap, *residuals = two_step_gap(x, s2params)
    assert gap > 0 and min(residuals) > 0
    rep = verify_qdtcbf(s2params, Box(x, x))
    assert rep.verdict == CERTIFIED and rep.nodes_explored == 1
    assert not rep.vacuous


def test_empty_feasible_set_is_vacuous(s2params):
    # agents overlap everywhere in this box, so h < 0 throughout
    dom = Box((-100.0, 5.0, -100.0, 5.0), (-99.0, 6.0, -99.0, 6.0))
    for verify in (verify_qdtcbf, verify_dtcbf):
        rep = verify(s2params, dom)
        assert rep.verdict == CERTIFIED and rep.vacuous


def test_budget_exhaustion_is_inconclusive(s2params):
    # certifiable with enough nodes, so the small budget is what stops it
    rep = verify_qdtcbf(s2params.with_symmetric_bound(5.5), budget=10)
    assert rep.verdict == INCONCLUSIVE and rep.nodes_explored <= 10
    assert rep.counterexample is None


def test_qdtcbf_falsified_beyond_boundary(s2params):
    p = s2params.with_gamma_d(0.9)
    rep = verify_qdtcbf(p)
    assert_genuine(rep, p)


def test_qdtcbf_certified_with_margin(s2params):
    p = s2params.with_symmetric_bound(5.5)
    rep = verify_qdtcbf(p)
    assert rep.verdict == CERTIFIED
    assert rep.certified_lower_bound >= -rep.tol


def test_qdtcbf_scenario1_parameters_certify(s1params):
    dom = Box.from_bounds((-200.0, 50.0), (0.0, 15.0))
    rep = verify_qdtcbf(s1params, dom)
    assert rep.verdict == CERTIFIED


def test_dtcbf_falsified_with_small_inputs(s2params):
    p = s2params.with_symmetric_bound(3.0)
    rep = verify_dtcbf(p)
    assert_genuine(rep, p)


@pytest.mark.slow
def test_dtcbf_certified_with_large_inputs(s2params):
    rep = verify_dtcbf(s2params.with_symmetric_bound(8.5))
    assert rep.verdict == CERTIFIED


def test_velocity_domain_must_respect_v_max(s2params):
    with pytest.raises(InvalidParameterError):
        verify_qdtcbf(s2params, Box.from_bounds((-100.0, -50.0), (0.0, 20.0)))


def test_parallel_verdict_matches_serial(s2params):
    p = s2params.with_gamma_d(0.9)
    dom = Box.from_bounds((-130.0, -90.0), (0.0, 14.5))
    serial = verify_qdtcbf(p, dom)
    par = verify_qdtcbf(p, dom, jobs=2)
    assert serial.verdict == par.verdict == FALSIFIED
    assert_genuine(par, p)


def grid_violations(params, s_range, v_range, s_step, v_step, tol):
    """Feasible grid points whose two-step gap is below ``-10 tol``."""
    s = np.arange(s_range[0], s_range[1] + 1e-9, s_step)
    v = np.arange(v_range[0], v_range[1] + 1e-9, v_step)
    bad = 0
    for s1 in s:
        S2, V1, V2 = np.meshgrid(s, v, v, indexing="ij")
        x = [np.full(S2.shape, s1), V1, S2, V2]
        gap, one, h0, dv = (np.asarray(t, dtype=float) for t in two_step_terms(x, params))
        feas = (one >= -FEAS_TOL) & (h0 >= -FEAS_TOL) & (dv >= -FEAS_TOL)
        bad += int(np.count_nonzero(feas & (gap < -10 * tol)))
    return bad


@pytest.mark.parametrize("gamma_d", [0.3, 0.9])
def test_verdict_agrees_with_grid_oracle(s2params, gamma_d):
    p = s2params.with_gamma_d(gamma_d)
    s_range, v_range = (-115.0, -100.0), (10.0, 14.5)
    dom = Box.from_bounds(s_range, v_range)
    rep = verify_qdtcbf(p, dom)
    bad = grid_violations(p, s_range, v_range, 0.5, 0.25, rep.tol)
    if bad:
        assert rep.verdict == FALSIFIED
    assert rep.verdict != INCONCLUSIVE


# -- bisection ------------------------------------------------------------------------

def test_least_input_bound_rejects_bad_bracket(s2params):
    with pytest.raises(InvalidParameterError):
        least_input_bound("qdtcbf", 0.6, s2params, bracket=(8.0, 10.0))
    with pytest.raises(InvalidParameterError):
        least_input_bound("qdtcbf", 0.6, s2params, bracket=(3.0, 2.0))


def test_least_input_bound_brackets_threshold(s2params):
    tol = 0.2
    b = least_input_bound("qdtcbf", 0.6, s2params, bisection_tol=tol)
    assert verify_qdtcbf(s2params.with_symmetric_bound(b - tol)).verdict != CERTIFIED
    assert verify_qdtcbf(s2params.with_symmetric_bound(b + tol / 2)).verdict == CERTIFIED
