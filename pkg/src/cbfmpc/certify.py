"""Global verification of distance certificates by interval branch and bound.

Two conditions are checked over a compact box of lumped states:

* ``qdtcbf``: under the fixed policy ``kappa`` every state satisfying the
  one-step certificate, ``h >= 0`` and the relative-velocity floor also
  satisfies the certificate one step later (two-step gap ``>= 0``).
* ``dtcbf``: every state with ``h >= 0`` (and the same velocity floor) admits
  an input keeping ``h(f(x, u)) >= (1 - gamma) h(x)``. Inputs range over the
  velocity-admissible box, i.e. inputs that keep the velocity certificates
  satisfiable.

Bounds combine the natural interval extension with a mean-value form whose
gradient enclosure comes from dual numbers carrying interval values.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .ad import Dual
from .dynamics import ControlInput, LumpedState, step_components, step_relative
from .errors import InvalidParameterError
from .interval import Box, Interval, imax, imin
from .ocp import CertificateParams, OcpConfig
from .safety import RelativeCoords, SafetyParams, delta_v, h_d, logistic_Llf, parts

log = logging.getLogger(__name__)

CERTIFIED = "certified"
FALSIFIED = "falsified"
INCONCLUSIVE = "inconclusive"

FEAS_TOL = 1e-8
V_SCALE = 10.0  # metres per m/s when choosing the split dimension
# Lagrangian relaxations: on feasible states an objective term is bounded
# below by ``term - lam * residual`` for any constraint residual >= 0 and
# lam >= 0. For qdtcbf (residual: one-step certificate) lam near 1 turns the
# gap into nearly a second difference of h; for dtcbf (residual: h) lam =
# gamma_d turns each margin into the one-step difference h(x+) - h(x). Both
# have much smaller gradients over a box than the raw terms.
RELAX_LAMBDAS = (0.5, 1.0, 1.5)
DTCBF_RELAX_SCALES = (1.0,)  # multiples of gamma_d


@dataclass(frozen=True)
class VerifyParams:
    """Everything the certificate checks depend on."""

    safety: SafetyParams = field(default_factory=lambda: SafetyParams(v_max=14.5))
    cert: CertificateParams = field(default_factory=CertificateParams)
    input_bounds: tuple = ((-4.8, 4.8), (-4.8, 4.8))
    v_max: float = 14.5
    Ts: float = 0.1

    def __post_init__(self):
        for lo, hi in self.input_bounds:
            if not lo <= 0.0 <= hi:
                raise InvalidParameterError(f"input bounds must satisfy lo <= 0 <= hi, got ({lo}, {hi})")
        if not self.v_max > 0 or not self.Ts > 0:
            raise InvalidParameterError("v_max and Ts must be positive")

    @classmethod
    def from_ocp(cls, cfg: OcpConfig) -> "VerifyParams":
        return cls(safety=cfg.safety, cert=cfg.cert, input_bounds=tuple(map(tuple, cfg.input_bounds)),
                   v_max=cfg.v_max, Ts=cfg.Ts)

    def with_symmetric_bound(self, b: float) -> "VerifyParams":
        return replace(self, input_bounds=((-b, b), (-b, b)))

    def with_gamma_d(self, g: float) -> "VerifyParams":
        return replace(self, cert=replace(self.cert, gamma_d=g))

    def default_domain(self) -> Box:
        return Box.from_bounds((-250.0, 60.0), (0.0, self.v_max))

    def to_dict(self) -> dict:
        sp, ce = self.safety, self.cert
        return {
            "gamma_d": ce.gamma_d, "gamma_v": ce.gamma_v, "pN": [ce.pN.m_d, ce.pN.c_d],
            "dv_min": ce.dv_min, "input_bounds": [list(b) for b in self.input_bounds],
            "v_max": self.v_max, "Ts": self.Ts, "d0": sp.d0, "t_h": sp.t_h, "m_lf": sp.m_lf,
        }


@dataclass
class VerificationReport:
    verdict: str
    counterexample: Optional[LumpedState]
    certified_lower_bound: Optional[float]
    nodes_explored: int
    wall_time: float
    mode: str = "qdtcbf"
    domain: Optional[Box] = None
    tol: float = 1e-6
    vacuous: bool = False
    counterexample_gap: Optional[float] = None
    params: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        cx = None if self.counterexample is None else [float(c) for c in self.counterexample]
        return {
            "verdict": self.verdict,
            "mode": self.mode,
            "counterexample": cx,
            "counterexample_gap": self.counterexample_gap,
            "certified_lower_bound": self.certified_lower_bound,
            "vacuous": self.vacuous,
            "nodes_explored": self.nodes_explored,
            "wall_time": self.wall_time,
            "tol": self.tol,
            "domain": None if self.domain is None else self.domain.to_dict(),
            "params": self.params,
            "notes": list(self.notes),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# -- policy and composed functions (generic over floats/arrays/duals/intervals) --

def admissible_inputs(v, bounds, gamma_v: float, v_max: float, Ts: float):
    """Interval of accelerations keeping both velocity certificates satisfiable."""
    lo, hi = bounds
    return imax(v * (-gamma_v / Ts), lo), imin((v_max - v) * (gamma_v / Ts), hi)


def _step(x, u, Ts):
    return step_relative(x, u, Ts) if isinstance(x, RelativeCoords) else step_components(x, u, Ts)


def kappa_components(x, vp: VerifyParams):
    ce = vp.cert
    _, v1, _, v2 = parts(x)
    lo1, hi1 = admissible_inputs(v1, vp.input_bounds[0], ce.gamma_v, vp.v_max, vp.Ts)
    lo2, hi2 = admissible_inputs(v2, vp.input_bounds[1], ce.gamma_v, vp.v_max, vp.Ts)
    L = logistic_Llf(x, vp.safety.m_lf)
    one_minus = 1.0 - L
    return L * lo1 + one_minus * hi1, L * hi2 + one_minus * lo2


def kappa(x, gamma_v: float, v_max: float, input_bounds, Ts: float = 0.1, m_lf: float = 10.0) -> ControlInput:
    """Leader at its largest and follower at its smallest admissible acceleration,
    blended by the smooth leader/follower indicator."""
    vp = VerifyParams(safety=SafetyParams(m_lf=m_lf, v_max=v_max),
                      cert=CertificateParams(gamma_v=gamma_v),
                      input_bounds=tuple(map(tuple, input_bounds)), v_max=v_max, Ts=Ts)
    a1, a2 = kappa_components([float(c) for c in x], vp)
    return ControlInput(float(a1), float(a2))


def _h(x, vp: VerifyParams):
    return h_d(x, vp.cert.pN, vp.safety)


def two_step_terms(x, vp: VerifyParams):
    """``(gap, one-step residual, h(x), dv - dv_min)`` under the policy."""
    g = 1.0 - vp.cert.gamma_d
    x1 = _step(x, kappa_components(x, vp), vp.Ts)
    x2 = _step(x1, kappa_components(x1, vp), vp.Ts)
    h0, h1, h2 = _h(x, vp), _h(x1, vp), _h(x2, vp)
    return h2 - g * h1, h1 - g * h0, h0, delta_v(x, vp.safety.m_lf) - vp.cert.dv_min


def two_step_gap(x, params: VerifyParams):
    """Two-step gap and the three constraint residuals at a single state."""
    xs = [float(c) for c in x]
    return tuple(float(t) for t in two_step_terms(xs, params))


def _policies(x, vp: VerifyParams):
    """Candidate feedback laws for the existential one-step check."""
    ce = vp.cert
    _, v1, _, v2 = parts(x)
    lo1, hi1 = admissible_inputs(v1, vp.input_bounds[0], ce.gamma_v, vp.v_max, vp.Ts)
    lo2, hi2 = admissible_inputs(v2, vp.input_bounds[1], ce.gamma_v, vp.v_max, vp.Ts)
    return [kappa_components(x, vp), (lo1, lo2), (lo1, hi2), (hi1, lo2), (hi1, hi2)]


def one_step_terms(x, vp: VerifyParams):
    """One-step certificate margins for each candidate policy, plus constraints."""
    g = 1.0 - vp.cert.gamma_d
    h0 = _h(x, vp)
    margins = [_h(_step(x, u, vp.Ts), vp) - g * h0 for u in _policies(x, vp)]
    return margins, h0, delta_v(x, vp.safety.m_lf) - vp.cert.dv_min


# -- bounding -----------------------------------------------------------------

def _mv_bounds(nat: Dual, at_mid: Interval, X: list, mid: np.ndarray):
    """Intersect the natural extension with the mean-value form.

    Also returns the smear ``max|grad_i| * width_i`` used to pick split axes.
    """
    mv = at_mid
    smear = np.empty((mid.shape[0], 4))
    for i in range(4):
        gi = nat.partials[..., i]
        mv = mv + gi * (X[i] - mid[:, i])
        smear[:, i] = np.maximum(np.abs(gi.lo), np.abs(gi.hi)) * X[i].width
    lo = np.maximum(nat.value.lo, mv.lo)
    hi = np.minimum(nat.value.hi, mv.hi)
    return lo, hi, smear


def _bound_batch(fn, lo: np.ndarray, hi: np.ndarray):
    """Evaluate ``fn`` over boxes; returns ``(lower, upper, smear)`` per output
    and the float values at the midpoints."""
    mid = 0.5 * (lo + hi)
    X = [Interval._raw(lo[:, i].copy(), hi[:, i].copy()) for i in range(4)]
    nat_out = fn(Dual.variables(X))
    mid_out = fn([Interval.point(mid[:, i]) for i in range(4)])
    pt_out = fn([mid[:, i] for i in range(4)])
    bounds = []
    for nat, mo in zip(_flatten(nat_out), _flatten(mid_out)):
        bounds.append(_mv_bounds(nat, mo, X, mid))
    return bounds, [np.asarray(p, dtype=float) for p in _flatten(pt_out)], mid


def _flatten(out):
    flat = []
    for o in out:
        if isinstance(o, list):
            flat.extend(o)
        else:
            flat.append(o)
    return flat


# -- counterexample search ----------------------------------------------------

def to_relative(x) -> np.ndarray:
    x = np.asarray(list(x), dtype=float)
    return np.array([x[0], x[1], x[2] - x[0], x[3]])


def to_absolute(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.array([y[0], y[1], y[0] + y[2], y[3]])


class _Problem:
    """Mode-specific glue: bounding, point tests and local descent.

    Boxes live in relative coordinates ``(s1, v1, d, v2)``; the position range
    of agent 2 becomes two extra linear constraints on ``s1 + d``.
    """

    def __init__(self, mode: str, vp: VerifyParams, tol: float, domain: Box):
        self.mode = mode
        self.vp = vp
        self.tol = tol
        self.domain = domain
        s2_lo, s2_hi = domain.lo[2], domain.hi[2]
        if mode == "qdtcbf":
            terms = two_step_terms
            self.k = 1
            lams = RELAX_LAMBDAS
        elif mode == "dtcbf":
            terms = one_step_terms
            self.k = 5
            lams = tuple(c * vp.cert.gamma_d for c in DTCBF_RELAX_SCALES)
        else:
            raise ValueError(f"unknown verification mode {mode!r}")
        self.terms = terms
        k = self.k
        # the residual multiplied into the relaxation is the first constraint
        self.n_relaxed = k * len(lams)

        def fn(y):
            out = _flatten(terms(RelativeCoords(*y), vp))
            s2 = y[0] + y[2]
            return out + [s2 - s2_lo, s2_hi - s2]

        def bound_fn(y):
            out = fn(y)
            res = out[k]
            relaxed = [t - lam * res for t in out[:k] for lam in lams]
            return out[:k] + relaxed + out[k:]

        self.fn = fn
        self.bound_fn = bound_fn if lams else fn

    def root_box(self):
        lo, hi = np.asarray(self.domain.lo, float), np.asarray(self.domain.hi, float)
        rlo = np.array([lo[0], lo[1], lo[2] - hi[0], lo[3]])
        rhi = np.array([hi[0], hi[1], hi[2] - lo[0], hi[3]])
        return rlo, rhi

    def classify(self, lo, hi):
        """Per box: infeasible and certified masks, objective lower bounds and
        the objective/feasibility of the float midpoints."""
        bounds, pts, mid = _bound_batch(self.bound_fn, lo, hi)
        k = self.k
        nk = k + self.n_relaxed
        # every entry of obj is a valid lower bound source for the objective
        # over the feasible part of the box
        obj, cons = bounds[:nk], bounds[nk:]
        pts = pts[:k] + pts[nk:]
        n = lo.shape[0]
        infeasible = np.zeros(n, bool)
        for _, c_hi, _ in cons:
            infeasible |= c_hi < 0
        if nk == 1:
            obj_lo, obj_hi, obj_sm = obj[0]
        else:
            los = np.stack([o[0] for o in obj])
            best = np.argmax(los, axis=0)
            r = np.arange(n)
            obj_lo = los[best, r]
            obj_hi = np.stack([o[1] for o in obj])[best, r]
            obj_sm = np.stack([o[2] for o in obj])[best, r]
        certified = ~infeasible & (obj_lo >= -self.tol)
        # split guidance: relative smear of the objective and of undecided
        # constraints. The two trailing domain constraints are linear, so their
        # relative smear never shrinks; boxes on the domain edge would then be
        # split along s1 and d forever. They are left out.
        tiny = 1e-300
        smear = obj_sm / (obj_hi - obj_lo + tiny)[:, None]
        for c_lo, c_hi, c_sm in cons[:-2]:
            open_c = (c_lo < 0) & (c_hi >= 0)
            smear = smear + np.where(open_c[:, None], c_sm / (c_hi - c_lo + tiny)[:, None], 0.0)
        pt_obj = pts[0] if k == 1 else np.max(np.stack(pts[:k]), axis=0)
        pt_feas = np.ones(lo.shape[0], bool)
        for c in pts[k:]:
            pt_feas &= c >= -FEAS_TOL
        return infeasible, certified, obj_lo, pt_obj, pt_feas, mid, smear

    def is_counterexample(self, y) -> Optional[tuple]:
        """``(absolute state, gap)`` if ``y`` is a genuine violation, else None.

        The check runs in absolute coordinates so the returned state is exactly
        what a caller re-evaluating it will see.
        """
        x = to_absolute(y)
        if not self.domain.contains(x):
            return None
        terms = [float(t) for t in _flatten(self.terms([float(c) for c in x], self.vp))]
        k = self.k
        if any(not math.isfinite(t) for t in terms):
            return None
        if any(c < -FEAS_TOL for c in terms[k:]):
            return None
        if self.mode == "qdtcbf":
            return (x, terms[0]) if terms[0] < -self.tol else None
        gap = self._dtcbf_refute(x)
        return None if gap is None else (x, gap)

    def _dtcbf_refute(self, x) -> Optional[float]:
        """Prove that no admissible input meets the one-step certificate at ``x``.

        Runs a small interval branch and bound over the input box and returns an
        upper bound on the best achievable margin if it is below ``-tol``.
        """
        vp = self.vp
        ce = vp.cert
        x = [float(c) for c in x]
        lo1, hi1 = admissible_inputs(x[1], vp.input_bounds[0], ce.gamma_v, vp.v_max, vp.Ts)
        lo2, hi2 = admissible_inputs(x[3], vp.input_bounds[1], ce.gamma_v, vp.v_max, vp.Ts)
        if lo1 > hi1 or lo2 > hi2:
            return None
        g = 1.0 - ce.gamma_d
        h0 = float(_h(x, vp))
        target = g * h0 - self.tol

        ulo = np.array([[lo1, lo2]])
        uhi = np.array([[hi1, hi2]])
        best_upper = -np.inf
        for _ in range(200):
            if ulo.shape[0] == 0:
                return best_upper - g * h0
            n = ulo.shape[0]
            U = [Interval._raw(ulo[:, i].copy(), uhi[:, i].copy()) for i in range(2)]
            xs = [Interval.point(np.full(n, c)) for c in x]
            up = _h(step_components(xs, U, vp.Ts), vp).hi
            umid = 0.5 * (ulo + uhi)
            pt = _h(step_components(x, (umid[:, 0], umid[:, 1]), vp.Ts), vp)
            if np.any(pt >= target):
                return None
            keep = up >= target
            best_upper = max(best_upper, float(np.max(up[~keep], initial=-np.inf)))
            ulo, uhi, umid = ulo[keep], uhi[keep], umid[keep]
            if ulo.shape[0] > 20000:
                return None
            d = np.argmax(uhi - ulo, axis=1)
            r = np.arange(ulo.shape[0])
            hi_a = uhi.copy()
            hi_a[r, d] = umid[r, d]
            lo_b = ulo.copy()
            lo_b[r, d] = umid[r, d]
            ulo = np.vstack([ulo, lo_b])
            uhi = np.vstack([hi_a, uhi])
        return None

    def descend(self, y0, lo, hi) -> Optional[np.ndarray]:
        """Local search for a violating feasible state starting at ``y0``."""
        k = self.k
        ev = _PointCache(self.fn)
        m = ev(y0)[0].size
        bounds = list(zip(lo, hi))
        opts = {"maxiter": 40, "ftol": 1e-12}
        if k == 1:
            cons = [{"type": "ineq", "fun": lambda z: ev(z)[0][1:], "jac": lambda z: ev(z)[1][1:]}]
            try:
                with warnings.catch_warnings():
                    # SLSQP may step marginally outside the bounds; the result is clipped
                    warnings.simplefilter("ignore", RuntimeWarning)
                    res = minimize(lambda z: ev(z)[0][0], np.asarray(y0, float), jac=lambda z: ev(z)[1][0],
                                   method="SLSQP", bounds=bounds, constraints=cons, options=opts)
            except (ValueError, FloatingPointError):
                return None
            return np.clip(res.x, lo, hi)
        # epigraph form: min t s.t. t >= margin_p for every candidate policy
        e5 = np.eye(5)[4]

        def epi(w):
            v, J = ev(w[:4])
            return np.concatenate([w[4] - v[:k], v[k:]])

        def epi_jac(w):
            v, J = ev(w[:4])
            top = np.hstack([-J[:k], np.ones((k, 1))])
            bot = np.hstack([J[k:], np.zeros((m - k, 1))])
            return np.vstack([top, bot])

        w0 = np.append(np.asarray(y0, dtype=float), np.max(ev(y0)[0][:k]))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(lambda w: w[4], w0, jac=lambda w: e5, method="SLSQP",
                               bounds=bounds + [(None, None)],
                               constraints=[{"type": "ineq", "fun": epi, "jac": epi_jac}], options=opts)
        except (ValueError, FloatingPointError):
            return None
        return np.clip(res.x[:4], lo, hi)


class _PointCache:
    """Values and Jacobian of all outputs at one point, memoized on the last query."""

    def __init__(self, fn):
        self.fn = fn
        self.key = None
        self.val = None

    def __call__(self, z):
        z = np.asarray(z, dtype=float)[:4]
        key = z.tobytes()
        if key != self.key:
            out = _flatten(self.fn(Dual.variables([np.float64(c) for c in z])))
            vals = np.array([float(o.value) if isinstance(o, Dual) else float(o) for o in out])
            jac = np.array([np.asarray(o.partials, dtype=float) if isinstance(o, Dual) else np.zeros(4)
                            for o in out])
            self.key, self.val = key, (vals, jac)
        return self.val


# -- branch and bound driver --------------------------------------------------

def _split(lo, hi, smear=None):
    """Bisect each box; along the largest smear ``|grad| * width`` when given,
    otherwise along the widest scaled dimension."""
    w = (hi - lo) * np.array([1.0, V_SCALE, 1.0, V_SCALE])
    if smear is not None:
        ok = np.isfinite(smear).all(axis=1) & (smear.max(axis=1) > 0)
        w = np.where(ok[:, None], smear, w)
    d = np.argmax(w, axis=1)
    r = np.arange(lo.shape[0])
    m = 0.5 * (lo[r, d] + hi[r, d])
    hi_a = hi.copy()
    hi_a[r, d] = m
    lo_b = lo.copy()
    lo_b[r, d] = m
    return np.vstack([lo, lo_b]), np.vstack([hi_a, hi])


def _run_bnb(mode: str, vp: VerifyParams, domain: Box, tol: float, budget: int,
             batch: int = 2048, max_descents: int = 60) -> VerificationReport:
    t0 = time.perf_counter()
    prob = _Problem(mode, vp, tol, domain)
    dom_lo, dom_hi = prob.root_box()
    # open boxes kept in a heap keyed by their parent's objective lower bound
    heap: list = []
    counter = 0
    heapq.heappush(heap, (-np.inf, counter, dom_lo.copy(), dom_hi.copy()))
    nodes = 0
    cert_bound = np.inf
    descents = 0
    batches = 0
    tried = set()
    any_feasible = False

    def report(verdict, cx=None, gap=None, notes=()):
        vac = verdict == CERTIFIED and not any_feasible
        return VerificationReport(
            verdict=verdict,
            counterexample=None if cx is None else LumpedState.from_array(cx),
            certified_lower_bound=(None if verdict != CERTIFIED or not math.isfinite(cert_bound)
                                   else float(cert_bound)),
            nodes_explored=nodes, wall_time=time.perf_counter() - t0, mode=mode, domain=domain,
            tol=tol, vacuous=vac, counterexample_gap=gap, params=vp.to_dict(), notes=list(notes),
        )

    while heap:
        if nodes >= budget:
            return report(INCONCLUSIVE, notes=[f"node budget {budget} exhausted with {len(heap)} open boxes"])
        take = min(batch, len(heap), budget - nodes)
        items = [heapq.heappop(heap) for _ in range(take)]
        lo = np.array([it[2] for it in items])
        hi = np.array([it[3] for it in items])
        nodes += take
        infeasible, certified, obj_lo, pt_obj, pt_feas, mid, smear = prob.classify(lo, hi)
        if np.any(~infeasible):
            any_feasible = True
        if np.any(certified):
            cert_bound = min(cert_bound, float(np.min(obj_lo[certified])))
        # direct check of the midpoints
        cand = np.flatnonzero(pt_feas & (pt_obj < -tol) & ~infeasible)
        for i in cand[np.argsort(pt_obj[cand])][:8]:
            found = prob.is_counterexample(mid[i])
            if found is not None:
                return report(FALSIFIED, *found)
        undecided = ~infeasible & ~certified
        # local descent from the most suspicious undecided midpoints: every
        # batch early on, then every tenth batch
        batches += 1
        if descents < max_descents and np.any(undecided) and (batches <= 10 or batches % 10 == 0):
            idx = np.flatnonzero(undecided)
            score = np.where(pt_feas[idx], pt_obj[idx], pt_obj[idx] + 1e3)
            for i in idx[np.argsort(score)][:2]:
                key = tuple(np.round(mid[i], 1))
                if key in tried:
                    continue
                tried.add(key)
                descents += 1
                z = prob.descend(mid[i], dom_lo, dom_hi)
                if z is not None:
                    found = prob.is_counterexample(z)
                    if found is not None:
                        return report(FALSIFIED, *found, notes=["found by local descent"])
        if np.any(undecided):
            clo, chi = _split(lo[undecided], hi[undecided], smear[undecided])
            keys = np.concatenate([obj_lo[undecided]] * 2)
            for k in range(clo.shape[0]):
                counter += 1
                heapq.heappush(heap, (float(keys[k]), counter, clo[k], chi[k]))
    return report(CERTIFIED)


def _partition(domain: Box, n: int):
    """Split the domain into ``n`` slabs along the first position axis."""
    edges = np.linspace(domain.lo[0], domain.hi[0], n + 1)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        lo = list(domain.lo)
        hi = list(domain.hi)
        lo[0], hi[0] = float(a), float(b)
        out.append(Box(tuple(lo), tuple(hi)))
    return out


def _worker(args):
    return _run_bnb(*args)


def _verify(mode, params, domain, tol, budget, jobs):
    domain = params.default_domain() if domain is None else domain
    for i in (1, 3):
        if domain.lo[i] < 0 or domain.hi[i] > params.v_max:
            raise InvalidParameterError("velocity range of the domain must lie within [0, v_max]")
    if jobs <= 1:
        rep = _run_bnb(mode, params, domain, tol, budget)
    else:
        # independent sub-domains; verdicts combine deterministically
        t0 = time.perf_counter()
        slabs = _partition(domain, jobs)
        share = max(1, budget // jobs)
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reps = list(ex.map(_worker, [(mode, params, p, tol, share) for p in slabs]))
        rep = _combine(reps, domain, time.perf_counter() - t0)
    if mode == "qdtcbf":
        rep.notes.append("inputs fixed to the policy at both steps")
    else:
        rep.notes.append("inputs range over the velocity-admissible box")
    return rep


def _combine(reps, domain, wall):
    nodes = sum(r.nodes_explored for r in reps)
    for r in reps:
        if r.verdict == FALSIFIED:
            out = replace(r)
            break
    else:
        inc = [r for r in reps if r.verdict == INCONCLUSIVE]
        out = replace(inc[0] if inc else reps[0])
        if not inc:
            bounds = [r.certified_lower_bound for r in reps if r.certified_lower_bound is not None]
            out.certified_lower_bound = min(bounds) if bounds else None
            out.vacuous = all(r.vacuous for r in reps)
    out.nodes_explored = nodes
    out.wall_time = wall
    out.domain = domain
    return out


def verify_qdtcbf(params: VerifyParams, domain: Box | None = None, tol: float = 1e-6,
                  budget: int = 5_000_000, jobs: int = 1) -> VerificationReport:
    """Check the two-step condition of the distance certificate under the policy."""
    return _verify("qdtcbf", params, domain, tol, budget, jobs)


def verify_dtcbf(params: VerifyParams, domain: Box | None = None, tol: float = 1e-6,
                 budget: int = 5_000_000, jobs: int = 1) -> VerificationReport:
    """Check the one-step existential condition of the distance certificate."""
    return _verify("dtcbf", params, domain, tol, budget, jobs)


def least_input_bound(mode: str, gamma_d: float, params: VerifyParams, bisection_tol: float = 0.05,
                      bracket=(0.5, 10.0), domain: Box | None = None, tol: float = 1e-6,
                      budget: int = 5_000_000, jobs: int = 1, screen_budget: int = 50_000,
                      check_bracket: bool = True) -> float:
    """Smallest symmetric input bound for which the certificate verifies.

    Bisection on ``|u_lo| = |u_hi|``. Runs capped at ``screen_budget`` nodes
    narrow the bracket to a quarter of ``bisection_tol`` first; a falsified
    verdict is final at any budget, so only its lower end ``a`` is trusted.
    The full budget is then spent once, at ``a + bisection_tol``, which keeps
    the expensive run as far from the threshold as the tolerance allows.

    If that run falsifies, the bracket moves up and the screen budget grows to
    twice the nodes the counterexample took, so later screens can see it.

    The result is the midpoint of a bracket of width at most ``bisection_tol``
    whose upper end was certified and whose lower end was falsified (or could
    not be certified within ``budget``).
    """
    verify = {"qdtcbf": verify_qdtcbf, "dtcbf": verify_dtcbf}[mode]
    base = params.with_gamma_d(gamma_d)

    def run(b, nodes):
        rep = verify(base.with_symmetric_bound(b), domain, tol, nodes, jobs)
        log.info("%s gamma_d=%.3f bound=%.4f budget=%d -> %s (%d nodes, %.1fs)", mode, gamma_d, b,
                 nodes, rep.verdict, rep.nodes_explored, rep.wall_time)
        return rep

    lo, hi = map(float, bracket)
    if not 0 < lo < hi or not bisection_tol > 0:
        raise InvalidParameterError(f"need 0 < bracket[0] < bracket[1] and bisection_tol > 0, got {bracket}")
    if check_bracket and run(lo, budget).verdict != FALSIFIED:
        raise InvalidParameterError(f"lower bracket {lo} is not falsified")
    fine = bisection_tol / 4.0
    while True:
        a, b = lo, hi
        while b - a > fine:
            m = 0.5 * (a + b)
            if run(m, screen_budget).verdict == FALSIFIED:
                a = m
            else:
                b = m
        lo = a
        cand = min(lo + bisection_tol, hi)
        rep = run(cand, budget)
        if rep.verdict == CERTIFIED:
            return 0.5 * (lo + cand)
        if cand >= hi:
            raise InvalidParameterError(f"upper bracket {hi} does not certify within {budget} nodes")
        lo = cand
        if rep.verdict == FALSIFIED:
            screen_budget = min(budget, max(screen_budget, 2 * rep.nodes_explored))
