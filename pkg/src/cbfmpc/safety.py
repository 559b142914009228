"""Constraint functions for lane merging and their derivatives.

Every function takes the lumped state as any 4-sequence ``(s1, v1, s2, v2)``
whose entries may be floats, numpy arrays (batched evaluation), :class:`Dual`
numbers or :class:`Interval` s. The same code therefore serves the SQP solver
(values and exact gradients) and the verifier (enclosures).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ad import Dual
from .errors import InvalidParameterError
from .interval import EXP_CLAMP, Interval


@dataclass(frozen=True)
class ActivationParams:
    m_d: float
    c_d: float

    def __post_init__(self):
        if not self.m_d > 0:
            raise InvalidParameterError(f"activation slope m_d must be > 0, got {self.m_d}")


@dataclass(frozen=True)
class SafetyParams:
    d0: float = 5.0
    t_h: float = 1.0
    m_lf: float = 10.0
    p0: ActivationParams = field(default_factory=lambda: ActivationParams(0.4, -45.0))
    pN: ActivationParams = field(default_factory=lambda: ActivationParams(0.06, -75.0))
    eps_d: float = 0.0025
    v_max: float = 15.0

    def __post_init__(self):
        for name in ("d0", "t_h", "m_lf", "eps_d", "v_max"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0, got {getattr(self, name)}")


class RelativeCoords:
    """State in relative form ``(s1, v1, d, v2)`` with ``d = s2 - s1``.

    Interval evaluation in these coordinates avoids the dependency between the
    two agents' positions that makes ``s2 - s1`` over a box needlessly wide.
    """

    __slots__ = ("s1", "v1", "d", "v2")

    def __init__(self, s1, v1, d, v2):
        self.s1, self.v1, self.d, self.v2 = s1, v1, d, v2

    @classmethod
    def from_absolute(cls, x):
        return cls(x[0], x[1], x[2] - x[0], x[3])

    def to_absolute(self):
        return (self.s1, self.v1, self.s1 + self.d, self.v2)


def parts(x):
    """``(s1, v1, s2 - s1, v2)`` from an absolute 4-sequence or relative coordinates."""
    if isinstance(x, RelativeCoords):
        return x.s1, x.v1, x.d, x.v2
    return x[0], x[1], x[2] - x[0], x[3]


def sigmoid(z):
    if isinstance(z, (Dual, Interval)):
        return z.sigmoid()
    z = np.clip(z, -EXP_CLAMP, EXP_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def square(z):
    if isinstance(z, (Dual, Interval)):
        return z.square()
    return z * z


def h_vmin(v):
    return v


def h_vmax(v, v_max: float):
    return v_max - v


def logistic_Ld(x, p: ActivationParams):
    """Merge-zone activation, rising as agent 1 approaches the lane change."""
    return sigmoid(p.m_d * (parts(x)[0] - p.c_d))


def logistic_Llf(x, m_lf: float):
    """Close to 1 when agent 2 leads, close to 0 when agent 1 leads."""
    return sigmoid(m_lf * parts(x)[2])


def v_follower(x, m_lf: float):
    _, v1, _, v2 = parts(x)
    L = logistic_Llf(x, m_lf)
    return L * v1 + (1.0 - L) * v2


def d_safe_smooth(x, sp: SafetyParams):
    return sp.d0 + v_follower(x, sp.m_lf) * sp.t_h


def min_distance(x, p: ActivationParams, sp: SafetyParams):
    """Required gap ``L_d * d_safe`` under activation ``p``."""
    return logistic_Ld(x, p) * d_safe_smooth(x, sp)


def h_d(x, p: ActivationParams, sp: SafetyParams):
    """Squared-gap safety margin; nonnegative on the safe set."""
    return square(parts(x)[2]) - square(min_distance(x, p, sp))


def Lbar_d(x, p0: ActivationParams, pN: ActivationParams, eps_d: float):
    L0 = logistic_Ld(x, p0)
    LN = logistic_Ld(x, pN)
    return L0 * (1.0 + LN - L0 - eps_d)


def min_distance_interp(x, sp: SafetyParams, p0=None, pN=None):
    p0 = sp.p0 if p0 is None else p0
    pN = sp.pN if pN is None else pN
    return Lbar_d(x, p0, pN, sp.eps_d) * d_safe_smooth(x, sp)


def H_d(x, p0: ActivationParams, pN: ActivationParams, sp: SafetyParams):
    """Relaxed in-horizon safety margin using the interpolated activation."""
    return square(parts(x)[2]) - square(Lbar_d(x, p0, pN, sp.eps_d) * d_safe_smooth(x, sp))


def delta_v(x, m_lf: float):
    """Smooth leader-minus-follower velocity."""
    _, v1, _, v2 = parts(x)
    L = logistic_Llf(x, m_lf)
    return L * (v2 - v1) + (1.0 - L) * (v1 - v2)


def distance(x):
    return np.abs(np.asarray(x[0]) - np.asarray(x[2]))


def d_s_indicator(x, sp: SafetyParams, s_lc: float):
    """Indicator-based minimum distance; reference only, never optimized."""
    s1, v1, s2, v2 = (float(c) for c in x)
    one_d = 1.0 if s1 >= s_lc else 0.0
    one_lf = 1.0 if s2 >= s1 else 0.0
    vf = one_lf * v1 + (1.0 - one_lf) * v2
    return one_d * (sp.d0 + vf * sp.t_h)


# name -> f(x, sp, **kw); the verifier and the gradient checks iterate over this
REGISTRY = {
    "h_vmin": lambda x, sp, agent=1: h_vmin(parts(x)[2 * agent - 1]),
    "h_vmax": lambda x, sp, agent=1: h_vmax(parts(x)[2 * agent - 1], sp.v_max),
    "logistic_Ld": lambda x, sp, p=None: logistic_Ld(x, sp.pN if p is None else p),
    "logistic_Llf": lambda x, sp: logistic_Llf(x, sp.m_lf),
    "v_follower": lambda x, sp: v_follower(x, sp.m_lf),
    "d_safe_smooth": lambda x, sp: d_safe_smooth(x, sp),
    "h_d": lambda x, sp, p=None: h_d(x, sp.pN if p is None else p, sp),
    "Lbar_d": lambda x, sp: Lbar_d(x, sp.p0, sp.pN, sp.eps_d),
    "H_d": lambda x, sp: H_d(x, sp.p0, sp.pN, sp),
    "delta_v": lambda x, sp: delta_v(x, sp.m_lf),
}


def eval_with_gradient(name: str, x, sp: SafetyParams, **kw):
    """Value and exact gradient over ``(s1, v1, s2, v2)`` of a registered function.

    ``x`` may be a single state or a ``(..., 4)`` array of states; the gradient
    then has shape ``(..., 4)``.
    """
    try:
        f = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown safety function {name!r}; known: {sorted(REGISTRY)}") from None
    xa = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=float)
    comps = [xa[..., i] for i in range(4)]
    out = f(Dual.variables(comps), sp, **kw)
    if not isinstance(out, Dual):
        return np.asarray(out, dtype=float), np.zeros(xa.shape)
    return np.asarray(out.value, dtype=float), np.asarray(out.partials, dtype=float)
