"""Forward-mode automatic differentiation with dual numbers.

``Dual(value, partials)`` carries a value and its partial derivatives with
respect to ``k`` seeds; ``partials`` has the shape of ``value`` plus a trailing
axis of length ``k``. The value type may be a float, a numpy array or an
:class:`~cbfmpc.interval.Interval`. With interval values the partials enclose
the gradient over a box, which is what the mean-value bounds in the verifier
need.
"""

from __future__ import annotations

import numpy as np

from .interval import EXP_CLAMP, Interval


def _col(v):
    """Append a length-1 trailing axis so a value broadcasts against partials."""
    if isinstance(v, Interval):
        return v[..., None]
    return np.asarray(v)[..., None]


def _where(cond, a, b):
    if isinstance(a, Interval) or isinstance(b, Interval):
        a = a if isinstance(a, Interval) else Interval.point(a)
        b = b if isinstance(b, Interval) else Interval.point(b)
        return Interval._raw(np.where(cond, a.lo, b.lo), np.where(cond, a.hi, b.hi))
    return np.where(cond, a, b)


class Dual:
    __slots__ = ("value", "partials")
    __array_ufunc__ = None

    def __init__(self, value, partials):
        self.value = value
        self.partials = partials

    @classmethod
    def variables(cls, values, seeds=None):
        """Seed a list of independent variables.

        ``values`` is a sequence of ``n`` scalars, arrays or intervals; variable
        ``i`` gets the unit partial ``e_i`` (of length ``n`` unless ``seeds``
        widens it).
        """
        n = len(values) if seeds is None else seeds
        out = []
        for i, v in enumerate(values):
            e = np.zeros(n)
            e[i] = 1.0
            shape = np.shape(v.lo) if isinstance(v, Interval) else np.shape(v)
            p = np.broadcast_to(e, tuple(shape) + (n,)).copy()
            out.append(cls(v, Interval._raw(p, p.copy()) if isinstance(v, Interval) else p))
        return out

    @property
    def nseeds(self) -> int:
        p = self.partials
        return (p.lo if isinstance(p, Interval) else p).shape[-1]

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.partials!r})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.partials + other.partials)
        return Dual(self.value + other, self.partials)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.partials - other.partials)
        return Dual(self.value - other, self.partials)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.partials)

    def __neg__(self):
        return Dual(-self.value, -self.partials)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                _col(self.value) * other.partials + _col(other.value) * self.partials,
            )
        return Dual(self.value * other, _col(other) * self.partials)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.value
            val = self.value * inv
            return Dual(val, (self.partials - _col(val) * other.partials) * _col(inv))
        inv = 1.0 / other
        return Dual(self.value * inv, self.partials * _col(inv))

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        val = other * inv
        return Dual(val, -(_col(val * inv)) * self.partials)

    def square(self):
        v = self.value
        sq = v.square() if isinstance(v, Interval) else v * v
        return Dual(sq, (_col(v) * 2.0) * self.partials)

    def __pow__(self, k):
        if k != 2:
            raise NotImplementedError("only squaring is supported")
        return self.square()

    def exp(self):
        v = self.value
        e = v.exp() if isinstance(v, Interval) else np.exp(np.clip(v, -EXP_CLAMP, EXP_CLAMP))
        return Dual(e, _col(e) * self.partials)

    def sigmoid(self):
        v = self.value
        if isinstance(v, Interval):
            s = v.sigmoid()
            # exact range of g(s) = s(1-s) over [s.lo, s.hi]; g peaks at s = 1/2
            g_lo, g_hi = s.lo * (1.0 - s.lo), s.hi * (1.0 - s.hi)
            top = np.where((s.lo <= 0.5) & (s.hi >= 0.5), 0.25, np.maximum(g_lo, g_hi))
            bot = np.minimum(g_lo, g_hi)
            ds = Interval._raw(np.maximum(np.nextafter(bot, -np.inf) * (1 - 1e-12), 0.0),
                               np.nextafter(top, np.inf) * (1 + 1e-12))
        else:
            s = 1.0 / (1.0 + np.exp(-np.clip(v, -EXP_CLAMP, EXP_CLAMP)))
            ds = s * (1.0 - s)
        return Dual(s, _col(ds) * self.partials)

    # -- piecewise selections ---------------------------------------------
    def _select(self, other, take_min: bool):
        if not isinstance(other, Dual):
            zero = self.partials * 0.0
            other = Dual(other, zero)
        a, b = self.value, other.value
        if isinstance(a, Interval) or isinstance(b, Interval):
            a = a if isinstance(a, Interval) else Interval.point(a)
            b = b if isinstance(b, Interval) else Interval.point(b)
            if take_min:
                val = a.minimum(b)
                a_wins, b_wins = a.hi <= b.lo, b.hi < a.lo
            else:
                val = a.maximum(b)
                a_wins, b_wins = a.lo >= b.hi, b.lo > a.hi
            pa, pb = self.partials, other.partials
            pa = pa if isinstance(pa, Interval) else Interval.point(pa)
            pb = pb if isinstance(pb, Interval) else Interval.point(pb)
            hull = pa.hull(pb)
            aw, bw = a_wins[..., None], b_wins[..., None]
            lo = np.where(aw, pa.lo, np.where(bw, pb.lo, hull.lo))
            hi = np.where(aw, pa.hi, np.where(bw, pb.hi, hull.hi))
            return Dual(val, Interval._raw(lo, hi))
        choose_a = (a <= b) if take_min else (a >= b)
        return Dual(np.where(choose_a, a, b), np.where(np.asarray(choose_a)[..., None], self.partials, other.partials))

    def minimum(self, other):
        return self._select(other, take_min=True)

    def maximum(self, other):
        return self._select(other, take_min=False)


def value_of(x):
    return x.value if isinstance(x, Dual) else x


def gradient_of(x, n: int):
    if isinstance(x, Dual):
        return x.partials
    return np.zeros(np.shape(x) + (n,))


__all__ = ["Dual", "value_of", "gradient_of", "_where"]
