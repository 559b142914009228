"""Vectorized interval arithmetic with outward rounding.

An :class:`Interval` holds numpy arrays ``lo`` and ``hi`` of identical shape, so
one object represents a whole batch of intervals (one per branch-and-bound
box). Every arithmetic result is widened by at least one ulp on each side,
which keeps the enclosures valid under round-to-nearest floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXP_CLAMP = 500.0


_REL = 2.0 ** -52  # |a| * _REL >= ulp(a) for normal a
_ABS = 2.0 ** -1074  # covers results in the subnormal range


def _down(a):
    # cheaper than np.nextafter and at least as wide
    return a - (np.abs(a) * _REL + _ABS)


def _up(a):
    return a + (np.abs(a) * _REL + _ABS)


class Interval:
    """Closed interval ``[lo, hi]`` (elementwise over arrays)."""

    __slots__ = ("lo", "hi")
    __array_ufunc__ = None

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        if np.any(lo > hi):
            raise ValueError("interval with lo > hi")
        self.lo = lo
        self.hi = hi

    @classmethod
    def _raw(cls, lo, hi):
        obj = cls.__new__(cls)
        obj.lo = lo
        obj.hi = hi
        return obj

    @staticmethod
    def point(x) -> "Interval":
        return Interval(x, x)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return np.shape(self.lo)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, x, atol: float = 0.0):
        return (self.lo - atol <= x) & (x <= self.hi + atol)

    def hull(self, other: "Interval") -> "Interval":
        return Interval._raw(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def __getitem__(self, idx) -> "Interval":
        return Interval._raw(self.lo[idx], self.hi[idx])

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"

    # -- arithmetic -------------------------------------------------------
    @staticmethod
    def _coerce(other):
        if isinstance(other, Interval):
            return other
        if isinstance(other, (int, float, np.ndarray, np.floating)):
            a = np.asarray(other, dtype=float)
            return Interval._raw(a, a)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Interval._raw(_down(self.lo + o.lo), _up(self.hi + o.hi))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Interval._raw(_down(self.lo - o.hi), _up(self.hi - o.lo))

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o - self

    def __neg__(self):
        return Interval._raw(-self.hi, -self.lo)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        if not isinstance(other, Interval):
            c = o.lo
            lo = np.where(c >= 0, self.lo * c, self.hi * c)
            hi = np.where(c >= 0, self.hi * c, self.lo * c)
            return Interval._raw(_down(lo), _up(hi))
        p = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        lo = np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3]))
        hi = np.maximum(np.maximum(p[0], p[1]), np.maximum(p[2], p[3]))
        return Interval._raw(_down(lo), _up(hi))

    __rmul__ = __mul__

    def reciprocal(self) -> "Interval":
        if np.any((self.lo <= 0) & (self.hi >= 0)):
            raise ZeroDivisionError("interval reciprocal of an interval containing 0")
        with np.errstate(over="ignore"):  # 1/subnormal -> inf is a valid enclosure
            return Interval._raw(_down(1.0 / self.hi), _up(1.0 / self.lo))

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o * self.reciprocal()

    def square(self) -> "Interval":
        lo2 = self.lo * self.lo
        hi2 = self.hi * self.hi
        straddle = (self.lo < 0) & (self.hi > 0)
        lo = np.where(straddle, 0.0, np.minimum(lo2, hi2))
        hi = np.maximum(lo2, hi2)
        return Interval._raw(np.maximum(_down(lo), 0.0), _up(hi))

    def __pow__(self, k):
        if k != 2:
            raise NotImplementedError("only squaring is supported")
        return self.square()

    def exp(self) -> "Interval":
        lo = np.clip(self.lo, -EXP_CLAMP, EXP_CLAMP)
        hi = np.clip(self.hi, -EXP_CLAMP, EXP_CLAMP)
        # np.exp is accurate to about one ulp but not correctly rounded
        elo, ehi = np.exp(lo), np.exp(hi)
        for _ in range(3):
            elo, ehi = _down(elo), _up(ehi)
        return Interval._raw(np.maximum(elo, 0.0), ehi)

    def sigmoid(self) -> "Interval":
        # monotone increasing; np.exp is not correctly rounded, so pad by a few ulps
        lo = np.clip(self.lo, -EXP_CLAMP, EXP_CLAMP)
        hi = np.clip(self.hi, -EXP_CLAMP, EXP_CLAMP)
        slo = 1.0 / (1.0 + np.exp(-lo))
        shi = 1.0 / (1.0 + np.exp(-hi))
        for _ in range(3):
            slo = _down(slo)
            shi = _up(shi)
        return Interval._raw(np.maximum(slo, 0.0), np.minimum(shi, 1.0))

    def minimum(self, other) -> "Interval":
        o = self._coerce(other)
        return Interval._raw(np.minimum(self.lo, o.lo), np.minimum(self.hi, o.hi))

    def maximum(self, other) -> "Interval":
        o = self._coerce(other)
        return Interval._raw(np.maximum(self.lo, o.lo), np.maximum(self.hi, o.hi))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box over the lumped state ``(s1, v1, s2, v2)``."""

    lo: tuple[float, float, float, float]
    hi: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.lo) != 4 or len(self.hi) != 4:
            raise ValueError("a Box has exactly four dimensions")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"empty box: lo={self.lo} hi={self.hi}")

    @classmethod
    def from_bounds(cls, s_range, v_range, s2_range=None, v2_range=None) -> "Box":
        s2_range = s_range if s2_range is None else s2_range
        v2_range = v_range if v2_range is None else v2_range
        lo = (s_range[0], v_range[0], s2_range[0], v2_range[0])
        hi = (s_range[1], v_range[1], s2_range[1], v2_range[1])
        return cls(tuple(map(float, lo)), tuple(map(float, hi)))

    def intervals(self) -> list[Interval]:
        return [Interval(a, b) for a, b in zip(self.lo, self.hi)]

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, x) -> bool:
        return all(a <= xi <= b for a, xi, b in zip(self.lo, x, self.hi))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


def imin(a, b):
    """Elementwise minimum for floats, arrays, intervals and dual numbers."""
    if hasattr(a, "minimum"):
        return a.minimum(b)
    if hasattr(b, "minimum"):
        return b.minimum(a)
    return np.minimum(a, b)


def imax(a, b):
    """Elementwise maximum for floats, arrays, intervals and dual numbers."""
    if hasattr(a, "maximum"):
        return a.maximum(b)
    if hasattr(b, "maximum"):
        return b.maximum(a)
    return np.maximum(a, b)
