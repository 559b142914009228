"""Double-integrator agents discretized exactly with a zero-order hold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

# agent footprint [m]; kept as metadata, the safety distance absorbs geometry via d0
AGENT_LENGTH = 4.2
AGENT_WIDTH = 2.0


@dataclass(frozen=True)
class AgentState:
    s: float
    v: float


@dataclass(frozen=True)
class LumpedState:
    """State of both agents in canonical order ``(s1, v1, s2, v2)``."""

    agent1: AgentState
    agent2: AgentState

    @classmethod
    def from_array(cls, x) -> "LumpedState":
        s1, v1, s2, v2 = (float(c) for c in x)
        return cls(AgentState(s1, v1), AgentState(s2, v2))

    def to_array(self) -> np.ndarray:
        return np.array([self.agent1.s, self.agent1.v, self.agent2.s, self.agent2.v])

    def __iter__(self):
        yield self.agent1.s
        yield self.agent1.v
        yield self.agent2.s
        yield self.agent2.v

    def __getitem__(self, i):
        return self.to_array()[i]

    def __len__(self):
        return 4


@dataclass(frozen=True)
class ControlInput:
    a1: float
    a2: float

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(float(u[0]), float(u[1]))

    def to_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2])

    def __iter__(self):
        yield self.a1
        yield self.a2

    def __getitem__(self, i):
        return self.to_array()[i]

    def __len__(self):
        return 2


@dataclass(frozen=True)
class DiscreteDynamics:
    Ts: float
    A: np.ndarray
    B: np.ndarray


def zoh_discretize(Ts: float) -> DiscreteDynamics:
    """Exact ZOH discretization of ``s' = v, v' = a`` for one agent."""
    if not np.isfinite(Ts) or Ts <= 0:
        raise InvalidParameterError(f"sample time must be positive, got {Ts}")
    A = np.array([[1.0, Ts], [0.0, 1.0]])
    B = np.array([[Ts * Ts / 2.0], [Ts]])
    return DiscreteDynamics(float(Ts), A, B)


def propagate(s, v, a, Ts: float):
    """Advance one agent by one sample; works for floats, arrays, duals and intervals."""
    return s + Ts * v + (Ts * Ts / 2.0) * a, v + Ts * a


def step_components(x, u, Ts: float):
    """Generic lumped step on a 4-sequence state and 2-sequence input."""
    s1, v1, s2, v2 = x
    a1, a2 = u
    s1n, v1n = propagate(s1, v1, a1, Ts)
    s2n, v2n = propagate(s2, v2, a2, Ts)
    return s1n, v1n, s2n, v2n


def step_relative(y, u, Ts: float):
    """Step in relative coordinates ``(s1, v1, d = s2 - s1, v2)``.

    ``y`` is any object with attributes ``s1, v1, d, v2``; a new instance of
    the same type is returned.
    """
    a1, a2 = u
    s1n, v1n = propagate(y.s1, y.v1, a1, Ts)
    dn = y.d + Ts * (y.v2 - y.v1) + (Ts * Ts / 2.0) * (a2 - a1)
    return type(y)(s1n, v1n, dn, y.v2 + Ts * a2)


def step(x: LumpedState, u: ControlInput, dyn: DiscreteDynamics) -> LumpedState:
    """``x_{k+1} = f(x_k, u_k)``: both agents advanced by the per-agent (A, B)."""
    xa = np.asarray(list(x), dtype=float)
    ua = np.asarray(list(u), dtype=float)
    x1 = dyn.A @ xa[0:2] + dyn.B[:, 0] * ua[0]
    x2 = dyn.A @ xa[2:4] + dyn.B[:, 0] * ua[1]
    return LumpedState(AgentState(x1[0], x1[1]), AgentState(x2[0], x2[1]))


def step_array(x: np.ndarray, u: np.ndarray, Ts: float) -> np.ndarray:
    """Vectorized step over a trailing state axis of 4 and input axis of 2."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty_like(x)
    out[..., 0] = x[..., 0] + Ts * x[..., 1] + 0.5 * Ts * Ts * u[..., 0]
    out[..., 1] = x[..., 1] + Ts * u[..., 0]
    out[..., 2] = x[..., 2] + Ts * x[..., 3] + 0.5 * Ts * Ts * u[..., 1]
    out[..., 3] = x[..., 3] + Ts * u[..., 1]
    return out


def rollout(x0, U: np.ndarray, Ts: float) -> np.ndarray:
    """States ``x_1..x_N`` produced by applying the rows of ``U`` from ``x0``."""
    xs = np.empty((len(U), 4))
    x = np.asarray(list(x0), dtype=float)
    for j, u in enumerate(U):
        x = step_array(x, u, Ts)
        xs[j] = x
    return xs
