"""Shifted-unicycle dynamics, nominal go-to-goal control and the CBF-QP filter.

The robot is modeled at a point of interest a > 0 m ahead of the wheel axis,
which makes the planar velocity depend on both control inputs and keeps the
barrier constraint actuated.  The safety filter minimally modifies the
nominal command subject to one linear half-plane constraint from the barrier
and box actuator limits; in two dimensions that quadratic program has a
closed-form solution via projection onto the constraint segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERATE_GRADIENT = 1e-9
CONSTRAINT_SLACK = 1e-9  # feasibility slack absorbing roundoff


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class RobotState:
    px: float
    py: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])


@dataclass(frozen=True)
class ControlInput:
    v: float
    w: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w])


@dataclass(frozen=True)
class ControlLimits:
    v_min: float = -0.2
    v_max: float = 1.0
    w_max: float = 2.0

    def __post_init__(self):
        if not (self.v_min <= 0.0 <= self.v_max) or self.w_max <= 0.0:
            raise ValueError("limits must admit the stop command")

    def lower(self) -> np.ndarray:
        return np.array([self.v_min, -self.w_max])

    def upper(self) -> np.ndarray:
        return np.array([self.v_max, self.w_max])

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower(), self.upper())


UNLIMITED = ControlLimits(v_min=-1e9, v_max=1e9, w_max=1e9)


@dataclass(frozen=True)
class AlphaFunction:
    """Linear extended class-K function alpha(h) = gain * h."""

    gain: float = 1.0

    def __post_init__(self):
        if self.gain <= 0.0:
            raise ValueError("alpha gain must be positive for a strictly increasing map")

    def __call__(self, h: float) -> float:
        return self.gain * h


@dataclass(frozen=True)
class BarrierQuery:
    """Barrier sample handed to the filter; `h` is already margin adjusted."""

    h: float
    grad_xy: np.ndarray
    source: str = "parametric"  # 'neural' | 'parametric'
    margin: float = 0.0

    @classmethod
    def from_raw(cls, h_raw: float, grad3: np.ndarray, margin: float,
                 source: str) -> "BarrierQuery":
        if margin < 0.0:
            raise ValueError("margin must be nonnegative")
        grad3 = np.asarray(grad3, dtype=float)
        return cls(float(h_raw) - margin, grad3[:2].copy(), source, margin)


def shifted_unicycle_derivative(state: RobotState, u: ControlInput, a: float) -> np.ndarray:
    """State derivative (px_dot, py_dot, theta_dot) at the shifted point."""
    if a <= 0.0:
        raise ValueError("shift parameter must be positive")
    c, s = math.cos(state.theta), math.sin(state.theta)
    return np.array([
        u.v * c - a * u.w * s,
        u.v * s + a * u.w * c,
        u.w,
    ])


def integrate(state: RobotState, u: ControlInput, dt: float, a: float) -> RobotState:
    """Explicit Euler step; heading re-wrapped by the state constructor."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    d = shifted_unicycle_derivative(state, u, a)
    return RobotState(state.px + dt * d[0], state.py + dt * d[1], state.theta + dt * d[2])


def nominal_control(state: RobotState, goal: np.ndarray, dt: float,
                    speed: float = 0.5, limits: ControlLimits = ControlLimits(),
                    goal_tolerance: float = 0.1) -> ControlInput:
    """Drive at constant speed along the line toward the goal.

    The commanded heading rate closes the wrapped heading error within one
    nominal period, then both inputs clamp to the actuator box.  Inside the
    goal tolerance the command is zero.
    """
    goal = np.asarray(goal, dtype=float)
    to_goal = goal - state.position
    dist = float(np.linalg.norm(to_goal))
    if dist <= goal_tolerance:
        return ControlInput(0.0, 0.0)
    psi = wrap_angle(math.atan2(to_goal[1], to_goal[0]) - state.theta)
    u = np.array([speed, psi / dt])
    u = limits.clamp(u)
    return ControlInput(float(u[0]), float(u[1]))


def cbf_constraint(state: RobotState, query: BarrierQuery, a: float,
                   alpha: AlphaFunction = AlphaFunction()) -> tuple[np.ndarray, float]:
    """Linear barrier constraint c . u >= d for the shifted unicycle.

    c maps control inputs to the barrier's rate of change through the
    position block of the dynamics; d = -alpha(h).
    """
    hx, hy = float(query.grad_xy[0]), float(query.grad_xy[1])
    ct, st = math.cos(state.theta), math.sin(state.theta)
    c = np.array([
        ct * hx + st * hy,
        -a * st * hx + a * ct * hy,
    ])
    return c, -alpha(query.h)


@dataclass(frozen=True)
class FilterResult:
    u: ControlInput
    infeasible: bool
    constraint_active: bool


def cbf_qp_filter(u_nom: ControlInput, c: np.ndarray, d: float,
                  limits: ControlLimits = ControlLimits()) -> FilterResult:
    """Minimally perturb the nominal command subject to c . u >= d and the box.

    Exact solution of the 2D QP: if the box-clamped nominal satisfies the
    half plane it is returned unchanged; otherwise the optimum lies on the
    constraint line and is found by projecting the nominal onto that line and
    sliding along it into the box.  An empty feasible set (or a vanished
    gradient with a violated constraint) yields the safe-stop command with
    the infeasible flag raised.
    """
    c = np.asarray(c, dtype=float)
    u0 = limits.clamp(u_nom.as_array())
    slack = CONSTRAINT_SLACK * max(1.0, abs(d))
    if float(c @ u0) >= d - slack:
        return FilterResult(ControlInput(float(u0[0]), float(u0[1])), False, False)

    norm_sq = float(c @ c)
    if norm_sq < DEGENERATE_GRADIENT ** 2:
        return FilterResult(ControlInput(0.0, 0.0), True, False)

    u_nom_arr = u_nom.as_array()
    u_proj = u_nom_arr + ((d - float(c @ u_nom_arr)) / norm_sq) * c
    tangent = np.array([-c[1], c[0]]) / math.sqrt(norm_sq)

    # slide along {c . u = d} into the box: solve for the admissible t range
    t_lo, t_hi = -math.inf, math.inf
    lo, hi = limits.lower(), limits.upper()
    for j in range(2):
        if abs(tangent[j]) < 1e-15:
            if not (lo[j] - 1e-12 <= u_proj[j] <= hi[j] + 1e-12):
                return FilterResult(ControlInput(0.0, 0.0), True, True)
            continue
        a_j = (lo[j] - u_proj[j]) / tangent[j]
        b_j = (hi[j] - u_proj[j]) / tangent[j]
        t_lo = max(t_lo, min(a_j, b_j))
        t_hi = min(t_hi, max(a_j, b_j))
    if t_lo > t_hi + 1e-12:
        return FilterResult(ControlInput(0.0, 0.0), True, True)

    t = min(max(0.0, t_lo), t_hi)
    u = u_proj + t * tangent
    u = limits.clamp(u)  # absorb roundoff at the segment ends
    return FilterResult(ControlInput(float(u[0]), float(u[1])), False, True)
