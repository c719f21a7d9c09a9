"""Nonlinear longitudinal plant: human OVM, follower car-following law, task difficulty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DesiredSpeedCurve:
    """Cosine-ramp optimal-velocity curve V(s).

    Zero below the stopping gap ``s_st``, ``v_max`` above the free-flow gap
    ``s_go``, and a half-cosine ramp in between.
    """

    v_max: float
    s_st: float
    s_go: float

    def __post_init__(self):
        if not self.v_max > 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if not 0 < self.s_st < self.s_go:
            raise ValueError(f"need 0 < s_st < s_go, got s_st={self.s_st}, s_go={self.s_go}")

    def __call__(self, s):
        return desired_speed(self, s)


@dataclass(frozen=True)
class DriverModel:
    """Mode-dependent human OVM. ``a[i-1], b[i-1]`` belong to hidden mode ``i``."""

    a: tuple[float, float]
    b: tuple[float, float]
    curve: DesiredSpeedCurve

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if len(self.a) != len(self.b):
            raise ValueError("a and b must have one entry per mode")
        for i, (ai, bi) in enumerate(zip(self.a, self.b), start=1):
            if not ai > 0:
                raise ValueError(f"a_{i} must be positive, got {ai}")
            if not bi >= 0:
                raise ValueError(f"b_{i} must be nonnegative, got {bi}")

    @property
    def n_modes(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class FollowerModel:
    a: float
    b: float
    curve: DesiredSpeedCurve

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"follower a must be positive, got {self.a}")
        if not self.b >= 0:
            raise ValueError(f"follower b must be nonnegative, got {self.b}")


@dataclass(frozen=True)
class TaskDifficultyParams:
    T_des: float
    delta: float
    zeta: float = 1.0
    threshold: float = 1.0

    def __post_init__(self):
        if not self.T_des > 0:
            raise ValueError("T_des must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class PlantState:
    """Three-vehicle state ``[v_E, s_EL, v_F, s_FE]``.

    ``s_FE`` may be negative before the merge (ego still behind the follower).
    """

    v_E: float
    s_EL: float
    v_F: float
    s_FE: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_E, self.s_EL, self.v_F, self.s_FE], dtype=float)

    @classmethod
    def from_array(cls, x) -> "PlantState":
        return cls(*(float(v) for v in x))


def desired_speed(curve: DesiredSpeedCurve, s):
    """Evaluate V(s); accepts scalars or arrays."""
    if np.ndim(s) == 0:
        s = float(s)
        if s <= curve.s_st:
            return 0.0
        if s >= curve.s_go:
            return curve.v_max
        return 0.5 * curve.v_max * (1.0 - math.cos(math.pi * (s - curve.s_st) / (curve.s_go - curve.s_st)))
    s = np.asarray(s, dtype=float)
    ramp = 0.5 * curve.v_max * (1.0 - np.cos(np.pi * (s - curve.s_st) / (curve.s_go - curve.s_st)))
    return np.where(s <= curve.s_st, 0.0, np.where(s >= curve.s_go, curve.v_max, ramp))


def desired_speed_slope(curve: DesiredSpeedCurve, s):
    """Analytic dV/ds (zero outside the open ramp interval)."""
    width = curve.s_go - curve.s_st
    if np.ndim(s) == 0:
        s = float(s)
        if s <= curve.s_st or s >= curve.s_go:
            return 0.0
        return math.pi * curve.v_max / (2.0 * width) * math.sin(math.pi * (s - curve.s_st) / width)
    s = np.asarray(s, dtype=float)
    inside = (s > curve.s_st) & (s < curve.s_go)
    return np.where(inside, math.pi * curve.v_max / (2.0 * width) * np.sin(math.pi * (s - curve.s_st) / width), 0.0)


def _check_mode(model: DriverModel, mode: int) -> int:
    if mode not in range(1, model.n_modes + 1):
        raise ValueError(f"invalid hidden mode {mode!r}; expected 1..{model.n_modes}")
    return mode - 1


def human_accel(model: DriverModel, mode: int, state: PlantState, v_L: float) -> float:
    """Human OVM acceleration in hidden mode ``mode`` (1-based)."""
    i = _check_mode(model, mode)
    return model.a[i] * (desired_speed(model.curve, state.s_EL) - state.v_E) + model.b[i] * (v_L - state.v_E)


def follower_accel(model: FollowerModel, state: PlantState, v_L: float) -> float:
    """Follower OVM that follows whichever vehicle is directly ahead.

    ``s_FE <= 0`` means the ego has not yet moved ahead of the follower, so the
    follower tracks the leader at gap ``s_FE + s_EL``. The law is deliberately
    discontinuous at ``s_FE = 0``.
    """
    if state.s_FE <= 0:
        gap, v_ahead = state.s_FE + state.s_EL, v_L
    else:
        gap, v_ahead = state.s_FE, state.v_E
    return model.a * (desired_speed(model.curve, gap) - state.v_F) + model.b * (v_ahead - state.v_F)


def task_difficulty(params: TaskDifficultyParams, v_E, s_EL):
    """TD = ((v_E * T_des) / ((1 - delta) * s_EL)) ** zeta."""
    s_EL = np.asarray(s_EL, dtype=float)
    if np.any(s_EL <= 0):
        raise ValueError("task difficulty is undefined for non-positive gaps")
    td = (np.asarray(v_E, dtype=float) * params.T_des / ((1.0 - params.delta) * s_EL)) ** params.zeta
    return float(td) if td.ndim == 0 else td


def mode_from_td(params: TaskDifficultyParams, td):
    """Threshold TD into hidden mode 1 (low difficulty) or 2 (TD >= threshold)."""
    td = np.asarray(td, dtype=float)
    mode = np.where(td < params.threshold, 1, 2)
    return int(mode) if mode.ndim == 0 else mode
