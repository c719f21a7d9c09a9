"""Equilibrium and analytic linearization of the three-vehicle plant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .models import (
    DesiredSpeedCurve,
    DriverModel,
    FollowerModel,
    PlantState,
    desired_speed,
    desired_speed_slope,
    follower_accel,
    human_accel,
)

PBH_TOL = 1e-8


class LinearizationError(ValueError):
    pass


@dataclass(frozen=True)
class Equilibrium:
    v_star: float
    s_EL_star: float
    s_FE_star: float

    @property
    def x_star(self) -> np.ndarray:
        return np.array([self.v_star, self.s_EL_star, self.v_star, self.s_FE_star])

    def state(self) -> PlantState:
        return PlantState.from_array(self.x_star)


@dataclass(frozen=True)
class LinearMJLS:
    """Perturbation dynamics ``dx = (A + B K_H,i) x + B u_AV + (D + B D_H,i) v_L``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K_H: tuple[np.ndarray, ...]
    D_H: tuple[float, ...]
    eq: Equilibrium | None = None

    @property
    def n_hidden(self) -> int:
        return len(self.K_H)


@dataclass(frozen=True)
class ClosedLoopMatrices:
    """``A_cl[(i, k)]`` and ``D_cl[(i, k)]`` keyed by 1-based joint state."""

    A_cl: dict
    D_cl: dict


def invert_curve(curve: DesiredSpeedCurve, v: float) -> float:
    """Gap at which ``curve`` yields speed ``v`` (on the open ramp)."""
    if not 0 < v < curve.v_max:
        raise LinearizationError(f"speed {v} is outside the invertible range (0, {curve.v_max})")
    return curve.s_st + (curve.s_go - curve.s_st) / math.pi * math.acos(1.0 - 2.0 * v / curve.v_max)


def invert_curve_numeric(V, v: float, lo: float, hi: float) -> float:
    """Bisection fallback for a generic monotone curve ``V`` on ``[lo, hi]``."""
    return brentq(lambda s: V(s) - v, lo, hi, xtol=1e-12)


def find_equilibrium(driver: DriverModel, follower: FollowerModel, v_star: float) -> Equilibrium:
    vmax = min(driver.curve.v_max, follower.curve.v_max)
    if not 0 < v_star < vmax:
        raise LinearizationError(f"v_star={v_star} must lie in (0, {vmax})")
    s_el = invert_curve(driver.curve, v_star)
    s_fe = invert_curve(follower.curve, v_star)
    return Equilibrium(float(v_star), s_el, s_fe)


def linearize(driver: DriverModel, follower: FollowerModel, eq: Equilibrium) -> LinearMJLS:
    """Analytic Jacobians at ``eq`` with the follower tracking the ego (``s_FE > 0``)."""
    if eq.s_FE_star <= 0:
        raise LinearizationError("equilibrium must have the follower behind the ego (s_FE* > 0)")
    dV_h = desired_speed_slope(driver.curve, eq.s_EL_star)
    dV_f = desired_speed_slope(follower.curve, eq.s_FE_star)
    af, bf = follower.a, follower.b
    A = np.zeros((4, 4))
    A[1, 0] = -1.0
    A[2] = [bf, 0.0, -(af + bf), af * dV_f]
    A[3] = [1.0, 0.0, -1.0, 0.0]
    B = np.array([[1.0], [0.0], [0.0], [0.0]])
    C = np.array([[0.0, 0.0, 1.0, 0.0]])
    # follower sees the leader only through the ego on this branch
    D = np.array([[0.0], [1.0], [0.0], [0.0]])
    K_H = tuple(np.array([[-(a + b), a * dV_h, 0.0, 0.0]]) for a, b in zip(driver.a, driver.b))
    D_H = tuple(float(b) for b in driver.b)
    return LinearMJLS(A, B, C, D, K_H, D_H, eq)


def numeric_jacobians(driver: DriverModel, follower: FollowerModel, eq: Equilibrium, h: float = 1e-5):
    """Central-difference Jacobians of the nonlinear plant, for cross-checking ``linearize``."""
    x0 = eq.x_star
    vl0 = eq.v_star

    def partials(f):
        grad = np.zeros(5)
        for j in range(5):
            xp, xm = np.append(x0, vl0), np.append(x0, vl0)
            xp[j] += h
            xm[j] -= h
            grad[j] = (f(xp) - f(xm)) / (2 * h)
        return grad

    K = []
    for mode in range(1, driver.n_modes + 1):
        K.append(partials(lambda z, m=mode: human_accel(driver, m, PlantState.from_array(z[:4]), z[4])))
    F = partials(lambda z: follower_accel(follower, PlantState.from_array(z[:4]), z[4]))
    return K, F


def closed_loop(sys: LinearMJLS, gains) -> ClosedLoopMatrices:
    """Per joint state closed-loop matrices for AV gains ``gains.K_AV`` / ``gains.D_AV``."""
    K_AV, D_AV = gains.K_AV, gains.D_AV
    if len(K_AV) != len(D_AV):
        raise ValueError("K_AV and D_AV mode counts differ")
    A_cl, D_cl = {}, {}
    for i, (kh, dh) in enumerate(zip(sys.K_H, sys.D_H), start=1):
        for k, (kav, dav) in enumerate(zip(K_AV, D_AV), start=1):
            kav = np.atleast_2d(kav)
            if kav.shape != kh.shape:
                raise ValueError(f"K_AV[{k}] has shape {kav.shape}, expected {kh.shape}")
            A_cl[(i, k)] = sys.A + sys.B @ (kh + kav)
            D_cl[(i, k)] = sys.D + sys.B * (dh + float(np.asarray(dav).squeeze()))
    return ClosedLoopMatrices(A_cl, D_cl)


def _pbh_rank_ok(A: np.ndarray, M: np.ndarray, stable_only: bool, controllability: bool) -> list[complex]:
    bad = []
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if stable_only and lam.real < -PBH_TOL:
            continue
        if controllability:
            test = np.hstack([lam * np.eye(n) - A, M])
        else:
            test = np.vstack([lam * np.eye(n) - A, M])
        sv = np.linalg.svd(test, compute_uv=False)
        if np.sum(sv > PBH_TOL * max(1.0, sv[0])) < n:
            bad.append(lam)
    return bad


def check_stabilizable_detectable(sys: LinearMJLS) -> None:
    """PBH tests: (A, B) stabilizable and (A + B K_H,i, C) detectable for every mode.

    The open-loop pair (A, C) always has the front gap as an unobservable
    zero eigenvalue (nothing depends on it until the driver closes the
    loop), so detectability is tested on the human closed loop.
    """
    bad = _pbh_rank_ok(sys.A, sys.B, stable_only=True, controllability=True)
    if bad:
        raise LinearizationError(f"(A, B) is not stabilizable: uncontrollable modes {bad}")
    for i, kh in enumerate(sys.K_H, start=1):
        bad = _pbh_rank_ok(sys.A + sys.B @ kh, sys.C, stable_only=True, controllability=False)
        if bad:
            raise LinearizationError(f"(A + B K_H,{i}, C) is not detectable: unobservable modes {bad}")
