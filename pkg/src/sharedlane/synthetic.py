"""Synthetic lane-change trajectories in the canonical CSV schema.

The bundled replay and calibration files are produced here: a human ego
driver whose mode follows the task-difficulty rule, a follower running its
car-following law behind the ego, and a prescribed target-lane leader. The
ego switches lane id at the first sample where the completion criterion holds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .models import (DriverModel, FollowerModel, PlantState, TaskDifficultyParams, desired_speed, mode_from_td,
                     task_difficulty)
from .sim import CompletionCriterion, check_completion

TRAJ_COLUMNS = ("t", "vehicle_id", "lane_id", "x", "v", "a")


@dataclass(frozen=True)
class SmoothDip:
    """Leader speed ``v0 - depth * bump(t)`` with a raised-cosine bump on ``[t0, t0 + width]``."""

    v0: float
    depth: float
    t0: float
    width: float
    drift: float = 0.0  # m/s^2 after the dip

    def __call__(self, t: float) -> float:
        v = self.v0
        if self.t0 <= t <= self.t0 + self.width:
            v -= self.depth * 0.5 * (1 - math.cos(2 * math.pi * (t - self.t0) / self.width))
        if t > self.t0 + self.width:
            v += self.drift * (t - self.t0 - self.width)
        return v


@dataclass(frozen=True)
class PiecewiseLinearSpeed:
    knots_t: tuple
    knots_v: tuple

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.knots_t, self.knots_v))


def simulate_event(driver: DriverModel, follower: FollowerModel, td: TaskDifficultyParams,
                   criterion: CompletionCriterion, leader, initial: PlantState, duration: float, dt: float = 0.1,
                   x_L0: float = 200.0, ids=(1, 2, 3), lanes=(1, 2), vehicle_length: float = 4.5, t_offset: float = 0.0):
    """Return ``(rows, info)`` for one three-vehicle event.

    ``ids`` are (ego, leader, follower); ``lanes`` are (origin, target). The
    ego mode is the TD label at each sample, held until the next one.
    """
    ego, lead, fol = ids
    n = int(round(duration / dt))
    y = np.array([initial.v_E, initial.s_EL, initial.v_F, initial.s_FE, x_L0])

    def rhs(t, y, mode):
        v_E, s_EL, v_F, s_FE, _ = y
        v_L = leader(t)
        a_E = driver.a[mode - 1] * (desired_speed(driver.curve, s_EL) - v_E) + driver.b[mode - 1] * (v_L - v_E)
        a_F = follower.a * (desired_speed(follower.curve, s_FE) - v_F) + follower.b * (v_E - v_F)
        return np.array([a_E, v_L - v_E, a_F, v_E - v_F, v_L]), a_E, a_F

    rows = []
    crossed_at = None
    modes = []
    for s in range(n + 1):
        t = s * dt
        mode = int(mode_from_td(td, task_difficulty(td, y[0], y[1])))
        modes.append(mode)
        f, a_E, a_F = rhs(t, y, mode)
        v_L = leader(t)
        if crossed_at is None and check_completion(criterion, PlantState(*y[:4]), v_L):
            crossed_at = t
        x_L = y[4]
        x_E = x_L - y[1] - vehicle_length
        x_F = x_E - y[3] - vehicle_length
        a_L = (leader(t + 1e-4) - leader(max(t - 1e-4, 0.0))) / (t + 1e-4 - max(t - 1e-4, 0.0))
        tt = round(t + t_offset, 6)
        rows.append((tt, ego, lanes[1] if crossed_at is not None else lanes[0], x_E, y[0], a_E))
        rows.append((tt, lead, lanes[1], x_L, v_L, a_L))
        rows.append((tt, fol, lanes[1], x_F, y[2], a_F))
        if s == n:
            break
        k1 = f
        k2 = rhs(t + dt / 2, y + dt / 2 * k1, mode)[0]
        k3 = rhs(t + dt / 2, y + dt / 2 * k2, mode)[0]
        k4 = rhs(t + dt, y + dt * k3, mode)[0]
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return rows, {"t_cross": crossed_at, "modes": np.asarray(modes)}


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_COLUMNS)
        for r in sorted(rows, key=lambda r: (r[1], r[0])):
            w.writerow([f"{r[0]:.2f}", r[1], r[2], f"{r[3]:.6f}", f"{r[4]:.6f}", f"{r[5]:.6f}"])


def _dip(v0: float) -> PiecewiseLinearSpeed:
    return PiecewiseLinearSpeed((0, 1, 2.5, 3.5, 5.5, 8, 11, 16, 30),
                                (v0, v0 - 0.4, v0 - 2.6, v0 - 2.8, v0 - 1.0, v0 + 0.5, v0 + 0.4, v0, v0))


def replay_event_rows(scn, v0: float, duration: float = 30.0):
    """One lane change starting at the scenario equilibrium for ``v0`` under a brake-and-recover leader."""
    from .linmjls import find_equilibrium

    eq = find_equilibrium(scn.driver, scn.follower, v0)
    start = PlantState(v0, eq.s_EL_star, v0, eq.s_FE_star)
    return simulate_event(scn.driver, scn.follower, scn.td, scn.criterion, _dip(v0), start, duration)


# (v0, dip depth, front-gap offset, rear-gap offset, ego speed offset)
CALIBRATION_CASES = ((4.5, 2.5, 2.0, -1.5, 0.0), (5.5, 3.0, -1.0, -1.0, 0.5), (6.5, 2.0, 1.0, -2.0, 0.0),
                     (7.5, 3.5, 0.0, -1.0, -0.5), (8.5, 2.5, -1.5, -1.5, 0.3), (10.0, 3.0, 2.5, -2.5, 0.0))
# TGSIM spacing is wider: start close behind the leader so the hard mode shows up, at speeds where the
# follower's own equilibrium gap clears the rear threshold
TGSIM_CALIBRATION_CASES = ((8.0, 1.5, -9.0, 1.5, 0.0), (9.0, 2.0, -10.0, 1.0, 0.5), (10.0, 1.5, -9.0, 2.0, 0.0),
                           (11.0, 2.5, -10.0, 1.5, -0.5), (12.0, 2.0, -11.0, 1.0, 0.3), (13.0, 2.5, -12.0, 2.0, 0.0))


def calibration_rows(scn, cases=CALIBRATION_CASES, duration: float = 20.0):
    """Several lane changes at different speeds, spaced 1 km apart on a shared clock."""
    from .linmjls import find_equilibrium

    rows, infos = [], []
    for k, (v0, depth, ds, dsf, dv) in enumerate(cases):
        eq = find_equilibrium(scn.driver, scn.follower, v0)
        start = PlantState(v0 + dv, eq.s_EL_star + ds, v0, min(eq.s_FE_star, scn.criterion.s_rear_thr) + dsf)
        leader = PiecewiseLinearSpeed((0, 1, 3, 5, 8, duration), (v0, v0, v0 - depth, v0 - depth, v0 + 0.5, v0 + 0.5))
        r, info = simulate_event(scn.driver, scn.follower, scn.td, scn.criterion, leader, start, duration,
                                 x_L0=200.0 + 1000.0 * k, ids=(10 * k + 1, 10 * k + 2, 10 * k + 3))
        rows += r
        infos.append(info)
    return rows, infos


def build_bundled_data(out_dir) -> None:
    """Regenerate the shipped event and calibration CSVs."""
    from pathlib import Path

    from .scenario import bundled

    out = Path(out_dir)
    ngsim, tgsim = bundled("ngsim"), bundled("tgsim")
    write_csv(replay_event_rows(ngsim, 5.9)[0], out / "ngsim_event.csv")
    write_csv(replay_event_rows(tgsim, 4.9)[0], out / "tgsim_event.csv")
    write_csv(calibration_rows(ngsim)[0], out / "ngsim_calibration.csv")
    write_csv(calibration_rows(tgsim, TGSIM_CALIBRATION_CASES)[0], out / "tgsim_calibration.csv")


if __name__ == "__main__":
    import sys

    build_bundled_data(sys.argv[1] if len(sys.argv) > 1 else ".")
