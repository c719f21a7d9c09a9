"""Trajectory ingestion, lane-change extraction and model calibration."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .markov import HiddenRates, mle_rates, td_mode_labeling
from .models import DesiredSpeedCurve, DriverModel, FollowerModel, TaskDifficultyParams, desired_speed
from .sim import CompletionCriterion

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("t", "vehicle_id", "lane_id", "x", "v")
VEHICLE_LENGTH = 4.5
SAMPLING_TOL = 1e-6
UNIT_TOL = 0.5


class IngestError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


@dataclass
class Trajectory:
    vehicle_id: int
    t: np.ndarray
    lane: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def index_at(self, t: float) -> int | None:
        i = int(np.searchsorted(self.t, t - SAMPLING_TOL))
        if i < len(self.t) and abs(self.t[i] - t) <= max(SAMPLING_TOL, 0.5 * self.dt) * 1.0001:
            return i
        return None


# -- ingestion --------------------------------------------------------------------

def ingest(source) -> dict[int, Trajectory]:
    """Parse a canonical trajectory CSV (path, text or file object) into per-vehicle series."""
    if isinstance(source, str) and "\n" in source:
        return _ingest_stream(io.StringIO(source))
    if isinstance(source, (str, Path)):
        try:
            fh = open(source, newline="")
        except FileNotFoundError:
            raise IngestError(f"no such trajectory file: {source}") from None
        with fh:
            return _ingest_stream(fh)
    return _ingest_stream(source)


def _ingest_stream(fh) -> dict[int, Trajectory]:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("empty trajectory file") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise IngestError(f"line 1: header lacks columns {missing}")
    col = {name: header.index(name) for name in header}
    has_a = "a" in col
    raw: dict[int, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            rec = (
                float(row[col["t"]]),
                int(row[col["lane_id"]]),
                float(row[col["x"]]),
                float(row[col["v"]]),
                float(row[col["a"]]) if has_a and row[col["a"]].strip() else math.nan,
            )
            vid = int(row[col["vehicle_id"]])
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in rec[:4]):
            raise IngestError(f"line {lineno}: non-finite value")
        raw.setdefault(vid, []).append(rec)
    if not raw:
        raise IngestError("trajectory file has no data rows")

    out = {}
    for vid in sorted(raw):
        arr = np.array(sorted(raw[vid], key=lambda r: r[0]))
        t = arr[:, 0]
        if len(t) > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise IngestError(f"vehicle {vid}: time stamps are not strictly increasing (duplicate at t={t[1:][d <= 0][0]})")
            if np.ptp(d) > SAMPLING_TOL:
                raise IngestError(f"vehicle {vid}: non-uniform sampling period")
            # units: the speed column must agree with the position derivative
            dxdt = np.gradient(arr[:, 2], t)
            mismatch = float(np.median(np.abs(dxdt - arr[:, 3])))
            if mismatch > UNIT_TOL:
                raise IngestError(f"vehicle {vid}: speed disagrees with dx/dt by {mismatch:.3g} m/s (unit mismatch?)")
        a = arr[:, 4] if has_a and not np.all(np.isnan(arr[:, 4])) else None
        out[vid] = Trajectory(vid, t, arr[:, 1].astype(int), arr[:, 2], arr[:, 3], a)
    return out


# -- events -------------------------------------------------------------------------

@dataclass
class LaneChangeEvent:
    ego_id: int
    leader_id: int
    follower_id: int
    t0: float
    t1: float
    t_cross: float
    from_lane: int
    to_lane: int
    t: np.ndarray
    x_E: np.ndarray
    v_E: np.ndarray
    x_L: np.ndarray
    v_L: np.ndarray
    x_F: np.ndarray
    v_F: np.ndarray
    vehicle_length: float = VEHICLE_LENGTH

    @property
    def s_EL(self) -> np.ndarray:
        return self.x_L - self.x_E - self.vehicle_length

    @property
    def s_FE(self) -> np.ndarray:
        return self.x_E - self.x_F - self.vehicle_length

    @property
    def cross_index(self) -> int:
        return int(np.argmin(np.abs(self.t - self.t_cross)))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def clip(self, t0: float, t1: float) -> "LaneChangeEvent":
        """Sub-window ``[t0, t1]`` of this event."""
        keep = (self.t >= t0 - SAMPLING_TOL) & (self.t <= t1 + SAMPLING_TOL)
        if keep.sum() < 2:
            raise CalibrationError(f"window [{t0}, {t1}] holds fewer than two samples")
        sub = {k: getattr(self, k)[keep] for k in ("t", "x_E", "v_E", "x_L", "v_L", "x_F", "v_F")}
        return replace(self, t0=float(sub["t"][0]), t1=float(sub["t"][-1]), **sub)

    def gaps_at_crossing(self) -> tuple[float, float]:
        """``(rear, front)`` bumper-to-bumper gaps at the crossing sample."""
        i = self.cross_index
        return float(self.s_FE[i]), float(self.s_EL[i])


def _neighbors(series: dict[int, Trajectory], ego: Trajectory, lane: int, t: float):
    i_e = ego.index_at(t)
    x_e = ego.x[i_e]
    ahead, behind = [], []
    for vid, tr in series.items():
        if vid == ego.vehicle_id:
            continue
        i = tr.index_at(t)
        if i is None or tr.lane[i] != lane:
            continue
        d = tr.x[i] - x_e
        if d > 0:
            ahead.append((d, -vid))
        elif d < 0:
            behind.append((-d, -vid))
    # nearest first; equal distance resolves to the larger id
    lead = -min(ahead)[1] if ahead else None
    fol = -min(behind)[1] if behind else None
    return lead, fol


def extract_events(series: dict[int, Trajectory], window: tuple[float, float] = (10.0, 10.0),
                   vehicle_length: float = VEHICLE_LENGTH, skipped: list | None = None) -> list[LaneChangeEvent]:
    """Lane changes of every vehicle, with target-lane neighbours at the crossing time.

    ``window`` is (seconds before, seconds after) the crossing, clipped to the
    span where all three vehicles have data. Skipped candidates are appended
    to ``skipped`` as ``(vehicle_id, t_cross, reason)``.
    """
    before, after = window
    events = []
    for vid in sorted(series):
        ego = series[vid]
        for idx in np.flatnonzero(np.diff(ego.lane)) + 1:
            t_c = float(ego.t[idx])
            target, origin = int(ego.lane[idx]), int(ego.lane[idx - 1])
            lead, fol = _neighbors(series, ego, target, t_c)
            missing = [name for name, v in (("leader", lead), ("follower", fol)) if v is None]
            if missing:
                reason = f"no {' or '.join(missing)} found in lane {target}"
                log.info("vehicle %s at t=%.2f skipped: %s", vid, t_c, reason)
                if skipped is not None:
                    skipped.append((vid, t_c, reason))
                continue
            trs = (ego, series[lead], series[fol])
            lo = max(t_c - before, *(tr.t[0] for tr in trs))
            hi = min(t_c + after, *(tr.t[-1] for tr in trs))
            grid = ego.t[(ego.t >= lo - SAMPLING_TOL) & (ego.t <= hi + SAMPLING_TOL)]
            cols = []
            for tr in trs:
                idxs = [tr.index_at(tt) for tt in grid]
                if any(i is None for i in idxs):
                    break
                cols.append((tr.x[idxs], tr.v[idxs]))
            if len(cols) < 3 or len(grid) < 2:
                reason = "vehicles are not sampled on a common time grid around the crossing"
                if skipped is not None:
                    skipped.append((vid, t_c, reason))
                continue
            (xe, ve), (xl, vl), (xf, vf) = cols
            events.append(LaneChangeEvent(vid, lead, fol, float(grid[0]), float(grid[-1]), t_c, origin, target, grid,
                                          xe, ve, xl, vl, xf, vf, vehicle_length))
    return events


# -- forward simulation for fitting ---------------------------------------------------------

def _simulate_ovm(a_of, b_of, curve: DesiredSpeedCurve, t: np.ndarray, v_lead: np.ndarray, v0: float, s0: float):
    """RK4 on (v, s) with the lead speed linearly interpolated and a per-sample ZOH gain schedule."""
    n = len(t)
    dt = float(t[1] - t[0])
    vmax, sst, sgo = curve.v_max, curve.s_st, curve.s_go
    span = sgo - sst
    cos = math.cos
    pi = math.pi

    def V(s):
        if s <= sst:
            return 0.0
        if s >= sgo:
            return vmax
        return 0.5 * vmax * (1.0 - cos(pi * (s - sst) / span))

    out = np.empty(n)
    v, s = float(v0), float(s0)
    out[0] = v
    for m in range(n - 1):
        a, b = a_of[m], b_of[m]
        l0 = v_lead[m]
        l1 = v_lead[m + 1]
        lh = 0.5 * (l0 + l1)
        k1v = a * (V(s) - v) + b * (l0 - v)
        k1s = l0 - v
        v2, s2 = v + 0.5 * dt * k1v, s + 0.5 * dt * k1s
        k2v = a * (V(s2) - v2) + b * (lh - v2)
        k2s = lh - v2
        v3, s3 = v + 0.5 * dt * k2v, s + 0.5 * dt * k2s
        k3v = a * (V(s3) - v3) + b * (lh - v3)
        k3s = lh - v3
        v4, s4 = v + dt * k3v, s + dt * k3s
        k4v = a * (V(s4) - v4) + b * (l1 - v4)
        k4s = l1 - v4
        v += dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        s += dt / 6 * (k1s + 2 * k2s + 2 * k3s + k4s)
        if not (math.isfinite(v) and math.isfinite(s)):
            out[m + 1:] = np.nan
            break
        out[m + 1] = v
    return out


DRIVER_BOUNDS = {"a": (0.01, 3.0), "b": (0.0, 3.0), "s_st": (0.5, 15.0), "s_go": (5.0, 80.0), "v_max": (3.0, 45.0)}
FOLLOWER_BOUNDS = DRIVER_BOUNDS


@dataclass
class FitResult:
    model: object
    sse: float
    rmse: float
    n_samples: int
    restarts: int
    converged: bool
    warning: str | None = None


def _clamp(x, lo, hi):
    return np.minimum(np.maximum(np.asarray(x, dtype=float), lo), hi)


def _multistart(obj, x0, lo, hi, restarts: int, seed: int, tol: float, agree: int = 3, rel: float = 1e-6):
    """Bounded Nelder-Mead from ``x0`` then from random points in the box.

    Stops early once the residual reaches ``tol`` or ``agree`` restarts have
    landed within ``rel`` of the best value.
    """
    rng = np.random.default_rng(seed)
    x0 = _clamp(x0, lo, hi)
    best = None
    used = 0
    any_conv = False
    hits = 0
    for r in range(restarts):
        start = x0 if r == 0 else lo + rng.random(len(lo)) * (hi - lo)
        res = minimize(obj, start, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"maxfev": 400 * len(lo), "xatol": 1e-7, "fatol": 1e-12, "adaptive": True})
        used += 1
        any_conv = any_conv or bool(res.success)
        if best is None or res.fun < best.fun * (1 - rel):
            hits = 1
            best = res
        elif res.fun <= best.fun * (1 + rel) + tol:
            hits += 1
        if best.fun <= tol or hits >= agree:
            break
    # polish the winner once more from its own point
    res = minimize(obj, best.x, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                   options={"maxfev": 400 * len(lo), "xatol": 1e-9, "fatol": 1e-14, "adaptive": True})
    if res.fun <= best.fun:
        best = res
    return best, used, any_conv or bool(res.success)


def _curve_or_none(v_max, s_st, s_go):
    if not (v_max > 0 and 0 < s_st < s_go):
        return None
    return DesiredSpeedCurve(v_max, s_st, s_go)


def fit_driver(events: list[LaneChangeEvent], labels: list[np.ndarray], initial: DriverModel | None = None,
               bounds: dict | None = None, restarts: int = 10, seed: int = 0) -> FitResult:
    """Per-mode (a_i, b_i) with a shared desired-speed curve, by forward simulation of each event."""
    if not events:
        raise CalibrationError("no events to fit")
    if len(labels) != len(events):
        raise CalibrationError("one label sequence per event is required")
    all_labels = np.concatenate(labels)
    n_modes = 2
    for m in range(1, n_modes + 1):
        if not np.any(all_labels == m):
            raise CalibrationError(f"mode {m} never occurs in the labelled events; its gains are not identifiable")
    bnd = {**DRIVER_BOUNDS, **(bounds or {})}
    lo = np.array([bnd["a"][0], bnd["b"][0]] * n_modes + [bnd["s_st"][0], bnd["s_go"][0], bnd["v_max"][0]])
    hi = np.array([bnd["a"][1], bnd["b"][1]] * n_modes + [bnd["s_st"][1], bnd["s_go"][1], bnd["v_max"][1]])
    if initial is None:
        initial = DriverModel((0.3, 0.3), (0.2, 0.2), DesiredSpeedCurve(15.0, 4.0, 20.0))
    c = initial.curve
    x0 = [initial.a[0], initial.b[0], initial.a[1], initial.b[1], c.s_st, c.s_go, c.v_max]
    n_samples = sum(len(ev.t) for ev in events)
    penalty = 1e6 * n_samples

    def sse(p):
        curve = _curve_or_none(p[6], p[4], p[5])
        if curve is None or min(p[0], p[2]) <= 0:
            return penalty
        a_map = np.array([p[0], p[2]])
        b_map = np.array([p[1], p[3]])
        total = 0.0
        for ev, lab in zip(events, labels):
            v = _simulate_ovm(a_map[lab - 1], b_map[lab - 1], curve, ev.t, ev.v_L, ev.v_E[0], ev.s_EL[0])
            r = v - ev.v_E
            if not np.all(np.isfinite(r)):
                return penalty
            total += float(r @ r)
        return total

    best, used, conv = _multistart(sse, x0, lo, hi, restarts, seed, tol=1e-10 * n_samples)
    p = best.x
    model = DriverModel((p[0], p[2]), (p[1], p[3]), DesiredSpeedCurve(p[6], p[4], p[5]))
    warn = None if conv else "optimizer did not report convergence; best-so-far parameters returned"
    return FitResult(model, float(best.fun), math.sqrt(best.fun / n_samples), n_samples, used, conv, warn)


def fit_follower(events: list[LaneChangeEvent], initial: FollowerModel | None = None, bounds: dict | None = None,
                 restarts: int = 10, seed: int = 0) -> FitResult:
    """Follower car-following law fitted against its leader (the ego) in each event."""
    if not events:
        raise CalibrationError("no events to fit")
    bnd = {**FOLLOWER_BOUNDS, **(bounds or {})}
    lo = np.array([bnd["a"][0], bnd["b"][0], bnd["s_st"][0], bnd["s_go"][0], bnd["v_max"][0]])
    hi = np.array([bnd["a"][1], bnd["b"][1], bnd["s_st"][1], bnd["s_go"][1], bnd["v_max"][1]])
    if initial is None:
        initial = FollowerModel(0.3, 0.2, DesiredSpeedCurve(15.0, 4.0, 20.0))
    c = initial.curve
    x0 = [initial.a, initial.b, c.s_st, c.s_go, c.v_max]
    n_samples = sum(len(ev.t) for ev in events)
    penalty = 1e6 * n_samples

    def sse(p):
        curve = _curve_or_none(p[4], p[2], p[3])
        if curve is None or p[0] <= 0:
            return penalty
        total = 0.0
        for ev in events:
            n = len(ev.t)
            v = _simulate_ovm(np.full(n, p[0]), np.full(n, p[1]), curve, ev.t, ev.v_E, ev.v_F[0], ev.s_FE[0])
            r = v - ev.v_F
            if not np.all(np.isfinite(r)):
                return penalty
            total += float(r @ r)
        return total

    best, used, conv = _multistart(sse, x0, lo, hi, restarts, seed, tol=1e-10 * n_samples)
    p = best.x
    model = FollowerModel(p[0], p[1], DesiredSpeedCurve(p[4], p[2], p[3]))
    warn = None if conv else "optimizer did not report convergence; best-so-far parameters returned"
    return FitResult(model, float(best.fun), math.sqrt(best.fun / n_samples), n_samples, used, conv, warn)


def fit_ovm(events, labels=None, initial=None, bounds=None, role: str = "driver", restarts: int = 10, seed: int = 0):
    if role == "driver":
        return fit_driver(events, labels, initial, bounds, restarts, seed)
    if role == "follower":
        return fit_follower(events, initial, bounds, restarts, seed)
    raise ValueError(f"role must be 'driver' or 'follower', got {role!r}")


# -- thresholds and task difficulty ---------------------------------------------------------

def extract_thresholds(events: list[LaneChangeEvent], tau: float = 1.0) -> CompletionCriterion:
    """Smallest rear and front gaps seen at the crossing instants."""
    if not events:
        raise CalibrationError("threshold extraction needs at least one event")
    gaps = np.array([ev.gaps_at_crossing() for ev in events])
    return CompletionCriterion(tau=tau, s_rear_thr=float(gaps[:, 0].min()), s_front_thr=float(gaps[:, 1].min()))


def _ego_accel(ev: LaneChangeEvent) -> np.ndarray:
    return np.gradient(ev.v_E, ev.t)


def fit_td(events: list[LaneChangeEvent], curve: DesiredSpeedCurve, delta: float = 0.30, zeta: float = 1.0,
           T_grid=None) -> tuple[TaskDifficultyParams, dict]:
    """Grid search over ``T_des`` (``delta`` and ``zeta`` held fixed).

    For each candidate the events are labelled by task difficulty and the ego
    acceleration is regressed per mode on ``[V(s) - v, v_L - v]``; the
    candidate with the smallest pooled residual wins. Only ``T_des/(1-delta)``
    moves the mode boundary, so ``delta`` is not identifiable here. A plateau
    of equally good candidates resolves to its midpoint.
    """
    if not events:
        raise CalibrationError("TD fitting needs at least one event")
    T_grid = np.round(np.arange(0.5, 2.5001, 0.01), 4) if T_grid is None else np.asarray(T_grid, dtype=float)
    acc = np.concatenate([_ego_accel(ev) for ev in events])
    rel = np.concatenate([desired_speed(curve, ev.s_EL) - ev.v_E for ev in events])
    dv = np.concatenate([ev.v_L - ev.v_E for ev in events])
    v_E = np.concatenate([ev.v_E for ev in events])
    s_EL = np.concatenate([ev.s_EL for ev in events])
    scores = np.empty(len(T_grid))
    for g, T in enumerate(T_grid):
        lab = td_mode_labeling(v_E, s_EL, TaskDifficultyParams(T, delta, zeta))
        sse = 0.0
        for m in (1, 2):
            sel = lab == m
            if sel.sum() < 3:
                sse = math.inf
                break
            X = np.column_stack([rel[sel], dv[sel]])
            coef, *_ = np.linalg.lstsq(X, acc[sel], rcond=None)
            r = acc[sel] - X @ coef
            sse += float(r @ r)
        scores[g] = sse
    if not np.isfinite(scores).any():
        raise CalibrationError("no TD candidate produces both modes")
    best = scores.min()
    plateau = T_grid[scores <= best * (1 + 1e-9) + 1e-15]
    T = float(0.5 * (plateau.min() + plateau.max()))
    return TaskDifficultyParams(T, delta, zeta), {"T_grid": T_grid.tolist(), "scores": scores.tolist()}


# -- full pipeline ---------------------------------------------------------------------

@dataclass
class CalibrationResult:
    driver: DriverModel
    follower: FollowerModel
    rates: HiddenRates
    td: TaskDifficultyParams
    criterion: CompletionCriterion
    residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        c, fc = self.driver.curve, self.follower.curve
        return {
            "T_des": self.td.T_des,
            "delta": self.td.delta,
            "zeta": self.td.zeta,
            "lambda_12": float(self.rates.lam[0, 1]),
            "lambda_21": float(self.rates.lam[1, 0]),
            "a_1": self.driver.a[0],
            "b_1": self.driver.b[0],
            "a_2": self.driver.a[1],
            "b_2": self.driver.b[1],
            "s_st": c.s_st,
            "s_go": c.s_go,
            "v_max": c.v_max,
            "follower": {"a": self.follower.a, "b": self.follower.b, "s_st": fc.s_st, "s_go": fc.s_go,
                         "v_max": fc.v_max},
            "thresholds": {"tau": self.criterion.tau, "s_rear_thr": self.criterion.s_rear_thr,
                           "s_front_thr": self.criterion.s_front_thr},
            "residuals": self.residuals,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CalibrationResult":
        f = d["follower"]
        return cls(
            DriverModel((d["a_1"], d["a_2"]), (d["b_1"], d["b_2"]), DesiredSpeedCurve(d["v_max"], d["s_st"], d["s_go"])),
            FollowerModel(f["a"], f["b"], DesiredSpeedCurve(f["v_max"], f["s_st"], f["s_go"])),
            HiddenRates.from_offdiag(d["lambda_12"], d["lambda_21"]),
            TaskDifficultyParams(d["T_des"], d["delta"], d["zeta"]),
            CompletionCriterion(**d["thresholds"]),
            d.get("residuals", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _pooled_ego_fit(events: list[LaneChangeEvent], driver0: DriverModel | None, restarts: int, seed: int) -> FitResult:
    """One car-following law for the ego, ignoring modes (ego and leader take the follower/leader slots)."""
    as_follower = [replace(ev, x_F=ev.x_E, v_F=ev.v_E, x_E=ev.x_L, v_E=ev.v_L) for ev in events]
    start = None
    if driver0 is not None:
        start = FollowerModel(float(np.mean(driver0.a)), float(np.mean(driver0.b)), driver0.curve)
    return fit_follower(as_follower, start, restarts=restarts, seed=seed)


def calibrate(events: list[LaneChangeEvent], driver0: DriverModel | None = None,
              follower0: FollowerModel | None = None, td0: TaskDifficultyParams | None = None,
              restarts: int = 10, seed: int = 0, fit_task_difficulty: bool = True) -> CalibrationResult:
    """Thresholds, task difficulty, driver and follower laws, and mode rates from lane-change events.

    Labels come from the TD rule; TD is refitted against the first driver
    curve estimate, and the driver is refitted if the labels moved.
    """
    if not events:
        raise CalibrationError("calibration needs at least one lane-change event")
    td = td0 or TaskDifficultyParams(1.0, 0.30, 1.0)
    labels = [td_mode_labeling(ev.v_E, ev.s_EL, td) for ev in events]
    both_modes = all(np.any(np.concatenate(labels) == m) for m in (1, 2))
    if both_modes:
        drv = fit_driver(events, labels, driver0, restarts=restarts, seed=seed)
        curve = drv.model.curve
    elif fit_task_difficulty:
        # the starting TD labels miss a mode: take the speed curve from a single-law fit first
        curve = _pooled_ego_fit(events, driver0, restarts, seed).model.curve
        drv = None
    else:
        raise CalibrationError("the starting TD parameters label only one mode; enable TD fitting or adjust td0")
    td_info = {}
    if fit_task_difficulty:
        td_new, td_info = fit_td(events, curve, td.delta, td.zeta)
        new_labels = [td_mode_labeling(ev.v_E, ev.s_EL, td_new) for ev in events]
        td = td_new
        if drv is None or any(np.any(a != b) for a, b in zip(labels, new_labels)):
            labels = new_labels
            drv = fit_driver(events, labels, drv.model if drv else driver0, restarts=restarts, seed=seed)
    fol = fit_follower(events, follower0, restarts=restarts, seed=seed)
    rates = mle_rates([(ev.t, lab) for ev, lab in zip(events, labels)], dt=events[0].dt)
    crit = extract_thresholds(events)
    residuals = {
        "driver_rmse": drv.rmse,
        "follower_rmse": fol.rmse,
        "driver_restarts": drv.restarts,
        "follower_restarts": fol.restarts,
        "warnings": [w for w in (drv.warning, fol.warning) if w],
        "n_events": len(events),
    }
    if td_info:
        residuals["td_best_score"] = float(np.min(td_info["scores"]))
    return CalibrationResult(drv.model, fol.model, rates, td, crit, residuals)
