"""Scalar performance measures and Monte Carlo aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

FOLLOW_DELAY_CAP = 0.5


class MetricError(ValueError):
    pass


def l2_norm(x, dt: float) -> float:
    """Trapezoidal L2 norm of a uniformly sampled signal."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    return math.sqrt(np.trapezoid(x * x, dx=dt))


def empirical_gain(result, v_star: float | None = None) -> float:
    """Ratio of follower-speed to leader-speed perturbation energy over the run."""
    v_star = result.v_star if v_star is None else v_star
    den = l2_norm(result.v_L - v_star, result.dt)
    if den == 0:
        raise MetricError("leader perturbation has zero energy; empirical gain is undefined")
    return l2_norm(result.v_F - v_star, result.dt) / den


def input_energies(result) -> tuple[float, float]:
    return l2_norm(result.u_AV, result.dt), l2_norm(result.u_H, result.dt)


def intervention_ratio(result) -> float:
    """Automation share ``E_AV / (E_AV + E_H)`` of the input L2 norms."""
    e_av, e_h = input_energies(result)
    if e_av + e_h == 0:
        raise MetricError("both input energies are zero; intervention ratio is undefined")
    return e_av / (e_av + e_h)


def rms_accel(a, T: float, dt: float | None = None) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise MetricError("empty acceleration series")
    if not T > 0:
        raise MetricError("T must be positive")
    if dt is None:
        dt = T / (a.size - 1)
    return math.sqrt(np.trapezoid(a * a, dx=dt) / T)


def observation_quality(result, cap: float = FOLLOW_DELAY_CAP) -> tuple[float, float]:
    """Time fraction with ``eta_hat == eta`` and mean capped catch-up lag after hidden jumps."""
    return mode_agreement(result.t, result.eta, result.eta_hat, cap=cap)


def mode_agreement(t, eta, eta_hat, horizon: float | None = None, cap: float = FOLLOW_DELAY_CAP) -> tuple[float, float]:
    """Accuracy and follow delay for piecewise-constant mode series.

    Labels hold from their time stamp to the next one; the last holds until
    ``horizon`` (one median sample period past the end if omitted). The
    follow delay is the lag from each hidden jump to the first time the
    estimate agrees, capped at ``cap``; a jump with no catch-up before the
    next jump (or the horizon) contributes ``cap``. No jumps gives delay 0.
    """
    t = np.asarray(t, dtype=float)
    eta = np.asarray(eta)
    eta_hat = np.asarray(eta_hat)
    if horizon is None:
        horizon = t[-1] + (np.median(np.diff(t)) if len(t) > 1 else 1.0)
    dur = np.diff(np.append(t, horizon))
    total = dur.sum()
    accuracy = float(dur[eta == eta_hat].sum() / total) if total > 0 else 1.0

    jumps = np.flatnonzero(np.diff(eta)) + 1
    if jumps.size == 0:
        return accuracy, 0.0
    lags = []
    bounds = list(jumps) + [len(t)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        match = np.flatnonzero(eta_hat[a:b] == eta[a:b])
        if match.size == 0:
            lags.append(cap)
        else:
            lags.append(min(cap, t[a + match[0]] - t[a]))
    return accuracy, float(np.mean(lags))


def path_observation_quality(path, cap: float = FOLLOW_DELAY_CAP) -> tuple[float, float]:
    """Exact accuracy / follow delay on a continuous-time ``ModePath``."""
    return mode_agreement(path.times, path.hidden(), path.observed(), horizon=path.horizon, cap=cap)


@dataclass
class MetricReport:
    gamma_est: float | None = None
    r_int: float | None = None
    E_AV: float | None = None
    E_H: float | None = None
    rms_aE: float | None = None
    rms_aF: float | None = None
    t_LC: float | None = None
    obs_accuracy: float | None = None
    follow_delay: float | None = None
    seed: int | None = None
    scheme: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


METRIC_FIELDS = ("gamma_est", "r_int", "E_AV", "E_H", "rms_aE", "rms_aF", "obs_accuracy", "follow_delay")


def report(result) -> MetricReport:
    """All per-run metrics for one ``SimResult``."""
    e_av, e_h = input_energies(result)
    T = result.t[-1] if len(result.t) > 1 else result.horizon
    acc, delay = observation_quality(result)
    try:
        gamma = empirical_gain(result)
    except MetricError:
        gamma = None
    return MetricReport(
        gamma_est=gamma,
        r_int=e_av / (e_av + e_h) if e_av + e_h > 0 else None,
        E_AV=e_av,
        E_H=e_h,
        rms_aE=rms_accel(result.u, T, result.dt),
        rms_aF=rms_accel(result.a_F, T, result.dt),
        t_LC=result.t_LC,
        obs_accuracy=acc,
        follow_delay=delay,
        seed=result.seed,
        scheme=result.scheme,
    )


@dataclass
class AggregateReport:
    n_runs: int
    stats: dict = field(default_factory=dict)  # metric -> {mean, max, min, variance}
    completion_rate: float = 0.0

    def mean(self, name: str) -> float | None:
        s = self.stats.get(name)
        return None if s is None else s["mean"]

    def to_json(self) -> dict:
        return {"n_runs": self.n_runs, "completion_rate": self.completion_rate, "stats": self.stats}


def _summary(vals) -> dict | None:
    vals = np.asarray([v for v in vals if v is not None], dtype=float)
    if vals.size == 0:
        return None
    return {
        "mean": float(vals.mean()),
        "max": float(vals.max()),
        "min": float(vals.min()),
        "variance": float(vals.var()),
        "count": int(vals.size),
    }


def aggregate(reports) -> AggregateReport:
    """Mean / max / min / population variance per metric; ``t_LC`` over completing runs only."""
    reports = list(reports)
    if not reports:
        raise MetricError("cannot aggregate an empty set of reports")
    stats = {}
    for name in METRIC_FIELDS + ("t_LC",):
        s = _summary(getattr(r, name) for r in reports)
        if s is not None:
            stats[name] = s
    done = sum(r.t_LC is not None for r in reports)
    return AggregateReport(len(reports), stats, done / len(reports))


def dump_reports(reports, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in reports], fh, indent=1)
