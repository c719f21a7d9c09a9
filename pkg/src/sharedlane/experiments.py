"""Experiment drivers shared by the CLI and the demo scripts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .linmjls import Equilibrium, LinearMJLS, find_equilibrium, linearize
from .markov import JointGenerator, ObservationParams, sample_coupled_paths
from .metrics import AggregateReport, MetricReport, aggregate, path_observation_quality, report
from .scenario import Scenario
from .sim import SHARED, SimResult, run_many
from .synthesis import ControllerGains, SynthesisError, certify_dissipation, synthesize

log = logging.getLogger(__name__)

BETA_GRID = tuple(np.round(np.arange(0.5, 5.01, 0.5), 2))
ALPHA_GRID = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
Q_GRID = (0.02, 0.10, 0.20, 0.30)


@dataclass
class Plant:
    eq: Equilibrium
    sys: LinearMJLS
    gen: JointGenerator


def prepare(scn: Scenario, v_star: float | None = None) -> Plant:
    eq = find_equilibrium(scn.driver, scn.follower, scn.v_star if v_star is None else v_star)
    return Plant(eq, linearize(scn.driver, scn.follower, eq), scn.gen)


def design(scn: Scenario, beta: float | None = None, plant: Plant | None = None, adapter=None) -> ControllerGains:
    """Minimum-gamma gains; ``beta=None`` is the nominal design."""
    plant = plant or prepare(scn)
    return synthesize(plant.sys, plant.gen, beta=beta, eps_grid=scn.eps_grid, reg_rank=scn.reg_rank, adapter=adapter)


@dataclass
class Outcome:
    scheme: str
    results: list[SimResult]
    reports: list[MetricReport]
    summary: AggregateReport


def run_scheme(scn: Scenario, scheme: str, gains: ControllerGains | None, plant: Plant | None = None,
               seeds=None, jobs: int | None = 1, initial=None, profile=None) -> Outcome:
    plant = plant or prepare(scn)
    seeds = scn.seed_list() if seeds is None else list(seeds)
    cfg = scn.sim_config(scheme, initial=initial)
    results = run_many(cfg, seeds, plant.sys, gains if scheme in SHARED else None, scn.driver, scn.follower,
                       plant.gen, profile or scn.profile, scn.criterion, eq=plant.eq, jobs=jobs,
                       automation=scn.automation_law())
    reports = [report(r) for r in results]
    return Outcome(scheme, results, reports, aggregate(reports))


def monte_carlo(scn: Scenario, schemes=("human_only", "nominal_shared"), gains: dict | None = None,
                seeds=None, jobs: int | None = 1) -> dict[str, Outcome]:
    """Paired-seed comparison: every scheme sees the same mode-path seeds."""
    plant = prepare(scn)
    gains = dict(gains or {})
    out = {}
    for scheme in schemes:
        g = gains.get(scheme)
        if scheme in SHARED and g is None:
            g = design(scn, scn.beta if scheme == "mic_shared" else None, plant)
            gains[scheme] = g
        out[scheme] = run_scheme(scn, scheme, g, plant, seeds, jobs)
    return out


SWEEP_COLUMNS = ("beta", "status", "gamma0", "gamma_est", "r_int", "rms_aE", "rms_aF", "t_LC", "completion_rate",
                 "certified")


def _row(label, gains, summary: AggregateReport | None, cert=None, status="ok") -> dict:
    def mean(name):
        return summary.mean(name) if summary is not None else None

    return {
        "beta": label,
        "status": status,
        "gamma0": gains.gamma if gains is not None else None,
        "gamma_est": mean("gamma_est"),
        "r_int": mean("r_int"),
        "rms_aE": mean("rms_aE"),
        "rms_aF": mean("rms_aF"),
        "t_LC": mean("t_LC"),
        "completion_rate": summary.completion_rate if summary is not None else None,
        "certified": cert.passed if cert is not None else None,
    }


def sweep_beta(scn: Scenario, betas=BETA_GRID, seeds=None, jobs: int | None = 1, include_nominal: bool = True,
               adapter=None) -> list[dict]:
    """Per-beta MIC metrics on paired seeds; the first row is the nominal design (``beta`` = "nominal")."""
    plant = prepare(scn)
    rows = []
    labels = (["nominal"] if include_nominal else []) + [float(b) for b in betas]
    for label in labels:
        beta = None if label == "nominal" else label
        scheme = "nominal_shared" if beta is None else "mic_shared"
        try:
            g = design(scn, beta, plant, adapter)
        except SynthesisError as exc:
            log.warning("synthesis failed at beta=%s: %s", label, exc)
            rows.append(_row(label, None, None, status="infeasible"))
            continue
        cert = certify_dissipation(plant.sys, plant.gen, g, beta=beta)
        outcome = run_scheme(scn, scheme, g, plant, seeds, jobs)
        rows.append(_row(label, g, outcome.summary, cert))
        log.info("beta=%s gamma0=%.4f r_int=%.3f", label, g.gamma, rows[-1]["r_int"])
    return rows


OBS_COLUMNS = ("alpha", "q", "status", "accuracy", "follow_delay", "gamma0", "certified", "gamma_est")


def sweep_obs(scn: Scenario, alphas=ALPHA_GRID, qs=Q_GRID, seeds=None, jobs: int | None = 1,
              path_horizon: float = 1e5, extra_points=((0.0, 0.0),), adapter=None) -> list[dict]:
    """Observation-quality sensitivity over an (alpha, q) grid.

    Accuracy and follow delay come from one long mode path per grid point,
    sampled with shared randomness across the grid (see
    ``sample_coupled_paths``). Each point also gets its own synthesis, a
    dissipation certificate and a Monte Carlo gamma estimate.
    """
    points = [(float(a), float(q)) for a, q in extra_points] + [(float(a), float(q)) for q in qs for a in alphas]
    obs_list = [ObservationParams(a, q) for a, q in points]
    paths = sample_coupled_paths(scn.rates, obs_list, (1, 1), path_horizon, seed=scn.master_seed)
    rows = []
    for (a, q), path in zip(points, paths):
        acc, delay = path_observation_quality(path)
        row = {"alpha": a, "q": q, "status": "ok", "accuracy": acc, "follow_delay": delay,
               "gamma0": None, "certified": None, "gamma_est": None}
        sub = scn.with_obs(a, q)
        plant = prepare(sub)
        try:
            g = design(sub, scn.beta if scn.scheme == "mic_shared" else None, plant, adapter)
        except SynthesisError as exc:
            log.warning("synthesis failed at alpha=%g q=%g: %s", a, q, exc)
            row["status"] = "infeasible"
            rows.append(row)
            continue
        beta = g.beta if scn.scheme == "mic_shared" else None
        cert = certify_dissipation(plant.sys, plant.gen, g, beta=beta)
        scheme = "mic_shared" if beta is not None else "nominal_shared"
        outcome = run_scheme(sub, scheme, g, plant, seeds, jobs)
        row.update(gamma0=g.gamma, certified=cert.passed, gamma_est=outcome.summary.mean("gamma_est"))
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict], columns, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})


def with_seeds(scn: Scenario, seeds) -> Scenario:
    return replace(scn, seeds=seeds)


REPLAY_BASELINE = {"ngsim": "human_only", "tgsim": "automation_only"}
REPLAY_FIELDS = ("t_LC", "gamma_est", "r_int", "rms_aE", "rms_aF", "completion_rate")


def replay(scn: Scenario, event, baseline: str = "human_only", beta: float | None = None, seeds=None,
           jobs: int | None = 1, gains: ControllerGains | None = None) -> dict:
    """Baseline vs MIC on a replayed leader trajectory.

    The plant is linearized at the mean leader speed over the window, the
    initial state is taken from the data at the window start, and both
    schemes see the same mode-path seeds. Events longer than the scenario
    horizon are cut to their first ``horizon`` seconds.
    """
    from .models import PlantState
    from .sim import ReplayProfile

    if baseline not in ("human_only", "automation_only"):
        raise ValueError(f"replay baseline must be human_only or automation_only, got {baseline!r}")
    beta = beta if beta is not None else (scn.beta if scn.beta is not None else 2.0)
    if event.t[-1] - event.t[0] > scn.horizon + 1e-9:
        event = event.clip(event.t[0], event.t[0] + scn.horizon)
    v_star = float(np.mean(event.v_L))
    horizon = float(event.t[-1] - event.t[0])
    sub = replace(scn, v_star=v_star, horizon=horizon)
    plant = prepare(sub)
    initial = PlantState(float(event.v_E[0]), float(event.s_EL[0]), float(event.v_F[0]), float(event.s_FE[0]))
    profile = ReplayProfile(np.asarray(event.t, dtype=float), np.asarray(event.v_L, dtype=float))
    gains = gains or design(sub, beta, plant)
    out = {"v_star": v_star, "horizon": horizon, "beta": beta, "gamma0": gains.gamma, "baseline": baseline,
           "ego_id": event.ego_id, "leader_id": event.leader_id, "follower_id": event.follower_id}
    for key, scheme, g in (("baseline", baseline, None), ("mic", "mic_shared", gains)):
        o = run_scheme(sub, scheme, g, plant, seeds, jobs, initial=initial, profile=profile)
        stats = {f: (o.summary.completion_rate if f == "completion_rate" else o.summary.mean(f)) for f in REPLAY_FIELDS}
        out[key] = stats
    return out
