"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 infeasible synthesis or failed
certificate, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .calib import CalibrationError, IngestError, calibrate, extract_events, ingest
from .experiments import (ALPHA_GRID, BETA_GRID, OBS_COLUMNS, Q_GRID, SWEEP_COLUMNS, design, monte_carlo, prepare,
                          replay, rows_to_csv, sweep_beta, sweep_obs)
from .metrics import METRIC_FIELDS, report
from .scenario import Scenario, ScenarioError, bundled, data_path
from .sim import SCHEMES, SHARED, SimulationError, run
from .synthesis import ControllerGains, SynthesisError, certify_dissipation

OUT_ENV = "SHAREDLANE_OUT"
EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("sharedlane")


class UsageError(ValueError):
    pass


# -- argument helpers ------------------------------------------------------------

def parse_grid(text: str) -> list[float]:
    """``"0.5,1,2"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise UsageError("grid step must be positive")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(n)]
        vals = [float(x) for x in text.strip("[]").split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None
    if not vals:
        raise UsageError("grid is empty")
    return vals


def parse_seeds(text: str):
    """A count (``"100"``) or an explicit list (``"1,2,3"`` / ``"[42]"``)."""
    text = text.strip()
    try:
        if text.startswith("[") or "," in text:
            seeds = [int(x) for x in text.strip("[]").split(",") if x.strip()]
            if not seeds:
                raise UsageError("seed list is empty")
            return seeds
        n = int(text)
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}") from None
    if n < 1:
        raise UsageError("need at least one seed")
    return n


def load_scenario(args) -> Scenario:
    src = args.scenario
    if src in ("ngsim", "tgsim"):
        scn = bundled(src)
    else:
        if not Path(src).is_file():
            raise ScenarioError(f"scenario file {src!r} does not exist")
        scn = Scenario.load(src)
    if getattr(args, "seeds", None):
        scn = replace(scn, seeds=parse_seeds(args.seeds))
    if getattr(args, "scheme", None) and "," not in args.scheme:
        if args.scheme not in SCHEMES:
            raise UsageError(f"unknown scheme {args.scheme!r}")
        scn = replace(scn, scheme=args.scheme)
    return scn


def out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_meta(out: Path, command: str, argv) -> None:
    # the only file carrying a timestamp; primary outputs stay byte-reproducible
    write_json(out / f"{command}.meta.json",
               {"command": command, "argv": list(argv), "version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S")})


def _beta_for(scn: Scenario, args) -> float | None:
    if getattr(args, "beta", None):
        grid = parse_grid(args.beta)
        if len(grid) != 1:
            raise UsageError("this command takes a single --beta value")
        return grid[0]
    return scn.beta if scn.scheme == "mic_shared" else None


# -- commands ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    scn = load_scenario(args)
    out = out_dir(args)
    beta = _beta_for(scn, args)
    plant = prepare(scn)
    try:
        gains = design(scn, beta, plant)
    except SynthesisError as exc:
        write_json(out / "synth_diagnostics.json", exc.diagnostics)
        log.error("synthesis infeasible: %s", exc)
        return EXIT_INFEASIBLE
    cert = certify_dissipation(plant.sys, plant.gen, gains, beta=beta)
    gains.save(out / "gains.json")
    write_json(out / "synth_diagnostics.json", gains.diagnostics)
    write_json(out / "certificate.json", cert.to_json())
    verdict = "PASS" if cert.passed else "FAIL"
    print(f"gamma0={gains.gamma:.6f} epsilon={gains.epsilon:g} beta={beta} certificate={verdict} "
          f"(worst max-eig {cert.worst:.3e})")
    return EXIT_OK if cert.passed else EXIT_INFEASIBLE


def _load_gains(path) -> ControllerGains:
    try:
        return ControllerGains.load(path)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read gains file {path!r}: {exc}") from None


def cmd_montecarlo(args) -> int:
    scn = load_scenario(args)
    out = out_dir(args)
    schemes = [s.strip() for s in (args.scheme or "human_only,nominal_shared").split(",")]
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}")
    if args.beta:
        scn = replace(scn, beta=_beta_for(scn, args))
    gains = {}
    if args.gains:
        g = _load_gains(args.gains)
        for s in schemes:
            if s in SHARED:
                gains[s] = g
    outcomes = monte_carlo(scn, schemes, gains, jobs=args.jobs)
    summary = {"seeds": scn.seed_list(), "paired": True,
               "schemes": {s: o.summary.to_json() for s, o in outcomes.items()}}
    write_json(out / "montecarlo_summary.json", summary)
    cols = ("scheme", "seed", *METRIC_FIELDS, "t_LC", "collision")
    with open(out / "montecarlo_runs.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for s, o in outcomes.items():
            for res, rep in zip(o.results, o.reports):
                d = rep.to_json()
                vals = [s, res.seed, *(d[f] for f in METRIC_FIELDS), d["t_LC"], int(res.collision)]
                fh.write(",".join("" if v is None else (f"{v:.10g}" if isinstance(v, float) else str(v)) for v in vals) + "\n")
    for s, o in outcomes.items():
        st = o.summary.stats["gamma_est"]
        print(f"{s:16s} gamma_est mean={st['mean']:.4f} max={st['max']:.4f} min={st['min']:.4f} "
              f"var={st['variance']:.2e} completion={o.summary.completion_rate:.2f} "
              f"({'stable' if st['max'] <= 1 else 'unstable'})")
    return EXIT_OK


def cmd_run(args) -> int:
    scn = load_scenario(args)
    out = out_dir(args)
    seeds = scn.seed_list()
    plant = prepare(scn)
    gains = None
    if scn.scheme in SHARED:
        gains = _load_gains(args.gains) if args.gains else design(scn, _beta_for(scn, args), plant)
    cfg = scn.sim_config(seed=seeds[0])
    res = run(cfg, plant.sys, gains, scn.driver, scn.follower, plant.gen, scn.profile, scn.criterion, eq=plant.eq,
              automation=scn.automation_law())
    res.to_csv(out / "run.csv")
    write_json(out / "run_metrics.json", {"metrics": report(res).to_json(), "meta": res.metadata()})
    print(f"{scn.scheme} seed={seeds[0]} t_LC={res.t_LC} collision={res.collision}")
    return EXIT_OK


def cmd_sweep_beta(args) -> int:
    scn = load_scenario(args)
    out = out_dir(args)
    betas = parse_grid(args.beta) if args.beta else list(BETA_GRID)
    rows = sweep_beta(scn, betas, jobs=args.jobs)
    rows_to_csv(rows, SWEEP_COLUMNS, out / "sweep_beta.csv")
    write_json(out / "sweep_beta.json", rows)
    for r in rows:
        print(" ".join(f"{k}={'' if r[k] is None else (round(r[k], 4) if isinstance(r[k], float) else r[k])}"
                       for k in SWEEP_COLUMNS))
    return EXIT_OK


def cmd_sweep_obs(args) -> int:
    scn = load_scenario(args)
    out = out_dir(args)
    alphas = parse_grid(args.alpha) if args.alpha else list(ALPHA_GRID)
    qs = parse_grid(args.q) if args.q else list(Q_GRID)
    rows = sweep_obs(scn, alphas, qs, jobs=args.jobs, path_horizon=args.path_horizon)
    rows_to_csv(rows, OBS_COLUMNS, out / "sweep_obs.csv")
    write_json(out / "sweep_obs.json", rows)
    for r in rows:
        print(f"alpha={r['alpha']:.2f} q={r['q']:.2f} accuracy={r['accuracy']:.4f} delay={r['follow_delay']:.4f} "
              f"gamma0={r['gamma0']} certified={r['certified']}")
    return EXIT_OK


def cmd_replay(args) -> int:
    scn = load_scenario(args)
    out = out_dir(args)
    kind = args.mode or ("tgsim" if "tgsim" in scn.name else "ngsim")
    baseline = {"ngsim": "human_only", "tgsim": "automation_only"}[kind]
    events_file = args.events or str(data_path(f"{kind}_event.csv"))
    skipped = []
    events = extract_events(ingest(events_file), window=(args.window, args.window), skipped=skipped)
    if args.ego is not None:
        events = [e for e in events if e.ego_id == args.ego]
    if not events:
        reasons = "; ".join(f"vehicle {v} at t={t:g}: {r}" for v, t, r in skipped) or "no lane change found"
        raise CalibrationError(f"no replayable lane-change event in {events_file}: {reasons}")
    beta = _beta_for(scn, args)
    rep = replay(scn, events[0], baseline, beta=beta, jobs=args.jobs)
    write_json(out / "replay.json", rep)
    for key in ("baseline", "mic"):
        r = rep[key]
        name = baseline if key == "baseline" else "mic_shared"
        print(f"{name:16s} t_LC={r['t_LC']} gamma_est={r['gamma_est']:.4f} r_int={r['r_int']:.3f} "
              f"rms_aE={r['rms_aE']:.3f} rms_aF={r['rms_aF']:.3f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    scn = load_scenario(args) if args.scenario else bundled("ngsim")
    out = out_dir(args)
    events = []
    for f in args.data:
        if not Path(f).is_file():
            raise IngestError(f"data file {f!r} does not exist")
        skipped = []
        events += extract_events(ingest(f), window=(args.window, args.window),
                                 vehicle_length=args.vehicle_length, skipped=skipped)
        for v, t, r in skipped:
            log.warning("%s: vehicle %s at t=%g skipped (%s)", f, v, t, r)
    result = calibrate(events, td0=scn.td, restarts=args.restarts, seed=args.seed)
    result.save(out / "calibration.json")
    d = result.to_json()
    print(" ".join(f"{k}={d[k]:.4g}" for k in ("T_des", "delta", "lambda_12", "lambda_21", "a_1", "b_1", "a_2", "b_2",
                                                "s_st", "s_go", "v_max")))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharedlane", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True, scheme=True, jobs=True):
        sp.add_argument("--scenario", default="ngsim", help="scenario JSON path, or 'ngsim' / 'tgsim' for the bundled ones")
        sp.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")
        if seeds:
            sp.add_argument("--seeds", default=None, help="trial count or explicit list, e.g. 100 or 1,2,3")
        if scheme:
            sp.add_argument("--scheme", default=None, help=f"one of {', '.join(SCHEMES)}")
        if jobs:
            sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")

    sp = sub.add_parser("synth", help="synthesize gains and certify them")
    common(sp, seeds=False, jobs=False)
    sp.add_argument("--beta", default=None, help="MIC effort weight (omit for the nominal design)")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("run", help="one closed-loop run with a CSV trace")
    common(sp, jobs=False)
    sp.add_argument("--beta", default=None)
    sp.add_argument("--gains", default=None, help="gains JSON from 'synth'")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("montecarlo", help="paired-seed Monte Carlo comparison of schemes")
    common(sp)
    sp.add_argument("--beta", default=None)
    sp.add_argument("--gains", default=None, help="gains JSON used for every shared scheme")
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("sweep-beta", help="MIC metrics over a beta grid")
    common(sp, scheme=False)
    sp.add_argument("--beta", default=None, help="grid, e.g. 0.5:5:0.5")
    sp.set_defaults(func=cmd_sweep_beta)

    sp = sub.add_parser("sweep-obs", help="observation-quality sensitivity over alpha and q grids")
    common(sp, scheme=False)
    sp.add_argument("--alpha", default=None, help="grid, e.g. 0.05:0.3:0.05")
    sp.add_argument("--q", default=None, help="grid, e.g. 0.02,0.1,0.2,0.3")
    sp.add_argument("--path-horizon", type=float, default=1e5, help="length of the mode path behind accuracy/delay (s)")
    sp.set_defaults(func=cmd_sweep_obs)

    sp = sub.add_parser("replay", help="baseline vs MIC on a recorded leader trajectory")
    common(sp, scheme=False)
    sp.add_argument("--events", default=None, help="trajectory CSV (default: the bundled event for the scenario)")
    sp.add_argument("--mode", choices=("ngsim", "tgsim"), default=None,
                    help="ngsim compares against human-only, tgsim against automation-only")
    sp.add_argument("--ego", type=int, default=None, help="ego vehicle id when the file holds several events")
    sp.add_argument("--beta", default=None)
    sp.add_argument("--window", type=float, default=30.0, help="seconds kept either side of the crossing")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("calibrate", help="fit driver, follower, mode rates and thresholds from trajectories")
    sp.add_argument("data", nargs="+", help="trajectory CSV files")
    sp.add_argument("--scenario", default=None, help="scenario supplying the TD priors (delta, zeta)")
    sp.add_argument("--out", default=None)
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--window", type=float, default=10.0)
    sp.add_argument("--vehicle-length", type=float, default=4.5)
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means infeasible
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
        if code == EXIT_OK:
            write_meta(out_dir(args), args.command, argv)
        return code
    except (UsageError, ScenarioError, IngestError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SynthesisError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SimulationError, RuntimeError, FloatingPointError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
