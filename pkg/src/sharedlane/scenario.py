"""Scenario description: every model and experiment setting in one JSON-able object."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .markov import HiddenRates, ObservationParams, build_joint_generator
from .models import DesiredSpeedCurve, DriverModel, FollowerModel, TaskDifficultyParams, mode_from_td, task_difficulty
from .sim import CompletionCriterion, ConstantProfile, PulseProfile, SimConfig
from .synthesis import DEFAULT_EPS_GRID


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    driver: DriverModel
    follower: FollowerModel
    rates: HiddenRates
    obs: ObservationParams
    td: TaskDifficultyParams
    criterion: CompletionCriterion
    v_star: float
    profile: object = field(default_factory=PulseProfile)
    horizon: float = 20.0
    dt: float = 0.01
    eps_grid: tuple = DEFAULT_EPS_GRID
    reg_rank: int = 1
    seeds: object = 100
    master_seed: int = 2024
    scheme: str = "nominal_shared"
    beta: float | None = None
    name: str = "scenario"

    @property
    def gen(self):
        return build_joint_generator(self.rates, self.obs)

    def automation_law(self) -> FollowerModel:
        """Automation-only tracker: follower gains on the driver's spacing curve, so it keeps the same equilibrium."""
        return FollowerModel(self.follower.a, self.follower.b, self.driver.curve)

    def with_obs(self, alpha: float, q: float) -> "Scenario":
        return replace(self, obs=ObservationParams(alpha, q))

    def seed_list(self) -> list[int]:
        from .sim import trial_seeds

        if isinstance(self.seeds, int):
            return trial_seeds(self.master_seed, self.seeds)
        return [int(s) for s in self.seeds]

    def initial_mode(self, state) -> tuple[int, int]:
        """Hidden mode from TD at the initial state; the estimate starts in agreement."""
        m = mode_from_td(self.td, task_difficulty(self.td, state.v_E, state.s_EL))
        return (m, m)

    def sim_config(self, scheme: str | None = None, initial=None, seed=0) -> SimConfig:
        from .linmjls import find_equilibrium

        state = initial if initial is not None else find_equilibrium(self.driver, self.follower, self.v_star).state()
        return SimConfig(
            v_star=self.v_star,
            dt=self.dt,
            horizon=self.horizon,
            scheme=scheme or self.scheme,
            initial=initial,
            initial_mode=self.initial_mode(state),
            seed=seed,
        )

    # -- JSON ----------------------------------------------------------------
    def to_json(self) -> dict:
        c, fc = self.driver.curve, self.follower.curve
        prof = self.profile
        if isinstance(prof, PulseProfile):
            pj = {"type": "pulse", "a_L": prof.a_L, "t_L": prof.t_L}
        elif isinstance(prof, ConstantProfile):
            pj = {"type": "constant"}
        else:
            pj = {"type": "replay", "t": list(map(float, prof.t)), "v": list(map(float, prof.v))}
        return {
            "name": self.name,
            "driver": {"a_1": self.driver.a[0], "b_1": self.driver.b[0], "a_2": self.driver.a[1], "b_2": self.driver.b[1],
                       "s_st": c.s_st, "s_go": c.s_go, "v_max": c.v_max},
            "follower": {"a": self.follower.a, "b": self.follower.b, "s_st": fc.s_st, "s_go": fc.s_go, "v_max": fc.v_max},
            "lambda_12": float(self.rates.lam[0, 1]),
            "lambda_21": float(self.rates.lam[1, 0]),
            "alpha": self.obs.alpha,
            "q": self.obs.q,
            "td": {"T_des": self.td.T_des, "delta": self.td.delta, "zeta": self.td.zeta, "threshold": self.td.threshold},
            "criterion": {"tau": self.criterion.tau, "s_rear_thr": self.criterion.s_rear_thr,
                          "s_front_thr": self.criterion.s_front_thr},
            "v_star": self.v_star,
            "disturbance": pj,
            "horizon": self.horizon,
            "dt": self.dt,
            "eps_grid": [float(e) for e in self.eps_grid],
            "reg_rank": self.reg_rank,
            "seeds": self.seeds,
            "master_seed": self.master_seed,
            "scheme": self.scheme,
            "beta": self.beta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        from .sim import ReplayProfile

        try:
            dr, fo = d["driver"], d["follower"]
            driver = DriverModel((dr["a_1"], dr["a_2"]), (dr["b_1"], dr["b_2"]),
                                 DesiredSpeedCurve(dr["v_max"], dr["s_st"], dr["s_go"]))
            follower = FollowerModel(fo["a"], fo["b"], DesiredSpeedCurve(fo["v_max"], fo["s_st"], fo["s_go"]))
            rates = HiddenRates.from_offdiag(d["lambda_12"], d["lambda_21"])
            obs = ObservationParams(d.get("alpha", 0.05), d.get("q", 0.02))
            td = TaskDifficultyParams(**d["td"])
            criterion = CompletionCriterion(**d["criterion"])
            dist = d.get("disturbance", {"type": "pulse"})
            kind = dist.get("type", "pulse")
            if kind == "pulse":
                profile = PulseProfile(dist.get("a_L", 2.0), dist.get("t_L", 2.0))
            elif kind == "constant":
                profile = ConstantProfile()
            elif kind == "replay":
                profile = ReplayProfile(np.asarray(dist["t"]), np.asarray(dist["v"]))
            else:
                raise ScenarioError(f"unknown disturbance type {kind!r}")
            seeds = d.get("seeds", 100)
            if isinstance(seeds, list) and not seeds:
                raise ScenarioError("seeds must be nonempty")
            return cls(
                driver=driver, follower=follower, rates=rates, obs=obs, td=td, criterion=criterion,
                v_star=float(d["v_star"]), profile=profile,
                horizon=float(d.get("horizon", 20.0)), dt=float(d.get("dt", 0.01)),
                eps_grid=tuple(d.get("eps_grid", DEFAULT_EPS_GRID)), reg_rank=int(d.get("reg_rank", 1)),
                seeds=seeds, master_seed=int(d.get("master_seed", 2024)),
                scheme=d.get("scheme", "nominal_shared"), beta=d.get("beta"), name=d.get("name", "scenario"),
            )
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def bundled(name: str) -> Scenario:
    """Load a shipped scenario: ``"ngsim"`` or ``"tgsim"``."""
    fname = {"ngsim": "ngsim_scenario.json", "tgsim": "tgsim_scenario.json"}.get(name, name)
    with resources.files("sharedlane.data").joinpath(fname).open() as fh:
        return Scenario.from_json(json.load(fh))


def data_path(fname: str):
    return resources.files("sharedlane.data").joinpath(fname)
