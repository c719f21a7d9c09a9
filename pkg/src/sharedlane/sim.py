"""Closed-loop nonlinear simulation of the ego / leader / follower system."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .linmjls import Equilibrium, LinearMJLS
from .markov import JointGenerator, ModePath, sample_path
from .models import DriverModel, FollowerModel, PlantState, desired_speed
from .synthesis import ControllerGains

SCHEMES = ("human_only", "nominal_shared", "mic_shared", "automation_only")
SHARED = ("nominal_shared", "mic_shared")
CSV_COLUMNS = ("t", "v_E", "s_EL", "v_F", "s_FE", "v_L", "eta", "eta_hat", "u_H", "u_AV", "u")


class SimulationError(RuntimeError):
    pass


# -- leader disturbance ---------------------------------------------------------

@dataclass(frozen=True)
class PulseProfile:
    """Brake at ``a_L`` for ``t_L`` seconds, then accelerate back over the same time."""

    a_L: float = 2.0
    t_L: float = 2.0

    def __post_init__(self):
        if not (self.a_L > 0 and self.t_L > 0):
            raise ValueError("pulse needs a_L > 0 and t_L > 0")

    def speed(self, t: float, v_star: float) -> float:
        if t <= self.t_L:
            return v_star - self.a_L * t
        if t <= 2 * self.t_L:
            return v_star - self.a_L * (2 * self.t_L - t)
        return v_star


@dataclass(frozen=True)
class ReplayProfile:
    """Recorded leader speed, linearly interpolated and clamped at the ends."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("replay timestamps must be strictly increasing")
        object.__setattr__(self, "t", t - t[0])
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def speed(self, t: float, v_star: float) -> float:
        return float(np.interp(t, self.t, self.v))


@dataclass(frozen=True)
class ConstantProfile:
    def speed(self, t: float, v_star: float) -> float:
        return v_star


def leader_speed(profile, t: float, v_star: float) -> float:
    if t < 0:
        raise ValueError("time must be nonnegative")
    return profile.speed(t, v_star)


# -- completion -------------------------------------------------------------------

@dataclass(frozen=True)
class CompletionCriterion:
    tau: float = 1.0
    s_rear_thr: float = 8.8
    s_front_thr: float = 7.3

    def __post_init__(self):
        if not (self.tau > 0 and self.s_rear_thr > 0 and self.s_front_thr > 0):
            raise ValueError("completion thresholds must be positive")


def check_completion(criterion: CompletionCriterion, state: PlantState, v_L: float) -> bool:
    """All four gap and time-to-collision conditions, with strict inequalities."""
    return (
        state.s_FE > criterion.s_rear_thr
        and state.s_EL > criterion.s_front_thr
        and state.s_EL - criterion.tau * (state.v_E - v_L) > 0
        and state.s_FE - criterion.tau * (state.v_F - state.v_E) > 0
    )


# -- control ----------------------------------------------------------------------

def control_input(scheme: str, sys: LinearMJLS | None, gains: ControllerGains | None, state: PlantState,
                  v_L: float, hidden: int, observed: int, eq: Equilibrium, driver: DriverModel,
                  follower: FollowerModel | None = None) -> tuple[float, float]:
    """Return ``(u_H, u_AV)`` for one scheme.

    ``automation_only`` drives the ego with the follower-model OVM law
    tracking the leader and sets ``u_H = 0``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "automation_only":
        if follower is None:
            raise ValueError("automation_only needs the follower model as the tracking law")
        u_av = follower.a * (desired_speed(follower.curve, state.s_EL) - state.v_E) + follower.b * (v_L - state.v_E)
        return 0.0, u_av
    i = hidden - 1
    u_h = driver.a[i] * (desired_speed(driver.curve, state.s_EL) - state.v_E) + driver.b[i] * (v_L - state.v_E)
    if scheme == "human_only":
        return u_h, 0.0
    if gains is None:
        raise ValueError(f"scheme {scheme!r} requires controller gains")
    K = np.ravel(gains.K_AV[observed - 1])
    x_t = (state.v_E - eq.v_star, state.s_EL - eq.s_EL_star, state.v_F - eq.v_star, state.s_FE - eq.s_FE_star)
    u_av = K[0] * x_t[0] + K[1] * x_t[1] + K[2] * x_t[2] + K[3] * x_t[3] + float(gains.D_AV[observed - 1]) * (v_L - eq.v_star)
    return u_h, u_av


# -- integration --------------------------------------------------------------------

def _follower_acc(f: FollowerModel, v_E, s_EL, v_F, s_FE, v_L):
    if s_FE <= 0:
        return f.a * (desired_speed(f.curve, s_FE + s_EL) - v_F) + f.b * (v_L - v_F)
    return f.a * (desired_speed(f.curve, s_FE) - v_F) + f.b * (v_E - v_F)


def _rhs(x, u, v_L, follower):
    v_E, s_EL, v_F, s_FE = x
    return (u, v_L - v_E, _follower_acc(follower, v_E, s_EL, v_F, s_FE, v_L), v_E - v_F)


def step(state, u: float, follower: FollowerModel, v_L, t: float, dt: float) -> tuple:
    """One classical RK4 step with ``u`` held constant; ``v_L`` is a callable of time."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = tuple(state.as_array()) if isinstance(state, PlantState) else tuple(state)
    h2 = 0.5 * dt
    vl0, vl1, vl2 = v_L(t), v_L(t + h2), v_L(t + dt)
    k1 = _rhs(x, u, vl0, follower)
    k2 = _rhs(tuple(a + h2 * b for a, b in zip(x, k1)), u, vl1, follower)
    k3 = _rhs(tuple(a + h2 * b for a, b in zip(x, k2)), u, vl1, follower)
    k4 = _rhs(tuple(a + dt * b for a, b in zip(x, k3)), u, vl2, follower)
    out = tuple(a + dt / 6.0 * (p + 2 * q + 2 * r + s) for a, p, q, r, s in zip(x, k1, k2, k3, k4))
    if not all(math.isfinite(v) for v in out):
        raise SimulationError(f"non-finite state at t={t + dt:.4f}: {out}")
    return out


# -- run ----------------------------------------------------------------------------

@dataclass
class SimConfig:
    v_star: float
    dt: float = 0.01
    horizon: float = 20.0
    scheme: str = "nominal_shared"
    initial: PlantState | None = None
    initial_mode: tuple[int, int] = (1, 1)
    seed: int | None = 0
    collision_guard: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > self.dt:
            raise ValueError("horizon must exceed dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray  # (N, 4): v_E, s_EL, v_F, s_FE
    v_L: np.ndarray
    eta: np.ndarray
    eta_hat: np.ndarray
    u_H: np.ndarray
    u_AV: np.ndarray
    u: np.ndarray
    a_F: np.ndarray
    t_LC: float | None
    collision: bool
    seed: int | None
    scheme: str
    v_star: float
    dt: float
    horizon: float
    meta: dict = field(default_factory=dict)

    @property
    def v_E(self):
        return self.x[:, 0]

    @property
    def s_EL(self):
        return self.x[:, 1]

    @property
    def v_F(self):
        return self.x[:, 2]

    @property
    def s_FE(self):
        return self.x[:, 3]

    def columns(self) -> np.ndarray:
        return np.column_stack([self.t, self.x, self.v_L, self.eta, self.eta_hat, self.u_H, self.u_AV, self.u])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.columns():
                w.writerow([repr(float(v)) if j not in (6, 7) else int(v) for j, v in enumerate(row)])

    def metadata(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "v_star": self.v_star,
            "dt": self.dt,
            "horizon": self.horizon,
            "t_LC": self.t_LC,
            "collision": self.collision,
            "n_samples": int(len(self.t)),
        }


def _path_lookup(path: ModePath, n_steps: int, dt: float) -> np.ndarray:
    t = np.arange(n_steps + 1) * dt
    return path.at(t)


def run(config: SimConfig, sys: LinearMJLS | None, gains: ControllerGains | None, driver: DriverModel,
        follower: FollowerModel, gen: JointGenerator, profile, criterion: CompletionCriterion,
        eq: Equilibrium | None = None, path: ModePath | None = None,
        automation: FollowerModel | None = None) -> SimResult:
    """Simulate one closed-loop run.

    The hidden mode follows a CTMC path sampled from ``gen`` with
    ``config.seed`` (or the supplied ``path``); a jump takes effect at the
    first integration step at or after its time.
    """
    eq = eq if eq is not None else (sys.eq if sys is not None else None)
    if eq is None:
        raise ValueError("an equilibrium is required")
    if config.scheme in SHARED and gains is None:
        raise ValueError(f"scheme {config.scheme!r} requires controller gains")
    dt = config.dt
    n = int(round(config.horizon / dt))
    if path is None:
        path = sample_path(gen, config.initial_mode, config.horizon, seed=config.seed)
    joint = _path_lookup(path, n, dt)
    n_obs = gen.n_observed
    hid = joint // n_obs + 1
    obs = joint % n_obs + 1
    v_star = eq.v_star
    vl = lambda t: profile.speed(t, v_star)
    auto_law = automation or follower

    x = tuple(config.initial.as_array()) if config.initial is not None else tuple(eq.x_star)
    rows = np.zeros((n + 1, 9))
    t_lc = None
    collision = False
    last = n
    for s in range(n + 1):
        t = s * dt
        v_l = vl(t)
        st = PlantState(*x)
        if config.collision_guard and (st.s_EL <= 0 or (t_lc is not None and st.s_FE <= 0)):
            collision = True
            last = s - 1
            break
        u_h, u_av = control_input(config.scheme, sys, gains, st, v_l, int(hid[s]), int(obs[s]), eq, driver, auto_law)
        u = u_h + u_av
        a_f = _follower_acc(follower, *x, v_l)
        rows[s] = (*x, v_l, u_h, u_av, u, a_f)
        if t_lc is None and check_completion(criterion, st, v_l):
            t_lc = t
        if s < n:
            x = step(x, u, follower, vl, t, dt)
    rows = rows[: last + 1]
    m = len(rows)
    return SimResult(
        t=np.arange(m) * dt,
        x=rows[:, :4].copy(),
        v_L=rows[:, 4].copy(),
        eta=hid[:m].astype(int),
        eta_hat=obs[:m].astype(int),
        u_H=rows[:, 5].copy(),
        u_AV=rows[:, 6].copy(),
        u=rows[:, 7].copy(),
        a_F=rows[:, 8].copy(),
        t_LC=t_lc,
        collision=collision,
        seed=config.seed,
        scheme=config.scheme,
        v_star=v_star,
        dt=dt,
        horizon=config.horizon,
    )


def trial_seeds(master_seed: int, n: int) -> list[int]:
    """Per-trial seeds derived deterministically from a master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


def _run_one(args):
    config, rest, kwargs = args
    return run(config, *rest, **kwargs)


def run_many(config: SimConfig, seeds, *args, jobs: int | None = 1, **kwargs) -> list[SimResult]:
    """Independent runs over ``seeds``; results are ordered by seed index regardless of ``jobs``."""
    tasks = [(replace(config, seed=int(s)), args, kwargs) for s in seeds]
    if jobs is not None and jobs <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))
