"""Joint hidden/observed continuous-time Markov mode process.

The hidden mode ``eta`` is the driver's task-difficulty state; the observed
mode ``eta_hat`` is the controller's estimate of it. Both take values in
``{1, ..., n}`` and the pair evolves as one CTMC on the product space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .models import TaskDifficultyParams, mode_from_td, task_difficulty

ROW_SUM_TOL = 1e-12


class EstimationError(ValueError):
    pass


def _check_generator(Q: np.ndarray, name: str) -> None:
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"{name} must be square")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise ValueError(f"{name} has negative off-diagonal rates")
    if np.any(np.abs(Q.sum(axis=1)) > ROW_SUM_TOL * max(1.0, np.abs(Q).max())):
        raise ValueError(f"{name} rows must sum to zero")


@dataclass(frozen=True)
class HiddenRates:
    """Hidden-mode generator Lambda (rows sum to zero)."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        _check_generator(lam, "lambda")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def from_offdiag(cls, lam12: float, lam21: float) -> "HiddenRates":
        return cls(np.array([[-lam12, lam12], [lam21, -lam21]]))

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    def stationary(self) -> np.ndarray:
        """Stationary distribution pi with pi @ lam = 0."""
        n = self.n
        M = np.vstack([self.lam.T, np.ones(n)])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


@dataclass(frozen=True)
class ObservationParams:
    """Symmetric misclassification probability ``alpha`` and re-estimation rate ``q``.

    ``alpha_table[k][j, l]`` and ``q_table[i][k, l]`` may be given instead to
    describe fully general estimator statistics (indices are 0-based).
    """

    alpha: float = 0.05
    q: float = 0.02
    alpha_table: np.ndarray | None = None
    q_table: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.q >= 0:
            raise ValueError(f"q must be nonnegative, got {self.q}")

    def alpha_matrix(self, n: int) -> np.ndarray:
        """Array ``A[k, j, l]``: probability the estimate lands on ``l`` when the
        true mode jumps to ``j`` while the estimate was ``k``."""
        if self.alpha_table is not None:
            A = np.asarray(self.alpha_table, dtype=float)
            if A.shape != (n, n, n) or np.any(A < 0) or np.any(np.abs(A.sum(axis=2) - 1) > 1e-12):
                raise ValueError("alpha_table must be (n, n, n) with rows summing to one")
            return A
        if n == 2:
            block = np.array([[1 - self.alpha, self.alpha], [self.alpha, 1 - self.alpha]])
        else:
            block = np.full((n, n), self.alpha / (n - 1))
            np.fill_diagonal(block, 1 - self.alpha)
        return np.broadcast_to(block, (n, n, n)).copy()

    def q_matrix(self, n: int) -> np.ndarray:
        """Array ``Q[i, k, l]``: estimate generator while the true mode is ``i``."""
        if self.q_table is not None:
            Q = np.asarray(self.q_table, dtype=float)
            if Q.shape != (n, n, n):
                raise ValueError("q_table must be (n, n, n)")
            for i in range(n):
                _check_generator(Q[i], f"q_table[{i}]")
            return Q
        block = np.full((n, n), self.q)
        np.fill_diagonal(block, -(n - 1) * self.q)
        return np.broadcast_to(block, (n, n, n)).copy()


@dataclass(frozen=True)
class JointGenerator:
    """Generator over joint states ``(i, k)`` ordered hidden-major: index = (i-1)*n + (k-1)."""

    nu: np.ndarray
    n_hidden: int
    n_observed: int

    @property
    def states(self) -> list[tuple[int, int]]:
        return [(i, k) for i in range(1, self.n_hidden + 1) for k in range(1, self.n_observed + 1)]

    def index(self, hidden: int, observed: int) -> int:
        if not (1 <= hidden <= self.n_hidden and 1 <= observed <= self.n_observed):
            raise ValueError(f"invalid joint state ({hidden}, {observed})")
        return (hidden - 1) * self.n_observed + (observed - 1)

    def state(self, idx: int) -> tuple[int, int]:
        return divmod(idx, self.n_observed)[0] + 1, idx % self.n_observed + 1

    def neighbors(self, idx: int) -> list[int]:
        """Joint states reachable from ``idx`` with nonzero rate, in index order."""
        row = self.nu[idx]
        return [j for j in range(len(row)) if j != idx and row[j] != 0.0]


def build_joint_generator(rates: HiddenRates, obs: ObservationParams) -> JointGenerator:
    n = rates.n
    lam = rates.lam
    A = obs.alpha_matrix(n)
    Q = obs.q_matrix(n)
    nu = np.zeros((n * n, n * n))
    for i in range(n):
        for k in range(n):
            row = i * n + k
            for j in range(n):
                for l in range(n):
                    col = j * n + l
                    if j != i:
                        nu[row, col] = A[k, j, l] * lam[i, j]
                    elif l != k:
                        nu[row, col] = Q[i, k, l]
            nu[row, row] = lam[i, i] + Q[i, k, k]
    return JointGenerator(nu=nu, n_hidden=n, n_observed=n)


@dataclass(frozen=True)
class ModePath:
    """Piecewise-constant joint mode trajectory.

    ``states[m]`` is the joint index held on ``[times[m], times[m+1])``; the
    final segment extends to ``horizon``.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float
    seed: int | None
    gen: JointGenerator = field(repr=False)

    def at(self, t) -> np.ndarray | int:
        """Joint index in force at time(s) ``t``."""
        pos = np.searchsorted(self.times, t, side="right") - 1
        out = self.states[np.clip(pos, 0, None)]
        return int(out) if np.ndim(out) == 0 else out

    def hidden(self) -> np.ndarray:
        return self.states // self.gen.n_observed + 1

    def observed(self) -> np.ndarray:
        return self.states % self.gen.n_observed + 1


def sample_path(gen: JointGenerator, initial: int | tuple[int, int], horizon: float, seed=None) -> ModePath:
    """Exact event-driven sampling of the joint CTMC on ``[0, horizon]``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    z = gen.index(*initial) if isinstance(initial, tuple) else int(initial)
    rng = np.random.default_rng(seed)
    nu = gen.nu
    times, states = [0.0], [z]
    t = 0.0
    while True:
        rates = nu[z].copy()
        rates[z] = 0.0
        total = rates.sum()
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        z = int(rng.choice(len(rates), p=rates / total))
        times.append(t)
        states.append(z)
    return ModePath(np.asarray(times), np.asarray(states, dtype=int), float(horizon), seed, gen)


def sample_coupled_paths(rates: HiddenRates, obs_list: Sequence[ObservationParams], initial: tuple[int, int],
                         horizon: float, seed=None) -> list[ModePath]:
    """Joint paths for several symmetric observation settings on shared randomness.

    With symmetric ``alpha`` and ``q`` the hidden chain does not depend on the
    estimate, the landing draw at a hidden jump does not depend on the
    previous estimate, and re-estimation fires at rate ``q`` whatever the
    hidden mode. Each returned path therefore has the law of
    ``sample_path(build_joint_generator(rates, obs), ...)``, while all of them
    reuse one hidden path, one landing uniform per hidden jump and one thinned
    re-estimation clock. Comparisons across settings then see paired noise.
    """
    if any(o.alpha_table is not None or o.q_table is not None for o in obs_list):
        raise ValueError("coupled sampling needs the symmetric alpha/q structure")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    n = rates.n
    lam = rates.lam
    rng = np.random.default_rng(seed)
    # hidden chain
    h_times, h_states = [0.0], [initial[0] - 1]
    t, i = 0.0, initial[0] - 1
    while True:
        out = lam[i].copy()
        out[i] = 0.0
        total = out.sum()
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        i = int(rng.choice(n, p=out / total))
        h_times.append(t)
        h_states.append(i)
    h_times = np.asarray(h_times)
    land_u = rng.random(len(h_times))
    pick_u = rng.random(len(h_times))
    # dominating re-estimation clock
    q_max = max((o.q for o in obs_list), default=0.0)
    if q_max > 0:
        n_clock = rng.poisson(q_max * horizon)
        c_times = np.sort(rng.uniform(0.0, horizon, n_clock))
        c_accept = rng.random(n_clock)
        c_pick = rng.random(n_clock)
    else:
        c_times = c_accept = c_pick = np.zeros(0)

    def other(k, u):
        choices = [m for m in range(n) if m != k]
        return choices[min(int(u * len(choices)), len(choices) - 1)]

    # merged event list: (time, kind, index); hidden jumps first on ties
    ev_t = np.concatenate([h_times[1:], c_times])
    ev_kind = np.concatenate([np.zeros(len(h_times) - 1, dtype=int), np.ones(len(c_times), dtype=int)])
    ev_idx = np.concatenate([np.arange(1, len(h_times)), np.arange(len(c_times))])
    order = np.lexsort((ev_kind, ev_t))
    ev_t, ev_kind, ev_idx = ev_t[order], ev_kind[order], ev_idx[order]

    paths = []
    for o in obs_list:
        gen = build_joint_generator(rates, o)
        i, k = initial[0] - 1, initial[1] - 1
        times, states = [0.0], [i * n + k]
        ratio = o.q / q_max if q_max > 0 else 0.0
        for te, kind, m in zip(ev_t, ev_kind, ev_idx):
            if kind == 0:
                i = h_states[m]
                k = i if land_u[m] >= o.alpha else other(i, pick_u[m])
            elif c_accept[m] < ratio:
                k = other(k, c_pick[m])
            else:
                continue
            z = i * n + k
            if z != states[-1]:
                times.append(float(te))
                states.append(z)
        paths.append(ModePath(np.asarray(times), np.asarray(states, dtype=int), float(horizon), seed, gen))
    return paths


def _runs(t: np.ndarray, labels: np.ndarray, dt: float | None):
    """Yield (label, dwell, next_label or None) for each run of equal labels."""
    if dt is None:
        dt = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    # each sample represents [t_m, t_m + dt); sample-boundary change points
    edges = np.append(t, t[-1] + dt)
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change, [len(labels)]])
    for a, b in zip(starts, stops):
        nxt = int(labels[b]) if b < len(labels) else None
        yield int(labels[a]), edges[b] - edges[a], nxt


def mle_rates(sequences: Iterable[tuple[Sequence[float], Sequence[int]]], n_modes: int = 2, dt: float | None = None) -> HiddenRates:
    """Pooled maximum-likelihood generator estimate ``lambda_ij = N_ij / T_i``.

    Each sequence is ``(timestamps, labels)`` with labels in ``1..n_modes``;
    labels hold from their timestamp until the next sample (the last sample
    for one sampling period ``dt``, inferred from the data when omitted).
    """
    N = np.zeros((n_modes, n_modes))
    occupancy = np.zeros(n_modes)
    seen = False
    for t, labels in sequences:
        t = np.asarray(t, dtype=float)
        labels = np.asarray(labels, dtype=int)
        if len(t) == 0:
            continue
        if len(t) != len(labels):
            raise ValueError("timestamps and labels differ in length")
        if np.any((labels < 1) | (labels > n_modes)):
            raise ValueError("labels outside 1..n_modes")
        seen = True
        for lab, dwell, nxt in _runs(t, labels, dt):
            occupancy[lab - 1] += dwell
            if nxt is not None:
                N[lab - 1, nxt - 1] += 1
    if not seen:
        raise EstimationError("no label sequences supplied")
    lam = np.zeros((n_modes, n_modes))
    for i in range(n_modes):
        if occupancy[i] <= 0:
            raise EstimationError(f"mode {i + 1} has zero occupancy time; its rates are not identifiable")
        lam[i] = N[i] / occupancy[i]
        lam[i, i] = 0.0
        lam[i, i] = -lam[i].sum()
    return HiddenRates(lam)


def mle_rates_from_paths(paths: Iterable[ModePath], n_modes: int = 2) -> HiddenRates:
    """MLE from continuous-time paths (dwell times known exactly)."""
    N = np.zeros((n_modes, n_modes))
    occupancy = np.zeros(n_modes)
    for p in paths:
        h = p.hidden()
        keep = np.concatenate([[True], np.diff(h) != 0])
        times, labels = p.times[keep], h[keep]
        ends = np.append(times[1:], p.horizon)
        for m, lab in enumerate(labels):
            occupancy[lab - 1] += ends[m] - times[m]
            if m + 1 < len(labels):
                N[lab - 1, labels[m + 1] - 1] += 1
    lam = np.zeros((n_modes, n_modes))
    for i in range(n_modes):
        if occupancy[i] <= 0:
            raise EstimationError(f"mode {i + 1} has zero occupancy time; its rates are not identifiable")
        lam[i] = N[i] / occupancy[i]
        lam[i, i] = 0.0
        lam[i, i] = -lam[i].sum()
    return HiddenRates(lam)


def td_mode_labeling(v_E, s_EL, params: TaskDifficultyParams) -> np.ndarray:
    """Per-sample hidden-mode labels from the ego speed and front-gap series."""
    v_E = np.asarray(v_E, dtype=float)
    s_EL = np.asarray(s_EL, dtype=float)
    if v_E.size == 0:
        raise ValueError("empty trajectory")
    if v_E.shape != s_EL.shape:
        raise ValueError("v_E and s_EL must have the same shape")
    return np.atleast_1d(mode_from_td(params, task_difficulty(params, v_E, s_EL)))
