"""Mode-dependent shared-control gain synthesis and dissipation certificates.

Two programs are assembled per fixed slack scalar ``epsilon``:

* nominal: bound the L2 gain from leader speed perturbation to follower
  speed perturbation;
* minimal intervention (MIC): same, with the performance output augmented by
  ``beta * u_AV``.

Both minimize ``mu = gamma**2``. Gains are recovered as ``K_AV,k = V_k G_k^-1``
and ``D_AV,k = L_k``. :func:`certify_dissipation` re-checks any gains with the
Lyapunov matrices ``P_ik = X_ik^-1`` without touching the solver.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .linmjls import LinearMJLS, check_stabilizable_detectable
from .lmi import CvxpyAdapter, DecisionVar, LmiProblem, matrix_from_json, matrix_to_json
from .markov import JointGenerator

log = logging.getLogger(__name__)

DEFAULT_EPS_GRID = tuple(np.logspace(-3, 2, 11))
CERT_TOL = 1e-8
GAIN_COND_MAX = 1e10


class SynthesisError(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or []


@dataclass
class ControllerGains:
    """Per observed mode AV gains plus the Lyapunov certificates that back them."""

    K_AV: tuple
    D_AV: tuple
    gamma: float
    X: dict = field(default_factory=dict)  # (i, k) -> 4x4
    epsilon: float | None = None
    beta: float = 0.0
    diagnostics: list = field(default_factory=list)

    @classmethod
    def zero(cls, n_modes: int = 2, n: int = 4) -> "ControllerGains":
        return cls(tuple(np.zeros((1, n)) for _ in range(n_modes)), tuple(0.0 for _ in range(n_modes)), gamma=np.inf)

    def to_json(self) -> dict:
        return {
            "K_AV": [matrix_to_json(k) for k in self.K_AV],
            "D_AV": [float(d) for d in self.D_AV],
            "gamma": float(self.gamma),
            "epsilon": self.epsilon,
            "beta": self.beta,
            "X": [{"hidden": i, "observed": k, "matrix": matrix_to_json(X)} for (i, k), X in sorted(self.X.items())],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ControllerGains":
        return cls(
            K_AV=tuple(matrix_from_json(k) for k in d["K_AV"]),
            D_AV=tuple(float(x) for x in d["D_AV"]),
            gamma=float(d["gamma"]),
            X={(e["hidden"], e["observed"]): matrix_from_json(e["matrix"]) for e in d.get("X", [])},
            epsilon=d.get("epsilon"),
            beta=float(d.get("beta", 0.0)),
            diagnostics=d.get("diagnostics", []),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "ControllerGains":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def regularization_basis(sys: LinearMJLS, rank: int = 1) -> np.ndarray:
    """Leading right singular vectors of the stacked human gains, shape ``(n, r)``.

    Returns an empty ``(n, 0)`` matrix when the human gains vanish.
    """
    S = np.vstack([np.atleast_2d(k) for k in sys.K_H])
    n = S.shape[1]
    if not np.any(S):
        return np.zeros((n, 0))
    _, sv, vt = np.linalg.svd(S)
    r = min(rank, int(np.sum(sv > 1e-12 * sv[0])))
    return vt[:r].T.copy()


def _var_names(gen: JointGenerator):
    Xn = {z: f"X{z[0]}{z[1]}" for z in gen.states}
    Gn = {k: f"G{k}" for k in range(1, gen.n_observed + 1)}
    Vn = {k: f"V{k}" for k in range(1, gen.n_observed + 1)}
    Ln = {k: f"L{k}" for k in range(1, gen.n_observed + 1)}
    return Xn, Gn, Vn, Ln


def coupling_support(gen: JointGenerator, idx: int):
    """Neighbours of a joint state and the matching ``Pi`` (sqrt-rate identity blocks)."""
    nbrs = gen.neighbors(idx)
    return nbrs, [float(np.sqrt(gen.nu[idx, r])) for r in nbrs]


def _assemble(sys: LinearMJLS, gen: JointGenerator, epsilon: float, beta: float | None,
              gamma_sq: float | None, R: np.ndarray | None) -> LmiProblem:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if beta is not None and beta < 0:
        raise ValueError("beta must be nonnegative")
    n = sys.A.shape[0]
    nw = sys.D.shape[1]
    nz = sys.C.shape[0]
    nu_ = sys.B.shape[1]
    Xn, Gn, Vn, Ln = _var_names(gen)
    variables = [DecisionVar(Xn[z], (n, n), symmetric=True) for z in gen.states]
    for k in range(1, gen.n_observed + 1):
        variables += [DecisionVar(Gn[k], (n, n)), DecisionVar(Vn[k], (nu_, n)), DecisionVar(Ln[k], (nu_, nw))]
    if gamma_sq is None:
        variables.append(DecisionVar("mu", (1, 1)))
    mic = beta is not None

    def make_block(idx):
        i, k = gen.state(idx)
        nbrs, roots = coupling_support(gen, idx)
        tau = len(nbrs)
        nu_ii = gen.nu[idx, idx]
        A_i = sys.A + sys.B @ sys.K_H[i - 1]
        Dh = sys.D + sys.B * sys.D_H[i - 1]
        # block row sizes: x | w | z | (effort) | x-slack | coupling
        sizes = [n, nw, nz] + ([nu_] if mic else []) + [n, n * tau]
        ix = 4 if mic else 3
        ip = ix + 1

        def build(v):
            X = v[Xn[(i, k)]]
            G, V, L = v[Gn[k]], v[Vn[k]], v[Ln[k]]
            mu = gamma_sq if gamma_sq is not None else float(v["mu"].squeeze())
            Om = A_i @ G + sys.B @ V
            Phi = Dh + sys.B @ L
            Pi = np.hstack([r * np.eye(n) for r in roots]) if tau else np.zeros((n, 0))
            Dcal = np.zeros((n * tau, n * tau))
            for m, r in enumerate(nbrs):
                Dcal[m * n:(m + 1) * n, m * n:(m + 1) * n] = v[Xn[gen.state(r)]]
            off = np.cumsum([0] + sizes)
            N = off[-1]
            Q = np.zeros((N, N))

            def put(r, c, M):
                Q[off[r]:off[r + 1], off[c]:off[c + 1]] = M

            put(0, 0, nu_ii * X)
            put(0, 1, Phi)
            put(1, 0, Phi.T)
            put(1, 1, -mu * np.eye(nw))
            put(2, 2, -np.eye(nz))
            put(0, ix, X)
            put(ix, 0, X.T)
            if tau:
                put(0, ip, X @ Pi)
                put(ip, 0, (X @ Pi).T)
                put(ip, ip, -Dcal)
            if mic:
                put(1, 3, beta * L.T)
                put(3, 1, beta * L)
                put(3, 3, -np.eye(nu_))
            U = np.zeros((N, n))
            W = np.zeros((N, n))
            U[off[0]:off[1]] = Om
            U[off[2]:off[3]] = sys.C @ G
            if mic:
                U[off[3]:off[4]] = beta * V
            U[off[ix]:off[ix + 1]] = -G
            W[off[0]:off[1]] = epsilon * np.eye(n)
            W[off[ix]:off[ix + 1]] = np.eye(n)
            H = U @ W.T
            return Q + H + H.T

        return f"joint({i},{k})", build

    blocks = [make_block(idx) for idx in range(len(gen.states))]
    equalities = []
    if R is not None and R.shape[1] > 0:
        for k in range(1, gen.n_observed + 1):
            equalities.append((f"V{k}R=0", lambda v, k=k: v[Vn[k]] @ R))
    return LmiProblem(
        variables,
        blocks,
        equalities,
        positive=[Xn[z] for z in gen.states],
        objective="mu" if gamma_sq is None else None,
        meta={"kind": "mic" if mic else "nominal", "epsilon": float(epsilon), "beta": float(beta or 0.0)},
    )


def assemble_nominal(sys: LinearMJLS, gen: JointGenerator, epsilon: float, gamma_sq: float | None = None,
                     R: np.ndarray | None = None) -> LmiProblem:
    """Nominal program; ``gamma_sq=None`` makes ``mu = gamma^2`` a decision variable."""
    return _assemble(sys, gen, epsilon, None, gamma_sq, R)


def assemble_mic(sys: LinearMJLS, gen: JointGenerator, epsilon: float, beta: float, gamma_sq: float | None = None,
                 R: np.ndarray | None = None) -> LmiProblem:
    """Minimal-intervention program with effort weight ``beta``."""
    return _assemble(sys, gen, epsilon, float(beta), gamma_sq, R)


def gains_from_values(values: dict, gen: JointGenerator) -> tuple[tuple, tuple, float]:
    Xn, Gn, Vn, Ln = _var_names(gen)
    K, D = [], []
    worst = 0.0
    for k in range(1, gen.n_observed + 1):
        G = values[Gn[k]]
        c = np.linalg.cond(G)
        worst = max(worst, c)
        K.append(np.linalg.solve(G.T, values[Vn[k]].T).T)
        D.append(float(values[Ln[k]].squeeze()))
    return tuple(K), tuple(D), worst


def synthesize(sys: LinearMJLS, gen: JointGenerator, beta: float | None = None, eps_grid=DEFAULT_EPS_GRID,
               regularize: bool = True, reg_rank: int = 1, adapter=None, check_pbh: bool = True) -> ControllerGains:
    """Minimize gamma over the epsilon grid; ``beta=None`` selects the nominal program."""
    if check_pbh:
        check_stabilizable_detectable(sys)
    adapter = adapter or CvxpyAdapter()
    R = regularization_basis(sys, reg_rank) if regularize else None
    Xn, *_ = _var_names(gen)
    best = None
    diagnostics = []
    for eps in eps_grid:
        if beta is None:
            prob = assemble_nominal(sys, gen, eps, R=R)
        else:
            prob = assemble_mic(sys, gen, eps, beta, R=R)
        sol = adapter.solve(prob)
        entry = {"epsilon": float(eps), "status": sol.status}
        if sol.ok:
            K, D, cond = gains_from_values(sol.values, gen)
            entry.update(gamma=float(np.sqrt(sol.objective)), max_block_eig=sol.max_block_eig,
                         equality_residual=sol.equality_residual, cond_G=float(cond))
            if cond > GAIN_COND_MAX:
                entry["status"] = "numerical-failure"
            elif best is None or entry["gamma"] < best[0]["gamma"]:
                best = (entry, K, D, sol)
        diagnostics.append(entry)
        log.debug("eps=%g -> %s", eps, entry)
    if best is None:
        raise SynthesisError("no feasible epsilon on the grid", diagnostics)
    entry, K, D, sol = best
    X = {z: sol.values[Xn[z]] for z in gen.states}
    return ControllerGains(K, D, entry["gamma"], X, entry["epsilon"], float(beta or 0.0), diagnostics)


# -- certificates ---------------------------------------------------------------

@dataclass
class CertificateReport:
    max_eigs: dict  # (i, k) -> float
    gamma: float
    beta: float
    tol: float = CERT_TOL

    @property
    def passed(self) -> bool:
        return all(e < -self.tol for e in self.max_eigs.values())

    @property
    def worst(self) -> float:
        return max(self.max_eigs.values())

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "gamma": self.gamma,
            "beta": self.beta,
            "tolerance": self.tol,
            "max_eigs": [{"hidden": i, "observed": k, "value": v} for (i, k), v in sorted(self.max_eigs.items())],
        }


def dissipation_matrix(sys: LinearMJLS, gen: JointGenerator, K_AV, D_AV, P: dict, state: tuple[int, int],
                       gamma: float, beta: float = 0.0) -> np.ndarray:
    """Lyapunov dissipation matrix in ``P`` coordinates for one joint state.

    Negative definiteness means ``LV + |z|^2 - gamma^2 |w|^2 < 0`` there, with
    ``z`` the follower speed (plus ``beta * u_AV`` when ``beta > 0``).
    """
    i, k = state
    idx = gen.index(i, k)
    Kav = np.atleast_2d(K_AV[k - 1])
    Dav = np.atleast_2d(D_AV[k - 1])
    Acl = sys.A + sys.B @ (sys.K_H[i - 1] + Kav)
    Dcl = sys.D + sys.B @ (sys.D_H[i - 1] + Dav)
    Pik = P[state]
    coupling = sum(gen.nu[idx, j] * P[gen.state(j)] for j in range(len(gen.states)))
    b2 = beta ** 2
    n, nw, nz = sys.A.shape[0], sys.D.shape[1], sys.C.shape[0]
    M = np.zeros((n + nw + nz, n + nw + nz))
    M[:n, :n] = Acl.T @ Pik + Pik @ Acl + coupling + b2 * Kav.T @ Kav
    M[:n, n:n + nw] = Pik @ Dcl + b2 * Kav.T @ Dav
    M[n:n + nw, :n] = M[:n, n:n + nw].T
    M[n:n + nw, n:n + nw] = b2 * Dav.T @ Dav - gamma ** 2 * np.eye(nw)
    M[:n, n + nw:] = sys.C.T
    M[n + nw:, :n] = sys.C
    M[n + nw:, n + nw:] = -np.eye(nz)
    return 0.5 * (M + M.T)


def lifted_matrix(sys: LinearMJLS, gen: JointGenerator, K_AV, D_AV, X: dict, state: tuple[int, int],
                  gamma: float, beta: float = 0.0) -> np.ndarray:
    """Slack-free inequality in ``X`` coordinates, before the Schur complement on the coupling block."""
    i, k = state
    idx = gen.index(i, k)
    n = sys.A.shape[0]
    Kav = np.atleast_2d(K_AV[k - 1])
    Dav = float(np.squeeze(D_AV[k - 1]))
    Acl = sys.A + sys.B @ (sys.K_H[i - 1] + Kav)
    Phi = sys.D + sys.B * (sys.D_H[i - 1] + Dav)
    Xik = X[state]
    nbrs, roots = coupling_support(gen, idx)
    tau = len(nbrs)
    Pi = np.hstack([r * np.eye(n) for r in roots]) if tau else np.zeros((n, 0))
    Dcal = np.zeros((n * tau, n * tau))
    for m, r in enumerate(nbrs):
        Dcal[m * n:(m + 1) * n, m * n:(m + 1) * n] = X[gen.state(r)]
    rows = [
        [gen.nu[idx, idx] * Xik + Xik @ Acl.T + Acl @ Xik, Phi, Xik @ sys.C.T, beta * Xik @ Kav.T, Xik @ Pi],
        [Phi.T, -gamma ** 2 * np.eye(1), np.zeros((1, 1)), beta * np.array([[Dav]]), np.zeros((1, n * tau))],
        [sys.C @ Xik, np.zeros((1, 1)), -np.eye(1), np.zeros((1, 1)), np.zeros((1, n * tau))],
        [beta * Kav @ Xik, beta * np.array([[Dav]]), np.zeros((1, 1)), -np.eye(1), np.zeros((1, n * tau))],
        [(Xik @ Pi).T, np.zeros((n * tau, 1)), np.zeros((n * tau, 1)), np.zeros((n * tau, 1)), -Dcal],
    ]
    M = np.block(rows)
    return 0.5 * (M + M.T)


def certify_dissipation(sys: LinearMJLS, gen: JointGenerator, gains: ControllerGains, beta: float | None = None,
                        gamma: float | None = None, tol: float = CERT_TOL) -> CertificateReport:
    """Check the dissipation inequality in every joint state with ``P_ik = X_ik^-1``."""
    beta = gains.beta if beta is None else beta
    gamma = gains.gamma if gamma is None else gamma
    P = {}
    for z in gen.states:
        X = gains.X[z]
        if np.linalg.eigvalsh(0.5 * (X + X.T)).min() <= 0:
            raise np.linalg.LinAlgError(f"certificate X{z} is not positive definite")
        P[z] = np.linalg.inv(X)
        P[z] = 0.5 * (P[z] + P[z].T)
    eigs = {}
    for z in gen.states:
        M = dissipation_matrix(sys, gen, gains.K_AV, gains.D_AV, P, z, gamma, beta)
        eigs[z] = float(np.linalg.eigvalsh(M).max())
    return CertificateReport(eigs, float(gamma), float(beta), tol)


def analyze_gain(sys: LinearMJLS, gen: JointGenerator, K_AV, D_AV, beta: float = 0.0, adapter=None,
                 gamma_sq: float | None = None):
    """Best certified gamma for fixed gains (LMI in ``P`` only).

    Returns the ``LmiSolution``; with ``gamma_sq`` fixed this is a feasibility
    test. Used to certify human-only or externally supplied gains.
    """
    n = sys.A.shape[0]
    names = {z: f"P{z[0]}{z[1]}" for z in gen.states}
    variables = [DecisionVar(names[z], (n, n), symmetric=True) for z in gen.states]
    if gamma_sq is None:
        variables.append(DecisionVar("mu", (1, 1)))

    def block(z):
        def build(v):
            mu = gamma_sq if gamma_sq is not None else float(v["mu"].squeeze())
            P = {s: v[names[s]] for s in gen.states}
            M = dissipation_matrix(sys, gen, K_AV, D_AV, P, z, 0.0, beta)
            M[n, n] -= mu
            return M
        return f"joint{z}", build

    prob = LmiProblem(variables, [block(z) for z in gen.states], positive=list(names.values()),
                      objective="mu" if gamma_sq is None else None, meta={"kind": "analysis"})
    return (adapter or CvxpyAdapter()).solve(prob)
