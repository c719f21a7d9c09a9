"""Solver-independent LMI problems and a cvxpy-backed solver adapter.

An :class:`LmiProblem` is a set of named decision variables plus block
constraints ``F(x) < 0`` and equalities ``E(x) = 0``, each given as a plain
numpy function of the variable values. Since every constraint is affine, the
standard form ``F(x) = F0 + sum_j x_j F_j`` is recovered by evaluating the
builders at zero and at unit vectors, and that standard form is what the
adapters consume.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space

log = logging.getLogger(__name__)

ASYM_TOL = 1e-10


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecisionVar:
    name: str
    shape: tuple[int, int]
    symmetric: bool = False

    @property
    def size(self) -> int:
        n, m = self.shape
        return n * (n + 1) // 2 if self.symmetric else n * m


@dataclass
class LmiProblem:
    """Affine matrix inequalities ``block(x) < 0`` with optional linear equalities.

    ``objective`` names a scalar variable to minimize; ``None`` means a pure
    feasibility problem. ``positive`` lists symmetric variables constrained
    positive definite.
    """

    variables: list[DecisionVar]
    blocks: list[tuple[str, Callable[[dict], np.ndarray]]] = field(default_factory=list)
    equalities: list[tuple[str, Callable[[dict], np.ndarray]]] = field(default_factory=list)
    positive: list[str] = field(default_factory=list)
    objective: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._offsets = {}
        off = 0
        for v in self.variables:
            self._offsets[v.name] = off
            off += v.size
        self.n_dec = off
        self._std = None

    # -- packing -----------------------------------------------------------
    def unpack(self, x: np.ndarray) -> dict:
        vals = {}
        for v in self.variables:
            seg = x[self._offsets[v.name]: self._offsets[v.name] + v.size]
            n, m = v.shape
            if v.symmetric:
                M = np.zeros((n, n))
                M[np.triu_indices(n)] = seg
                M = M + np.triu(M, 1).T
            else:
                M = seg.reshape(n, m)
            vals[v.name] = M
        return vals

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self.n_dec)
        for v in self.variables:
            M = np.atleast_2d(np.asarray(values[v.name], dtype=float))
            seg = M[np.triu_indices(v.shape[0])] if v.symmetric else M.ravel()
            x[self._offsets[v.name]: self._offsets[v.name] + v.size] = seg
        return x

    def zero_values(self) -> dict:
        return self.unpack(np.zeros(self.n_dec))

    # -- evaluation --------------------------------------------------------
    def evaluate_block(self, idx: int, values: dict, symmetrize: bool = True) -> np.ndarray:
        name, builder = self.blocks[idx]
        M = np.asarray(builder(values), dtype=float)
        if symmetrize:
            asym = np.abs(M - M.T).max() if M.size else 0.0
            if asym > ASYM_TOL * max(1.0, np.abs(M).max()):
                raise AssemblyError(f"block {name!r} is not symmetric (max asymmetry {asym:.3e})")
            M = 0.5 * (M + M.T)
        return M

    def evaluate_equalities(self, values: dict) -> np.ndarray:
        if not self.equalities:
            return np.zeros(0)
        return np.concatenate([np.ravel(b(values)) for _, b in self.equalities])

    def standard_form(self):
        """``(blocks, E, e0)`` with ``blocks = [(F0, [F_1..F_n]), ...]`` and ``E x + e0 = 0``."""
        if self._std is not None:
            return self._std
        zero = np.zeros(self.n_dec)
        v0 = self.unpack(zero)
        blocks = []
        for b in range(len(self.blocks)):
            F0 = self.evaluate_block(b, v0)
            Fs = []
            for j in range(self.n_dec):
                e = zero.copy()
                e[j] = 1.0
                Fs.append(self.evaluate_block(b, self.unpack(e)) - F0)
            blocks.append((F0, Fs))
        e0 = self.evaluate_equalities(v0)
        E = np.zeros((e0.size, self.n_dec))
        for j in range(self.n_dec):
            e = zero.copy()
            e[j] = 1.0
            E[:, j] = self.evaluate_equalities(self.unpack(e)) - e0
        self._std = (blocks, E, e0)
        return self._std

    def to_json(self) -> dict:
        """Standard-form dump: matrices row-major with explicit dims."""
        blocks, E, e0 = self.standard_form()
        return {
            "variables": [
                {"name": v.name, "shape": list(v.shape), "symmetric": v.symmetric, "offset": self._offsets[v.name]}
                for v in self.variables
            ],
            "n_decision": self.n_dec,
            "objective": self.objective,
            "positive_definite": list(self.positive),
            "blocks": [
                {
                    "name": name,
                    "F0": matrix_to_json(F0),
                    "F": [matrix_to_json(F) for F in Fs],
                }
                for (name, _), (F0, Fs) in zip(self.blocks, blocks)
            ],
            "equalities": {"E": matrix_to_json(E), "e0": list(map(float, e0))},
            "meta": {k: v for k, v in self.meta.items() if isinstance(v, (int, float, str, bool, type(None)))},
        }


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": M.shape[0], "cols": M.shape[1], "data": M.ravel().tolist()}


def matrix_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["rows"], d["cols"])


@dataclass
class LmiSolution:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    values: dict | None = None
    objective: float | None = None
    max_block_eig: float | None = None
    equality_residual: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class CvxpyAdapter:
    """Solve an :class:`LmiProblem` with a conic solver through cvxpy.

    Strict inequalities are enforced with a margin: ``F(x) <= -margin I`` and
    ``X >= margin I``. Equalities are eliminated exactly by restricting ``x`` to
    the null space of ``E`` (they are homogeneous for every problem assembled
    in this package).
    """

    def __init__(self, solver: str = "CLARABEL", margin: float = 1e-7, fallback: tuple[str, ...] = ("CVXOPT",), **solver_opts):
        self.solver = solver
        self.margin = margin
        self.fallback = fallback
        self.solver_opts = solver_opts

    def solve(self, problem: LmiProblem) -> LmiSolution:
        import cvxpy as cp

        blocks, E, e0 = problem.standard_form()
        if E.size and np.abs(e0).max() > 0:
            raise NotImplementedError("inhomogeneous equalities are not supported")
        Z = null_space(E) if E.size else np.eye(problem.n_dec)
        y = cp.Variable(Z.shape[1])
        x = Z @ y
        cons = []
        for F0, Fs in blocks:
            N = F0.shape[0]
            M = np.stack([F.ravel() for F in Fs], axis=1) @ Z
            expr = cp.reshape(F0.ravel() + M @ y, (N, N), order="C")
            cons.append(0.5 * (expr + expr.T) << -self.margin * np.eye(N))
        zero = problem.zero_values()
        for name in problem.positive:
            var = next(v for v in problem.variables if v.name == name)
            sel = np.zeros((var.shape[0] ** 2, problem.n_dec))
            # column j of sel maps x_j into vec(X)
            for j in range(problem._offsets[name], problem._offsets[name] + var.size):
                e = np.zeros(problem.n_dec)
                e[j] = 1.0
                sel[:, j] = problem.unpack(e)[name].ravel() - zero[name].ravel()
            n = var.shape[0]
            expr = cp.reshape(sel @ x, (n, n), order="C")
            cons.append(0.5 * (expr + expr.T) >> self.margin * np.eye(n))
        if problem.objective is not None:
            var = next(v for v in problem.variables if v.name == problem.objective)
            c = np.zeros(problem.n_dec)
            c[problem._offsets[var.name]] = 1.0
            obj = cp.Minimize((c @ Z) @ y)
        else:
            obj = cp.Minimize(0)
        prob = cp.Problem(obj, cons)

        status = None
        for solver in (self.solver, *self.fallback):
            try:
                prob.solve(solver=solver, **self.solver_opts)
                status = prob.status
            except (cp.error.SolverError, ValueError, ArithmeticError) as exc:
                log.debug("solver %s failed: %s", solver, exc)
                status = "solver_error"
                continue
            if status in ("optimal", "infeasible", "unbounded"):
                break
        if status == "infeasible":
            return LmiSolution("infeasible", info={"solver_status": status})
        if status not in ("optimal", "optimal_inaccurate") or y.value is None:
            return LmiSolution("numerical-failure", info={"solver_status": status})

        xv = Z @ y.value
        values = problem.unpack(xv)
        worst = max(np.linalg.eigvalsh(problem.evaluate_block(b, values)).max() for b in range(len(blocks)))
        eq_res = float(np.abs(E @ xv).max()) if E.size else 0.0
        objective = float(values[problem.objective].squeeze()) if problem.objective else None
        result = LmiSolution(
            "optimal" if worst < 0 else "numerical-failure",
            values=values,
            objective=objective,
            max_block_eig=float(worst),
            equality_residual=eq_res,
            info={"solver_status": status},
        )
        return result


def dump_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
