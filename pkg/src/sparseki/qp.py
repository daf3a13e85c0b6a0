"""Dense convex quadratic programs with linear inequality constraints.

``solve_qp`` is a primal-dual interior-point method (Mehrotra predictor-
corrector) for problems of the form

    min  1/2 u' Q u + q' u    s.t.  G u <= h

with Q symmetric positive semidefinite.  Every accepted solution carries a
KKT certificate (stationarity, primal feasibility, complementarity).
``l1_split`` performs the positive/negative variable splitting that turns
an l1-budgeted problem over v into a standard-form program over
(v+, v-) with v = v+ - v-.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "QpProblem",
    "QpSolution",
    "KktResiduals",
    "QpInfeasibleError",
    "QpMaxIterationsError",
    "solve_qp",
    "l1_split",
    "L1SplitProblem",
    "check_feasibility",
]


class KktResiduals(NamedTuple):
    stationarity: float
    primal: float
    complementarity: float

    def max(self) -> float:
        return max(self)


class QpInfeasibleError(RuntimeError):
    """The inequality system G u <= h admits no solution."""

    def __init__(self, slack: float):
        self.slack = slack
        super().__init__(
            f"infeasible constraint system (phase-1 residual slack {slack:.3e})"
        )


class QpMaxIterationsError(RuntimeError):
    """Iteration limit hit; carries the best iterate found."""

    def __init__(self, best: "QpSolution"):
        self.best = best
        super().__init__(
            f"interior-point method did not converge in {best.iterations} "
            f"iterations (residuals {tuple(best.kkt_residuals)})"
        )


@dataclass(frozen=True)
class QpProblem:
    """Standard-form program: min 1/2 u'Qu + q'u subject to G u <= h."""

    Q: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        q = np.asarray(self.q, dtype=float)
        G = np.asarray(self.G, dtype=float).reshape(-1, len(q))
        h = np.asarray(self.h, dtype=float)
        scale = max(1.0, float(np.max(np.abs(Q))) if Q.size else 1.0)
        if np.max(np.abs(Q - Q.T)) > 1e-10 * scale:
            raise ValueError("Q must be symmetric (to 1e-10 relative)")
        if Q.shape != (len(q), len(q)):
            raise ValueError("Q and q dimensions disagree")
        if G.shape[0] != len(h):
            raise ValueError("G and h dimensions disagree")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return len(self.q)

    @property
    def n_constraints(self) -> int:
        return len(self.h)

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.Q @ u + self.q @ u)

    def to_json(self) -> str:
        import json

        return json.dumps(
            {k: getattr(self, k).tolist() for k in ("Q", "q", "G", "h")}
        )


@dataclass(frozen=True)
class QpSolution:
    u_star: np.ndarray
    nu: np.ndarray
    kkt_residuals: KktResiduals
    iterations: int
    objective: float


def check_feasibility(problem: QpProblem, tol: float = 1e-9):
    """Phase-1 slack minimization: min sum(t) s.t. G u - t <= h, t >= 0.

    Returns (feasible, u_candidate, total_slack).
    """
    from scipy.optimize import linprog

    m, z = problem.n_constraints, problem.dim
    if m == 0:
        return True, np.zeros(z), 0.0
    # variables [u, t]
    c = np.concatenate([np.zeros(z), np.ones(m)])
    A_ub = np.block([[problem.G, -np.eye(m)]])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=problem.h,
        bounds=[(None, None)] * z + [(0, None)] * m,
        method="highs",
    )
    if not res.success:
        return False, np.zeros(z), np.inf
    slack = float(res.fun)
    return slack <= tol * (1.0 + np.max(np.abs(problem.h))), res.x[:z], slack


def _kkt_residuals(problem: QpProblem, u, z) -> KktResiduals:
    rd = problem.Q @ u + problem.q + (problem.G.T @ z if z.size else 0.0)
    stat = float(np.max(np.abs(rd)))
    if problem.n_constraints:
        viol = problem.G @ u - problem.h
        primal = float(max(0.0, np.max(viol)))
        comp = float(np.max(np.abs(z * viol)))
    else:
        primal = comp = 0.0
    return KktResiduals(stat, primal, comp)


def _try_polish(problem: QpProblem, u: np.ndarray, nu: np.ndarray):
    """Active-set refinement: solve the equality KKT system on the active
    rows.  Degenerate flat directions (e.g. split-variable pairs) stall the
    interior-point iteration near the optimum; the least-squares polish
    recovers machine-precision residuals when the active set is identified
    correctly."""
    G, h = problem.G, problem.h
    z = problem.dim
    slack = h - G @ u
    act = nu > np.maximum(slack, 1e-12)
    A = G[act]
    k = A.shape[0]
    kkt = np.block([[problem.Q, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([-problem.q, h[act]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    u_p = sol[:z]
    nu_p = np.zeros(len(h))
    nu_p[act] = np.maximum(sol[z:], 0.0)
    return u_p, nu_p, _kkt_residuals(problem, u_p, nu_p)


def _max_step(vec: np.ndarray, dvec: np.ndarray) -> float:
    neg = dvec < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-vec[neg] / dvec[neg])))


def _chol_solve(M: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    jitter = 0.0
    base = max(np.trace(M) / len(M), 1.0)
    for _ in range(12):
        try:
            L = np.linalg.cholesky(M + jitter * np.eye(len(M)))
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14 * base)
    else:
        raise np.linalg.LinAlgError("could not factor the reduced KKT system")
    w = solve_triangular(L, rhs, lower=True)
    return solve_triangular(L, w, lower=True, trans="T"), L


def solve_qp(
    problem: QpProblem,
    tol: float = 1e-8,
    max_iterations: int = 100,
    u0: np.ndarray | None = None,
) -> QpSolution:
    """Mehrotra predictor-corrector interior-point solve.

    Success requires the stationarity, primal-feasibility and
    complementarity residuals of the original problem to fall below
    ``tol``.  A small ridge (1e-10 trace(Q)/dim) regularizes semidefinite
    Q before factorization.  On non-convergence a phase-1 pass decides
    between :class:`QpInfeasibleError` and :class:`QpMaxIterationsError`.
    """
    z_dim, m = problem.dim, problem.n_constraints
    Q = problem.Q.copy()
    ridge = 1e-10 * max(np.trace(Q), 0.0) / max(z_dim, 1)
    Q[np.diag_indices_from(Q)] += ridge

    if m == 0:
        u = np.linalg.solve(Q, -problem.q)
        res = _kkt_residuals(problem, u, np.zeros(0))
        return QpSolution(u, np.zeros(0), res, 0, problem.objective(u))

    # row equilibration of the constraint block
    row = np.maximum(np.max(np.abs(problem.G), axis=1), 1e-12)
    G = problem.G / row[:, None]
    h = problem.h / row

    u = np.zeros(z_dim) if u0 is None else np.array(u0, dtype=float)
    s = np.maximum(h - G @ u, 1.0)
    zd = np.ones(m)

    best_u, best_zd, best_res = u.copy(), zd.copy(), None
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(1, max_iterations + 1):
            rd = Q @ u + problem.q + G.T @ zd
            rp = G @ u + s - h
            mu = float(s @ zd) / m

            res = _kkt_residuals(problem, u, zd / row)
            if best_res is None or res.max() < best_res.max():
                best_u, best_zd, best_res = u.copy(), zd.copy(), res
            if res.max() <= tol:
                return QpSolution(
                    u.copy(), zd / row, res, it - 1, problem.objective(u)
                )
            if res.max() <= 1e5 * tol and it % 5 == 0:
                try:
                    u_p, nu_p, res_p = _try_polish(problem, u, zd / row)
                    if res_p.max() <= tol:
                        return QpSolution(
                            u_p, nu_p, res_p, it, problem.objective(u_p)
                        )
                except np.linalg.LinAlgError:
                    pass

            s = np.maximum(s, 1e-300)
            w = np.clip(zd / s, 1e-14, 1e16)
            M = Q + (G.T * w) @ G
            rc_aff = s * zd
            try:
                rhs = -rd - G.T @ (w * rp - rc_aff / s)
                du, L = _chol_solve(M, rhs)
                dz = w * (G @ du + rp) - rc_aff / s
                ds = -rp - G @ du

                a_p = _max_step(s, ds)
                a_d = _max_step(zd, dz)
                mu_aff = float((s + a_p * ds) @ (zd + a_d * dz)) / m
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

                rc = s * zd + ds * dz - sigma * mu
                rhs = -rd - G.T @ (w * rp - rc / s)
                du = solve_triangular(
                    L, solve_triangular(L, rhs, lower=True), lower=True, trans="T"
                )
                dz = w * (G @ du + rp) - rc / s
                ds = -rp - G @ du
            except (np.linalg.LinAlgError, ValueError):
                break  # numerically stalled; decide infeasible vs max-iter below

            a_p = 0.99 * _max_step(s, ds)
            a_d = 0.99 * _max_step(zd, dz)
            u = u + a_p * du
            s = s + a_p * ds
            zd = zd + a_d * dz
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(zd))):
                break

    # stalled: attempt an active-set polish before giving up
    try:
        u_p, nu_p, res_p = _try_polish(problem, best_u, best_zd / row)
        if res_p.max() <= tol:
            return QpSolution(
                u_p, nu_p, res_p, max_iterations, problem.objective(u_p)
            )
        if res_p.max() < best_res.max():
            best_u, best_zd, best_res = u_p, nu_p * row, res_p
    except np.linalg.LinAlgError:
        pass

    feasible, _, slack = check_feasibility(problem)
    if not feasible:
        raise QpInfeasibleError(slack)
    raise QpMaxIterationsError(
        QpSolution(
            best_u,
            best_zd / row,
            best_res,
            max_iterations,
            problem.objective(best_u),
        )
    )


@dataclass(frozen=True)
class L1SplitProblem:
    """A split program over (v+, v-) plus the map back to v."""

    problem: QpProblem
    base_dim: int

    def recover(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u[: self.base_dim] - u[self.base_dim :]

    def solve(self, tol: float = 1e-8, **kw) -> tuple[np.ndarray, QpSolution]:
        sol = solve_qp(self.problem, tol=tol, **kw)
        return self.recover(sol.u_star), sol


def l1_split(
    Q: np.ndarray,
    q: np.ndarray,
    l1_rows: np.ndarray,
    gamma: float,
    extra_ineq: tuple[np.ndarray, np.ndarray] | None = None,
    weights: np.ndarray | None = None,
) -> L1SplitProblem:
    """Split v = v+ - v- to express an l1 budget as linear constraints.

    Minimizes ``1/2 v'Qv + q'v`` subject to ``sum_{i in l1_rows} |v_i| <=
    gamma`` plus optional extra inequalities ``A v >= a`` given as
    ``extra_ineq=(A, a)``.  ``gamma = inf`` omits the budget row.
    ``weights`` (optional, defaults to ones) scales each budgeted
    coordinate's contribution, for callers that pose the problem in
    rescaled variables.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    z = len(q)
    mask = np.zeros(z, dtype=bool)
    mask[np.asarray(l1_rows)] = True
    if not (gamma > 0):
        raise ValueError("gamma must be positive (or infinite)")

    Q2 = np.block([[Q, -Q], [-Q, Q]])
    q2 = np.concatenate([q, -q])

    rows = [-np.eye(2 * z)]
    rhs = [np.zeros(2 * z)]
    if np.isfinite(gamma):
        wvec = np.ones(z) if weights is None else np.asarray(weights, dtype=float)
        budget = np.concatenate([wvec * mask, wvec * mask])
        rows.append(budget[None, :])
        rhs.append(np.array([gamma]))
    if extra_ineq is not None:
        A, a = extra_ineq
        A = np.asarray(A, dtype=float).reshape(-1, z)
        a = np.asarray(a, dtype=float)
        if A.shape[0]:
            rows.append(np.hstack([-A, A]))
            rhs.append(-a)
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    return L1SplitProblem(QpProblem(Q2, q2, G, h), z)
