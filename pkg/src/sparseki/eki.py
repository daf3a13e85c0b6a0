"""Ensemble Kalman inversion with an l1-budgeted, inequality-constrained
update step and l0 hard thresholding.

The standard update moves each member by the empirical-covariance Kalman
formula.  The sparse update instead minimizes, per member, the quadratic

    1/2 |y_j - H v|^2_Gamma + 1/2 |v - Psi(v_j)|^2_C

over the augmented variable v = (theta, w) subject to the parameter
constraint set (l1 budget over the masked coordinates plus linear
inequality rows), posed as a standard quadratic program through
positive/negative variable splitting.  Each iteration ends with hard
thresholding of the masked coordinates, projected so that it never leaves
the feasible set.  With no budget, no threshold and no inequality rows the
sparse path reduces to the standard update up to solver tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dictionary import ModelParameterization
from .observables import NoiseCovariance
from .qp import QpMaxIterationsError, l1_split
from .simulate import BlowUpError

__all__ = [
    "EkiConfig",
    "Ensemble",
    "IterationRecord",
    "ConvergenceReport",
    "PruneResult",
    "eki_update",
    "threshold",
    "sparse_member_step",
    "run_sparse_eki",
    "run_standard_eki",
    "prune_and_refit",
    "restrict_parameterization",
]


@dataclass(frozen=True)
class EkiConfig:
    """Run parameters for the inversion driver.

    ``gamma`` and ``threshold_level`` (the thresholding lambda) default to
    the values carried by the model parameterization when left as None.
    Members initialize coordinate-wise uniform over [prior_lo, prior_hi].
    """

    ensemble_size: int
    max_iterations: int = 30
    perturb_observations: bool = True
    jitter: float = 1e-6
    gamma: float | None = None
    threshold_level: float | None = None
    prior_lo: np.ndarray | None = None
    prior_hi: np.ndarray | None = None
    seed: int = 0
    qp_tol: float = 1e-10
    discrepancy_stop: bool = True
    resample_max: int = 5
    max_batches: int = 4
    n_workers: int = 0

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if self.gamma is not None and not (self.gamma > 0):
            raise ValueError("gamma must be positive or infinite")
        if self.threshold_level is not None and self.threshold_level < 0:
            raise ValueError("threshold_level must be nonnegative")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mean: np.ndarray
    spread: np.ndarray
    misfit: float
    masked_l1: float
    member_masked_l1: np.ndarray

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mean": self.mean.tolist(),
            "spread": self.spread.tolist(),
            "misfit": self.misfit,
            "masked_l1": self.masked_l1,
            "member_masked_l1": self.member_masked_l1.tolist(),
        }


@dataclass(frozen=True)
class Ensemble:
    """Members (rows) of free-parameter vectors at one iteration."""

    members: np.ndarray
    iteration: int = 0
    history: tuple[IterationRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "members", np.atleast_2d(np.asarray(self.members, dtype=float))
        )

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    @property
    def spread(self) -> np.ndarray:
        return self.members.std(axis=0, ddof=1)


@dataclass(frozen=True)
class ConvergenceReport:
    history: tuple[IterationRecord, ...]
    stopped_early: bool
    n_resampled: int
    n_qp_fallbacks: int
    max_budget_violation: float
    max_ineq_violation: float
    labels: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "labels": list(self.labels),
                "stopped_early": self.stopped_early,
                "n_resampled": self.n_resampled,
                "n_qp_fallbacks": self.n_qp_fallbacks,
                "max_budget_violation": self.max_budget_violation,
                "max_ineq_violation": self.max_ineq_violation,
                "iterations": [rec.to_dict() for rec in self.history],
            },
            indent=1,
        )


def _as_cov(gamma) -> NoiseCovariance:
    if isinstance(gamma, NoiseCovariance):
        return gamma
    return NoiseCovariance(np.atleast_2d(np.asarray(gamma, dtype=float)))


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + key))


def _augmented_covariance(
    members: np.ndarray, G_evals: np.ndarray, jitter: float
) -> np.ndarray:
    """Empirical covariance (ddof=1) of Psi = (theta, G), with diagonal ridge."""
    psi = np.hstack([members, G_evals])
    C = np.cov(psi, rowvar=False, ddof=1)
    C = np.atleast_2d(C)
    if jitter > 0:
        C = C + jitter * np.diag(1.0 + np.diag(C))
    return C


def eki_update(
    ensemble: Ensemble,
    G_evals: np.ndarray,
    y: np.ndarray,
    gamma,
    cfg: EkiConfig,
    rng: np.random.Generator | None = None,
) -> Ensemble:
    """One standard (unconstrained) ensemble Kalman update.

    Each member moves by ``C_thG (C_GG + Gamma)^{-1} (y_j - G(theta_j))``
    with covariances estimated across the ensemble and per-member data
    ``y_j`` optionally perturbed by draws from N(0, Gamma).
    """
    if ensemble.size < 2:
        raise ValueError("covariances undefined for fewer than two members")
    gamma = _as_cov(gamma)
    G_evals = np.atleast_2d(np.asarray(G_evals, dtype=float))
    if not np.all(np.isfinite(G_evals)):
        raise ValueError("G evaluations must be finite (resample first)")
    y = np.asarray(y, dtype=float)
    p = ensemble.dim

    C = _augmented_covariance(ensemble.members, G_evals, cfg.jitter)
    C_thG = C[:p, p:]
    C_GG = C[p:, p:]

    if cfg.perturb_observations:
        if rng is None:
            rng = _rng_for(cfg.seed, 7, ensemble.iteration)
        chol = np.linalg.cholesky(gamma.matrix)
        Y = y + rng.standard_normal((ensemble.size, len(y))) @ chol.T
    else:
        Y = np.tile(y, (ensemble.size, 1))

    gain = np.linalg.solve(C_GG + gamma.matrix, C_thG.T)  # (d, p)
    members = ensemble.members + (Y - G_evals) @ gain
    return Ensemble(members, ensemble.iteration + 1, ensemble.history)


def threshold(theta: np.ndarray, lam: float, mask: np.ndarray) -> np.ndarray:
    """Zero masked coordinates with magnitude below sqrt(2 lambda)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    theta = np.array(theta, dtype=float)
    if lam == 0:
        return theta
    cut = math.sqrt(2.0 * lam)
    mask = np.asarray(mask, dtype=bool)
    kill = mask & (np.abs(theta) < cut)
    theta[kill] = 0.0
    return theta


def _threshold_projected(
    member: np.ndarray, lam: float, param: ModelParameterization
) -> np.ndarray:
    """Threshold, but never leave the inequality-feasible set.

    Zeroing is safe for rows with nonpositive bounds; for rows with a
    strictly positive bound (e.g. a coefficient required bounded away from
    zero) the affected coordinates are restored instead of zeroed.
    """
    cand = threshold(member, lam, param.sparsity_mask)
    A, a = param.ineq_matrix, param.ineq_bound
    if A.size:
        viol = A @ cand < a - 1e-12
        if np.any(viol):
            touched = np.any(A[viol] != 0.0, axis=0)
            restore = touched & (cand == 0.0) & (member != 0.0)
            cand[restore] = member[restore]
    return cand


def sparse_member_step(
    member: np.ndarray,
    G_eval: np.ndarray,
    y_j: np.ndarray,
    gamma,
    C_psi: np.ndarray,
    param: ModelParameterization,
    cfg: EkiConfig,
    gamma_inv: np.ndarray | None = None,
) -> np.ndarray:
    """Constrained quadratic minimization replacing the Kalman formula.

    Builds the augmented quadratic (data misfit in Gamma plus proximity to
    Psi(v_j) in the ensemble covariance), applies the positive/negative
    split with the l1 budget over masked coordinates and the
    parameterization's inequality rows, solves the QP, and returns the
    theta block of the minimizer.  The problem is posed in diagonally
    rescaled variables (by the square root of diag(C)) for conditioning;
    this changes nothing mathematically.
    """
    member = np.asarray(member, dtype=float)
    G_eval = np.asarray(G_eval, dtype=float)
    y_j = np.asarray(y_j, dtype=float)
    gamma = _as_cov(gamma)
    p, d = len(member), len(y_j)
    budget = cfg.gamma if cfg.gamma is not None else param.l1_budget

    if gamma_inv is None:
        gamma_inv = np.linalg.inv(gamma.matrix)

    psi = np.concatenate([member, G_eval])
    scale = np.sqrt(np.diag(C_psi))
    R = C_psi / np.outer(scale, scale)
    try:
        R_inv = cho_solve(cho_factor(R), np.eye(p + d))
    except np.linalg.LinAlgError:
        R_inv = np.linalg.pinv(R)

    Q = R_inv.copy()
    Sw = scale[p:]
    Q[p:, p:] += np.outer(Sw, Sw) * gamma_inv
    q = -(R_inv @ (psi / scale))
    q[p:] -= Sw * (gamma_inv @ y_j)
    # normalize the objective so the QP tolerance is relative to its scale
    s0 = max(1.0, float(np.max(np.abs(Q))))
    Q /= s0
    q /= s0

    extra = None
    if param.ineq_matrix.size:
        A_full = np.zeros((param.ineq_matrix.shape[0], p + d))
        A_full[:, :p] = param.ineq_matrix * scale[:p]
        extra = (A_full, param.ineq_bound)

    split = l1_split(
        Q,
        q,
        np.flatnonzero(param.sparsity_mask),
        budget,
        extra_ineq=extra,
        weights=scale,
    )
    try:
        v_scaled, _ = split.solve(tol=cfg.qp_tol)
    except QpMaxIterationsError as err:
        # accept a stalled iterate only if it still certifies at the
        # default KKT level (1e-8); otherwise let the driver fall back
        if err.best.kkt_residuals.max() <= 1e-8:
            v_scaled = split.recover(err.best.u_star)
        else:
            raise
    v = v_scaled * scale
    return v[:p]


def _closed_form_member(member, G_eval, y_j, gamma, C_psi):
    """Unconstrained minimizer of the same quadratic (Kalman formula)."""
    p = len(member)
    C_thG = C_psi[:p, p:]
    C_GG = C_psi[p:, p:]
    gain = np.linalg.solve(C_GG + gamma.matrix, y_j - G_eval)
    return member + C_thG @ gain


def _project_feasible(
    member: np.ndarray, param: ModelParameterization, budget: float
) -> np.ndarray:
    """Cheap projection used for resampled/fallback members only."""
    member = np.array(member, dtype=float)
    A, a = param.ineq_matrix, param.ineq_bound
    if A.size:
        # single-coordinate rows admit an exact clip
        for row, bound in zip(A, a):
            nz = np.flatnonzero(row)
            if len(nz) == 1:
                i = nz[0]
                lo = bound / row[i]
                if row[i] > 0 and member[i] < lo:
                    member[i] = lo
                elif row[i] < 0 and member[i] > lo:
                    member[i] = lo
    if np.isfinite(budget):
        l1 = np.abs(member[param.sparsity_mask]).sum()
        if l1 > budget:
            member[param.sparsity_mask] *= 0.98 * budget / l1
    return member


class _ForwardRunner:
    """Evaluates the forward map on all members, resampling blow-ups."""

    def __init__(self, forward, forward_batch, param, cfg, budget):
        self.forward = forward
        self.forward_batch = forward_batch
        self.param = param
        self.cfg = cfg
        self.budget = budget
        self.n_resampled = 0
        self.data_dim: int | None = None

    def _eval(self, members: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.forward_batch is not None:
            out = np.asarray(self.forward_batch(members, rng), dtype=float)
            self.data_dim = out.shape[1]
            return out
        rows = []
        for theta in members:
            try:
                rows.append(np.asarray(self.forward(theta, rng), dtype=float))
            except (BlowUpError, ValueError, ArithmeticError, FloatingPointError):
                rows.append(None)
        d = next((len(r) for r in rows if r is not None), self.data_dim)
        if d is None:
            raise RuntimeError("every forward evaluation failed")
        self.data_dim = d
        out = np.full((len(members), d), np.nan)
        for i, r in enumerate(rows):
            if r is not None and np.all(np.isfinite(r)):
                out[i] = r
        return out

    def __call__(
        self,
        members: np.ndarray,
        rng: np.random.Generator,
        extras: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """Evaluate members (with blow-up resampling) plus optional extra
        rows that are evaluated once and never resampled (e.g. the mean)."""
        members = members.copy()
        J = len(members)
        block = members if extras is None else np.vstack([members, extras])
        G_block = self._eval(block, rng)
        G = G_block[:J]
        G_extra = None if extras is None else G_block[J:]
        for _ in range(self.cfg.resample_max):
            bad = ~np.all(np.isfinite(G), axis=1)
            if not np.any(bad):
                return members, G, G_extra
            if np.all(bad):
                raise RuntimeError(
                    "all ensemble members blew up; the prior or constraints "
                    "do not confine the dynamics"
                )
            self.n_resampled += int(bad.sum())
            mean = members[~bad].mean(axis=0)
            spread = members[~bad].std(axis=0, ddof=1) + 1e-12
            for i in np.flatnonzero(bad):
                draw = mean + spread * rng.standard_normal(members.shape[1])
                members[i] = _project_feasible(draw, self.param, self.budget)
            G[bad] = self._eval(members[bad], rng)
        bad = ~np.all(np.isfinite(G), axis=1)
        if np.any(bad):
            # last resort: duplicate surviving members so J stays constant
            good = np.flatnonzero(~bad)
            if len(good) == 0:
                raise RuntimeError("ensemble irrecoverably blew up")
            for i in np.flatnonzero(bad):
                j = good[i % len(good)]
                members[i] = members[j]
                G[i] = G[j]
            self.n_resampled += int(bad.sum())
        return members, G, G_extra


def run_sparse_eki(
    forward: Callable,
    y: np.ndarray,
    gamma,
    param: ModelParameterization,
    cfg: EkiConfig,
    forward_batch: Callable | None = None,
    mode: str = "sparse",
) -> tuple[Ensemble, ConvergenceReport]:
    """Iterate constrained (or standard) EKI until the iteration budget or
    the discrepancy stop.

    ``forward(theta, rng) -> data vector`` evaluates one member;
    ``forward_batch(thetas, rng) -> (J, d) array`` (optional) evaluates all
    members at once, marking failed rows with non-finite entries.  With
    ``mode="standard"`` (or a sparse run with infinite budget, zero
    threshold and no inequality rows) the iteration reduces to the plain
    Kalman update.
    """
    if mode not in ("sparse", "standard"):
        raise ValueError("mode must be 'sparse' or 'standard'")
    gamma = _as_cov(gamma)
    y = np.asarray(y, dtype=float)
    d = len(y)
    p = param.free_dim
    budget = cfg.gamma if cfg.gamma is not None else param.l1_budget
    lam = (
        cfg.threshold_level
        if cfg.threshold_level is not None
        else param.threshold_level
    )
    sparse = mode == "sparse"

    lo = np.asarray(cfg.prior_lo, dtype=float) if cfg.prior_lo is not None else -np.ones(p)
    hi = np.asarray(cfg.prior_hi, dtype=float) if cfg.prior_hi is not None else np.ones(p)
    if lo.shape != (p,) or hi.shape != (p,):
        raise ValueError("prior boxes must match the parameter dimension")

    rng_init = _rng_for(cfg.seed, 0)
    members = lo + (hi - lo) * rng_init.uniform(size=(cfg.ensemble_size, p))
    members = np.array(
        [_project_feasible(m, param, budget if sparse else np.inf) for m in members]
    )

    runner = _ForwardRunner(forward, forward_batch, param, cfg, budget)
    gamma_inv = np.linalg.inv(gamma.matrix)
    gamma_chol = np.linalg.cholesky(gamma.matrix)

    def misfit_of(G_mean_row: np.ndarray) -> float:
        if not np.all(np.isfinite(G_mean_row)):
            return float("inf")
        r = np.linalg.solve(gamma_chol, y - G_mean_row)
        return 0.5 * float(r @ r)

    history: list[IterationRecord] = []
    n_fallbacks = 0
    worst_budget = 0.0
    worst_ineq = 0.0
    stopped_early = False
    ensemble = Ensemble(members, 0)

    for it in range(cfg.max_iterations + 1):
        rng_iter = _rng_for(cfg.seed, 1, it)
        members, G_evals, G_extra = runner(
            ensemble.members, rng_iter, extras=ensemble.mean[None, :]
        )
        ensemble = Ensemble(members, ensemble.iteration, ensemble.history)
        misfit = misfit_of(G_extra[0])

        masked = param.sparsity_mask
        member_l1 = np.abs(members[:, masked]).sum(axis=1)
        history.append(
            IterationRecord(
                iteration=it,
                mean=ensemble.mean,
                spread=ensemble.spread,
                misfit=misfit,
                masked_l1=float(np.abs(ensemble.mean[masked]).sum()),
                member_masked_l1=member_l1,
            )
        )

        if it >= cfg.max_iterations:
            break
        if cfg.discrepancy_stop and it >= 1 and misfit <= 0.5 * d:
            stopped_early = True
            break

        rng_pert = _rng_for(cfg.seed, 2, it)
        if cfg.perturb_observations:
            Y = y + rng_pert.standard_normal((cfg.ensemble_size, d)) @ gamma_chol.T
        else:
            Y = np.tile(y, (cfg.ensemble_size, 1))

        if not sparse:
            C = _augmented_covariance(members, G_evals, cfg.jitter)
            gain = np.linalg.solve(C[p:, p:] + gamma.matrix, C[:p, p:].T)
            new_members = members + (Y - G_evals) @ gain
        else:
            C = _augmented_covariance(members, G_evals, cfg.jitter)
            new_members = np.empty_like(members)
            for j in range(cfg.ensemble_size):
                try:
                    new_members[j] = sparse_member_step(
                        members[j], G_evals[j], Y[j], gamma, C, param, cfg,
                        gamma_inv=gamma_inv,
                    )
                except (QpMaxIterationsError, np.linalg.LinAlgError):
                    n_fallbacks += 1
                    fallback = _closed_form_member(
                        members[j], G_evals[j], Y[j], gamma, C
                    )
                    new_members[j] = _project_feasible(fallback, param, budget)
            if lam > 0:
                new_members = np.array(
                    [_threshold_projected(m, lam, param) for m in new_members]
                )

        if sparse:
            if np.isfinite(budget):
                worst_budget = max(
                    worst_budget,
                    float(
                        np.max(
                            np.abs(new_members[:, masked]).sum(axis=1) - budget
                        )
                    ),
                )
            if param.ineq_matrix.size:
                gaps = param.ineq_bound - new_members @ param.ineq_matrix.T
                worst_ineq = max(worst_ineq, float(np.max(gaps)))

        ensemble = Ensemble(new_members, it + 1)

    report = ConvergenceReport(
        history=tuple(history),
        stopped_early=stopped_early,
        n_resampled=runner.n_resampled,
        n_qp_fallbacks=n_fallbacks,
        max_budget_violation=worst_budget,
        max_ineq_violation=worst_ineq,
        labels=param.labels,
    )
    return Ensemble(ensemble.members, ensemble.iteration, tuple(history)), report


def run_standard_eki(
    forward, y, gamma, param, cfg, forward_batch=None
) -> tuple[Ensemble, ConvergenceReport]:
    """Plain EKI: no budget, no threshold, no inequality constraints."""
    return run_sparse_eki(
        forward, y, gamma, param, cfg, forward_batch=forward_batch, mode="standard"
    )


def restrict_parameterization(
    param: ModelParameterization, keep: np.ndarray
) -> tuple[ModelParameterization, Callable[[np.ndarray], np.ndarray]]:
    """Parameterization over a subset of free coordinates (others pinned to 0).

    Returns the restricted parameterization and the injection map from
    reduced vectors back to full-length vectors.
    """
    keep = np.asarray(keep, dtype=int)
    full_dim = param.free_dim

    def inject(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1] + (full_dim,))
        out[..., keep] = v
        return out

    A = param.ineq_matrix[:, keep] if param.ineq_matrix.size else np.zeros((0, len(keep)))
    a = param.ineq_bound
    if A.size:
        alive = np.any(A != 0.0, axis=1)
        dead_positive = ~alive & (a > 0)
        if np.any(dead_positive):
            raise ValueError(
                "pruning removed a coordinate required strictly positive"
            )
        A, a = A[alive], a[alive]

    noise_index = None
    if param.noise_index is not None:
        pos = np.flatnonzero(keep == param.noise_index)
        noise_index = int(pos[0]) if pos.size else None

    rhs_fn = None
    if param.rhs_fn is not None:
        rhs_fn = lambda v, x: param.rhs_fn(inject(v), x)

    reduced = ModelParameterization(
        name=f"{param.name}[{len(keep)}/{full_dim}]",
        state_dim=param.state_dim,
        free_dim=len(keep),
        labels=tuple(param.labels[i] for i in keep),
        sparsity_mask=param.sparsity_mask[keep].copy(),
        ineq_matrix=A,
        ineq_bound=a,
        l1_budget=param.l1_budget,
        threshold_level=param.threshold_level,
        embed_fn=lambda v: param.embed_fn(inject(v)),
        project_fn=lambda theta: param.project_fn(theta)[..., keep],
        rhs_fn=rhs_fn,
        noise_index=noise_index,
        extras=dict(param.extras),
    )
    return reduced, inject


@dataclass(frozen=True)
class PruneResult:
    parameterization: ModelParameterization
    ensemble: Ensemble
    keep_indices: np.ndarray
    reports: tuple[ConvergenceReport, ...]
    full_mean: np.ndarray
    full_members: np.ndarray

    @property
    def n_batches(self) -> int:
        return len(self.reports)


def prune_and_refit(
    result: Ensemble,
    param: ModelParameterization,
    forward: Callable,
    y: np.ndarray,
    gamma,
    cfg: EkiConfig,
    forward_batch: Callable | None = None,
    first_report: ConvergenceReport | None = None,
) -> PruneResult:
    """Drop masked coordinates below the threshold and rerun on survivors.

    Survivor selection uses the ensemble-mean magnitude against
    sqrt(2 lambda); unmasked coordinates and coordinates pinned by strictly
    positive inequality bounds always survive.  Repeats until the survivor
    set is stable (or ``cfg.max_batches`` is reached).
    """
    lam = (
        cfg.threshold_level
        if cfg.threshold_level is not None
        else param.threshold_level
    )
    cut = math.sqrt(2.0 * lam)

    def survivors(mean: np.ndarray, mask: np.ndarray, A, a) -> np.ndarray:
        keep = ~mask | (np.abs(mean) >= cut)
        if A.size:
            positive_rows = A[a > 0]
            if positive_rows.size:
                keep |= np.any(positive_rows != 0.0, axis=0)
        return np.flatnonzero(keep)

    keep_global = survivors(
        result.mean, param.sparsity_mask, param.ineq_matrix, param.ineq_bound
    )
    if not np.any(param.sparsity_mask[keep_global]):
        raise ValueError(
            "thresholding removed every masked coordinate; lower lambda"
        )

    reports = list([first_report] if first_report is not None else [])
    ensemble = result
    current_keep = np.arange(param.free_dim)

    for batch in range(cfg.max_batches):
        if len(keep_global) == len(current_keep) and np.array_equal(
            keep_global, current_keep
        ):
            break
        current_keep = keep_global
        reduced, inject = restrict_parameterization(param, current_keep)
        fwd = (lambda v, rng: forward(inject(v), rng)) if forward is not None else None
        fwd_batch = None
        if forward_batch is not None:
            fwd_batch = lambda vs, rng: forward_batch(inject(vs), rng)
        sub_cfg = replace(
            cfg,
            prior_lo=None if cfg.prior_lo is None else np.asarray(cfg.prior_lo)[current_keep],
            prior_hi=None if cfg.prior_hi is None else np.asarray(cfg.prior_hi)[current_keep],
            seed=cfg.seed + 101 * (batch + 1),
        )
        ensemble, report = run_sparse_eki(
            fwd, y, gamma, reduced, sub_cfg, forward_batch=fwd_batch
        )
        reports.append(report)
        keep_local = survivors(
            ensemble.mean, reduced.sparsity_mask, reduced.ineq_matrix,
            reduced.ineq_bound,
        )
        if not np.any(reduced.sparsity_mask[keep_local]):
            raise ValueError(
                "thresholding removed every masked coordinate; lower lambda"
            )
        keep_global = current_keep[keep_local]

    reduced, inject = restrict_parameterization(param, current_keep)
    return PruneResult(
        parameterization=reduced,
        ensemble=ensemble,
        keep_indices=current_keep,
        reports=tuple(r for r in reports if r is not None),
        full_mean=inject(ensemble.mean),
        full_members=inject(ensemble.members),
    )
