"""Time-averaged statistics of trajectories and the observation noise model.

The data vector fed to the inversion concatenates (per training trajectory):
first/second (and optionally higher) moments of selected state components,
temporal autocorrelations at selected components and lags, and, for field
trajectories, the time-averaged spatial correlation function computed in
transform space.

The noise covariance treats the fluctuation of finite-time averages around
the infinite-time average as Gaussian; it is estimated by batch means over
disjoint sub-windows, with a small diagonal floor to keep it positive
definite.  Non-ergodic (transient) signals use a relative-error model
instead, since their block means differ systematically.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .simulate import Trajectory

__all__ = [
    "DataVector",
    "NoiseCovariance",
    "ObservableSpec",
    "moments",
    "autocorrelation",
    "spatial_correlation",
    "evaluate_statistics",
    "estimate_noise_covariance",
    "relative_noise_covariance",
    "assemble_data",
    "EXPECTED_DATA_DIM",
]

NOISE_FLOOR = 1e-6

# Declared data dimensions per case family (single training trajectory).
EXPECTED_DATA_DIM = {
    "l63": 9,
    "l96-single": 44,
    "l96-multiscale": 44,
    "coalescence-sim": 5,
    "coalescence-k3": 5,
    "coalescence-exp": 5,
    "ks": 114,
}


@dataclass(frozen=True)
class DataVector:
    """A real vector of statistics with per-entry provenance labels."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if len(self.values) != len(self.labels):
            raise ValueError("values and labels must align")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("data vector entries must be finite")

    def __len__(self) -> int:
        return len(self.values)

    @staticmethod
    def concat(parts: Sequence["DataVector"], prefixes: Sequence[str] | None = None):
        if prefixes is None:
            prefixes = [""] * len(parts)
        values = np.concatenate([p.values for p in parts]) if parts else np.zeros(0)
        labels = tuple(
            pre + lab for pre, p in zip(prefixes, parts) for lab in p.labels
        )
        return DataVector(values, labels)

    def to_json(self) -> str:
        return json.dumps(
            {"values": self.values.tolist(), "labels": list(self.labels)}
        )

    @staticmethod
    def from_json(text: str) -> "DataVector":
        obj = json.loads(text)
        return DataVector(np.asarray(obj["values"]), tuple(obj["labels"]))


@dataclass(frozen=True)
class NoiseCovariance:
    """Symmetric positive-definite observation covariance."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("covariance must be square")
        if np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
            raise ValueError("covariance must be symmetric")
        m = 0.5 * (m + m.T)
        object.__setattr__(self, "matrix", m)
        try:
            object.__setattr__(self, "_chol", np.linalg.cholesky(m))
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def whiten(self, residual: np.ndarray) -> np.ndarray:
        """Apply Gamma^{-1/2} (via the Cholesky factor) to a residual."""
        from scipy.linalg import solve_triangular

        return solve_triangular(self._chol, np.asarray(residual, float), lower=True)

    def to_json(self) -> str:
        return json.dumps({"matrix": self.matrix.tolist()})

    @staticmethod
    def from_json(text: str) -> "NoiseCovariance":
        return NoiseCovariance(np.asarray(json.loads(text)["matrix"]))


@dataclass(frozen=True)
class ObservableSpec:
    """Which statistics make up the data vector.

    ``second_moment_pairs`` defaults to all ordered pairs (j <= k) over
    ``moment_indices``; a non-default choice (e.g. diagonal-only) makes the
    composition auditable in the configuration.  ``spatial_corr_points`` is
    only meaningful for field trajectories on a uniform periodic grid.
    """

    moment_indices: tuple[int, ...]
    second_moment_pairs: tuple[tuple[int, int], ...] | None = None
    higher_moment_orders: tuple[int, ...] = ()
    autocorr_locations: tuple[int, ...] = ()
    autocorr_lags: tuple[float, ...] = ()
    spatial_corr_points: int = 0
    window: tuple[float, float] | None = None
    component_names: tuple[str, ...] | None = None

    def pairs(self) -> tuple[tuple[int, int], ...]:
        if self.second_moment_pairs is not None:
            return tuple(tuple(p) for p in self.second_moment_pairs)
        idx = self.moment_indices
        return tuple((j, k) for i, j in enumerate(idx) for k in idx[i:])

    def name(self, k: int) -> str:
        if self.component_names is not None:
            return self.component_names[k]
        return f"x{k + 1}"


def _window(traj: Trajectory, spec: ObservableSpec) -> np.ndarray:
    if spec.window is None:
        return traj.window
    lo, hi = spec.window
    if lo < traj.times[0] - 1e-12 or hi > traj.times[-1] + 1e-12:
        raise ValueError(
            f"averaging window [{lo}, {hi}] outside trajectory span "
            f"[{traj.times[0]}, {traj.times[-1]}]"
        )
    i0 = int(np.searchsorted(traj.times, lo - 1e-12))
    i1 = int(np.searchsorted(traj.times, hi + 1e-12))
    return traj.states[i0:i1]


def moments(traj: Trajectory, spec: ObservableSpec) -> DataVector:
    """Time averages of X_k, X_j X_k (j <= k) and optional higher powers."""
    xs = _window(traj, spec)
    if xs.shape[0] < 2:
        raise ValueError("averaging window contains fewer than two samples")
    vals, labels = [], []
    for k in spec.moment_indices:
        vals.append(xs[:, k].mean())
        labels.append(f"mean[{spec.name(k)}]")
    for j, k in spec.pairs():
        vals.append((xs[:, j] * xs[:, k]).mean())
        labels.append(f"mean[{spec.name(j)}*{spec.name(k)}]")
    for order in spec.higher_moment_orders:
        for k in spec.moment_indices:
            vals.append((xs[:, k] ** order).mean())
            labels.append(f"mean[{spec.name(k)}^{order}]")
    return DataVector(np.asarray(vals), tuple(labels))


def _autocorr_values(z: np.ndarray, lags_steps: np.ndarray) -> np.ndarray:
    """Biased (1/N) normalized autocorrelation at integer-step lags.

    Operates on the last axis; ``z`` may carry leading batch axes.
    """
    z = z - z.mean(axis=-1, keepdims=True)
    n = z.shape[-1]
    var = (z * z).mean(axis=-1)
    if np.any(var <= 0):
        raise ValueError("autocorrelation of a constant signal is undefined")
    out = []
    for s in lags_steps:
        prod = z[..., : n - s] * z[..., s:] if s > 0 else z * z
        out.append(prod.sum(axis=-1) / (n * var))
    return np.stack(out, axis=-1)


def autocorrelation(
    traj: Trajectory, location: int, lags: Sequence[float]
) -> DataVector:
    """Normalized temporal autocorrelation of one component at given lags.

    Lags are in model time units and must be representable on the stored
    time grid; rho(0) = 1 by construction.
    """
    xs = traj.window
    dt = traj.dt
    steps = np.asarray([int(round(t / dt)) for t in lags])
    if np.any(np.asarray(lags) < 0):
        raise ValueError("lags must be nonnegative")
    if np.any(steps >= xs.shape[0]):
        raise ValueError("lag exceeds the averaging window")
    vals = _autocorr_values(xs[:, location], steps)
    labels = tuple(f"autocorr[x{location + 1},lag={t:g}]" for t in lags)
    return DataVector(vals, labels)


def _spatial_corr_profile(fields: np.ndarray) -> np.ndarray:
    """Normalized C(x) on the full grid from snapshots ``(T, N)``."""
    spec_pow = np.abs(np.fft.rfft(fields, axis=-1)) ** 2
    corr = np.fft.irfft(spec_pow.mean(axis=0), n=fields.shape[-1])
    return corr / corr.max()


def spatial_correlation(traj: Trajectory, n_points: int) -> DataVector:
    """Time-averaged spatial correlation at offsets evenly covering [0, L/2].

    Computed via the transform identity: the transform of C equals the time
    average of the squared transform magnitude.  Normalized so the largest
    value is 1.
    """
    fields = traj.window
    n_grid = fields.shape[-1]
    corr = _spatial_corr_profile(fields)
    offsets = np.round(np.linspace(0, n_grid // 2, n_points)).astype(int)
    labels = tuple(f"spatialcorr[{i}]" for i in offsets)
    return DataVector(corr[offsets], labels)


def evaluate_statistics(traj: Trajectory, spec: ObservableSpec) -> DataVector:
    """The full configured data vector for one trajectory."""
    parts = [moments(traj, spec)]
    for loc in spec.autocorr_locations:
        parts.append(autocorrelation(traj, loc, spec.autocorr_lags))
    if spec.spatial_corr_points:
        parts.append(spatial_correlation(traj, spec.spatial_corr_points))
    return DataVector.concat(parts)


def estimate_noise_covariance(
    traj: Trajectory, spec: ObservableSpec, n_windows: int = 10
) -> NoiseCovariance:
    """Batch-means estimate of the finite-time averaging noise.

    The averaging window splits into ``n_windows`` disjoint blocks; the
    sample covariance of the per-block data vectors, divided by
    ``n_windows``, estimates the covariance of the full-window average.  A
    diagonal floor ``1e-6 * (1 + y^2)`` keeps the result positive definite.
    """
    if n_windows < 2:
        raise ValueError("need at least two blocks")
    start = traj.spinup_index
    n_samples = len(traj.times) - start
    block = n_samples // n_windows
    if block < 2:
        raise ValueError("fewer than two samples per block")
    y_full = evaluate_statistics(traj, spec)
    block_spec = dataclasses.replace(spec, window=None)
    rows = []
    for b in range(n_windows):
        i0 = start + b * block
        sl = slice(i0, i0 + block)
        sub = Trajectory(traj.times[sl], traj.states[sl], 0)
        rows.append(evaluate_statistics(sub, block_spec).values)
    rows = np.asarray(rows)
    fluct = np.cov(rows, rowvar=False, ddof=1) / n_windows
    fluct = np.atleast_2d(fluct)
    floor = NOISE_FLOOR * (1.0 + y_full.values**2)
    return NoiseCovariance(fluct + np.diag(floor))


def relative_noise_covariance(
    y: DataVector, frac: float = 0.02
) -> NoiseCovariance:
    """Diagonal noise with standard deviation ``frac * |y_i|`` plus the floor.

    Used for transient (non-ergodic) signals where batch means would treat
    the signal's own evolution as noise.
    """
    var = (frac * y.values) ** 2 + NOISE_FLOOR * (1.0 + y.values**2)
    return NoiseCovariance(np.diag(var))


def assemble_data(
    case_id: str | None,
    trajs: Trajectory | Sequence[Trajectory],
    spec: ObservableSpec,
    noise_model: str = "batch-means",
    n_windows: int = 10,
    relative_frac: float = 0.02,
) -> tuple[DataVector, NoiseCovariance]:
    """Concatenate statistics over training trajectories and build Gamma.

    Multiple training trajectories (different initial conditions) contribute
    independent blocks: values concatenate and Gamma is block diagonal.
    When ``case_id`` names a declared case the total dimension is checked
    against it.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    ys, gammas = [], []
    for traj in trajs:
        y = evaluate_statistics(traj, spec)
        if noise_model == "batch-means":
            g = estimate_noise_covariance(traj, spec, n_windows)
        elif noise_model == "relative":
            g = relative_noise_covariance(y, relative_frac)
        else:
            raise ValueError(f"unknown noise model {noise_model!r}")
        ys.append(y)
        gammas.append(g.matrix)
    prefixes = (
        [""] if len(ys) == 1 else [f"ic{i + 1}:" for i in range(len(ys))]
    )
    y_all = DataVector.concat(ys, prefixes)
    from scipy.linalg import block_diag

    gamma_all = NoiseCovariance(block_diag(*gammas))
    if case_id is not None:
        expected = EXPECTED_DATA_DIM.get(case_id)
        if expected is not None and len(y_all) != expected * len(ys):
            raise ValueError(
                f"case {case_id!r} declares data dimension "
                f"{expected} per trajectory, got {len(y_all)} total for "
                f"{len(ys)} trajectories"
            )
    return y_all, gamma_all
