"""Forward-in-time integrators for the four model families.

All integrators are pure functions of (parameters, config, seed): identical
inputs give bit-identical trajectories.  A state that leaves the set of
finite floating-point vectors aborts the run with :class:`BlowUpError`
carrying the blow-up time, so that the inversion driver can resample the
offending parameter draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "BlowUpError",
    "IntegratorConfig",
    "Trajectory",
    "euler_maruyama",
    "rk4",
    "simulate_multiscale_l96",
    "gamma_closure",
    "exponential_closure",
    "coalescence_rhs",
    "make_coalescence_rhs",
    "ks_wavenumbers",
    "ks_linear_symbol",
    "ks_nonlinear_term",
    "ks_step_cnab2",
    "ks_step_ifab2",
    "clip_state",
    "simulate_ks",
    "trajectory_to_csv",
    "GAMMA_KAPPA_BOUNDS",
    "GAMMA_ETA_BOUNDS",
]

GAMMA_KAPPA_BOUNDS = (1e-3, 10.0)
GAMMA_ETA_BOUNDS = (1e-3, 1.0)


class BlowUpError(RuntimeError):
    """Raised when an integrator encounters a non-finite state."""

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"state became non-finite at t={time:.6g}")


@dataclass(frozen=True)
class IntegratorConfig:
    """Stepping parameters shared by all integrators.

    ``horizon`` is the total simulated time; samples before ``spinup`` are
    kept in the trajectory but excluded from statistics.  ``store_every``
    thins the stored samples (statistics then use the thinned grid).
    """

    dt: float
    horizon: float
    spinup: float = 0.0
    seed: int | None = None
    clip_bounds: tuple[float, float] | None = None
    store_every: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (self.horizon > self.spinup >= 0):
            raise ValueError("require horizon > spinup >= 0")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped state sequence; ``states[i]`` corresponds to ``times[i]``."""

    times: np.ndarray
    states: np.ndarray
    spinup_index: int = 0

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must align")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (0 <= self.spinup_index < len(self.times)):
            raise ValueError("spinup_index out of range")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def window(self) -> np.ndarray:
        """States past spinup (the statistics window)."""
        return self.states[self.spinup_index :]

    def component(self, k: int) -> np.ndarray:
        return self.states[self.spinup_index :, k]


def _spinup_index(times: np.ndarray, spinup: float) -> int:
    return int(np.searchsorted(times, spinup - 1e-12))


def _check_finite(x: np.ndarray, t: float):
    if not np.all(np.isfinite(x)):
        raise BlowUpError(t)


def euler_maruyama(
    rhs: Callable[[np.ndarray], np.ndarray],
    noise_amplitude: float | np.ndarray,
    x0: np.ndarray,
    cfg: IntegratorConfig,
) -> Trajectory:
    """Euler-Maruyama stepping of ``dX = rhs(X) dt + noise_amplitude dW``.

    ``noise_amplitude`` is the per-component diffusion coefficient (the
    square root of the noise variance rate), so each step adds
    ``noise_amplitude * sqrt(dt) * xi`` with standard normal ``xi``.
    """
    if np.any(np.asarray(noise_amplitude) < 0):
        raise ValueError("noise_amplitude must be nonnegative")
    x = np.array(x0, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    n_steps = cfg.n_steps
    sqdt = math.sqrt(cfg.dt)
    stored = [x.copy()]
    times = [0.0]
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            x = x + cfg.dt * rhs(x) + noise_amplitude * sqdt * rng.standard_normal(
                x.shape
            )
            _check_finite(x, (n + 1) * cfg.dt)
            if (n + 1) % cfg.store_every == 0:
                stored.append(x.copy())
                times.append((n + 1) * cfg.dt)
    times = np.asarray(times)
    return Trajectory(times, np.asarray(stored), _spinup_index(times, cfg.spinup))


def _rk4_step(rhs, x, dt):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4(
    rhs: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    cfg: IntegratorConfig,
) -> Trajectory:
    """Classical fourth-order Runge-Kutta stepping."""
    x = np.array(x0, dtype=float)
    n_steps = cfg.n_steps
    stored = [x.copy()]
    times = [0.0]
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            x = _rk4_step(rhs, x, cfg.dt)
            _check_finite(x, (n + 1) * cfg.dt)
            if (n + 1) % cfg.store_every == 0:
                stored.append(x.copy())
                times.append((n + 1) * cfg.dt)
    times = np.asarray(times)
    return Trajectory(times, np.asarray(stored), _spinup_index(times, cfg.spinup))


# ---------------------------------------------------------------------------
# Multiscale Lorenz 96 (truth model for the closure-learning study)
# ---------------------------------------------------------------------------


def simulate_multiscale_l96(
    h: float,
    c: float,
    b: float,
    F: float,
    K: int,
    J_fast: int,
    x0: np.ndarray,
    y0: np.ndarray,
    cfg: IntegratorConfig,
    return_fast: bool = False,
) -> Trajectory | tuple[Trajectory, Trajectory]:
    """Coupled slow/fast ring model; returns the slow-variable trajectory.

    Fast variables are flattened sector-major so that the cyclic boundary
    identities x_{k+K} = x_k, y_{j,k+K} = y_{j,k} and y_{j+J,k} = y_{j,k+1}
    reduce to periodic shifts of a single ring of length J_fast*K.
    """
    if K < 5:
        raise ValueError("K >= 5 required")
    if J_fast < 1:
        raise ValueError("J_fast >= 1 required")
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float).reshape(K * J_fast)
    if x0.shape != (K,):
        raise ValueError("x0 must have shape (K,)")

    hc_over_J = h * c / J_fast
    h_over_J = h / J_fast

    def rhs(state):
        x, y = state[:K], state[K:]
        ysum = y.reshape(K, J_fast).sum(axis=1)
        dx = (
            -np.roll(x, 1) * (np.roll(x, 2) - np.roll(x, -1))
            - x
            + F
            - hc_over_J * ysum
        )
        yp1 = np.roll(y, -1)
        yp2 = np.roll(y, -2)
        ym1 = np.roll(y, 1)
        xrep = np.repeat(x, J_fast)
        dy = c * (-b * yp1 * (yp2 - ym1) - y + h_over_J * xrep)
        return np.concatenate([dx, dy])

    full = rk4(rhs, np.concatenate([x0, y0]), cfg)
    slow = Trajectory(full.times, full.states[:, :K], full.spinup_index)
    if return_fast:
        fast = Trajectory(full.times, full.states[:, K:], full.spinup_index)
        return slow, fast
    return slow


# ---------------------------------------------------------------------------
# Moment closures and the coalescence moment system
# ---------------------------------------------------------------------------


def _gamma_factor(kappa: float, k: int) -> float:
    # Gamma(kappa + k) / Gamma(kappa) without overflow
    out = 1.0
    for i in range(k):
        out *= kappa + i
    return out


def gamma_closure(
    X0: float,
    X1: float,
    X2: float,
    k: int,
    bounds: tuple[tuple[float, float], tuple[float, float]] = (
        GAMMA_KAPPA_BOUNDS,
        GAMMA_ETA_BOUNDS,
    ),
) -> float:
    """Moment of order k from a clipped Gamma fit to (X0, X1, X2).

    Shape kappa' = X1^2/(X0 X2 - X1^2) and scale eta' = X2/X1 - X1/X0 are
    clipped to the configured intervals before use; a nonpositive or zero
    denominator sends kappa' to +inf and hence to the upper clip.
    """
    if X0 <= 0 or X1 <= 0:
        raise ValueError("gamma closure requires X0 > 0 and X1 > 0")
    (k_min, k_max), (e_min, e_max) = bounds
    denom = X0 * X2 - X1 * X1
    kappa_raw = math.inf if denom <= 0 else X1 * X1 / denom
    eta_raw = X2 / X1 - X1 / X0
    kappa = min(max(kappa_raw, k_min), k_max)
    eta = min(max(eta_raw, e_min), e_max)
    return X0 * eta**k * _gamma_factor(kappa, k)


def exponential_closure(X0: float, X1: float, k: int) -> float:
    """Moment of order k from an exponential fit with rate mu = X0/X1."""
    if X0 <= 0 or X1 <= 0:
        raise ValueError("exponential closure requires X0 > 0 and X1 > 0")
    mu = X0 / X1
    return X0 * math.factorial(k) / mu**k


def coalescence_rhs(
    c: np.ndarray,
    state: np.ndarray,
    closure: str = "gamma",
    bounds=(GAMMA_KAPPA_BOUNDS, GAMMA_ETA_BOUNDS),
) -> np.ndarray:
    """Tendency of the truncated moment system for a polynomial kernel.

    ``state`` holds the resolved moments (X0, ..., XK); the kernel matrix
    ``c`` is symmetric with c[1,1] = 0.  Moments above K come from the
    chosen closure.  X1 (total mass proxy) is exactly conserved.
    """
    c = np.asarray(c, dtype=float)
    state = np.asarray(state, dtype=float)
    K = len(state) - 1
    r = c.shape[0] - 1
    n_needed = K + r  # highest moment index appearing in the k=K equation

    X = np.empty(n_needed + 1)
    X[: K + 1] = state
    for m in range(K + 1, n_needed + 1):
        if closure == "gamma":
            X[m] = gamma_closure(state[0], state[1], state[2], m, bounds)
        elif closure == "exponential":
            X[m] = exponential_closure(state[0], state[1], m)
        else:
            raise ValueError(f"unknown closure {closure!r}")

    out = np.zeros(K + 1)
    out[0] = -0.5 * np.einsum("ab,a,b->", c, X[: r + 1], X[: r + 1])
    for k in range(2, K + 1):
        acc = 0.0
        for j in range(1, k):
            acc += math.comb(k, j) * np.einsum(
                "ab,a,b->", c, X[j : j + r + 1], X[k - j : k - j + r + 1]
            )
        out[k] = 0.5 * acc
    return out


def make_coalescence_rhs(
    c: np.ndarray, closure: str = "gamma", bounds=(GAMMA_KAPPA_BOUNDS, GAMMA_ETA_BOUNDS)
) -> Callable[[np.ndarray], np.ndarray]:
    """Bind kernel and closure into an integrator-ready tendency."""
    return lambda state: coalescence_rhs(c, state, closure=closure, bounds=bounds)


# ---------------------------------------------------------------------------
# Spectral stepping of the extended K-S family
# ---------------------------------------------------------------------------


def ks_wavenumbers(n_grid: int, length: float) -> np.ndarray:
    """Nonnegative transform frequencies xi = m / L for the rfft layout."""
    return np.fft.rfftfreq(n_grid, d=length / n_grid)


def ks_linear_symbol(alpha: Sequence[float], xi: np.ndarray) -> np.ndarray:
    """Fourier symbol of the linear part: -sum_j alpha_j (2*pi*i*xi)^j.

    ``alpha`` may carry leading batch axes; the result broadcasts to
    ``alpha.shape[:-1] + xi.shape``.
    """
    alpha = np.asarray(alpha, dtype=float)
    xi = np.asarray(xi)
    two_pi_i_xi = 2j * np.pi * xi
    out = np.zeros(alpha.shape[:-1] + xi.shape, dtype=complex)
    term = np.ones(xi.shape, dtype=complex)
    for j in range(1, 6):
        term = term * two_pi_i_xi
        out -= alpha[..., j - 1, None] * term
    return out


def ks_nonlinear_term(
    u_hat: np.ndarray, beta: Sequence[float], xi: np.ndarray, n_grid: int
) -> np.ndarray:
    """Transform of -sum_j beta_j/(j+1) d_x (u^(j+1)), evaluated pseudospectrally."""
    beta = np.asarray(beta, dtype=float)
    u = np.fft.irfft(u_hat, n=n_grid, axis=-1)
    out_shape = np.broadcast_shapes(beta.shape[:-1] + (1,), np.shape(u_hat))
    out = np.zeros(out_shape, dtype=complex)
    upow = u
    for j in range(1, 6):
        upow = upow * u  # u^(j+1)
        bj = beta[..., j - 1, None]
        if np.any(bj != 0):
            out -= (2j * np.pi * xi * bj / (j + 1)) * np.fft.rfft(upow, axis=-1)
    return out


def ks_step_cnab2(
    u_hat_n: np.ndarray,
    u_hat_prev: np.ndarray,
    params: dict,
    dt: float,
    xi: np.ndarray,
    n_grid: int | None = None,
) -> np.ndarray:
    """One Crank-Nicolson / Adams-Bashforth-2 step in transform space.

    Solves ``(I - dt/2 L) u_{n+1} = (I + dt/2 L) u_n + 3dt/2 N(u_n)
    - dt/2 N(u_{n-1})`` mode by mode.
    """
    if n_grid is None:
        n_grid = 2 * (np.shape(u_hat_n)[-1] - 1)
    L = ks_linear_symbol(params["alpha"], xi)
    denom = 1.0 - 0.5 * dt * L
    if np.any(np.abs(denom) < 1e-14):
        raise ArithmeticError("singular Crank-Nicolson factor (dt*L/2 == 1)")
    Nn = ks_nonlinear_term(u_hat_n, params["beta"], xi, n_grid)
    Np = ks_nonlinear_term(u_hat_prev, params["beta"], xi, n_grid)
    return ((1.0 + 0.5 * dt * L) * u_hat_n + 1.5 * dt * Nn - 0.5 * dt * Np) / denom


def ks_step_ifab2(
    u_hat_n: np.ndarray,
    u_hat_prev: np.ndarray,
    params: dict,
    dt: float,
    xi: np.ndarray,
    n_grid: int | None = None,
) -> np.ndarray:
    """One integrating-factor Adams-Bashforth-2 step in transform space."""
    if n_grid is None:
        n_grid = 2 * (np.shape(u_hat_n)[-1] - 1)
    L = ks_linear_symbol(params["alpha"], xi)
    eL = np.exp(dt * L)
    Nn = ks_nonlinear_term(u_hat_n, params["beta"], xi, n_grid)
    Np = ks_nonlinear_term(u_hat_prev, params["beta"], xi, n_grid)
    return eL * u_hat_n + 1.5 * dt * eL * Nn - 0.5 * dt * eL * eL * Np


def clip_state(
    u_hat: np.ndarray, bounds: tuple[float, float], n_grid: int | None = None
) -> np.ndarray:
    """Clamp the physical-space field to [lower, upper] and re-transform."""
    lo, hi = bounds
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("clip bounds must be finite")
    if n_grid is None:
        n_grid = 2 * (np.shape(u_hat)[-1] - 1)
    u = np.fft.irfft(u_hat, n=n_grid, axis=-1)
    return np.fft.rfft(np.clip(u, lo, hi), axis=-1)


def simulate_ks(
    alpha: Sequence[float],
    beta: Sequence[float],
    u0: np.ndarray,
    length: float,
    cfg: IntegratorConfig,
    scheme: str = "cnab2",
) -> Trajectory:
    """Advance one field with the chosen scheme; states are physical-space samples.

    The first step uses a forward-Euler predictor to populate the previous
    stage required by Adams-Bashforth.  When ``cfg.clip_bounds`` is set the
    field is clamped in physical space after every step.
    """
    u0 = np.asarray(u0, dtype=float)
    n_grid = u0.shape[-1]
    xi = ks_wavenumbers(n_grid, length)
    params = {"alpha": np.asarray(alpha, float), "beta": np.asarray(beta, float)}
    step = {"cnab2": ks_step_cnab2, "ifab2": ks_step_ifab2}[scheme]

    u_hat = np.fft.rfft(u0, axis=-1)
    L = ks_linear_symbol(params["alpha"], xi)
    u_hat_prev = u_hat
    # bootstrap: one forward-Euler substep so AB2 has a previous stage
    u_hat = u_hat + cfg.dt * (
        L * u_hat + ks_nonlinear_term(u_hat, params["beta"], xi, n_grid)
    )
    if cfg.clip_bounds is not None:
        u_hat = clip_state(u_hat, cfg.clip_bounds, n_grid)

    stored = [u0.copy()]
    times = [0.0]
    u_phys = np.fft.irfft(u_hat, n=n_grid, axis=-1)
    _check_finite(u_phys, cfg.dt)
    if cfg.store_every == 1:
        stored.append(u_phys.copy())
        times.append(cfg.dt)

    for n in range(1, cfg.n_steps):
        u_hat, u_hat_prev = step(u_hat, u_hat_prev, params, cfg.dt, xi, n_grid), u_hat
        if cfg.clip_bounds is not None:
            u_hat = clip_state(u_hat, cfg.clip_bounds, n_grid)
        u_phys = np.fft.irfft(u_hat, n=n_grid, axis=-1)
        _check_finite(u_phys, (n + 1) * cfg.dt)
        if (n + 1) % cfg.store_every == 0:
            stored.append(u_phys.copy())
            times.append((n + 1) * cfg.dt)
    times = np.asarray(times)
    return Trajectory(times, np.asarray(stored), _spinup_index(times, cfg.spinup))


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write time + state columns as plain CSV."""
    header = "t," + ",".join(f"x{k + 1}" for k in range(traj.states.shape[1]))
    np.savetxt(
        path,
        np.column_stack([traj.times, traj.states]),
        delimiter=",",
        header=header,
        comments="",
    )
