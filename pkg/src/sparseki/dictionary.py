"""Candidate basis libraries and free-parameter embeddings for each model family.

Every model family is described by a :class:`ModelParameterization`: a linear,
injective map from a vector of free parameters to a full coefficient matrix
``theta`` (rows = state components, columns = basis functions), together with
the sparsity mask, linear inequality rows and l1 budget that define the
feasible set searched by the inversion.

For the Lorenz-type families the quadratic part of the embedding is built on
an explicit null-space basis of the cubic energy constraints, so that the
inner product of the state with the embedded quadratic tendency vanishes
identically (to machine precision) for every free vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "BasisFunction",
    "BasisDictionary",
    "ModelParameterization",
    "build_l63_dictionary",
    "build_l96_structured",
    "build_l96_closure",
    "build_coalescence_parameterization",
    "build_ks_library",
    "evaluate_rhs",
    "by_name",
    "l63_rhs",
    "l96_structured_rhs",
    "gaussian_bumps",
    "L63_TRUTH_FREE",
    "KS_EPS_POS",
]

# Strict-positivity surrogate for coefficients that must stay bounded away
# from zero (closed feasible set for the QP).
KS_EPS_POS = 1e-3


@dataclass(frozen=True)
class BasisFunction:
    """A named scalar basis function of the state vector.

    ``evaluate`` must accept arrays of shape ``(..., n)`` and return ``(...)``.
    """

    name: str
    degree: int
    evaluate: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BasisDictionary:
    """An ordered library of candidate basis functions for one model family."""

    name: str
    state_dim: int
    functions: tuple[BasisFunction, ...]

    def __len__(self) -> int:
        return len(self.functions)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.functions)

    def evaluate_all(self, x: np.ndarray) -> np.ndarray:
        """Evaluate every basis function; returns shape ``(..., p)``."""
        x = np.asarray(x, dtype=float)
        cols = [f.evaluate(x) for f in self.functions]
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ModelParameterization:
    """Free parameters, their embedding into theta, and the feasible set.

    Attributes
    ----------
    free_dim:
        Number of free parameters.
    embed_fn / project_fn:
        Linear injective map free -> theta (``(n, p)`` matrix) and its left
        inverse on the embedded subspace.  ``project(embed(v)) == v``.
    sparsity_mask:
        Boolean per free coordinate; True = subject to the l1 budget and
        hard thresholding.
    ineq_matrix / ineq_bound:
        Rows encode ``A @ free >= a``.  Empty matrices mean no constraints.
    l1_budget / threshold_level:
        Default gamma and lambda for this family (overridable per run).
    noise_index:
        Index of a learned noise-level coordinate (SDE families), or None.
    rhs_fn:
        Fast tendency evaluation ``rhs(free, X)``, or None when the model is
        advanced by a dedicated solver (spectral PDE family).
    """

    name: str
    state_dim: int
    free_dim: int
    labels: tuple[str, ...]
    sparsity_mask: np.ndarray
    ineq_matrix: np.ndarray
    ineq_bound: np.ndarray
    l1_budget: float
    threshold_level: float
    embed_fn: Callable[[np.ndarray], np.ndarray]
    project_fn: Callable[[np.ndarray], np.ndarray]
    rhs_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    noise_index: int | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) != self.free_dim:
            raise ValueError("labels length must equal free_dim")
        if self.sparsity_mask.shape != (self.free_dim,):
            raise ValueError("sparsity_mask length must equal free_dim")
        if self.ineq_matrix.shape[1] != self.free_dim and self.ineq_matrix.size:
            raise ValueError("inequality matrix column count must equal free_dim")

    def embed(self, free: np.ndarray) -> np.ndarray:
        free = np.asarray(free, dtype=float)
        if free.shape[-1] != self.free_dim:
            raise ValueError(
                f"free vector has dim {free.shape[-1]}, expected {self.free_dim}"
            )
        return self.embed_fn(free)

    def project(self, theta: np.ndarray) -> np.ndarray:
        """Left inverse of :meth:`embed` on the embedded subspace.

        A learned noise-level coordinate (``noise_index``) is not part of the
        coefficient matrix and comes back as zero; ``project(embed(v))``
        equals ``v`` on every other coordinate.
        """
        return self.project_fn(np.asarray(theta, dtype=float))

    def noise_level(self, free: np.ndarray) -> float:
        if self.noise_index is None:
            return 0.0
        return float(np.asarray(free)[..., self.noise_index])

    def feasible(self, free: np.ndarray, tol: float = 1e-8) -> bool:
        """Check inequality rows and the l1 budget on masked coordinates."""
        free = np.asarray(free, dtype=float)
        if self.ineq_matrix.size:
            if np.any(self.ineq_matrix @ free < self.ineq_bound - tol):
                return False
        if np.isfinite(self.l1_budget):
            if np.abs(free[self.sparsity_mask]).sum() > self.l1_budget + tol:
                return False
        return True

    def masked_l1(self, free: np.ndarray) -> float:
        return float(np.abs(np.asarray(free)[..., self.sparsity_mask]).sum(axis=-1))


# ---------------------------------------------------------------------------
# Lorenz 63: 9 monomials, 17 dynamics parameters + 1 noise level
# ---------------------------------------------------------------------------

_L63_QUAD_NAMES = ("x1^2", "x2^2", "x3^2", "x1*x2", "x1*x3", "x2*x3")
# Column indices of the 9-function library.
_Q11, _Q22, _Q33, _Q12, _Q13, _Q23 = 3, 4, 5, 6, 7, 8

# Six antisymmetric pair directions: (+ slot, - slot) as (row, col) pairs.
# Each pair cancels one mixed cubic (e.g. +x1*x2 in eq 1 against -x1^2 in
# eq 2 cancels the x1^2*x2 contribution to the energy).
_L63_PAIRS = (
    ((0, _Q12), (1, _Q11)),
    ((0, _Q13), (2, _Q11)),
    ((1, _Q12), (0, _Q22)),
    ((1, _Q23), (2, _Q22)),
    ((2, _Q13), (0, _Q33)),
    ((2, _Q23), (1, _Q33)),
)
# The x1*x2*x3 energy constraint couples (eq1:x2*x3, eq2:x1*x3, eq3:x1*x2);
# two directions spanning {(a,b,c): a+b+c=0}.
_L63_TRIPLE_SLOTS = ((0, _Q23), (1, _Q13), (2, _Q12))
_L63_TRIPLE_DIRS = (np.array([0.0, 1.0, -1.0]), np.array([2.0, -1.0, -1.0]))

# True noisy-Lorenz free vector: alpha=10, rho=28, beta=8/3, sigma=10.
L63_TRUTH_FREE = np.array(
    [-10.0, 10.0, 0.0, 28.0, -1.0, 0.0, 0.0, 0.0, -8.0 / 3.0]
    + [0.0] * 6
    + [-1.0, 0.0, 10.0]
)


def _l63_embed(free: np.ndarray) -> np.ndarray:
    free = np.asarray(free, dtype=float)
    theta = np.zeros(free.shape[:-1] + (3, 9))
    theta[..., :, :3] = free[..., :9].reshape(free.shape[:-1] + (3, 3))
    for d, ((rp, cp), (rm, cm)) in enumerate(_L63_PAIRS):
        theta[..., rp, cp] += free[..., 9 + d]
        theta[..., rm, cm] -= free[..., 9 + d]
    for d, direction in enumerate(_L63_TRIPLE_DIRS):
        for (r, c), w in zip(_L63_TRIPLE_SLOTS, direction):
            theta[..., r, c] += w * free[..., 15 + d]
    return theta


def _l63_project(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    free = np.zeros(theta.shape[:-2] + (18,))
    free[..., :9] = theta[..., :, :3].reshape(theta.shape[:-2] + (9,))
    for d, ((rp, cp), _) in enumerate(_L63_PAIRS):
        free[..., 9 + d] = theta[..., rp, cp]
    # triple slots: (2*s2, s1 - s2, -s1 - s2)
    free[..., 16] = theta[..., 0, _Q23] / 2.0
    free[..., 15] = theta[..., 1, _Q13] + free[..., 16]
    return free


def l63_rhs(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Tendency ``theta @ phi(x)`` for the 9-function Lorenz library.

    Broadcasts over leading axes: ``theta`` ``(..., 3, 9)``, ``x`` ``(..., 3)``.
    """
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    phi = np.stack(
        [x1, x2, x3, x1 * x1, x2 * x2, x3 * x3, x1 * x2, x1 * x3, x2 * x3],
        axis=-1,
    )
    return np.einsum("...ki,...i->...k", theta, phi)


def build_l63_dictionary() -> tuple[BasisDictionary, ModelParameterization]:
    """Lorenz 63 library: 3 linear + 6 quadratic monomials, 18 free parameters.

    The 17 dynamics parameters are the 9 linear coefficients plus 8 quadratic
    degrees of freedom spanning the null space of the 10 cubic energy
    constraints (diagonal cubic coefficients are fixed to zero).  The final
    coordinate is the noise level sigma, constrained nonnegative and exempt
    from the sparsity mask.
    """

    def mono(name, degree, fn):
        return BasisFunction(name, degree, fn)

    funcs = (
        mono("x1", 1, lambda x: x[..., 0]),
        mono("x2", 1, lambda x: x[..., 1]),
        mono("x3", 1, lambda x: x[..., 2]),
        mono("x1^2", 2, lambda x: x[..., 0] ** 2),
        mono("x2^2", 2, lambda x: x[..., 1] ** 2),
        mono("x3^2", 2, lambda x: x[..., 2] ** 2),
        mono("x1*x2", 2, lambda x: x[..., 0] * x[..., 1]),
        mono("x1*x3", 2, lambda x: x[..., 0] * x[..., 2]),
        mono("x2*x3", 2, lambda x: x[..., 1] * x[..., 2]),
    )
    basis = BasisDictionary("l63", 3, funcs)

    labels = tuple(
        f"eq{k + 1}:{name}" for k in range(3) for name in ("x1", "x2", "x3")
    ) + tuple(
        f"pair{d + 1}(+eq{rp + 1}:{funcs[cp].name},-eq{rm + 1}:{funcs[cm].name})"
        for d, ((rp, cp), (rm, cm)) in enumerate(_L63_PAIRS)
    ) + ("triple(0,+1,-1)", "triple(+2,-1,-1)", "sigma")

    mask = np.array([True] * 17 + [False])
    A = np.zeros((1, 18))
    A[0, 17] = 1.0  # sigma >= 0

    param = ModelParameterization(
        name="l63",
        state_dim=3,
        free_dim=18,
        labels=labels,
        sparsity_mask=mask,
        ineq_matrix=A,
        ineq_bound=np.zeros(1),
        l1_budget=60.0,
        threshold_level=0.1,
        embed_fn=_l63_embed,
        project_fn=_l63_project,
        rhs_fn=lambda free, x: l63_rhs(_l63_embed(np.asarray(free)[..., :18]), x),
        noise_index=17,
    )
    return basis, param


# ---------------------------------------------------------------------------
# Lorenz 96: nearest-neighbour quadratic difference groups
# ---------------------------------------------------------------------------


def l96_structured_rhs(
    beta1: np.ndarray,
    beta2: np.ndarray,
    beta3: np.ndarray,
    beta4: np.ndarray,
    alpha: np.ndarray,
    forcing: float,
    x: np.ndarray,
) -> np.ndarray:
    """Nearest-neighbour quadratic tendency with periodic index wrap.

    All parameter arrays and ``x`` broadcast over leading axes with the ring
    index on the last axis.  Each beta group telescopes, so the inner product
    of the state with the quadratic part vanishes identically.
    """
    x = np.asarray(x, dtype=float)
    xm1 = np.roll(x, 1, axis=-1)
    xm2 = np.roll(x, 2, axis=-1)
    xp1 = np.roll(x, -1, axis=-1)
    xp2 = np.roll(x, -2, axis=-1)
    b1p = np.roll(beta1, -1, axis=-1)
    b2p = np.roll(beta2, -1, axis=-1)
    b3m = np.roll(beta3, 1, axis=-1)
    b4p = np.roll(beta4, -1, axis=-1)
    out = -xm1 * (beta1 * xm2 - b1p * xp1)
    out -= beta2 * xm1 * x - b2p * xp1 * xp1
    out -= beta3 * x * xp1 - b3m * xm1 * xm1
    out -= beta4 * xm1 * xp1 - b4p * xp1 * xp2
    out -= alpha * x
    return out + forcing


def _pair_index(K: int):
    """Column lookup for quadratic monomials x_i*x_j (i <= j), after K linears."""
    idx = {}
    c = K
    for i in range(K):
        for j in range(i, K):
            idx[(i, j)] = c
            c += 1
    return idx


def _l96_monomials(K: int) -> tuple[BasisFunction, ...]:
    funcs = [
        BasisFunction(f"x{i + 1}", 1, (lambda i: lambda x: x[..., i])(i))
        for i in range(K)
    ]
    for i in range(K):
        for j in range(i, K):
            funcs.append(
                BasisFunction(
                    f"x{i + 1}*x{j + 1}",
                    2,
                    (lambda i, j: lambda x: x[..., i] * x[..., j])(i, j),
                )
            )
    return tuple(funcs)


def _l96_slot_table(K: int):
    """(row, col, group, shift, sign) for every structured coefficient slot."""
    pair = _pair_index(K)
    slots = []
    for k in range(K):
        km2, km1, kp1, kp2 = (k - 2) % K, (k - 1) % K, (k + 1) % K, (k + 2) % K

        def p(i, j):
            return pair[(min(i, j), max(i, j))]

        # group, parameter index offset into that group, sign
        slots.append((k, p(km2, km1), 0, k, -1.0))        # -beta1_k
        slots.append((k, p(km1, kp1), 0, kp1, +1.0))      # +beta1_{k+1}
        slots.append((k, p(km1, k), 1, k, -1.0))          # -beta2_k
        slots.append((k, p(kp1, kp1), 1, kp1, +1.0))      # +beta2_{k+1}
        slots.append((k, p(k, kp1), 2, k, -1.0))          # -beta3_k
        slots.append((k, p(km1, km1), 2, km1, +1.0))      # +beta3_{k-1}
        slots.append((k, p(km1, kp1), 3, k, -1.0))        # -beta4_k
        slots.append((k, p(kp1, kp2), 3, kp1, +1.0))      # +beta4_{k+1}
        slots.append((k, k, 4, k, -1.0))                  # -alpha_k
    return slots


def build_l96_structured(
    K: int, forcing: float = 8.0
) -> tuple[BasisDictionary, ModelParameterization]:
    """Single-scale Lorenz 96 model class with 5K free parameters.

    Free layout: ``[beta1 (K), beta2 (K), beta3 (K), beta4 (K), alpha (K)]``,
    all sparsity-masked.  The forcing F is a known constant, not learned.
    """
    if K < 5:
        raise ValueError("K >= 5 required: the nearest-neighbour stencil needs "
                         "five distinct ring sites")
    basis = BasisDictionary(f"l96-K{K}", K, _l96_monomials(K))
    slots = _l96_slot_table(K)
    p = len(basis)

    def embed(free: np.ndarray) -> np.ndarray:
        free = np.asarray(free, dtype=float)
        theta = np.zeros(free.shape[:-1] + (K, p))
        for row, col, group, off, sign in slots:
            theta[..., row, col] += sign * free[..., group * K + off]
        return theta

    def project(theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        pair = _pair_index(K)
        free = np.zeros(theta.shape[:-2] + (5 * K,))
        for k in range(K):
            km2, km1, kp1 = (k - 2) % K, (k - 1) % K, (k + 1) % K

            def pp(i, j):
                return pair[(min(i, j), max(i, j))]

            free[..., 0 * K + k] = -theta[..., k, pp(km2, km1)]
            free[..., 1 * K + k] = -theta[..., k, pp(km1, k)]
            free[..., 2 * K + k] = -theta[..., k, pp(k, kp1)]
            # beta4_{k+1} owns the x_{k+1} x_{k+2} slot of row k exclusively
            free[..., 3 * K + kp1] = theta[..., k, pp(kp1, (k + 2) % K)]
            free[..., 4 * K + k] = -theta[..., k, k]
        return free

    def rhs(free: np.ndarray, x: np.ndarray) -> np.ndarray:
        free = np.asarray(free, dtype=float)
        b = free[..., : 4 * K].reshape(free.shape[:-1] + (4, K))
        al = free[..., 4 * K : 5 * K]
        return l96_structured_rhs(
            b[..., 0, :], b[..., 1, :], b[..., 2, :], b[..., 3, :], al, forcing, x
        )

    labels = tuple(
        f"beta{g + 1}[{k + 1}]" for g in range(4) for k in range(K)
    ) + tuple(f"alpha[{k + 1}]" for k in range(K))

    param = ModelParameterization(
        name="l96",
        state_dim=K,
        free_dim=5 * K,
        labels=labels,
        sparsity_mask=np.ones(5 * K, dtype=bool),
        ineq_matrix=np.zeros((0, 5 * K)),
        ineq_bound=np.zeros(0),
        l1_budget=2.5 * K,
        threshold_level=0.1,
        embed_fn=embed,
        project_fn=project,
        rhs_fn=rhs,
        extras={"forcing": forcing, "K": K},
    )
    return basis, param


def gaussian_bumps(
    s: np.ndarray, centers: np.ndarray, width: float
) -> np.ndarray:
    """Radial bump features exp(-0.5 ((s - c)/width)^2); output ``(..., len(c))``."""
    s = np.asarray(s, dtype=float)
    return np.exp(-0.5 * ((s[..., None] - centers) / width) ** 2)


def build_l96_closure(
    K: int,
    forcing: float = 10.0,
    closure_range: tuple[float, float] = (-10.0, 15.0),
    n_closure: int = 10,
) -> tuple[BasisDictionary, ModelParameterization]:
    """Lorenz 96 model class plus a diagonal closure term g(X_k).

    g is a fixed expansion over ``n_closure`` Gaussian bumps with centers
    equally spaced on ``closure_range`` and width equal to the center
    spacing.  Closure coefficients are appended after the 5K structured
    parameters and are exempt from the sparsity mask.
    """
    basis_s, param_s = build_l96_structured(K, forcing=forcing)
    centers = np.linspace(*closure_range, n_closure)
    width = centers[1] - centers[0]

    bump_funcs = tuple(
        BasisFunction(
            f"bump{i + 1}(x{k + 1};c={centers[i]:.3g})",
            0,
            (lambda i, k: lambda x: np.exp(
                -0.5 * ((x[..., k] - centers[i]) / width) ** 2
            ))(i, k),
        )
        for i in range(n_closure)
        for k in range(K)
    )
    # column layout: [structured monomials | bump_i applied to x_k, i-major]
    basis = BasisDictionary(
        f"l96-closure-K{K}", K, basis_s.functions + bump_funcs
    )
    p_struct = len(basis_s)
    p = len(basis)
    free_dim = 5 * K + n_closure

    def embed(free: np.ndarray) -> np.ndarray:
        free = np.asarray(free, dtype=float)
        theta = np.zeros(free.shape[:-1] + (K, p))
        theta[..., :, :p_struct] = param_s.embed(free[..., : 5 * K])
        for i in range(n_closure):
            for k in range(K):
                theta[..., k, p_struct + i * K + k] = free[..., 5 * K + i]
        return theta

    def project(theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        free = np.zeros(theta.shape[:-2] + (free_dim,))
        free[..., : 5 * K] = param_s.project(theta[..., :, :p_struct])
        for i in range(n_closure):
            free[..., 5 * K + i] = theta[..., 0, p_struct + i * K]
        return free

    def rhs(free: np.ndarray, x: np.ndarray) -> np.ndarray:
        free = np.asarray(free, dtype=float)
        base = param_s.rhs_fn(free[..., : 5 * K], x)
        feats = gaussian_bumps(np.asarray(x, dtype=float), centers, width)
        g = (feats @ free[..., 5 * K :][..., None])[..., 0]
        return base + g

    labels = param_s.labels + tuple(f"g[{i + 1}]" for i in range(n_closure))
    mask = np.concatenate([np.ones(5 * K, dtype=bool), np.zeros(n_closure, dtype=bool)])

    param = ModelParameterization(
        name="l96-closure",
        state_dim=K,
        free_dim=free_dim,
        labels=labels,
        sparsity_mask=mask,
        ineq_matrix=np.zeros((0, free_dim)),
        ineq_bound=np.zeros(0),
        l1_budget=2.5 * K,
        threshold_level=0.1,
        embed_fn=embed,
        project_fn=project,
        rhs_fn=rhs,
        extras={
            "forcing": forcing,
            "K": K,
            "closure_centers": centers,
            "closure_width": width,
        },
    )
    return basis, param


# ---------------------------------------------------------------------------
# Coalescence kernel: symmetric 4x4, c_11 = 0, nonnegative entries
# ---------------------------------------------------------------------------

_COAL_PAIRS = ((0, 0), (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))


def build_coalescence_parameterization() -> ModelParameterization:
    """Polynomial collision-kernel weights c_ab, 0 <= a, b <= 3.

    Symmetry c_ab = c_ba is enforced by construction and c_11 is fixed to
    zero (well-posedness of the closed moment pair), leaving 9 free
    parameters, all nonnegative and all sparsity-masked.
    """

    def embed(free: np.ndarray) -> np.ndarray:
        free = np.asarray(free, dtype=float)
        c = np.zeros(free.shape[:-1] + (4, 4))
        for i, (a, b) in enumerate(_COAL_PAIRS):
            c[..., a, b] = free[..., i]
            c[..., b, a] = free[..., i]
        return c

    def project(c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return np.stack([c[..., a, b] for a, b in _COAL_PAIRS], axis=-1)

    labels = tuple(f"c[{a},{b}]" for a, b in _COAL_PAIRS)
    return ModelParameterization(
        name="coalescence",
        state_dim=3,
        free_dim=9,
        labels=labels,
        sparsity_mask=np.ones(9, dtype=bool),
        ineq_matrix=np.eye(9),
        ineq_bound=np.zeros(9),
        l1_budget=5.0,
        threshold_level=0.02,
        embed_fn=embed,
        project_fn=project,
    )


# ---------------------------------------------------------------------------
# Extended K-S library: five linear derivative orders, five nonlinear orders
# ---------------------------------------------------------------------------


def build_ks_library() -> ModelParameterization:
    """Coefficients (a_1..a_5, b_1..b_5) of the extended dissipative PDE class.

    a_j multiplies the j-th spatial derivative, b_j multiplies u^j u_x.  The
    fourth-order damping coefficient a_4 must exceed a small positive bound
    so that every candidate model damps high wavenumbers.
    """
    labels = tuple(f"alpha{j}" for j in range(1, 6)) + tuple(
        f"beta{j}" for j in range(1, 6)
    )
    A = np.zeros((1, 10))
    A[0, 3] = 1.0  # alpha4 >= eps
    return ModelParameterization(
        name="ks",
        state_dim=1,
        free_dim=10,
        labels=labels,
        sparsity_mask=np.ones(10, dtype=bool),
        ineq_matrix=A,
        ineq_bound=np.array([KS_EPS_POS]),
        l1_budget=5.0,
        threshold_level=0.02,
        embed_fn=lambda free: np.asarray(free, dtype=float)[..., None, :],
        project_fn=lambda theta: np.asarray(theta, dtype=float)[..., 0, :],
    )


# ---------------------------------------------------------------------------


def evaluate_rhs(
    param: ModelParameterization, free: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Tendency of the embedded model at state ``x``.

    Equals ``sum_i theta_ki phi_i(x)`` for the embedded coefficient matrix;
    model families advanced by dedicated solvers provide no pointwise
    tendency and raise.
    """
    free = np.asarray(free, dtype=float)
    x = np.asarray(x, dtype=float)
    if free.shape[-1] != param.free_dim:
        raise ValueError(
            f"free vector has dim {free.shape[-1]}, expected {param.free_dim}"
        )
    if x.shape[-1] != param.state_dim:
        raise ValueError(
            f"state has dim {x.shape[-1]}, expected {param.state_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("state vector must be finite")
    if param.rhs_fn is None:
        raise ValueError(f"parameterization {param.name!r} has no pointwise RHS")
    return param.rhs_fn(free, x)


_BUILDERS = {
    "l63": lambda **kw: build_l63_dictionary(**kw),
    "l96": lambda **kw: build_l96_structured(**kw),
    "l96-closure": lambda **kw: build_l96_closure(**kw),
    "coalescence": lambda **kw: (None, build_coalescence_parameterization(**kw)),
    "ks": lambda **kw: (None, build_ks_library(**kw)),
}


def by_name(name: str, **kwargs) -> tuple[BasisDictionary | None, ModelParameterization]:
    """Look up a model family by identifier: l63, l96, l96-closure, coalescence, ks."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(
            f"unknown dictionary {name!r}; available: {sorted(_BUILDERS)}"
        ) from None
    return builder(**kwargs)
