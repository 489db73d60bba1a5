"""Exact computations for a discrete joint distribution of (X, Y).

The divergence transition matrix (DTM) of a joint ``P_YX`` is::

    B[y, x] = P(x, y) / sqrt(P_X(x) P_Y(y)) - sqrt(P_Y(y)) sqrt(P_X(x))

Its singular values bound the H-score of any normalized k-dimensional
feature by ``sum_{i<=k} sigma_i^2``; the bound is attained by features built
from the top right singular vectors, which are also the HGR maximal
correlation functions. :func:`ace` reaches the same optimum by alternating
conditional expectations and serves as an SVD-free cross-check.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError, RankError
from .stats import (
    InverseMode,
    h_score_from_moments,
    regularized_inverse,
    regularized_inverse_sqrt,
)

SPECTRUM_TOL = 1e-12


@dataclass
class JointDistribution:
    """Probability table ``P[y, x]`` with strictly positive marginals.

    Rows (y) and columns (x) with zero mass are removed at construction;
    ``y_symbols`` / ``x_symbols`` map the surviving indices back to the
    caller's symbols and ``pruned_y`` / ``pruned_x`` list what was removed.
    """

    table: np.ndarray
    x_symbols: list = field(default=None)
    y_symbols: list = field(default=None)
    pruned_x: list = field(default_factory=list)
    pruned_y: list = field(default_factory=list)

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float64)
        if table.ndim != 2 or table.size == 0:
            raise DataError(f"joint table must be a non-empty 2-d array, got {table.shape}")
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise DataError("joint table entries must be finite and non-negative")
        total = table.sum()
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"joint table sums to {total!r}, expected 1")
        table = table / total
        ny, nx = table.shape
        x_symbols = list(range(nx)) if self.x_symbols is None else list(self.x_symbols)
        y_symbols = list(range(ny)) if self.y_symbols is None else list(self.y_symbols)
        if len(x_symbols) != nx or len(y_symbols) != ny:
            raise DataError("symbol lists do not match the table shape")
        keep_x = table.sum(axis=0) > 0
        keep_y = table.sum(axis=1) > 0
        self.pruned_x = list(self.pruned_x) + [s for s, k in zip(x_symbols, keep_x) if not k]
        self.pruned_y = list(self.pruned_y) + [s for s, k in zip(y_symbols, keep_y) if not k]
        self.x_symbols = [s for s, k in zip(x_symbols, keep_x) if k]
        self.y_symbols = [s for s, k in zip(y_symbols, keep_y) if k]
        self.table = table[np.ix_(keep_y, keep_x)]

    @property
    def p_x(self):
        return self.table.sum(axis=0)

    @property
    def p_y(self):
        return self.table.sum(axis=1)

    @property
    def shape(self):
        return self.table.shape

    @classmethod
    def independent(cls, p_y, p_x):
        return cls(np.outer(p_y, p_x))


def empirical_joint(x_samples, y_samples):
    """Joint of observed symbol pairs; only symbols that occur appear."""
    x = np.asarray(x_samples).ravel()
    y = np.asarray(y_samples).ravel()
    if len(x) != len(y):
        raise DataError(f"{len(x)} x samples but {len(y)} y samples")
    if len(x) == 0:
        raise DataError("no samples")
    xs, xi = np.unique(x, return_inverse=True)
    ys, yi = np.unique(y, return_inverse=True)
    counts = np.zeros((len(ys), len(xs)))
    np.add.at(counts, (yi.ravel(), xi.ravel()), 1.0)
    return JointDistribution(counts / len(x), x_symbols=xs.tolist(), y_symbols=ys.tolist())


@dataclass
class DTM:
    b_tilde: np.ndarray
    sqrt_px: np.ndarray
    sqrt_py: np.ndarray

    @property
    def frobenius_sq(self):
        return float(np.sum(self.b_tilde ** 2))


def dtm(P):
    sx = np.sqrt(P.p_x)
    sy = np.sqrt(P.p_y)
    B = P.table / sy[:, None] / sx[None, :] - np.outer(sy, sx)
    return DTM(B, sx, sy)


@dataclass
class SpectralDecomposition:
    singular_values: np.ndarray
    right_vectors: np.ndarray  # |X| x r
    left_vectors: np.ndarray   # |Y| x r

    @property
    def rank(self):
        return len(self.singular_values)

    def h_bound(self, k):
        """``sum_{i<=k} sigma_i^2``; modes beyond the rank contribute zero."""
        return float(np.sum(self.singular_values[:k] ** 2))


def spectral(B, tol=SPECTRUM_TOL):
    """SVD of the DTM without the structural zero mode.

    The pair (sqrt P_Y, sqrt P_X) is annihilated by the subtraction in the
    DTM itself, so at most ``min(|X|, |Y|) - 1`` modes are informative;
    singular values at or below ``tol`` are dropped as well.
    """
    U, s, Vt = np.linalg.svd(B.b_tilde, full_matrices=False)
    r = min(B.b_tilde.shape) - 1
    r = int(np.sum(s[:r] > tol))
    return SpectralDecomposition(s[:r].copy(), Vt[:r].T.copy(), U[:, :r].copy())


@dataclass
class OptimalFeatures:
    f_table: np.ndarray  # |X| x k, f(x)
    g_table: np.ndarray  # |Y| x k, g(y)
    h_opt: float
    rho: float
    n_iter: int = 0


def optimal_features(P, k):
    """Minimum-error-probability features from the top-k right singular vectors."""
    if k < 1:
        raise ValueError("k must be at least 1")
    B = dtm(P)
    sd = spectral(B)
    if k > sd.rank:
        raise RankError(k, sd.rank)
    f = sd.right_vectors[:, :k] / B.sqrt_px[:, None]
    g = sd.left_vectors[:, :k] / B.sqrt_py[:, None]
    s = sd.singular_values[:k]
    return OptimalFeatures(f, g, float(np.sum(s ** 2)), float(np.sum(s)))


def hgr_correlation(P, k):
    """HGR maximal correlation with k-dimensional f and g: ``sum_{i<=k} sigma_i``.

    Modes beyond the DTM rank have zero singular value, so an independent
    joint yields 0 rather than an error.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(np.sum(spectral(dtm(P)).singular_values[:k]))


def _whiten(psi, tol):
    """Symmetric orthonormalization ``psi (psi^T psi)^{-1/2}``; rank-checked."""
    G = psi.T @ psi
    w, V = np.linalg.eigh((G + G.T) / 2)
    rank = int(np.sum(w > tol * max(w[-1], 0.0))) if w[-1] > 0 else 0
    if rank < psi.shape[1]:
        return None, rank
    return psi @ ((V / np.sqrt(w)) @ V.T), rank


def ace(P, k, tol=1e-13, max_iter=200000, seed=0):
    """Alternating conditional expectations for the k-dim HGR problem.

    Each sweep sets ``g <- E[f(X) | Y]`` and ``f <- E[g(Y) | X]``, then
    re-centers f and whitens it under ``P_X``. The objective tracked is
    ``tr cov(E[f(X) | Y])`` for the whitened f, which equals its H-score.
    Iteration stops once the objective changes by less than ``tol``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    table = P.table
    px, py = P.p_x, P.p_y
    sx = np.sqrt(px)
    cond_x_given_y = table / py[:, None]   # row y: P(x | y)
    cond_y_given_x = (table / px[None, :]).T  # row x: P(y | x)
    nx = table.shape[1]
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((nx, k))
    rank_tol = 1e-10

    def normalize(f):
        f = f - px @ f
        psi, rank = _whiten(sx[:, None] * f, rank_tol)
        if psi is None:
            raise RankError(k, rank)
        return psi / sx[:, None]

    f = normalize(f)
    objective = None
    for it in range(1, max_iter + 1):
        g = cond_x_given_y @ f
        g = g - py @ g
        f = normalize(cond_y_given_x @ g)
        g = cond_x_given_y @ f
        g = g - py @ g
        new_objective = float(np.sum(py[:, None] * g * g))
        if objective is not None and abs(new_objective - objective) < tol:
            objective = new_objective
            break
        objective = new_objective
    else:
        raise ConvergenceError(
            f"ACE did not converge in {max_iter} sweeps", last_objective=objective
        )
    # rotate within the converged subspace so columns are ordered by correlation
    gamma = np.sqrt(py)[:, None] * g
    U, s, Wt = np.linalg.svd(gamma, full_matrices=False)
    f = f @ Wt.T
    g_unit = (U / np.sqrt(py)[:, None])
    return OptimalFeatures(f, g_unit, float(np.sum(s ** 2)), float(np.sum(s)), n_iter=it)


def exact_moments(P, f_table):
    """``cov(f(X))`` and ``cov(E[f(X)|Y])`` under the joint."""
    f = np.asarray(f_table, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != P.shape[1]:
        raise DataError(f"feature table has {f.shape[0]} rows, alphabet has {P.shape[1]}")
    px, py = P.p_x, P.p_y
    fc = f - px @ f
    cov = fc.T @ (px[:, None] * fc)
    cond = (P.table / py[:, None]) @ fc
    between = cond.T @ (py[:, None] * cond)
    return (cov + cov.T) / 2, (between + between.T) / 2


def exact_h_score(P, f_table, inverse_mode=None):
    """H-score of a feature table evaluated on the exact distribution."""
    cov, between = exact_moments(P, f_table)
    return h_score_from_moments(cov, between, inverse_mode)[0]


def phi_embedding(f_table, p_x, center=True):
    """``Phi = diag(sqrt P_X) F``; F is centered under ``P_X`` first by default."""
    f = np.asarray(f_table, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    p_x = np.asarray(p_x, dtype=np.float64)
    if center:
        f = f - p_x @ f
    return np.sqrt(p_x)[:, None] * f


def optimal_psi(B, phi, inverse_mode=None):
    """``Psi* = B Phi (Phi^T Phi)^+``, the least-squares fit of ``B ~ Psi Phi^T``."""
    B = B.b_tilde if isinstance(B, DTM) else np.asarray(B)
    phi = np.asarray(phi, dtype=np.float64)
    return B @ phi @ regularized_inverse(phi.T @ phi, inverse_mode or InverseMode())


def residual_logloss_proxy(B, phi, inverse_mode=None):
    """``||B||_F^2 - ||B Phi (Phi^T Phi)^{-1/2}||_F^2``."""
    B = B.b_tilde if isinstance(B, DTM) else np.asarray(B)
    phi = np.asarray(phi, dtype=np.float64)
    captured = B @ phi @ regularized_inverse_sqrt(phi.T @ phi, inverse_mode or InverseMode())
    return float(np.sum(B ** 2) - np.sum(captured ** 2))
