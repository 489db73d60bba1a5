"""Empirical moments and the H-score.

The H-score of a feature matrix ``F`` (m samples x k dims) against labels
``y`` is ``tr(cov(F)^+ cov(E[F | y]))``. Covariances use the population
normalization ``1/m``. Features are centered internally.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.linalg.blas import dsyrk

from .data_io import LabelVector, as_feature_matrix
from .errors import DataError, DegenerateTaskError, InsufficientSamplesError, NotPSDError

DEFAULT_PSEUDO_TOL = 1e-10
_BLOCK_ROWS = 2048


@dataclass(frozen=True)
class InverseMode:
    """How ``cov(f)`` is inverted.

    ``pseudo`` zeroes eigenvalues below ``tol * lambda_max`` (Moore-Penrose);
    ``ridge`` inverts ``A + ridge * I``.
    """

    kind: str = "pseudo"
    tol: float = DEFAULT_PSEUDO_TOL
    ridge: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pseudo", "ridge"):
            raise ValueError(f"unknown inverse mode {self.kind!r}")
        if self.kind == "pseudo" and not (0 <= self.tol < 1):
            raise ValueError("pseudo-inverse tolerance must lie in [0, 1)")
        if self.kind == "ridge" and not self.ridge > 0:
            raise ValueError("ridge lambda must be positive")

    @classmethod
    def pseudo(cls, tol=DEFAULT_PSEUDO_TOL):
        return cls("pseudo", tol=tol)

    @classmethod
    def with_ridge(cls, lam):
        return cls("ridge", ridge=lam)

    def describe(self):
        if self.kind == "pseudo":
            return {"kind": "pseudo", "tol": self.tol}
        return {"kind": "ridge", "lambda": self.ridge}


@dataclass
class ClassStats:
    priors: np.ndarray
    class_means: np.ndarray
    global_mean: np.ndarray
    counts: np.ndarray
    # class_means - global_mean, accumulated on shifted data so large feature
    # offsets do not cancel
    deviations: np.ndarray


@dataclass
class HScoreReport:
    value: float
    feature_cov: np.ndarray
    between_cov: np.ndarray
    effective_rank: int
    regularization: dict
    n_samples: int
    n_classes: int

    @property
    def feature_dim(self):
        return self.feature_cov.shape[0]

    def to_dict(self, include_matrices=False):
        out = {
            "hscore": self.value,
            "effective_rank": self.effective_rank,
            "feature_dim": self.feature_dim,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "regularization": dict(self.regularization),
        }
        if include_matrices:
            out["feature_cov"] = self.feature_cov.tolist()
            out["between_cov"] = self.between_cov.tolist()
        return out


def _mirror_upper(C):
    return np.triu(C) + np.triu(C, 1).T


def sample_covariance(F):
    """Population covariance ``(1/m) sum (f_i - mu)(f_i - mu)^T``.

    Single pass over row blocks: rows are shifted by the first sample, the
    shifted Gram matrix and column sums are accumulated, and the mean is
    removed at the end. Reduction order is fixed, so the result is
    deterministic for a given row order.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise DataError(f"expected a 2-d feature matrix, got shape {F.shape}")
    m, k = F.shape
    if m < 2:
        raise InsufficientSamplesError(f"covariance needs at least 2 samples, got {m}")
    shift = F[0].copy()
    gram = np.zeros((k, k), order="F")
    total = np.zeros(k)
    buf = np.empty((min(m, _BLOCK_ROWS), k))
    for start in range(0, m, _BLOCK_ROWS):
        block = F[start:start + _BLOCK_ROWS]
        b = buf[: len(block)]
        np.subtract(block, shift, out=b)
        total += b.sum(axis=0)
        # b.T is Fortran-contiguous, so syrk reads it without a copy
        gram = dsyrk(1.0, b.T, beta=1.0, c=gram, trans=0, overwrite_c=1)
    d = total / m
    cov = _mirror_upper(gram) / m - np.outer(d, d)
    return cov


def _as_labels(y, m=None):
    if isinstance(y, LabelVector):
        lv = y
    else:
        lv = LabelVector.from_values(np.asarray(y).ravel())
    if m is not None and len(lv) != m:
        raise DataError(f"feature matrix has {m} rows but there are {len(lv)} labels")
    return lv


def class_conditional_stats(F, y):
    """Class priors, class means and their deviations from the global mean."""
    F = np.asarray(F, dtype=np.float64)
    lv = _as_labels(y, F.shape[0])
    m = F.shape[0]
    C = lv.n_classes
    counts = np.bincount(lv.labels, minlength=C)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise DegenerateTaskError(f"classes with no samples: {missing}")
    shift = F[0]
    onehot = scipy.sparse.csr_matrix(
        (np.ones(m), (lv.labels, np.arange(m))), shape=(C, m)
    )
    shifted_means = np.asarray(onehot @ (F - shift)) / counts[:, None]
    priors = counts / m
    shifted_global = priors @ shifted_means
    deviations = shifted_means - shifted_global
    return ClassStats(
        priors=priors,
        class_means=shifted_means + shift,
        global_mean=shifted_global + shift,
        counts=counts,
        deviations=deviations,
    )


def between_class_covariance(stats):
    """``sum_y P(y) (mu_y - mu)(mu_y - mu)^T``."""
    D = stats.deviations
    B = D.T @ (stats.priors[:, None] * D)
    return (B + B.T) / 2


def _spectral_inverse(A, mode):
    """Eigenvectors and inverted eigenvalues kept by ``mode``."""
    A = np.asarray(A, dtype=np.float64)
    A = (A + A.T) / 2
    w, V = np.linalg.eigh(A)
    lam_max = max(float(w[-1]), 0.0) if len(w) else 0.0
    if len(w) and w[0] < -1e-9 * lam_max:
        raise NotPSDError(f"matrix has eigenvalue {w[0]:.3e} (largest {lam_max:.3e})")
    if mode.kind == "ridge":
        return V, 1.0 / (np.maximum(w, 0.0) + mode.ridge)
    if lam_max == 0.0:
        return V[:, :0], w[:0]
    keep = w > mode.tol * lam_max
    return V[:, keep], 1.0 / w[keep]


def regularized_inverse(A, mode=None):
    """Pseudo-inverse or ridge inverse of a symmetric PSD matrix."""
    mode = mode or InverseMode()
    V, inv_w = _spectral_inverse(A, mode)
    return (V * inv_w) @ V.T


def regularized_inverse_sqrt(A, mode=None):
    """Symmetric ``A^{-1/2}`` under the same eigenvalue policy."""
    mode = mode or InverseMode()
    V, inv_w = _spectral_inverse(A, mode)
    return (V * np.sqrt(inv_w)) @ V.T


def h_score_from_moments(feature_cov, between_cov, mode=None):
    """``tr(feature_cov^+ between_cov)`` and the rank of the inverse used."""
    mode = mode or InverseMode()
    V, inv_w = _spectral_inverse(feature_cov, mode)
    projected = np.einsum("ij,jk,ki->i", V.T, between_cov, V)
    value = float(projected @ inv_w)
    return max(value, 0.0), len(inv_w)


def canonical_order(F, labels=None):
    """A row order depending only on the multiset of (row, label) pairs.

    Sorting rows into this order before any reduction makes every result
    bit-identical under permutation of the samples.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    m, k = F.shape
    keys = F.view(np.dtype((np.void, F.dtype.itemsize * k))).ravel()
    order = np.argsort(keys, kind="stable")
    if labels is None:
        return order
    sorted_keys = keys[order]
    group = np.concatenate(([0], np.cumsum(sorted_keys[1:] != sorted_keys[:-1])))
    return order[np.lexsort((np.asarray(labels)[order], group))]


def h_score(F, y, inverse_mode=None):
    """H-score of features ``F`` for labels ``y``.

    Parameters
    ----------
    F : array-like, shape (m, k)
    y : LabelVector or array-like of int, length m
    inverse_mode : InverseMode, optional
        Defaults to a pseudo-inverse with relative tolerance 1e-10.

    Returns
    -------
    HScoreReport
    """
    mode = inverse_mode or InverseMode()
    F = as_feature_matrix(F)
    lv = _as_labels(y, F.shape[0])
    m = F.shape[0]
    if m <= lv.n_classes:
        raise InsufficientSamplesError(
            f"{m} samples for {lv.n_classes} classes; need at least {lv.n_classes + 1}"
        )
    order = canonical_order(F, lv.labels)
    Fs = F[order]
    ys = LabelVector(lv.labels[order], lv.n_classes, lv.mapping)
    cov = sample_covariance(Fs)
    between = between_class_covariance(class_conditional_stats(Fs, ys))
    value, rank = h_score_from_moments(cov, between, mode)
    return HScoreReport(
        value=value,
        feature_cov=cov,
        between_cov=between,
        effective_rank=rank,
        regularization=mode.describe(),
        n_samples=m,
        n_classes=lv.n_classes,
    )
