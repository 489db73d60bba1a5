"""Error exponents of feature-based binary hypothesis tests.

Two hypotheses ``P1`` and ``P2`` live in a chi-square ball of radius
``eps`` around a reference ``P0``. With perturbation vectors
``phi_i = (P_i - P0) / (eps sqrt(P0))``:

* the best achievable exponent is ``eps^2/8 ||phi1 - phi2||^2``;
* a test thresholding the sample mean of k orthonormal features with
  information vectors ``xi_j = sqrt(P0) f_j`` achieves
  ``eps^2/8 sum_j <xi_j, phi1 - phi2>^2``.

Both drop the o(eps^2) remainder. That exponent is proportional to the
H-score of the same features on the binary task (P1, P2) with ``P0``
the mixture, which :func:`simulate_error_rate` checks by Monte Carlo.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dtm import JointDistribution
from .errors import DataError, InsufficientTrialsError, ZeroVarianceError
from .stats import InverseMode, regularized_inverse, regularized_inverse_sqrt

DEFAULT_EPS = 0.05
LARGE_EPS = 0.2


def _prob_vector(p, name):
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DataError(f"{name} must be a non-empty vector of non-negative probabilities")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DataError(f"{name} sums to {p.sum()!r}, expected 1")
    return p


def chi_square(p, p0):
    return float(np.sum((p - p0) ** 2 / p0))


@dataclass
class LocalPair:
    """Hypotheses ``p1``, ``p2`` inside the eps-neighborhood of ``p0``."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.p0 = _prob_vector(self.p0, "p0")
        self.p1 = _prob_vector(self.p1, "p1")
        self.p2 = _prob_vector(self.p2, "p2")
        if not (len(self.p0) == len(self.p1) == len(self.p2)):
            raise DataError("p0, p1, p2 must share one alphabet")
        if np.any(self.p0 <= 0):
            raise DataError("reference distribution p0 must be strictly positive")
        if not self.eps > 0:
            raise DataError("eps must be positive")
        if self.eps > LARGE_EPS:
            warnings.warn(
                f"eps={self.eps} is above {LARGE_EPS}; the dropped o(eps^2) terms may dominate",
                stacklevel=2,
            )
        for name, p in (("p1", self.p1), ("p2", self.p2)):
            if chi_square(p, self.p0) > self.eps ** 2 * (1 + 1e-9):
                raise DataError(f"{name} lies outside the eps={self.eps} neighborhood of p0")

    @classmethod
    def from_directions(cls, p0, phi1, phi2, eps=DEFAULT_EPS):
        """Build ``P_i = P0 + eps sqrt(P0) phi_i``.

        Each ``phi_i`` must be orthogonal to ``sqrt(P0)`` and have norm <= 1.
        """
        p0 = _prob_vector(p0, "p0")
        s = np.sqrt(p0)
        ps = []
        for phi in (phi1, phi2):
            phi = np.asarray(phi, dtype=np.float64)
            if abs(phi @ s) > 1e-12:
                raise DataError("perturbation direction must be orthogonal to sqrt(p0)")
            ps.append(p0 + eps * s * phi)
        return cls(p0, ps[0], ps[1], eps)

    @classmethod
    def around_mixture(cls, p1, p2, eps=None):
        """Use the equal-weight mixture as reference, with the smallest eps that fits."""
        p1 = _prob_vector(p1, "p1")
        p2 = _prob_vector(p2, "p2")
        p0 = (p1 + p2) / 2
        if eps is None:
            eps = max(np.sqrt(chi_square(p1, p0)), np.sqrt(chi_square(p2, p0)), 1e-300)
        return cls(p0, p1, p2, eps)

    def binary_joint(self, prior0=0.5):
        """Joint with ``P_{X|Y=0} = p1`` and ``P_{X|Y=1} = p2``."""
        return JointDistribution(np.vstack([prior0 * self.p1, (1 - prior0) * self.p2]))

    def to_dict(self):
        return {"p0": self.p0.tolist(), "p1": self.p1.tolist(), "p2": self.p2.tolist(),
                "eps": self.eps}


@dataclass
class ExponentReport:
    predicted: float
    optimal: float
    ratio: float
    k: int

    def to_dict(self):
        return {"predicted": self.predicted, "optimal": self.optimal,
                "ratio": self.ratio, "k": self.k}


def perturbation_vector(p_i, p0, eps):
    p_i = np.asarray(p_i, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    if np.any(p0 <= 0):
        raise DataError("reference distribution has a zero entry")
    return (p_i - p0) / (eps * np.sqrt(p0))


def normalize_feature(f, p0):
    """Center and scale a 1-d feature to zero mean, unit variance under ``p0``.

    Returns the normalized feature and whether it had to be changed.
    """
    f = np.asarray(f, dtype=np.float64).ravel()
    p0 = np.asarray(p0, dtype=np.float64)
    mean = p0 @ f
    var = p0 @ (f - mean) ** 2
    if var <= 1e-300 or var <= 1e-24 * max(np.max(f ** 2), 1e-300):
        raise ZeroVarianceError("feature is constant under the reference distribution")
    g = (f - mean) / np.sqrt(var)
    changed = not (abs(mean) <= 1e-12 and abs(var - 1) <= 1e-12)
    return g, changed


def information_vector(f, p0):
    """``xi(x) = sqrt(P0(x)) f(x)`` for the normalized version of ``f``."""
    g, _ = normalize_feature(f, p0)
    return np.sqrt(np.asarray(p0, dtype=np.float64)) * g


def _information_basis(f_table, p0):
    """Orthonormal information vectors spanning the centered feature columns."""
    f = np.asarray(f_table, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != len(p0):
        raise DataError(f"feature table has {f.shape[0]} rows, alphabet has {len(p0)}")
    xi = np.sqrt(p0)[:, None] * (f - p0 @ f)
    gram = xi.T @ xi
    if not np.any(gram.diagonal() > 1e-24):
        raise ZeroVarianceError("every feature column is constant under p0")
    W = regularized_inverse_sqrt(gram, InverseMode.pseudo(1e-10))
    basis = xi @ W
    keep = np.sum(basis ** 2, axis=0) > 0.5
    return basis[:, keep]


def mismatched_exponent(f_table, pair):
    """Exponent of the sample-mean test on ``f_table`` vs. the optimal exponent."""
    xi = _information_basis(f_table, pair.p0)
    diff = perturbation_vector(pair.p1, pair.p0, pair.eps) - perturbation_vector(
        pair.p2, pair.p0, pair.eps
    )
    scale = pair.eps ** 2 / 8
    predicted = scale * float(np.sum((xi.T @ diff) ** 2))
    optimal = scale * float(diff @ diff)
    predicted = min(predicted, optimal)  # Bessel; guards rounding only
    ratio = predicted / optimal if optimal > 0 else float("nan")
    return ExponentReport(predicted, optimal, ratio, xi.shape[1])


@dataclass
class SimulationResult:
    sample_sizes: list
    error_rates: list
    dropped: list
    fit_sizes: list
    slope: float
    intercept: float
    trials: int
    seed: int = field(default=0)

    def to_dict(self):
        return {
            "sample_sizes": list(self.sample_sizes),
            "error_rates": list(self.error_rates),
            "dropped": list(self.dropped),
            "fit_sizes": list(self.fit_sizes),
            "slope": self.slope,
            "intercept": self.intercept,
            "trials": self.trials,
            "seed": self.seed,
        }


def _decision_scores(f_table, p1, p2):
    """Scalar projection of the features and the midpoint threshold.

    k-dimensional features are reduced to the discriminant direction
    ``cov^+ (E1 f - E2 f)`` under the mixture; 1-d features are used as is.
    """
    f = np.asarray(f_table, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    mix = (p1 + p2) / 2
    d = p1 @ f - p2 @ f
    fc = f - mix @ f
    cov = fc.T @ (mix[:, None] * fc)
    w = regularized_inverse(cov) @ d
    s = f @ w
    m1, m2 = p1 @ s, p2 @ s
    return s, (m1 + m2) / 2, np.sign(m1 - m2)


def _error_fraction(counts, s, threshold, side, m, truth_sign):
    """Fraction of trials decided wrongly; exact ties count one half."""
    stat = counts @ s / m
    gap = stat - threshold
    tie_tol = 1e-12 * max(float(np.max(np.abs(s))), 1e-300)
    ties = np.abs(gap) <= tie_tol
    if side == 0:
        return 0.5
    wrong = (np.sign(gap) * side * truth_sign < 0) & ~ties
    return (np.count_nonzero(wrong) + 0.5 * np.count_nonzero(ties)) / len(counts)


def simulate_error_rate(f_table, p1, p2, sample_sizes, trials, seed=0, chunk=200000):
    """Monte-Carlo error probability of the sample-mean test and its decay rate.

    For each sample size m, ``trials`` datasets are drawn under each
    hypothesis (equal priors) and the overall error probability ``P_e(m)``
    is recorded. The exponent is the least-squares slope of ``-log P_e``
    against m, excluding the smallest size. Sizes with no observed error are
    dropped and reported.
    """
    p1 = _prob_vector(p1, "p1")
    p2 = _prob_vector(p2, "p2")
    sizes = [int(m) for m in sample_sizes]
    if len(sizes) < 3:
        raise ValueError("need at least 3 sample sizes")
    if any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise ValueError("sample sizes must be positive and strictly increasing")
    if trials < 1:
        raise ValueError("trials must be positive")
    s, threshold, side = _decision_scores(f_table, p1, p2)
    streams = np.random.SeedSequence(seed).spawn(2 * len(sizes))
    rates = []
    for idx, m in enumerate(sizes):
        errors = 0.0
        for h, (p, truth) in enumerate(((p1, 1.0), (p2, -1.0))):
            rng = np.random.default_rng(streams[2 * idx + h])
            done = 0
            while done < trials:
                n = min(chunk, trials - done)
                counts = rng.multinomial(m, p, size=n)
                errors += n * _error_fraction(counts, s, threshold, side, m, truth)
                done += n
        rates.append(errors / (2 * trials))
    fit = [(m, r) for m, r in zip(sizes[1:], rates[1:]) if r > 0]
    dropped = [m for m, r in zip(sizes, rates) if r <= 0]
    if len(fit) < 2:
        raise InsufficientTrialsError(
            f"only {len(fit)} sample sizes with observed errors; increase trials"
        )
    ms = np.array([m for m, _ in fit], dtype=np.float64)
    y = -np.log([r for _, r in fit])
    slope, intercept = np.polyfit(ms, y, 1)
    return SimulationResult(
        sample_sizes=sizes,
        error_rates=[float(r) for r in rates],
        dropped=dropped,
        fit_sizes=[int(m) for m in ms],
        slope=float(slope),
        intercept=float(intercept),
        trials=int(trials),
        seed=int(seed),
    )
