"""H-scores for tasks whose labels are images.

Ground-truth pixel values are clustered into a small palette, each pixel
position becomes a discrete labelling of the samples, and the features are
scored against every position. The map is averaged over informative pixels.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse

from . import jsonfmt
from .data_io import as_feature_matrix, as_image_set
from .errors import DataError, DegenerateTaskError, InsufficientColorsError
from .stats import InverseMode, canonical_order, regularized_inverse_sqrt, sample_covariance

DEFAULT_N_COLORS = 16
MAX_PALETTE_SAMPLES = 10 ** 6


@dataclass
class Palette:
    centroids: np.ndarray
    inertia: float
    seed: int
    n_iter: int
    inertia_history: list = field(default_factory=list)

    @property
    def n_colors(self):
        return self.centroids.shape[0]

    @property
    def channels(self):
        return self.centroids.shape[1]

    def to_dict(self):
        return {
            "n_colors": self.n_colors,
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "seed": self.seed,
            "n_iter": self.n_iter,
        }


def _sq_dists(X, centroids):
    # explicit differences keep exact ties exact (no |x|^2 - 2xc + |c|^2 rounding)
    out = np.empty((X.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = X - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeans_pp(X, n_colors, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, n_colors):
        total = d2.sum()
        idx = rng.choice(len(X), p=d2 / total) if total > 0 else rng.integers(len(X))
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers)


def fit_palette(pixels, n_colors=DEFAULT_N_COLORS, max_iter=300, tol=1e-8, seed=0,
                max_samples=MAX_PALETTE_SAMPLES):
    """k-means palette (k-means++ seeding, Lloyd iterations).

    Parameters
    ----------
    pixels : array-like, shape (N, channels) or (N,)
    n_colors : int
        Palette size, at least 2.
    max_iter, tol : Lloyd stops when no centroid moves more than ``tol``.
    seed : int
        Seeds both the subsample (when N > ``max_samples``) and the seeding.
    """
    X = np.asarray(pixels, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError(f"pixels must be N x channels, got shape {X.shape}")
    if n_colors < 2:
        raise ValueError("palette needs at least 2 colors")
    rng = np.random.default_rng(seed)
    if len(X) > max_samples:
        X = X[np.sort(rng.choice(len(X), size=max_samples, replace=False))]
    n_distinct = len(np.unique(X, axis=0))
    if n_distinct < 2:
        raise InsufficientColorsError(
            "degenerate task: every pixel has the same value, so no pixel label carries information"
        )
    if n_distinct < n_colors:
        raise InsufficientColorsError(
            f"only {n_distinct} distinct pixel values for a {n_colors}-color palette; "
            f"use n_colors <= {n_distinct}"
        )
    centroids = _kmeans_pp(X, n_colors, rng)
    # rounding slack for the monotonicity check, relative to the data spread
    slack = 1e-12 * float(np.sum((X - X.mean(axis=0)) ** 2))
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(X, centroids)
        labels = np.argmin(d2, axis=1)
        best = d2[np.arange(len(X)), labels]
        counts = np.bincount(labels, minlength=n_colors)
        while np.any(counts == 0):
            # re-seed an empty cluster at the worst-served point of a cluster
            # that can spare it
            j = int(np.flatnonzero(counts == 0)[0])
            far = int(np.argmax(np.where(counts[labels] > 1, best, -1.0)))
            counts[labels[far]] -= 1
            counts[j] += 1
            labels[far] = j
            centroids[j] = X[far]
            best[far] = 0.0
        inertia = float(best.sum())
        if history and inertia > history[-1] * (1 + 1e-12) + slack:
            raise RuntimeError(f"k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
        new = np.zeros_like(centroids)
        np.add.at(new, labels, X)
        new /= counts[:, None]
        shift = float(np.sqrt(np.max(np.sum((new - centroids) ** 2, axis=1))))
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(X, centroids)
    inertia = float(d2.min(axis=1).sum())
    if inertia > history[-1] * (1 + 1e-12) + slack:
        raise RuntimeError(f"k-means inertia increased: {history[-1]} -> {inertia}")
    history.append(inertia)
    return Palette(centroids, inertia, int(seed), n_iter, history)


def quantize(images, palette, chunk_pixels=1 << 20):
    """Nearest-centroid label for every pixel; ties go to the lowest index."""
    imgs = as_image_set(images)
    if imgs.shape[-1] != palette.channels:
        raise DataError(f"images have {imgs.shape[-1]} channels, palette has {palette.channels}")
    flat = imgs.reshape(-1, imgs.shape[-1])
    out = np.empty(len(flat), dtype=np.int64)
    for start in range(0, len(flat), chunk_pixels):
        block = flat[start:start + chunk_pixels]
        out[start:start + len(block)] = np.argmin(_sq_dists(block, palette.centroids), axis=1)
    return out.reshape(imgs.shape[:3])


def recover(labelmaps, palette):
    """Replace every label by its centroid."""
    return palette.centroids[np.asarray(labelmaps)]


@dataclass
class PixelHScoreMap:
    scores: np.ndarray   # H x W, 0 where skipped
    skipped: np.ndarray  # H x W bool

    @property
    def skipped_count(self):
        return int(self.skipped.sum())

    @property
    def shape(self):
        return self.scores.shape

    def region_mean(self, rows=slice(None), cols=slice(None)):
        s = self.scores[rows, cols]
        k = ~self.skipped[rows, cols]
        return float(s[k].mean()) if k.any() else float("nan")


def _chunk_scores(Z, zbar, labels, n_labels):
    """H-scores for a block of pixel columns of ``labels`` (m x P)."""
    m, P = labels.shape
    rows = (np.arange(P)[None, :] * n_labels + labels).ravel()
    cols = np.repeat(np.arange(m), P)
    onehot = scipy.sparse.csr_matrix(
        (np.ones(m * P), (rows, cols)), shape=(P * n_labels, m)
    )
    sums = np.asarray(onehot @ Z)
    counts = np.bincount(rows, minlength=P * n_labels).astype(np.float64)
    present = counts > 0
    dev = np.zeros_like(sums)
    dev[present] = sums[present] / counts[present, None] - zbar
    contrib = counts / m * np.einsum("ij,ij->i", dev, dev)
    scores = contrib.reshape(P, n_labels).sum(axis=1)
    n_present = present.reshape(P, n_labels).sum(axis=1)
    return scores, n_present


def pixel_hscores(F, labelmaps, inverse_mode=None, threads=1, chunk=256):
    """Score ``F`` against the palette label at every pixel position.

    ``cov(F)`` and its inverse square root are computed once; each pixel
    only contributes its between-class term. Positions where every sample
    has the same label, or with no more samples than classes, are skipped.
    """
    F = as_feature_matrix(F)
    maps = np.asarray(labelmaps)
    if maps.ndim != 3:
        raise DataError(f"label maps must be m x H x W, got shape {maps.shape}")
    if maps.shape[0] != F.shape[0]:
        raise DataError(f"{F.shape[0]} feature rows but {maps.shape[0]} label maps")
    if maps.dtype.kind not in "iu" or (maps.size and maps.min() < 0):
        raise DataError("label maps must hold non-negative integer labels")
    m, H, W = maps.shape
    order = canonical_order(F)
    Fs = F[order]
    labels = maps[order].reshape(m, H * W)
    cov = sample_covariance(Fs)
    root = regularized_inverse_sqrt(cov, inverse_mode or InverseMode())
    Z = (Fs - Fs[0]) @ root
    zbar = Z.mean(axis=0)
    n_labels = int(labels.max()) + 1 if labels.size else 1

    starts = list(range(0, H * W, chunk))

    def work(start):
        return _chunk_scores(Z, zbar, labels[:, start:start + chunk], n_labels)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    scores = np.concatenate([r[0] for r in results])
    n_present = np.concatenate([r[1] for r in results])
    constant = n_present <= 1
    degenerate = ~constant & (m <= n_present)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} pixel(s) have no more samples than classes; skipped",
            stacklevel=2,
        )
    skipped = constant | degenerate
    scores = np.where(skipped, 0.0, np.maximum(scores, 0.0))
    return PixelHScoreMap(scores.reshape(H, W), skipped.reshape(H, W))


def aggregate(hmap):
    """Mean H-score over non-skipped pixels."""
    keep = ~hmap.skipped
    if not keep.any():
        raise DegenerateTaskError("every pixel label is constant; nothing to aggregate")
    return float(hmap.scores[keep].mean())


def heatmap_gray(hmap):
    """8-bit gray levels: min-max normalized, lighter is higher, skipped black.

    A constant map renders as uniform mid-gray (128).
    """
    keep = ~hmap.skipped
    gray = np.zeros(hmap.shape, dtype=np.uint8)
    if not keep.any():
        return gray, None, None
    vals = hmap.scores[keep]
    lo, hi = float(vals.min()), float(vals.max())
    if hi > lo:
        gray[keep] = np.rint(255 * (vals - lo) / (hi - lo)).astype(np.uint8)
    else:
        gray[keep] = 128
    return gray, lo, hi


def export_heatmap(hmap, path, fmt=None, seed=None, sidecar=True):
    """Write the map as binary PGM (P5) or SVG; returns the sidecar metadata."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("pgm", "svg"):
        raise ValueError(f"unsupported heatmap format {fmt!r}")
    gray, lo, hi = heatmap_gray(hmap)
    H, W = gray.shape
    if fmt == "pgm":
        with open(path, "wb") as fh:
            fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
            fh.write(gray.tobytes())
    else:
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" shape-rendering="crispEdges">'
        ]
        for i in range(H):
            for j in range(W):
                v = int(gray[i, j])
                parts.append(
                    f'<rect x="{j}" y="{i}" width="1" height="1" fill="rgb({v},{v},{v})"/>'
                )
        parts.append("</svg>")
        path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    meta = {"min": lo, "max": hi, "skipped_count": hmap.skipped_count, "seed": seed}
    if sidecar:
        Path(str(path) + ".json").write_text(jsonfmt.dumps(meta), encoding="utf-8")
    return meta


def read_pgm(path):
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise DataError(f"{path}: 16-bit PGM not supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=W * H, offset=pos + 1)
    return data.reshape(H, W)
