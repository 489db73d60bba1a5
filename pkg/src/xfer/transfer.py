"""Transferability, source selection and higher-order (concatenated) transfer."""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .data_io import LabelVector, as_feature_matrix
from .dtm import dtm, empirical_joint, spectral
from .errors import DataError, DegenerateTaskError
from .stats import h_score

MODES = ("exact_discrete", "proxy_self", "bound_k")

LINEAR_HEAD_NOTE = (
    "scores are exact for linear transfer heads; with non-linear fine-tuning "
    "they are meaningful only for relative comparison"
)


@dataclass
class TaskFeatureSet:
    """Features of a source encoder evaluated on the target task's inputs."""

    task_id: str
    features: np.ndarray

    def __post_init__(self):
        self.features = as_feature_matrix(self.features)

    @property
    def n_samples(self):
        return self.features.shape[0]


@dataclass
class TransferabilityScore:
    numerator: float
    denominator: float
    value: float
    mode: str
    k: int
    exceeds_one: bool

    def to_dict(self):
        return {
            "numerator": self.numerator,
            "denominator": self.denominator,
            "transferability": self.value,
            "mode": self.mode,
            "k": self.k,
            "exceeds_one": self.exceeds_one,
            "note": LINEAR_HEAD_NOTE,
        }


def _labels(target_labels):
    if isinstance(target_labels, LabelVector):
        return target_labels
    return LabelVector.from_values(np.asarray(target_labels).ravel())


def transferability(source, target_labels, mode="proxy_self", *, inputs=None,
                    quantizer=None, target_features=None, inverse_mode=None):
    """Normalized H-score of ``source`` features on the target task.

    The numerator is always the H-score of the source features. The
    denominator depends on ``mode``:

    ``exact_discrete``
        ``sum_{i<=k} sigma_i^2`` of the DTM of the empirical joint of
        discrete ``inputs`` (optionally passed through ``quantizer``) and
        the labels, with k the smaller of the numerator's effective rank
        and the DTM rank.
    ``proxy_self``
        H-score of the target task's own trained ``target_features``.
        May exceed 1; such values are flagged, not clamped.
    ``bound_k``
        ``min(k, C - 1)``, the cap on the H-score of k normalized features.
    """
    if mode not in MODES:
        raise ValueError(f"unknown transferability mode {mode!r}; choose from {MODES}")
    lv = _labels(target_labels)
    if len(lv) != source.n_samples:
        raise DataError(
            f"source {source.task_id!r} has {source.n_samples} rows, target has {len(lv)} labels"
        )
    report = h_score(source.features, lv, inverse_mode)
    k = report.effective_rank
    if mode == "exact_discrete":
        if inputs is None:
            raise ValueError("exact_discrete mode needs the discrete inputs (or raw inputs and a quantizer)")
        x = quantizer(inputs) if quantizer is not None else np.asarray(inputs)
        x = np.asarray(x).ravel()
        if len(x) != len(lv):
            raise DataError(f"{len(x)} inputs but {len(lv)} labels")
        sd = spectral(dtm(empirical_joint(x, lv.labels)))
        k = min(k, sd.rank)
        denominator = sd.h_bound(k)
    elif mode == "proxy_self":
        if target_features is None:
            raise ValueError("proxy_self mode needs the target task's own features")
        denominator = h_score(target_features, lv, inverse_mode).value
    else:
        k = min(k, lv.n_classes - 1)
        denominator = float(k)
    if not denominator > 0:
        raise DegenerateTaskError(
            f"target task has zero optimal H-score under mode {mode!r}; transferability undefined"
        )
    value = report.value / denominator
    return TransferabilityScore(
        numerator=report.value,
        denominator=float(denominator),
        value=value,
        mode=mode,
        k=int(k),
        exceeds_one=value > 1 + 1e-9,
    )


@dataclass
class RankingEntry:
    task_id: str
    hscore: float
    transferability: float = None


@dataclass
class SourceRanking:
    target: str
    mode: str
    entries: list

    def to_dict(self):
        return {
            "target": self.target,
            "mode": self.mode,
            "entries": [
                {"task_id": e.task_id, "hscore": e.hscore,
                 "transferability": e.transferability, "rank": i}
                for i, e in enumerate(self.entries, start=1)
            ],
        }

    @property
    def order(self):
        return [e.task_id for e in self.entries]


def _check_consistent(candidates, n_labels):
    if not candidates:
        raise ValueError("no candidates")
    bad = [c.task_id for c in candidates if c.n_samples != n_labels]
    if bad:
        raise DataError(f"candidates with row count different from {n_labels} labels: {bad}")
    ids = [c.task_id for c in candidates]
    if len(set(ids)) != len(ids):
        raise DataError("candidate task ids must be unique")


def _rank(scored, target, mode, denominator):
    scored = sorted(scored, key=lambda e: (-e[1], e[0]))
    entries = [
        RankingEntry(tid, h, None if denominator is None else h / denominator)
        for tid, h in scored
    ]
    return SourceRanking(target, mode, entries)


def select_source(candidates, target_labels, *, target="target", denominator=None,
                  inverse_mode=None):
    """Rank candidate source features by H-score on the target labels.

    The denominator of the transferability is shared by all candidates, so
    the ordering needs numerators only. Pass ``denominator`` to also fill
    in transferability values.
    """
    lv = _labels(target_labels)
    _check_consistent(candidates, len(lv))
    scored = [(c.task_id, h_score(c.features, lv, inverse_mode).value) for c in candidates]
    return _rank(scored, target, "hscore", denominator)


def concat_features(a, b):
    if a.n_samples != b.n_samples:
        raise DataError(f"{a.task_id!r} has {a.n_samples} rows, {b.task_id!r} has {b.n_samples}")
    return TaskFeatureSet(f"{a.task_id}+{b.task_id}", np.hstack([a.features, b.features]))


def rank_pairs(candidates, target_labels, *, target="target", denominator=None,
               inverse_mode=None):
    """Rank all unordered candidate pairs by the H-score of their concatenation."""
    if len(candidates) < 2:
        raise ValueError("need at least 2 candidates to form pairs")
    lv = _labels(target_labels)
    _check_consistent(candidates, len(lv))
    ordered = sorted(candidates, key=lambda c: c.task_id)
    scored = []
    for a, b in combinations(ordered, 2):
        pair = concat_features(a, b)
        scored.append((pair.task_id, h_score(pair.features, lv, inverse_mode).value))
    return _rank(scored, target, "hscore_pairs", denominator)
