#!/usr/bin/env python3
"""Regenerate the shipped test fixtures (deterministic)."""

import json
from pathlib import Path

import numpy as np

from xfer.data_io import write_feature_csv, write_labels, write_tensor_binary

HERE = Path(__file__).resolve().parent


def binary_symmetric():
    # empirical joint exactly P(0,0)=P(1,1)=0.4, P(0,1)=P(1,0)=0.1
    pairs = [(0, 0)] * 4 + [(1, 1)] * 4 + [(0, 1), (1, 0)]
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    write_feature_csv(HERE / "bsc_features.csv", x[:, None].astype(float))
    write_labels(HERE / "bsc_labels.txt", y)
    write_labels(HERE / "bsc_inputs.txt", x)


def candidates():
    rng = np.random.default_rng(1)
    m = 300
    y = rng.integers(0, 3, m)
    centers = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
    write_labels(HERE / "target_labels.txt", y)
    strong = centers[y] + 0.5 * rng.standard_normal((m, 2))
    weak = centers[y] + 2.0 * rng.standard_normal((m, 2))
    noise = rng.standard_normal((m, 2))
    write_feature_csv(HERE / "cand_strong.csv", strong)
    write_feature_csv(HERE / "cand_weak.csv", weak)
    write_feature_csv(HERE / "cand_noise.csv", noise)
    write_feature_csv(HERE / "target_features.csv", centers[y] + 0.3 * rng.standard_normal((m, 2)))


def two_region(m=400, size=8, seed=2):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((m, 2))
    images = np.zeros((m, size, size), dtype=np.uint8)
    images[:, :, : size // 2] = np.where(F[:, 0] > 0, 200, 50)[:, None, None]
    images[:, :, size // 2:] = np.where(rng.random((m, size, size // 2)) < 0.5, 200, 50)
    return F, images


def pixel():
    F, images = two_region()
    write_feature_csv(HERE / "pixel_features.csv", F)
    write_tensor_binary(HERE / "pixel_images.xft", images)
    write_tensor_binary(HERE / "constant_images.xft", np.full_like(images, 7))


def curriculum():
    # pairwise maxima 0.9 (01), 0.8 (12), 0.1 (02) -> edges {01, 12}
    M = np.array([[1.0, 0.9, 0.1], [0.3, 1.0, 0.8], [0.05, 0.2, 1.0]])
    write_feature_csv(HERE / "curriculum_M.csv", M)
    rng = np.random.default_rng(3)
    m = 300
    fine = rng.integers(0, 4, m)
    coarse = fine // 2
    other = rng.integers(0, 2, m)
    tasks = []
    for tid, labels, scale in (("fine", fine, 0.4), ("coarse", coarse, 0.4), ("other", other, 0.4)):
        n_classes = labels.max() + 1
        centers = rng.standard_normal((n_classes, 3)) * 2
        write_feature_csv(HERE / f"task_{tid}.csv", centers[labels] + scale * rng.standard_normal((m, 3)))
        write_labels(HERE / f"task_{tid}_labels.txt", labels)
        tasks.append({"id": tid, "features": f"task_{tid}.csv", "labels": f"task_{tid}_labels.txt"})
    (HERE / "tasks.json").write_text(json.dumps({"tasks": tasks}, indent=2) + "\n")


def local_pair():
    p0 = np.array([0.1, 0.15, 0.2, 0.25, 0.3])
    s = np.sqrt(p0)
    rng = np.random.default_rng(4)
    v = rng.standard_normal(5)
    v -= (v @ s) * s
    phi = v / np.linalg.norm(v)
    eps = 0.05
    # opposite directions keep p0 the equal-weight mixture of p1 and p2
    p1 = p0 + eps * s * phi
    p2 = p0 - eps * s * phi
    (HERE / "local_pair.json").write_text(json.dumps(
        {"p0": p0.tolist(), "p1": p1.tolist(), "p2": p2.tolist(), "eps": eps}, indent=2) + "\n")
    q = [0.2, 0.3, 0.5]
    (HERE / "pair_equal.json").write_text(json.dumps({"p1": q, "p2": q}, indent=2) + "\n")


if __name__ == "__main__":
    binary_symmetric()
    candidates()
    pixel()
    curriculum()
    local_pair()
