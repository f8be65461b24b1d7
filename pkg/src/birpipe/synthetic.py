"""Synthetic desk-scale corpora: Gaussian identity clusters with an
"original" and a cleaner "segmented" feature variant per record.

Cluster centers sit on a circle whose chord length equals
`separation * intra_std`, so the stated separation is a guaranteed lower
bound on inter-cluster distance. The segmented variant redraws each
sample around its center with a smaller spread, mimicking features from
background-removed images.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import write_feature_file
from .manifest import (
    SPLIT_GALLERY,
    SPLIT_QUERY,
    SPLIT_TRAIN,
    ImageRecord,
    Manifest,
    save_manifest,
)


@dataclass
class SyntheticDataset:
    train_manifest: Manifest
    test_manifest: Manifest
    train_original: np.ndarray
    train_segmented: np.ndarray
    test_original: np.ndarray
    test_segmented: np.ndarray


def _cluster_centers(num_identities: int, dim: int, spacing: float) -> np.ndarray:
    centers = np.zeros((num_identities, dim))
    if num_identities == 1:
        return centers
    if dim == 1:
        centers[:, 0] = spacing * np.arange(num_identities)
        return centers
    # Chord between adjacent points on the circle equals `spacing`.
    radius = spacing / (2.0 * np.sin(np.pi / num_identities))
    angles = 2.0 * np.pi * np.arange(num_identities) / num_identities
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def make_cluster_dataset(
    num_identities: int = 10,
    per_identity: int = 20,
    dim: int = 2,
    separation: float = 5.0,
    intra_std: float = 1.0,
    segmented_std: float = 0.2,
    queries_per_identity: int = 2,
    gallery_per_identity: int = 4,
    num_cameras: int = 4,
    seed: int = 0,
) -> SyntheticDataset:
    if num_identities < 2 or per_identity < 1 or dim < 1:
        raise ValueError("need >= 2 identities, >= 1 sample each, dim >= 1")
    rng = np.random.default_rng(seed)
    centers = _cluster_centers(num_identities, dim, separation * intra_std)

    def build(split_sizes: list[tuple[str, int]]) -> tuple[Manifest, np.ndarray, np.ndarray]:
        records = []
        original = []
        segmented = []
        for identity in range(num_identities):
            sample_index = 0
            for split, size in split_sizes:
                for _ in range(size):
                    original.append(centers[identity] + rng.normal(0.0, intra_std, size=dim))
                    segmented.append(centers[identity] + rng.normal(0.0, segmented_std, size=dim))
                    records.append(
                        ImageRecord(
                            image_path=f"img/{identity:03d}_{split}_{sample_index:02d}.png",
                            identity=identity,
                            camera=sample_index % num_cameras,
                            split=split,
                        )
                    )
                    sample_index += 1
        return Manifest(tuple(records), seed=seed), np.asarray(original), np.asarray(segmented)

    train_manifest, train_orig, train_seg = build([(SPLIT_TRAIN, per_identity)])
    test_manifest, test_orig, test_seg = build(
        [(SPLIT_QUERY, queries_per_identity), (SPLIT_GALLERY, gallery_per_identity)]
    )
    return SyntheticDataset(train_manifest, test_manifest, train_orig, train_seg, test_orig, test_seg)


def write_dataset(out_dir, dataset: SyntheticDataset) -> dict[str, Path]:
    """Write manifests and per-variant feature files; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_manifest": out / "train.tsv",
        "test_manifest": out / "test.tsv",
        "train_original": out / "train_original.fvec",
        "train_segmented": out / "train_segmented.fvec",
        "test_original": out / "test_original.fvec",
        "test_segmented": out / "test_segmented.fvec",
    }
    save_manifest(paths["train_manifest"], dataset.train_manifest)
    save_manifest(paths["test_manifest"], dataset.test_manifest)
    write_feature_file(paths["train_original"], dataset.train_original)
    write_feature_file(paths["train_segmented"], dataset.train_segmented)
    write_feature_file(paths["test_original"], dataset.test_original)
    write_feature_file(paths["test_segmented"], dataset.test_segmented)
    return paths
