"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run `pytest -s tests/test_acceptance.py` to see the lines while passing;
on failure the line appears in the captured output.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from birpipe import cli
from birpipe.evaluation import average_precision, evaluate, load_report
from birpipe.manifest import (
    SPLIT_GALLERY,
    SPLIT_QUERY,
    SPLIT_TRAIN,
    VARIANT_SEGMENTED,
    ImageRecord,
    Manifest,
    mix_random_selection,
    serialize_manifest,
)
from birpipe.masks import fill_holes, keep_largest_component, label_components, postprocess
from birpipe.synthetic import make_cluster_dataset, write_dataset
from birpipe.training import TrainConfig, train_toy
from birpipe.triplet import Batch, EmbeddingModel, batch_hard_loss, embed, loss_gradient, pairwise_distances

from oracles import (
    fd_gradient,
    naive_batch_hard,
    naive_evaluate,
    oracle_fill_holes,
    oracle_largest_component,
    same_partition,
    triple_enumeration_loss,
    uf_partition,
)


@contextmanager
def criterion(number: int, description: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL criterion {number}: {description}")
        raise
    print(f"PASS criterion {number}: {description} [{time.perf_counter() - start:.2f}s]")


def test_criterion_1_morphology_oracle_suite():
    with criterion(1, "fill/label/largest equal brute-force oracles on 1000 random 64x64 masks"):
        start = time.perf_counter()
        rng = np.random.default_rng(20260810)
        for index in range(1000):
            mask = (rng.random((64, 64)) < rng.uniform(0.25, 0.75)).astype(np.uint8)
            assert np.array_equal(fill_holes(mask), oracle_fill_holes(mask))
            connectivity = 4 if index % 2 == 0 else 8
            labeling = label_components(mask, connectivity)
            assert same_partition(labeling.labels, uf_partition(mask == 1, connectivity))
            assert np.array_equal(keep_largest_component(mask), oracle_largest_component(mask))
        assert time.perf_counter() - start < 5.0


def _gate_corpus():
    """50 crafted masks with hand-computable post-processing outcomes.

    Returns (mask, expected_ratio_numerator) pairs on a 10x10 canvas; the
    expected final ratio is numerator/100 by construction.
    """
    corpus = []
    # 44 solid raster-prefix blocks: single component, no holes, count pixels
    for count in range(38, 82):
        mask = np.zeros((10, 10), dtype=np.uint8)
        mask.ravel()[:count] = 1
        corpus.append((mask, count))
    # 3 rectangle outlines: the hole fills, final count = full rectangle area
    for height, width in ((9, 9), (7, 8), (8, 8)):
        mask = np.zeros((10, 10), dtype=np.uint8)
        mask[0:height, 0:width] = 1
        mask[1 : height - 1, 1 : width - 1] = 0
        corpus.append((mask, height * width))
    # 3 two-component masks: the area gate sees only the largest component
    for block_pixels, stray in ((60, 1), (59, 1), (58, 7)):
        mask = np.zeros((10, 10), dtype=np.uint8)
        mask.ravel()[:block_pixels] = 1  # rows 0..5 at most, never reaches row 8
        mask[9, 0:stray] = 1  # disjoint strip on the last row
        assert block_pixels > stray
        corpus.append((mask, block_pixels))
    return corpus


def test_criterion_2_postprocess_gate_on_crafted_corpus():
    with criterion(2, "gate decisions match hand-computed ratios at 0.60 (50-image corpus)"):
        corpus = _gate_corpus()
        assert len(corpus) == 50
        at_threshold_kept = 0
        for mask, numerator in corpus:
            outcome = postprocess(mask, threshold=0.60)
            expected_ratio = numerator / 100
            if expected_ratio >= 0.60:
                assert outcome.kept
                assert outcome.ratio == expected_ratio
                if numerator == 60:
                    at_threshold_kept += 1
            else:
                assert not outcome.kept
                assert outcome.ratio == expected_ratio
        assert at_threshold_kept >= 1  # exactly-at-threshold masks are kept


def test_criterion_3_batch_hard_loss_oracle():
    with criterion(3, "batch-hard loss equals naive hardest-pair scan on 200 random batches"):
        # hand example first, via full triple enumeration
        features = np.array([[0.0], [2.0], [3.0], [5.0]])
        labels = np.array([0, 0, 1, 1])
        assert triple_enumeration_loss(features, labels, 1.0) == 4.0
        assert batch_hard_loss(features, labels, 1.0)[0] == 4.0

        rng = np.random.default_rng(4247)
        for _ in range(200):
            p = int(rng.integers(2, 7))
            k = int(rng.integers(2, 5))
            dim = int(rng.integers(1, 9))
            batch_labels = np.repeat(np.arange(p), k)
            batch_features = rng.normal(size=(p * k, dim))
            loss, hardest = batch_hard_loss(batch_features, batch_labels, 1.0)
            expected_loss, expected_hardest = naive_batch_hard(batch_features, batch_labels, 1.0)
            if expected_loss == 0.0:
                assert loss == 0.0
            else:
                assert abs(loss - expected_loss) <= 1e-12 * abs(expected_loss)
            assert hardest == expected_hardest


def _tie_free(model: EmbeddingModel, batch: Batch, margin: float, gap: float = 1e-3) -> bool:
    """True iff no hardest-pair tie, no hinge kink, and some hinge is active."""
    f = embed(model, batch.inputs)
    distances = pairwise_distances(f)
    labels = batch.labels
    n = len(labels)
    any_active = False
    for anchor in range(n):
        same = labels == labels[anchor]
        positives = np.flatnonzero(same & (np.arange(n) != anchor))
        negatives = np.flatnonzero(~same)
        pos_sorted = np.sort(distances[anchor, positives])
        neg_sorted = np.sort(distances[anchor, negatives])
        if pos_sorted[-1] < gap or neg_sorted[0] < gap:
            return False  # zero-distance subgradient corner
        if len(pos_sorted) > 1 and pos_sorted[-1] - pos_sorted[-2] < gap:
            return False
        if len(neg_sorted) > 1 and neg_sorted[1] - neg_sorted[0] < gap:
            return False
        hinge = pos_sorted[-1] - neg_sorted[0] + margin
        if abs(hinge) < gap:
            return False
        if hinge > 0:
            any_active = True
    return any_active


def test_criterion_4_gradient_check():
    with criterion(4, "analytic gradient matches central differences on 50 tie-free instances"):
        rng = np.random.default_rng(515)
        checked = 0
        while checked < 50:
            p = int(rng.integers(2, 5))
            k = int(rng.integers(2, 4))
            dim_in = int(rng.integers(1, 5))
            dim_out = int(rng.integers(1, 5))
            batch = Batch(rng.normal(size=(p * k, dim_in)), np.repeat(np.arange(p), k))
            model = EmbeddingModel(rng.normal(size=(dim_in, dim_out)))
            if not _tie_free(model, batch, margin=1.0):
                continue
            analytic = loss_gradient(model, batch, margin=1.0)
            numeric = fd_gradient(model, batch, margin=1.0, step=1e-5)
            scale = np.abs(numeric).max()
            assert scale > 0
            assert np.abs(analytic - numeric).max() < 1e-4 * scale
            checked += 1


def test_criterion_5_toy_end_to_end():
    with criterion(5, "trained toy model reaches mAP and top-1 >= 0.95 on Gaussian clusters"):
        start = time.perf_counter()
        dataset = make_cluster_dataset(
            num_identities=10, per_identity=20, separation=6.0, seed=2026
        )
        train_ids = np.asarray([r.identity for r in dataset.train_manifest.records])
        config = TrainConfig(p=10, k=4, learning_rate=2e-4, epochs=50, seed=2026)
        result = train_toy(dataset.train_original, train_ids, config)
        assert result.epoch_losses[-1] < result.epoch_losses[0]

        records = dataset.test_manifest.records
        test_ids = np.asarray([r.identity for r in records])
        test_cams = np.asarray([r.camera for r in records])
        queries = [i for i, r in enumerate(records) if r.split == SPLIT_QUERY]
        gallery = [i for i, r in enumerate(records) if r.split == SPLIT_GALLERY]
        embedded = embed(result.model, dataset.test_original)
        scored = evaluate(
            embedded[queries],
            test_ids[queries],
            test_cams[queries],
            embedded[gallery],
            test_ids[gallery],
            test_cams[gallery],
        )
        assert scored.map >= 0.95
        assert scored.cmc[1] >= 0.95
        assert time.perf_counter() - start < 30.0


def test_criterion_6_random_selection_statistics():
    with criterion(6, "k=0.2 over 10000 capable records lands within 2000 +/- 120, reproducibly"):
        records = tuple(
            ImageRecord(f"img/{i:05d}.png", i % 600, i % 20, SPLIT_TRAIN, VARIANT_SEGMENTED)
            for i in range(10_000)
        )
        manifest = Manifest(records, seed=0)
        mixed = mix_random_selection(manifest, 0.2, seed=97)
        count = mixed.count_variant(VARIANT_SEGMENTED)
        assert 2000 - 120 <= count <= 2000 + 120
        again = mix_random_selection(manifest, 0.2, seed=97)
        assert serialize_manifest(again) == serialize_manifest(mixed)


def test_criterion_7_retrieval_oracle():
    with criterion(7, "evaluate equals the brute-force mAP/CMC oracle on 100 instances"):
        ap = average_precision([True, False, True])
        assert abs(ap - 5 / 6) < 1e-12

        rng = np.random.default_rng(733)
        scored_instances = 0
        for _ in range(100):
            nq = int(rng.integers(1, 21))
            ng = int(rng.integers(2, 51))
            dim = int(rng.integers(1, 6))
            q = rng.normal(size=(nq, dim))
            g = rng.normal(size=(ng, dim))
            q_ids = rng.integers(0, 6, size=nq)
            q_cams = rng.integers(0, 3, size=nq)
            g_ids = rng.integers(0, 6, size=ng)
            g_cams = rng.integers(0, 3, size=ng)
            expected_map, expected_cmc, scored, skipped = naive_evaluate(
                q, q_ids, q_cams, g, g_ids, g_cams
            )
            if scored == 0:
                with pytest.raises(ValueError):
                    evaluate(q, q_ids, q_cams, g, g_ids, g_cams)
                continue
            result = evaluate(q, q_ids, q_cams, g, g_ids, g_cams)
            assert result.map == expected_map
            assert result.cmc == expected_cmc
            assert (result.num_queries, result.num_skipped) == (scored, skipped)
            scored_instances += 1
        assert scored_instances >= 90


def test_criterion_8_ablation_harness_shape(tmp_path):
    with criterion(8, "9-row random-k ablation report, deterministic under a fixed seed"):
        start = time.perf_counter()
        dataset = make_cluster_dataset(
            num_identities=8, per_identity=10, separation=6.0, seed=4
        )
        paths = write_dataset(tmp_path / "corpus", dataset)

        def run_ablation(out_name: str) -> bytes:
            out = tmp_path / out_name
            code = cli.main(
                [
                    "ablate",
                    "--train-manifest", str(paths["train_manifest"]),
                    "--train-features", str(paths["train_original"]),
                    "--train-features-segmented", str(paths["train_segmented"]),
                    "--test-manifest", str(paths["test_manifest"]),
                    "--test-features", str(paths["test_original"]),
                    "--test-features-segmented", str(paths["test_segmented"]),
                    "--variants", "",
                    "--k-grid", "0.1:0.9:0.1",
                    "--seed", "13",
                    "--p", "4", "--k-per-id", "3", "--epochs", "10", "--lr", "0.005",
                    "--out", str(out),
                ]
            )
            assert code == 0
            return out.read_bytes()

        first = run_ablation("report_a.tsv")
        second = run_ablation("report_b.tsv")
        assert first == second

        report = load_report(tmp_path / "report_a.tsv")
        assert list(report) == [f"k={v:g}" for v in np.arange(1, 10) / 10]
        for row in report.values():
            assert 0.0 <= row.map <= 1.0
            assert set(row.cmc) == {1, 5, 10}
        assert time.perf_counter() - start < 300.0
