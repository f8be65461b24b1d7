"""Retrieval evaluation: gallery ranking, average precision, mAP and CMC.

AP is the precision-at-hit average, AP = (1/R) * sum over hit positions
p of hits_so_far / p (not the interpolated 11-point variant). Queries
with no admissible relevant gallery entry are excluded from the mean and
reported as a skip count rather than silently scored as zero.

Aggregation deliberately uses plain left-to-right Python sums so results
are bit-identical to a naive reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CMC_RANKS = (1, 5, 10)

_REPORT_HEADER = "# report v1 ap=precision-at-hit values=fractions"
_MISSING = "---"


@dataclass(frozen=True)
class RankedList:
    """Admissible gallery indices for one query, closest first."""

    query_index: int
    gallery_indices: tuple[int, ...]


@dataclass(frozen=True)
class EvalResult:
    map: float
    cmc: dict[int, float]
    num_queries: int = 0
    num_skipped: int = 0

    def __post_init__(self):
        values = [self.map, *self.cmc.values()]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("metric values must lie in [0, 1]")
        ranks = sorted(self.cmc)
        if any(self.cmc[a] > self.cmc[b] for a, b in zip(ranks, ranks[1:])):
            raise ValueError("CMC must be non-decreasing in rank")


def rank_gallery(
    query_vector,
    query_identity: int,
    query_camera: int,
    gallery_vectors,
    gallery_identities,
    gallery_cameras,
    exclude_same_camera: bool = True,
    query_index: int = 0,
) -> RankedList:
    """Sort the admissible gallery by ascending distance to the query.

    With `exclude_same_camera`, gallery entries sharing both the query's
    identity and camera are removed before ranking (standard cross-camera
    protocol). Distance ties resolve to the lower gallery index.
    """
    q = np.asarray(query_vector, dtype=np.float64)
    g = np.asarray(gallery_vectors, dtype=np.float64)
    ids = np.asarray(gallery_identities, dtype=np.int64)
    cams = np.asarray(gallery_cameras, dtype=np.int64)
    if g.ndim != 2 or q.ndim != 1 or g.shape[1] != q.shape[0]:
        raise ValueError("query and gallery feature dimensions do not match")
    admissible = np.ones(g.shape[0], dtype=bool)
    if exclude_same_camera:
        admissible = ~((ids == query_identity) & (cams == query_camera))
    candidates = np.flatnonzero(admissible)
    if candidates.size == 0:
        raise ValueError("empty admissible gallery")
    diff = g[candidates] - q
    distances = np.sqrt(np.sum(diff * diff, axis=1))
    order = np.lexsort((candidates, distances))
    return RankedList(query_index, tuple(int(i) for i in candidates[order]))


def average_precision(relevance: Sequence[bool]) -> float:
    """Precision-at-hit average over a ranked relevance pattern."""
    total_relevant = sum(1 for r in relevance if r)
    if total_relevant == 0:
        raise ValueError("at least one relevant entry is required")
    hits = 0
    accumulated = 0.0
    for position, relevant in enumerate(relevance, start=1):
        if relevant:
            hits += 1
            accumulated += hits / position
    return accumulated / total_relevant


def evaluate(
    query_vectors,
    query_identities,
    query_cameras,
    gallery_vectors,
    gallery_identities,
    gallery_cameras,
    exclude_same_camera: bool = True,
    cmc_ranks: Sequence[int] = CMC_RANKS,
) -> EvalResult:
    """mAP and CMC over a query set against a gallery."""
    q = np.asarray(query_vectors, dtype=np.float64)
    q_ids = np.asarray(query_identities, dtype=np.int64)
    q_cams = np.asarray(query_cameras, dtype=np.int64)
    g_ids = np.asarray(gallery_identities, dtype=np.int64)
    g_cams = np.asarray(gallery_cameras, dtype=np.int64)
    if q.ndim != 2 or q.shape[0] == 0 or len(g_ids) == 0:
        raise ValueError("query and gallery sets must be non-empty")

    aps: list[float] = []
    first_hit_ranks: list[int] = []
    skipped = 0
    for index in range(q.shape[0]):
        admissible = np.ones(len(g_ids), dtype=bool)
        if exclude_same_camera:
            admissible = ~((g_ids == q_ids[index]) & (g_cams == q_cams[index]))
        # A query with no admissible relevant entry is skipped, not scored 0.
        if not np.any(admissible & (g_ids == q_ids[index])):
            skipped += 1
            continue
        ranked = rank_gallery(
            q[index],
            int(q_ids[index]),
            int(q_cams[index]),
            gallery_vectors,
            g_ids,
            g_cams,
            exclude_same_camera=exclude_same_camera,
            query_index=index,
        )
        relevance = [bool(g_ids[j] == q_ids[index]) for j in ranked.gallery_indices]
        aps.append(average_precision(relevance))
        first_hit_ranks.append(relevance.index(True) + 1)
    if not aps:
        raise ValueError("no scorable queries (every query lacked relevant gallery entries)")

    mean_ap = sum(aps) / len(aps)
    cmc = {
        rank: sum(1 for hit in first_hit_ranks if hit <= rank) / len(first_hit_ranks)
        for rank in cmc_ranks
    }
    return EvalResult(mean_ap, cmc, num_queries=len(aps), num_skipped=skipped)


def _format_cell_percent(value: float | None) -> str:
    return _MISSING if value is None else f"{100.0 * value:.2f}"


def _format_cell_fraction(value: float | None) -> str:
    return _MISSING if value is None else f"{value:.4f}"


def _row_values(result: EvalResult) -> list[float | None]:
    return [result.map, *(result.cmc.get(rank) for rank in CMC_RANKS)]


def format_report(results: Mapping[str, EvalResult]) -> str:
    """Human-readable table: rows per variant, metric columns in percent."""
    if not results:
        raise ValueError("results must be non-empty")
    headers = ["variant", "mAP", "top1", "top5", "top10"]
    rows = [
        [name, *(_format_cell_percent(v) for v in _row_values(result))]
        for name, result in results.items()
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = ["retrieval results (%), AP = precision-at-hit average"]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"


def serialize_report(results: Mapping[str, EvalResult]) -> str:
    """Machine-readable report: header plus one tab-separated row per variant."""
    if not results:
        raise ValueError("results must be non-empty")
    lines = [_REPORT_HEADER]
    for name, result in results.items():
        cells = [_format_cell_fraction(v) for v in _row_values(result)]
        lines.append("\t".join([name, *cells]))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, EvalResult]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# report v1"):
        raise ValueError("report is missing its version header")
    results: dict[str, EvalResult] = {}
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"report line {number} has {len(fields)} fields, expected 5")
        name, map_cell, *cmc_cells = fields
        if map_cell == _MISSING:
            continue
        cmc = {
            rank: float(cell)
            for rank, cell in zip(CMC_RANKS, cmc_cells)
            if cell != _MISSING
        }
        results[name] = EvalResult(float(map_cell), cmc)
    return results


def save_report(path, results: Mapping[str, EvalResult]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(serialize_report(results), encoding="utf-8")


def load_report(path) -> dict[str, EvalResult]:
    return parse_report(Path(path).read_text(encoding="utf-8"))
