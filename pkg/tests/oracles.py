"""Independent reference implementations the test suite checks against.

Everything here is deliberately written along a different route than the
package code: connected components via union-find over explicitly
enumerated adjacent pixel pairs, hole filling via border reachability on
that partition (cross-checked by a literal BFS), batch-hard loss via
plain per-anchor scans and full triple enumeration, gradients via
central finite differences, and retrieval metrics via direct formula
evaluation in pure Python.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from birpipe.triplet import Batch, EmbeddingModel, batch_hard_loss, embed


# ---------------------------------------------------------------------------
# connected components: union-find over all adjacent pairs

def _adjacent_pairs(grid: np.ndarray, connectivity: int) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate every adjacent foreground pixel pair as flat index arrays."""
    h, w = grid.shape
    idx = np.arange(h * w).reshape(h, w)
    offsets = [(0, 1), (1, 0)]
    if connectivity == 8:
        offsets += [(1, 1), (1, -1)]
    first: list[np.ndarray] = []
    second: list[np.ndarray] = []
    for dy, dx in offsets:
        ys, yd = slice(0, h - dy), slice(dy, h)
        if dx >= 0:
            xs, xd = slice(0, w - dx), slice(dx, w)
        else:
            xs, xd = slice(-dx, w), slice(0, w + dx)
        both = grid[ys, xs] & grid[yd, xd]
        first.append(idx[ys, xs][both])
        second.append(idx[yd, xd][both])
    if not first:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(first), np.concatenate(second)


def uf_partition(grid, connectivity: int) -> np.ndarray:
    """Union-find over all adjacent pairs, vectorized with pointer jumping.

    Returns, per foreground pixel, the minimum flat raster index of its
    component; background pixels map to -1.
    """
    grid = np.asarray(grid, dtype=bool)
    parent = np.arange(grid.size)
    a, b = _adjacent_pairs(grid, connectivity)

    def compress(p: np.ndarray) -> np.ndarray:
        while True:
            jumped = p[p]
            if np.array_equal(jumped, p):
                return p
            p = jumped

    if a.size:
        while True:
            parent = compress(parent)
            ra, rb = parent[a], parent[b]
            hi = np.maximum(ra, rb)
            lo = np.minimum(ra, rb)
            live = hi != lo
            if not live.any():
                break
            np.minimum.at(parent, hi[live], lo[live])
        parent = compress(parent)
    return np.where(grid.ravel(), parent, -1).reshape(grid.shape)


def py_uf_partition(grid, connectivity: int) -> np.ndarray:
    """Literal scalar union-find; used to vet the vectorized oracle."""
    grid = np.asarray(grid, dtype=bool)
    h, w = grid.shape
    parent = list(range(h * w))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x: int, y: int) -> None:
        rx, ry = find(x), find(y)
        if rx == ry:
            return
        if rx < ry:
            parent[ry] = rx
        else:
            parent[rx] = ry

    if connectivity == 8:
        steps = [(0, 1), (1, 0), (1, 1), (1, -1)]
    else:
        steps = [(0, 1), (1, 0)]
    for y in range(h):
        for x in range(w):
            if not grid[y, x]:
                continue
            for dy, dx in steps:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and grid[ny, nx]:
                    union(y * w + x, ny * w + nx)
    out = np.full((h, w), -1, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            if grid[y, x]:
                out[y, x] = find(y * w + x)
    return out


def same_partition(labels: np.ndarray, roots: np.ndarray) -> bool:
    """True iff a labeling and a root map induce the same pixel partition."""
    fg_labels = labels > 0
    fg_roots = roots >= 0
    if not np.array_equal(fg_labels, fg_roots):
        return False
    pairs = set(zip(labels[fg_labels].tolist(), roots[fg_roots].tolist()))
    label_side = {p[0] for p in pairs}
    root_side = {p[1] for p in pairs}
    return len(pairs) == len(label_side) == len(root_side)


def oracle_largest_component(mask: np.ndarray) -> np.ndarray:
    """Exhaustive component enumeration; largest wins, earliest-pixel tie-break."""
    roots = uf_partition(np.asarray(mask) == 1, 8)
    fg = roots >= 0
    if not fg.any():
        return np.zeros(roots.shape, dtype=np.uint8)
    values, counts = np.unique(roots[fg], return_counts=True)
    best = values[np.lexsort((values, -counts))][0]
    return (roots == best).astype(np.uint8)


def oracle_fill_holes(mask: np.ndarray) -> np.ndarray:
    """Border reachability on the background via the union-find partition."""
    mask = np.asarray(mask)
    background = mask == 0
    roots = uf_partition(background, 4)
    h, w = mask.shape
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    border_roots = np.unique(roots[border & background])
    reachable = background & np.isin(roots, border_roots)
    return np.where(background & ~reachable, np.uint8(1), mask.astype(np.uint8))


def bfs_fill_holes(mask: np.ndarray) -> np.ndarray:
    """Literal breadth-first border reachability on the complement."""
    mask = np.asarray(mask)
    h, w = mask.shape
    background = mask == 0
    seen = np.zeros((h, w), dtype=bool)
    queue: deque[tuple[int, int]] = deque()
    for y in range(h):
        for x in range(w):
            if (y in (0, h - 1) or x in (0, w - 1)) and background[y, x]:
                seen[y, x] = True
                queue.append((y, x))
    while queue:
        y, x = queue.popleft()
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and background[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                queue.append((ny, nx))
    return np.where(background & ~seen, np.uint8(1), mask.astype(np.uint8))


# ---------------------------------------------------------------------------
# batch-hard loss

def _euclid(u, v) -> float:
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))


def naive_batch_hard(features, labels, margin: float) -> tuple[float, list[tuple[int, int]]]:
    """Per-anchor hardest-pair scan with plain Python loops."""
    f = [list(map(float, row)) for row in np.atleast_2d(features)]
    labels = [int(l) for l in labels]
    n = len(labels)
    total = 0.0
    hardest: list[tuple[int, int]] = []
    for a in range(n):
        pos_d, pos_i = -math.inf, -1
        neg_d, neg_i = math.inf, -1
        for j in range(n):
            d = _euclid(f[a], f[j])
            if j != a and labels[j] == labels[a] and d > pos_d:
                pos_d, pos_i = d, j
            if labels[j] != labels[a] and d < neg_d:
                neg_d, neg_i = d, j
        total += max(pos_d - neg_d + margin, 0.0)
        hardest.append((pos_i, neg_i))
    return total, hardest


def triple_enumeration_loss(features, labels, margin: float) -> float:
    """Loss via full enumeration of all valid (anchor, positive, negative) triples."""
    f = [list(map(float, row)) for row in np.atleast_2d(features)]
    labels = [int(l) for l in labels]
    n = len(labels)
    triples = [
        (a, p, q)
        for a in range(n)
        for p in range(n)
        if p != a and labels[p] == labels[a]
        for q in range(n)
        if labels[q] != labels[a]
    ]
    pos_best: dict[int, float] = {}
    neg_best: dict[int, float] = {}
    for a, p, q in triples:
        pos_best[a] = max(pos_best.get(a, -math.inf), _euclid(f[a], f[p]))
        neg_best[a] = min(neg_best.get(a, math.inf), _euclid(f[a], f[q]))
    return sum(max(pos_best[a] - neg_best[a] + margin, 0.0) for a in pos_best)


def fd_gradient(
    model: EmbeddingModel,
    batch: Batch,
    margin: float,
    step: float = 1e-5,
    reduction: str = "sum",
) -> np.ndarray:
    """Central finite differences of batch_hard_loss(embed(...)) per weight."""
    base = model.weights
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            plus = base.copy()
            plus[i, j] += step
            minus = base.copy()
            minus[i, j] -= step
            loss_plus, _ = batch_hard_loss(
                embed(EmbeddingModel(plus, model.normalize_output), batch.inputs),
                batch.labels,
                margin,
                reduction,
            )
            loss_minus, _ = batch_hard_loss(
                embed(EmbeddingModel(minus, model.normalize_output), batch.inputs),
                batch.labels,
                margin,
                reduction,
            )
            grad[i, j] = (loss_plus - loss_minus) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------------
# retrieval metrics

def naive_ap(relevance) -> float:
    total = sum(1 for r in relevance if r)
    hits = 0
    acc = 0.0
    for position, flag in enumerate(relevance, start=1):
        if flag:
            hits += 1
            acc += hits / position
    return acc / total


def naive_evaluate(
    query_vectors,
    query_identities,
    query_cameras,
    gallery_vectors,
    gallery_identities,
    gallery_cameras,
    exclude_same_camera: bool = True,
    ranks=(1, 5, 10),
):
    """(mAP, cmc, scored, skipped) straight from the definitions."""
    q = [list(map(float, row)) for row in np.atleast_2d(query_vectors)]
    g = [list(map(float, row)) for row in np.atleast_2d(gallery_vectors)]
    q_ids = [int(v) for v in query_identities]
    q_cams = [int(v) for v in query_cameras]
    g_ids = [int(v) for v in gallery_identities]
    g_cams = [int(v) for v in gallery_cameras]

    aps: list[float] = []
    firsts: list[int] = []
    skipped = 0
    for i in range(len(q_ids)):
        candidates = [
            j
            for j in range(len(g_ids))
            if not (exclude_same_camera and g_ids[j] == q_ids[i] and g_cams[j] == q_cams[i])
        ]
        ordered = sorted(candidates, key=lambda j: (_euclid(q[i], g[j]), j))
        relevance = [g_ids[j] == q_ids[i] for j in ordered]
        if not any(relevance):
            skipped += 1
            continue
        aps.append(naive_ap(relevance))
        firsts.append(relevance.index(True) + 1)
    mean_ap = sum(aps) / len(aps)
    cmc = {r: sum(1 for f in firsts if f <= r) / len(firsts) for r in ranks}
    return mean_ap, cmc, len(aps), skipped
