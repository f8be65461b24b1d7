"""Binary-mask morphology and compositing.

Masks are 2-D uint8 arrays with 1 = vehicle and 0 = background. The
post-processing chain cleans up raw segmentation masks in three steps:
fill enclosed holes, keep the largest connected component, then gate on
the vehicle-area ratio. Vehicle components use 8-connectivity, the
background flood fill uses 4-connectivity (the standard complementary
pair, so diagonal contacts stay topologically consistent).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

KEPT = "kept"
DISCARDED = "discarded"
REASON_HOLE_ONLY = "hole_only"
REASON_BELOW_AREA = "below_area_threshold"

DEFAULT_AREA_THRESHOLD = 0.60

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def validate_mask(mask) -> np.ndarray:
    """Return `mask` as a 2-D uint8 array of {0, 1}, or raise ValueError."""
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be 0 (background) or 1 (vehicle)")
    return arr.astype(np.uint8, copy=False)


def validate_image(image) -> np.ndarray:
    """Return `image` as an (h, w, 3) uint8 array, or raise ValueError."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (h, w, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) and arr.min() >= 0 and arr.max() <= 255:
            arr = arr.astype(np.uint8)
        else:
            raise ValueError("image values must be 8-bit (0..255)")
    return arr


def fill_holes(mask) -> np.ndarray:
    """Fill background regions that cannot reach the image border.

    Border-seeded flood fill on the background: any background pixel not
    4-connected to the border through background becomes vehicle. Vehicle
    pixels are never changed.
    """
    mask = validate_mask(mask)
    background = mask == 0
    reachable = np.zeros_like(background)
    frontier = background.copy()
    frontier[1:-1, 1:-1] = False
    while frontier.any():
        reachable |= frontier
        grown = np.zeros_like(frontier)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & background & ~reachable
    return np.where(background & ~reachable, np.uint8(1), mask)


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected-component labels (0 = background) plus per-label pixel counts.

    Labels are consecutive 1..n in raster-scan first-encounter order.
    """

    labels: np.ndarray
    component_sizes: dict[int, int]


def label_components(mask, connectivity: int = 8) -> ComponentLabeling:
    """Label vehicle components under 4- or 8-connectivity.

    Labels are renumbered so that component k is the k-th component
    encountered in raster-scan order, which makes the labeling (and any
    tie-breaking built on it) deterministic.
    """
    mask = validate_mask(mask)
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURE_4 if connectivity == 4 else _STRUCTURE_8
    raw, count = ndimage.label(mask, structure=structure)
    if count == 0:
        return ComponentLabeling(np.zeros(mask.shape, dtype=np.int32), {})
    flat = raw.ravel()
    positions = np.flatnonzero(flat)
    raw_ids, first_seen = np.unique(flat[positions], return_index=True)
    order = np.argsort(positions[first_seen], kind="stable")
    lut = np.zeros(count + 1, dtype=np.int32)
    lut[raw_ids[order]] = np.arange(1, count + 1, dtype=np.int32)
    labels = lut[raw]
    counts = np.bincount(labels.ravel(), minlength=count + 1)
    sizes = {label: int(counts[label]) for label in range(1, count + 1)}
    return ComponentLabeling(labels, sizes)


def keep_largest_component(mask) -> np.ndarray:
    """Keep only the largest 8-connected vehicle component.

    Size ties go to the component encountered first in raster-scan order.
    An empty mask stays empty.
    """
    labeling = label_components(mask, connectivity=8)
    if not labeling.component_sizes:
        return np.zeros(labeling.labels.shape, dtype=np.uint8)
    best = min(labeling.component_sizes, key=lambda label: (-labeling.component_sizes[label], label))
    return (labeling.labels == best).astype(np.uint8)


def area_ratio(mask) -> float:
    """Fraction of pixels that are vehicle."""
    mask = validate_mask(mask)
    return float(int(mask.sum())) / mask.size


def refine_with_edges(mask, image, radius: int) -> np.ndarray:
    """Grow the mask boundary outward toward nearby strong image edges.

    The mask is dilated up to `radius` steps, but a background pixel is
    only annexed while stepping strictly closer (Chebyshev distance) to a
    strong gradient-magnitude edge, so growth stops at the nearest edge
    and never starts in flat regions. Vehicle pixels are never removed;
    radius 0 is the identity.

    Parameters
    ----------
    mask : 2-D {0,1} array
    image : (h, w, 3) uint8 array, same spatial shape as `mask`
    radius : maximum outward growth in pixels
    """
    mask = validate_mask(mask)
    image = validate_image(image)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image shape {image.shape[:2]} does not match mask shape {mask.shape}")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return mask.copy()

    gray = image.astype(np.float64).mean(axis=2)
    gy, gx = np.gradient(gray)
    magnitude = np.hypot(gx, gy)
    peak = magnitude.max()
    if peak == 0.0:
        return mask.copy()
    strong = magnitude >= 0.5 * peak
    # Chebyshev distance to the nearest strong edge.
    distance = ndimage.distance_transform_cdt(~strong, metric="chessboard").astype(np.float64)

    current = mask.astype(bool)
    for _ in range(radius):
        occupied = np.where(current, distance, np.inf)
        nearest = ndimage.minimum_filter(occupied, size=3, mode="constant", cval=np.inf)
        ring = ~current & np.isfinite(nearest) & (distance < nearest)
        if not ring.any():
            break
        current |= ring
    return current.astype(np.uint8)


def apply_mask(image, mask, fill=(0, 0, 0)) -> np.ndarray:
    """Copy vehicle pixels from `image`; paint background with `fill`."""
    image = validate_image(image)
    mask = validate_mask(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image shape {image.shape[:2]} does not match mask shape {mask.shape}")
    fill_arr = np.asarray(fill, dtype=np.int64)
    if fill_arr.shape != (3,) or fill_arr.min() < 0 or fill_arr.max() > 255:
        raise ValueError("fill must be three 8-bit channel values")
    return np.where(mask[:, :, None] == 1, image, fill_arr.astype(np.uint8))


@dataclass(frozen=True)
class PostprocessOutcome:
    """Result of the post-processing chain on one mask.

    `mask` is present iff `status` is kept; `ratio` is the final
    vehicle-area fraction after hole filling and component pruning.
    """

    status: str
    reason: str | None
    ratio: float
    mask: np.ndarray | None

    @property
    def kept(self) -> bool:
        return self.status == KEPT


def postprocess(mask, threshold: float = DEFAULT_AREA_THRESHOLD) -> PostprocessOutcome:
    """Run the full chain: fill holes, keep largest component, gate on area.

    A final mask whose vehicle area covers at least `threshold` of the
    picture is kept (the gate discards strictly-smaller ratios). An empty
    final mask is discarded as hole-only.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    filled = fill_holes(mask)
    largest = keep_largest_component(filled)
    if not largest.any():
        return PostprocessOutcome(DISCARDED, REASON_HOLE_ONLY, 0.0, None)
    ratio = area_ratio(largest)
    if ratio < threshold:
        return PostprocessOutcome(DISCARDED, REASON_BELOW_AREA, ratio, None)
    return PostprocessOutcome(KEPT, None, ratio, largest)


def load_mask(path) -> np.ndarray:
    """Load a grayscale mask file; any nonzero pixel counts as vehicle."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr != 0).astype(np.uint8)


def save_mask(path, mask) -> None:
    """Write a mask as an 8-bit grayscale image with values 0/255."""
    mask = validate_mask(mask)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask * np.uint8(255), mode="L").save(path)


def load_image(path) -> np.ndarray:
    """Load an image file as an (h, w, 3) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_image(path, image) -> None:
    image = validate_image(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="RGB").save(path)
