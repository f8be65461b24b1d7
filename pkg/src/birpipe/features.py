"""Feature/input vector files.

Binary format: little-endian header of four 32-bit unsigned fields
(magic "FVEC", version, count, dimension) followed by count x dimension
32-bit floats. Vectors are promoted to float64 on load; all computation
downstream runs in 64-bit.

Text ingest alternative: one comma-separated vector per line with the
identity and camera columns first.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FVEC"
VERSION = 1

_HEADER = struct.Struct("<4sIII")


def write_feature_file(path, vectors) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"vectors must be a (count, dimension) array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("vectors must be finite")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes())


def read_feature_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: too short to hold a feature file header")
    magic, version, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * count * dim
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    vectors = payload.astype(np.float64).reshape(count, dim)
    if not np.isfinite(vectors).all():
        raise ValueError(f"{path}: vectors must be finite")
    return vectors


def write_labeled_text_features(path, identities, cameras, vectors) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    identities = np.asarray(identities, dtype=np.int64)
    cameras = np.asarray(cameras, dtype=np.int64)
    if not (len(identities) == len(cameras) == arr.shape[0]):
        raise ValueError("identities, cameras and vectors must have equal length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="ascii") as fh:
        for ident, camera, row in zip(identities, cameras, arr):
            values = ",".join(repr(float(v)) for v in row)
            fh.write(f"{ident},{camera},{values}\n")


def read_labeled_text_features(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse id-labelled text vectors to (identities, cameras, vectors)."""
    identities: list[int] = []
    cameras: list[int] = []
    rows: list[list[float]] = []
    for number, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) < 3:
            raise ValueError(f"{path}:{number}: expected identity,camera,values...")
        identities.append(int(fields[0]))
        cameras.append(int(fields[1]))
        rows.append([float(v) for v in fields[2:]])
    if not rows:
        raise ValueError(f"{path}: no vectors found")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent vector dimensions {sorted(widths)}")
    vectors = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(vectors).all():
        raise ValueError(f"{path}: vectors must be finite")
    return (
        np.asarray(identities, dtype=np.int64),
        np.asarray(cameras, dtype=np.int64),
        vectors,
    )
