"""Datasets: synthetic generation, the pair-feature file format, splits and maps.

Pair-feature file (little-endian)::

    4s   magic b"KCPF"
    u16  version (1)
    u32  n        number of samples (> 0)
    u32  d        feature dimension (> 0)
    u8   has_labels
    u32  grid_rows, u32 grid_cols   (0, 0 when there is no grid)
    f32  n * d feature values, row-major
    i1   n labels (-1/+1), only when has_labels
"""
from __future__ import annotations

import math
import re
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError, VersionMismatchError

PAIRS_MAGIC = b"KCPF"
PAIRS_VERSION = 1
_HEADER = struct.Struct("<4sHIIBII")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    grid: tuple | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise InvalidInputError("features must be a 2-d array")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.features),):
                raise InvalidInputError("labels length differs from sample count")
        if self.grid is not None:
            self.grid = (int(self.grid[0]), int(self.grid[1]))
            if self.grid[0] * self.grid[1] != len(self.features):
                raise InvalidInputError(
                    f"grid {self.grid} does not cover {len(self.features)} samples")

    def __len__(self):
        return len(self.features)

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels)


@dataclass(frozen=True)
class SplitSpec:
    labeled_count: int
    seed: int = 0
    train_fraction: float = 2.0 / 3.0


def grid_shape(n):
    """Most square ``(rows, cols)`` with ``rows * cols == n`` and ``rows <= cols``."""
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def generate_synthetic(n, d, positive_fraction, separation, seed, blobs=4):
    """Two unit-variance Gaussian classes whose means are ``separation`` apart.

    The positive mean is offset along ``(1, ..., 1) / sqrt(d)`` so every
    chunk of the feature vector carries part of the signal. Exactly
    ``max(1, floor(n * positive_fraction))`` samples are positive. Samples
    are laid out on a grid, positives grouped in a few compact blobs so a
    detection map has spatial structure.
    """
    if n < 10 or d < 1:
        raise InvalidInputError("need n >= 10 and d >= 1")
    if not 0 < positive_fraction < 0.5:
        raise InvalidInputError("positive_fraction must lie in (0, 0.5)")
    if not separation > 0:
        raise InvalidInputError("separation must be > 0")
    rng = np.random.default_rng(seed)
    n_pos = max(1, int(math.floor(n * positive_fraction)))

    rows, cols = grid_shape(n)
    centers = rng.uniform((0, 0), (rows, cols), size=(blobs, 2))
    rr, cc = np.divmod(np.arange(n), cols)
    cells = np.stack([rr, cc], axis=1).astype(np.float64)
    dist = np.min(np.linalg.norm(cells[:, None, :] - centers[None], axis=2), axis=1)
    positive_cells = np.argsort(dist, kind="stable")[:n_pos]
    labels = -np.ones(n, dtype=np.int64)
    labels[positive_cells] = 1

    features = rng.standard_normal((n, d))
    direction = np.full(d, 1.0 / math.sqrt(d))
    features[labels > 0] += separation * direction
    return Dataset(features, labels, (rows, cols))


def split(dataset, spec):
    """Draw ``labeled_count`` samples, 2/3 for training and 1/3 for validation.

    Returns index arrays ``(train, validation, test)``; the test set is every
    sample not drawn. Indices are sorted within each part.
    """
    n = len(dataset)
    l = spec.labeled_count
    if l > n:
        raise InvalidInputError(f"labeled_count {l} exceeds dataset size {n}")
    if l < 3:
        raise InvalidInputError("labeled_count must be at least 3")
    if dataset.labels is None:
        raise InvalidInputError("the labeled subset needs labels")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(l * spec.train_fraction))
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:l])
    test = np.sort(perm[l:])
    if len(test) == 0:
        warnings.warn("labeled subset covers the whole dataset: empty test set", stacklevel=2)
    return train, val, test


def dumps_pairs(dataset):
    n, d = dataset.features.shape
    rows, cols = dataset.grid if dataset.grid is not None else (0, 0)
    has_labels = dataset.labels is not None
    out = [_HEADER.pack(PAIRS_MAGIC, PAIRS_VERSION, n, d, int(has_labels), rows, cols),
           np.ascontiguousarray(dataset.features, dtype="<f4").tobytes()]
    if has_labels:
        out.append(np.asarray(dataset.labels, dtype="<i1").tobytes())
    return b"".join(out)


def loads_pairs(data):
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", len(data))
    magic, version, n, d, has_labels, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != PAIRS_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != PAIRS_VERSION:
        raise VersionMismatchError(f"pair file version {version}, expected {PAIRS_VERSION}", 4)
    if n == 0:
        raise FormatError("sample count is zero", 6)
    if d == 0:
        raise FormatError("feature dimension is zero", 10)
    if has_labels not in (0, 1):
        raise FormatError(f"has_labels flag must be 0 or 1, got {has_labels}", 14)
    grid = None
    if rows or cols:
        if rows * cols != n:
            raise FormatError(f"grid {rows}x{cols} does not match n={n}", 15)
        grid = (rows, cols)
    pos = _HEADER.size
    need = n * d * 4
    if len(data) < pos + need:
        raise FormatError(f"feature payload truncated: need {need} bytes", len(data))
    features = np.frombuffer(data, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
    pos += need
    labels = None
    if has_labels:
        if len(data) < pos + n:
            raise FormatError(f"label payload truncated: need {n} bytes", len(data))
        labels = np.frombuffer(data, dtype="<i1", count=n, offset=pos).astype(np.int64)
        bad = np.flatnonzero(~np.isin(labels, (-1, 1)))
        if len(bad):
            raise FormatError(f"label {labels[bad[0]]} is not -1/+1", pos + int(bad[0]))
        pos += n
    if len(data) != pos:
        raise FormatError(f"{len(data) - pos} trailing bytes", pos)
    if not np.all(np.isfinite(features)):
        raise FormatError("features contain NaN or Inf", _HEADER.size)
    return Dataset(features.astype(np.float32), labels, grid)


def save_pairs(path, dataset):
    with open(path, "wb") as fh:
        fh.write(dumps_pairs(dataset))


def load_pairs(path):
    with open(path, "rb") as fh:
        return loads_pairs(fh.read())


def stage_levels(stages_consumed, num_stages):
    """Gray level per pattern: 255 for stage 1 down to 0 for the last stage."""
    s = np.asarray(stages_consumed, dtype=np.int64)
    if num_stages <= 1:
        return np.zeros(s.shape, dtype=np.uint8)
    return np.rint(255.0 * (num_stages - s) / (num_stages - 1)).astype(np.uint8)


def emit_stage_map(stages_consumed, num_stages, grid, pgm_path, counts_path=None):
    """Write a binary PGM of processing depth and, optionally, a TSV of raw counts.

    ``stages_consumed`` is in grid row-major order; darker pixels took more stages.
    """
    if grid is None:
        raise InvalidInputError("a grid layout is required to draw a stage map")
    rows, cols = grid
    s = np.asarray(stages_consumed, dtype=np.int64)
    if s.shape != (rows * cols,):
        raise InvalidInputError(f"{len(s)} outcomes do not fill a {rows}x{cols} grid")
    levels = stage_levels(s, num_stages).reshape(rows, cols)
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())
    if counts_path is not None:
        with open(counts_path, "w") as fh:
            for row in s.reshape(rows, cols):
                fh.write("\t".join(str(v) for v in row) + "\n")
    return levels


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise FormatError("not a binary PGM", 0)
    cols, rows, maxval = (int(v) for v in m.groups())
    pixels = np.frombuffer(data, dtype=np.uint8, offset=m.end())
    if maxval != 255 or len(pixels) != rows * cols:
        raise FormatError("unexpected PGM payload", m.end())
    return pixels.reshape(rows, cols)
