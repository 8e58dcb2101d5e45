"""Layer-1 input kernels: per-chunk Gaussian similarities.

A feature vector of dimension ``d`` is cut into ``num_chunks`` disjoint,
contiguous chunks of ``d // num_chunks`` coefficients. Component ``q`` of
the base kernel vector of a pair ``(x, x')`` is::

    exp(-||x_q - x'_q||^2 / scale_q)

where ``scale_q`` is the mean squared distance (restricted to chunk ``q``)
between samples and their nearest neighbours.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_K_NEIGHBORS = 10

# rows per block when materialising (rows, cols, d) difference tensors
_BLOCK_ELEMS = 1 << 22


class DegenerateChunkWarning(UserWarning):
    pass


@dataclass
class KernelBank:
    num_chunks: int
    chunk_size: int
    scales: np.ndarray

    def __post_init__(self):
        if self.num_chunks < 1 or self.chunk_size < 1:
            raise InvalidInputError("num_chunks and chunk_size must be positive")
        self.scales = np.asarray(self.scales, dtype=np.float64)
        if self.scales.shape != (self.num_chunks,):
            raise InvalidInputError(
                f"expected {self.num_chunks} scales, got shape {self.scales.shape}")
        if not np.all(np.isfinite(self.scales)) or np.any(self.scales <= 0):
            raise InvalidInputError("every scale must be finite and > 0")

    @property
    def dim(self):
        return self.num_chunks * self.chunk_size

    @classmethod
    def from_data(cls, features, num_chunks, k_neighbors=DEFAULT_K_NEIGHBORS):
        """Build a bank whose scales are estimated on ``features``."""
        features = _as_matrix(features)
        chunk_size = chunk_layout(features.shape[1], num_chunks)
        scales = estimate_scales(features, num_chunks, k_neighbors)
        return cls(num_chunks, chunk_size, scales)


def chunk_layout(dim, num_chunks):
    """Return the chunk size, validating that ``num_chunks`` divides ``dim``."""
    if num_chunks < 1:
        raise InvalidInputError("num_chunks must be positive")
    if dim % num_chunks:
        raise InvalidInputError(f"{num_chunks} chunks do not divide dimension {dim}")
    return dim // num_chunks


def _as_matrix(features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2-d array of feature vectors, got {x.ndim}-d")
    if x.shape[0] == 0:
        raise InvalidInputError("empty dataset")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("feature vectors contain NaN or Inf")
    return x


def chunk_sq_distances(a, b, num_chunks):
    """Squared distances per chunk between every row of ``a`` and ``b``.

    Returns an array of shape ``(len(a), len(b), num_chunks)``. Differences
    are formed explicitly (no ``|a|^2 + |b|^2 - 2ab`` expansion), so the
    result is exactly symmetric and exactly zero for identical chunks.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a.shape[1]
    c = chunk_layout(d, num_chunks)
    bc = b.reshape(len(b), num_chunks, c)
    out = np.empty((len(a), len(b), num_chunks))
    rows = max(1, _BLOCK_ELEMS // max(1, len(b) * d))
    for start in range(0, len(a), rows):
        ac = a[start:start + rows].reshape(-1, 1, num_chunks, c)
        diff = ac - bc[None]
        out[start:start + rows] = (diff * diff).sum(axis=3)
    return out


def estimate_scales(features, num_chunks, k_neighbors=DEFAULT_K_NEIGHBORS):
    """Per-chunk Gaussian scales from nearest-neighbour distances.

    Neighbours are found once in the full feature space; for each chunk the
    squared distance to those neighbours is averaged per sample and then over
    samples. A chunk whose scale comes out as zero falls back to 1.0 with a
    :class:`DegenerateChunkWarning`.
    """
    x = _as_matrix(features)
    n = len(x)
    if k_neighbors < 1:
        raise InvalidInputError("k_neighbors must be positive")
    if n < k_neighbors + 1:
        raise InvalidInputError(
            f"need at least {k_neighbors + 1} samples for {k_neighbors} neighbours, got {n}")

    per_sample = np.empty((n, num_chunks))
    rows = max(1, _BLOCK_ELEMS // max(1, n * x.shape[1]))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        chunk_d = chunk_sq_distances(x[start:stop], x, num_chunks)
        full = chunk_d.sum(axis=2)
        full[np.arange(stop - start), np.arange(start, stop)] = np.inf
        nbrs = np.argsort(full, axis=1, kind="stable")[:, :k_neighbors]
        picked = np.take_along_axis(chunk_d, nbrs[:, :, None], axis=1)
        per_sample[start:stop] = picked.mean(axis=1)
    scales = per_sample.mean(axis=0)

    bad = ~(scales > 0)
    if np.any(bad):
        warnings.warn(
            f"degenerate chunk(s) {np.flatnonzero(bad).tolist()}: zero neighbour "
            "distance, scale set to 1.0", DegenerateChunkWarning, stacklevel=2)
        scales[bad] = 1.0
    return scales


def base_kernel_vector(bank, x, x_prime):
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != (bank.dim,) or x_prime.shape != (bank.dim,):
        raise InvalidInputError(
            f"expected vectors of dimension {bank.dim}, got {x.shape} and {x_prime.shape}")
    return base_kernel_matrix(bank, x[None], x_prime[None])[0, 0]


def base_kernel_matrix(bank, a, b):
    """Base kernel vectors for every pair of rows: shape ``(len(a), len(b), n1)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != bank.dim or b.shape[1] != bank.dim:
        raise InvalidInputError(f"feature dimension must be {bank.dim}")
    return np.exp(-chunk_sq_distances(a, b, bank.num_chunks) / bank.scales)
