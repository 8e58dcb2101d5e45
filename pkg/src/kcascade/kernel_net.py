"""Deep kernel networks.

A network maps the base kernel vector of a pair of samples to one kernel
value. Unit ``p`` of layer ``l`` computes ``relu(sum_q w[q, p] * k_q)`` over
the units ``k_q`` of layer ``l - 1``; layer 1 is the base kernel vector
itself and is not rectified.

All routines have a single-pair form (``forward``/``backward``) and batched
forms. Batches are held feature-major internally, ``(n_l, num_pairs)``, which
keeps the per-unit loops on contiguous vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .base_kernels import base_kernel_matrix
from .errors import InvalidInputError

# pairs per forward block; bounds peak memory and keeps the per-unit vectors in cache
PAIR_BLOCK = 8192


def validate_arch(layer_sizes):
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2:
        raise InvalidInputError("an architecture needs at least 2 layers")
    if any(n < 1 for n in sizes):
        raise InvalidInputError(f"layer sizes must be positive: {sizes}")
    if sizes[-1] != 1:
        raise InvalidInputError(f"the output layer must have one unit: {sizes}")
    return sizes


def macs(layer_sizes):
    """Multiply-accumulate count of one forward pass."""
    return sum(a * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class KernelNetwork:
    layer_sizes: tuple
    weights: list

    def __post_init__(self):
        self.layer_sizes = validate_arch(self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise InvalidInputError("need one weight matrix per pair of adjacent layers")
        ws = []
        for l, w in enumerate(self.weights):
            w = np.array(w, dtype=np.float64)
            expected = (self.layer_sizes[l], self.layer_sizes[l + 1])
            if w.shape != expected:
                raise InvalidInputError(f"weight {l} has shape {w.shape}, expected {expected}")
            if not np.all(np.isfinite(w)):
                raise InvalidInputError(f"weight {l} is not finite")
            ws.append(w)
        self.weights = ws

    @property
    def num_inputs(self):
        return self.layer_sizes[0]

    @property
    def macs(self):
        return macs(self.layer_sizes)

    def copy(self):
        return KernelNetwork(self.layer_sizes, [w.copy() for w in self.weights])

    def to_arrays(self, prefix=""):
        return {f"{prefix}w{l}": w for l, w in enumerate(self.weights)}

    @classmethod
    def from_arrays(cls, layer_sizes, arrays, prefix=""):
        return cls(layer_sizes, [arrays[f"{prefix}w{l}"] for l in range(len(layer_sizes) - 1)])

    def save(self, path):
        container.save(path, "network", {"layer_sizes": list(self.layer_sizes)},
                       self.to_arrays())

    @classmethod
    def load(cls, path):
        _, meta, arrays = container.load(path, expect_kind="network")
        return cls.from_arrays(meta["layer_sizes"], arrays)


@dataclass
class ForwardTrace:
    pre_activations: list
    activations: list = field(default_factory=list)
    output: float = 0.0


def init_flat(layer_sizes):
    """Uniform weights ``1 / n_l`` so every unit averages the layer below."""
    sizes = validate_arch(layer_sizes)
    return KernelNetwork(sizes, [np.full((a, b), 1.0 / a) for a, b in zip(sizes[:-1], sizes[1:])])


def _layer(a, w):
    """``w.T @ a`` for feature-major activations ``a`` of shape ``(n, P)``.

    Each output is accumulated over the inputs in index order with separate
    multiply and add, so the value for one pair never depends on which other
    pairs share the batch (a BLAS product gives no such guarantee).
    """
    n, m = w.shape
    z = np.empty((m, a.shape[1]))
    tmp = np.empty(a.shape[1])
    for p in range(m):
        zp = z[p]
        np.multiply(a[0], w[0, p], out=zp)
        for q in range(1, n):
            np.multiply(a[q], w[q, p], out=tmp)
            zp += tmp
    return z


def forward_columns(net, base, keep_activations=False):
    """Outputs for feature-major base vectors ``base`` of shape ``(n1, P)``.

    With ``keep_activations`` the per-layer activations (input layer first,
    each ``(n_l, P)``) are returned too; they are all :func:`backward_batch`
    needs.
    """
    a = np.asarray(base, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != net.num_inputs:
        raise InvalidInputError(f"expected base vectors of length {net.num_inputs}")
    acts = [a] if keep_activations else None
    for w in net.weights:
        a = _layer(a, w)
        np.maximum(a, 0.0, out=a)
        if keep_activations:
            acts.append(a)
    out = a[0]
    return (out, acts) if keep_activations else out


def forward_batch(net, base, keep_activations=False):
    """Network outputs for a ``(P, n1)`` block of base vectors."""
    a = np.asarray(base, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.num_inputs:
        raise InvalidInputError(f"expected base vectors of length {net.num_inputs}")
    return forward_columns(net, np.ascontiguousarray(a.T), keep_activations)


def backward_batch(net, acts, upstream):
    """Weight gradients of ``sum_p upstream[p] * kappa_p``.

    ``acts`` comes from :func:`forward_batch` or :func:`forward_columns`; the
    ReLU subgradient at 0 is 0.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if len(acts) != len(net.weights) + 1 or upstream.shape != (acts[0].shape[1],):
        raise InvalidInputError("activations/upstream do not match the network")
    grads = [None] * len(net.weights)
    delta = upstream[None, :] * (acts[-1] > 0)
    for l in range(len(net.weights) - 1, -1, -1):
        grads[l] = acts[l] @ delta.T
        if l:
            delta = (net.weights[l] @ delta) * (acts[l] > 0)
    return grads


def forward(net, base):
    base = np.asarray(base, dtype=np.float64)
    if base.shape != (net.num_inputs,):
        raise InvalidInputError(
            f"base vector has shape {base.shape}, expected ({net.num_inputs},)")
    pre, acts = [], [base]
    a = base
    for w in net.weights:
        z = _layer(a[:, None], w)[:, 0]
        a = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(a)
    return ForwardTrace(pre, acts, float(a[0]))


def backward(net, trace, dJ_dkappa):
    """Gradients of ``J`` w.r.t. every weight given ``dJ/dkappa`` at the output."""
    if len(trace.activations) != len(net.weights) + 1:
        raise InvalidInputError("trace was not produced by this network")
    for l, a in enumerate(trace.activations):
        if a.shape != (net.layer_sizes[l],):
            raise InvalidInputError(f"trace layer {l} has shape {a.shape}")
    grads = [None] * len(net.weights)
    delta = float(dJ_dkappa) * (trace.pre_activations[-1] > 0)
    for l in range(len(net.weights) - 1, -1, -1):
        grads[l] = np.outer(trace.activations[l], delta)
        if l:
            delta = (net.weights[l] @ delta) * (trace.pre_activations[l - 1] > 0)
    return grads


def upper_pairs(n):
    """Row/column indices of the upper triangle (diagonal included)."""
    return np.triu_indices(n)


def pair_base_vectors(bank, samples):
    """Feature-major base vectors ``(n1, P)`` of all pairs ``i <= j``, row-major order."""
    full = base_kernel_matrix(bank, samples, samples)
    rows, cols = upper_pairs(len(samples))
    return np.ascontiguousarray(full[rows, cols].T)


def gram_from_pairs(net, pair_base, n):
    """Assemble the symmetric ``n x n`` Gram matrix from :func:`pair_base_vectors`."""
    P = pair_base.shape[1]
    vals = np.empty(P)
    for start in range(0, P, PAIR_BLOCK):
        vals[start:start + PAIR_BLOCK] = forward_columns(net, pair_base[:, start:start + PAIR_BLOCK])
    rows, cols = upper_pairs(n)
    gram = np.empty((n, n))
    gram[rows, cols] = vals
    gram[cols, rows] = vals
    return gram


def gram_matrix(net, bank, samples):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) == 0:
        raise InvalidInputError("gram_matrix needs a non-empty 2-d sample array")
    if net.num_inputs != bank.num_chunks:
        raise InvalidInputError("network input width differs from the bank size")
    return gram_from_pairs(net, pair_base_vectors(bank, samples), len(samples))


def cross_kernel(net, bank, a, b):
    """Kernel values between every row of ``a`` and every row of ``b``."""
    base = base_kernel_matrix(bank, a, b)
    flat = base.reshape(-1, bank.num_chunks)
    vals = np.empty(len(flat))
    for start in range(0, len(flat), PAIR_BLOCK):
        vals[start:start + PAIR_BLOCK] = forward_batch(net, flat[start:start + PAIR_BLOCK])
    return vals.reshape(len(a), len(b))
