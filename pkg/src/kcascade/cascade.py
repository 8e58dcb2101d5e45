"""Coarse-to-fine cascade of kernel-network classifiers.

Stages run cheapest first. A pattern is rejected as soon as one stage
scores it at or below that stage's threshold, and accepted only if every
stage scores it positively. The last stage is the f-classifier itself; the
others are g-networks distilled from it.

Cost accounting: scoring a pattern with a stage takes one network forward
per support vector, so ``kernel_evals`` counts those forwards and
``stage_cost`` weights them by the multiply-accumulates of one forward.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import container, distill, kernel_net, svm
from .base_kernels import KernelBank, base_kernel_matrix
from .errors import InvalidInputError, TrainingDivergedError

# patterns per evaluation block; fixed so results do not depend on --threads
EVAL_BLOCK = 256
NOMINAL_F_WIDTH = 128

# (hidden layers, width at f-width 128) of the g stages, cheapest first
_G_STAGES = ((3, 2), (3, 8), (5, 8), (5, 32), (5, 64))
_F_HIDDEN = 7


@dataclass
class StageSpec:
    arch: tuple
    config: distill.DistillConfig = field(default_factory=distill.DistillConfig)
    is_f: bool = False

    def __post_init__(self):
        self.arch = kernel_net.validate_arch(self.arch)


def scaled_width(nominal_width, f_width):
    """Stage width for an f-network of width ``f_width``.

    Widths are interpolated on a log scale between 2 (stage 1) and the f
    width, which reproduces 2/8/32/64 exactly when ``f_width`` is 128.
    """
    if f_width == NOMINAL_F_WIDTH:
        return nominal_width
    pos = math.log(nominal_width / 2) / math.log(NOMINAL_F_WIDTH / 2)
    return max(1, int(round(2 * (f_width / 2) ** pos)))


def f_arch(n1, f_width=None):
    width = n1 if f_width is None else f_width
    return (n1,) + (width,) * _F_HIDDEN + (1,)


def default_stage_specs(n1=128, f_width=None, g_config=None, f_config=None):
    """The six-stage list: five g-networks of growing size, then f.

    "k layers" counts the hidden layers plus the single-unit output layer,
    so stage 1 is ``[n1, 2, 2, 2, 1]``.
    """
    width = n1 if f_width is None else f_width
    g_config = g_config or distill.DistillConfig(max_epochs=distill.G_EPOCHS)
    f_config = f_config or distill.DistillConfig(max_epochs=distill.F_EPOCHS)
    specs = []
    for hidden, w in _G_STAGES:
        w = scaled_width(w, width)
        specs.append(StageSpec((n1,) + (w,) * hidden + (1,), g_config))
    specs.append(StageSpec(f_arch(n1, width), f_config, is_f=True))
    return specs


@dataclass
class Stage:
    """One trained stage; ``train_idx`` maps SVM rows to the sample store."""

    network: kernel_net.KernelNetwork
    model: svm.SvmModel
    train_idx: np.ndarray
    threshold: float = 0.0
    is_f: bool = False

    def __post_init__(self):
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        sv = np.flatnonzero(self.model.alphas > 0)
        self._sv = sv
        self._sv_store = self.train_idx[sv]
        self._sv_coef = self.model.coef[sv]

    @property
    def arch(self):
        return self.network.layer_sizes

    @property
    def num_support(self):
        return len(self._sv)

    def scores(self, bank, store, X):
        """Stage scores of the rows of ``X``."""
        if self.num_support == 0:
            return np.full(len(X), self.model.bias)
        base = base_kernel_matrix(bank, X, store[self._sv_store])
        k = kernel_net.forward_batch(self.network, base.reshape(-1, bank.num_chunks))
        k = k.reshape(len(X), self.num_support)
        # fixed summation order over support vectors: a pattern's score must
        # not depend on which other patterns are scored with it
        out = np.full(len(X), self.model.bias)
        for j, c in enumerate(self._sv_coef):
            out += k[:, j] * c
        return out


def stage_cost(stage):
    """Multiply-accumulates to score one pattern: ``|support| * macs(arch)``."""
    return stage.num_support * kernel_net.macs(stage.arch)


@dataclass
class Cascade:
    bank: KernelBank
    store: np.ndarray
    stages: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise InvalidInputError("a cascade needs at least one stage")
        if not self.stages[-1].is_f:
            raise InvalidInputError("the final stage must be the f-classifier")
        self.store = np.asarray(self.store, dtype=np.float64)

    @property
    def num_stages(self):
        return len(self.stages)

    def costs(self):
        return [stage_cost(s) for s in self.stages]

    def save(self, path):
        container.save(path, *to_container(self))

    @classmethod
    def load(cls, path):
        return from_container(*container.load(path, expect_kind="cascade")[1:])

    def digest(self):
        return hashlib.sha256(container.dumps(*to_container(self))).hexdigest()


@dataclass
class EvalOutcome:
    label: int
    stages_consumed: int
    kernel_evals: int
    scores: tuple
    cost: int = 0


@dataclass
class BatchOutcome:
    """Per-pattern results of evaluating many patterns at once.

    ``scores[p, t]`` is NaN for stages pattern ``p`` never reached (in
    short-circuit mode).
    """

    labels: np.ndarray
    stages_consumed: np.ndarray
    kernel_evals: np.ndarray
    cost: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.labels)

    def outcome(self, p):
        k = int(self.stages_consumed[p])
        return EvalOutcome(int(self.labels[p]), k, int(self.kernel_evals[p]),
                           tuple(float(s) for s in self.scores[p, :k]), int(self.cost[p]))


def stage_decisions(cascade, outcome):
    """+-1 decision of every stage on every pattern; needs exhaustive scores."""
    if np.isnan(outcome.scores).any():
        raise InvalidInputError("stage decisions need exhaustive evaluation")
    thresholds = np.array([s.threshold for s in cascade.stages])
    return np.where(outcome.scores > thresholds, 1, -1)


def _eval_block(cascade, X, exhaustive):
    m, T = len(X), cascade.num_stages
    scores = np.full((m, T), np.nan)
    alive = np.arange(m)
    for t, stage in enumerate(cascade.stages):
        rows = np.arange(m) if exhaustive else alive
        if len(rows) == 0:
            break
        scores[rows, t] = stage.scores(cascade.bank, cascade.store, X[rows])
        if not exhaustive:
            alive = alive[scores[alive, t] > stage.threshold]
    return scores


def evaluate_many(cascade, X, threads=1, exhaustive=False):
    """Run the cascade on every row of ``X``.

    Patterns are processed in fixed blocks of ``EVAL_BLOCK`` so the output is
    bit-identical for any ``threads``. With ``exhaustive`` every stage scores
    every pattern; labels and costs still follow the short-circuit rule.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cascade.bank.dim:
        raise InvalidInputError(f"patterns must be (m, {cascade.bank.dim})")
    blocks = [X[s:s + EVAL_BLOCK] for s in range(0, len(X), EVAL_BLOCK)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _eval_block(cascade, b, exhaustive), blocks))
    else:
        parts = [_eval_block(cascade, b, exhaustive) for b in blocks]
    T = cascade.num_stages
    scores = np.concatenate(parts) if parts else np.empty((0, T))
    thresholds = np.array([s.threshold for s in cascade.stages])
    passed = scores > thresholds
    # first failing stage (0-based), T when every stage passed
    fail = np.where(passed.all(axis=1), T, np.argmin(passed, axis=1))
    consumed = np.minimum(fail + 1, T)
    labels = np.where(fail == T, 1, -1)
    sv = np.array([s.num_support for s in cascade.stages])
    cost = np.array(cascade.costs())
    cum_sv = np.concatenate([[0], np.cumsum(sv)])
    cum_cost = np.concatenate([[0], np.cumsum(cost)])
    return BatchOutcome(labels, consumed, cum_sv[consumed], cum_cost[consumed], scores)


def evaluate(cascade, x):
    """Short-circuit evaluation of one pattern."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cascade.bank.dim,):
        raise InvalidInputError(f"pattern must have dimension {cascade.bank.dim}")
    return evaluate_many(cascade, x[None]).outcome(0)


def f_stage(f_state, train_idx=None):
    n = len(f_state.samples)
    idx = np.arange(n) if train_idx is None else train_idx
    return Stage(f_state.network.copy(), f_state.svm, idx, is_f=True)


def distill_stage(f_state, bank, spec, index=None, extra=None, f_cascade_scores=None):
    """Train one g stage against the f-classifier's scores.

    ``extra`` optionally adds unlabeled samples (with f's scores in
    ``f_cascade_scores``) to the distillation set; they are appended after
    f's training samples in the sample store.
    """
    if spec.is_f:
        raise InvalidInputError("the f stage is not distilled")
    samples, targets = f_state.samples, f_state.train_scores
    if extra is not None:
        samples = np.concatenate([samples, extra])
        targets = np.concatenate([targets, f_cascade_scores])
    try:
        state = distill.train(samples, targets, spec.arch, bank, spec.config, mode="scores")
    except TrainingDivergedError as exc:
        raise TrainingDivergedError(str(exc), exc.state, stage=index) from exc
    return Stage(state.network, state.svm, np.arange(len(samples))), state


def assemble(f_state, bank, g_stages, extra=None, meta=None):
    store = f_state.samples if extra is None else np.concatenate([f_state.samples, extra])
    return Cascade(bank, store, list(g_stages) + [f_stage(f_state)], dict(meta or {}))


def build(f_state, bank, specs, extra=None, on_stage=None):
    """Distill every non-final spec and append f unchanged."""
    if not specs or not specs[-1].is_f:
        raise InvalidInputError("the last stage spec must be the f-network")
    if tuple(specs[-1].arch) != tuple(f_state.network.layer_sizes):
        raise InvalidInputError("final spec architecture differs from the trained f-network")
    extra_scores = None
    if extra is not None:
        f_only = assemble(f_state, bank, [])
        extra_scores = f_only.stages[0].scores(bank, f_only.store, extra)
    stages = []
    for t, spec in enumerate(specs[:-1], start=1):
        stage, state = distill_stage(f_state, bank, spec, t, extra, extra_scores)
        stages.append(stage)
        if on_stage is not None:
            on_stage(t, stage, state)
    return assemble(f_state, bank, stages, extra)


def to_container(cascade):
    meta = {"num_chunks": cascade.bank.num_chunks, "chunk_size": cascade.bank.chunk_size,
            "stages": [], "extra": cascade.meta}
    arrays = {"bank_scales": cascade.bank.scales, "store": cascade.store}
    for t, st in enumerate(cascade.stages):
        meta["stages"].append({
            "layer_sizes": list(st.arch), "is_f": st.is_f, "C": st.model.C,
            "converged": st.model.converged, "degenerate": st.model.degenerate})
        arrays.update(st.network.to_arrays(prefix=f"s{t}_"))
        arrays[f"s{t}_alphas"] = st.model.alphas
        arrays[f"s{t}_labels"] = st.model.labels
        arrays[f"s{t}_bias"] = np.array([st.model.bias, st.threshold])
        arrays[f"s{t}_train_idx"] = st.train_idx
    return "cascade", meta, arrays


def from_container(meta, arrays):
    bank = KernelBank(meta["num_chunks"], meta["chunk_size"], arrays["bank_scales"])
    stages = []
    for t, sm in enumerate(meta["stages"]):
        net = kernel_net.KernelNetwork.from_arrays(sm["layer_sizes"], arrays, prefix=f"s{t}_")
        bias, threshold = arrays[f"s{t}_bias"]
        model = svm.SvmModel(arrays[f"s{t}_alphas"], float(bias), arrays[f"s{t}_labels"],
                             sm["C"], converged=sm["converged"], degenerate=sm["degenerate"])
        stages.append(Stage(net, model, arrays[f"s{t}_train_idx"], float(threshold), sm["is_f"]))
    return Cascade(bank, arrays["store"], stages, meta.get("extra", {}))


def with_threshold(stage, threshold):
    return replace(stage, threshold=threshold)
