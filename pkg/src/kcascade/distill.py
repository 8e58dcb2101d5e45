"""Alternating training of a kernel network and its SVM.

The network weights minimise a class-weighted logistic surrogate of the 0-1
loss between the SVM scores ``g(x_i)`` and reference labels::

    J = b_minus * sum_{ref_i <= 0} s(gamma g_i) + b_plus * sum_{ref_i > 0} s(-gamma g_i)

with ``s`` the logistic function. Reference labels are either true labels
(training the expensive f-network) or the signs of a trained f-classifier's
scores (distilling a cheaper g-network). Each epoch refits the SVM on the
current Gram matrix, then takes one SGD sweep over mini-batches of sample
pairs with the SVM held fixed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import kernel_net, svm
from .base_kernels import base_kernel_matrix
from .errors import InvalidInputError, TrainingDivergedError
from .metrics import detection_metrics, eer

F_EPOCHS = 10000
G_EPOCHS = 5000
# step halvings allowed per epoch when an update has to be undone
_MAX_RETRIES = 30
# objective growth factor within one epoch treated as a blow-up
_BLOWUP = 10.0

_log = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    """Hyper-parameters of one training run.

    ``beta_plus``/``beta_minus`` left as None are derived from the reference
    labels: ``betas_for_f`` when training on true labels, ``betas_for_g``
    when distilling from scores.
    """

    beta_plus: float | None = None
    beta_minus: float | None = None
    gamma: float = 10.0
    max_epochs: int = F_EPOCHS
    num_batches: int = 10
    initial_step: float = 10.0
    step_decay: float = 0.99
    svm_C: float = svm.DEFAULT_C
    svm_tol: float = svm.DEFAULT_TOL
    svm_max_passes: int = svm.DEFAULT_MAX_PASSES
    seed: int = 0
    conv_window: int = 20
    conv_rtol: float = 1e-6

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be > 0")
        if not 0 < self.step_decay < 1:
            raise InvalidInputError("step_decay must lie in (0, 1)")
        if self.max_epochs < 0 or self.num_batches < 1:
            raise InvalidInputError("max_epochs must be >= 0 and num_batches >= 1")
        if not self.initial_step > 0 or not self.svm_C > 0:
            raise InvalidInputError("initial_step and svm_C must be > 0")
        for b in (self.beta_plus, self.beta_minus):
            if b is not None and b < 0:
                raise InvalidInputError("betas must be nonnegative")


@dataclass
class TrainingState:
    network: kernel_net.KernelNetwork
    svm: svm.SvmModel
    step: float
    objective_history: list
    samples: np.ndarray
    labels: np.ndarray
    train_scores: np.ndarray
    epochs: int = 0
    converged: bool = False
    log: list = field(default_factory=list)


def pseudo_labels(f_scores):
    s = np.asarray(f_scores, dtype=np.float64)
    return np.where(s > 0, 1, -1)


def _class_counts(labels):
    labels = np.asarray(labels)
    return int(np.sum(labels > 0)), int(np.sum(labels <= 0))


def betas_for_f(true_labels):
    n_pos, n_neg = _class_counts(true_labels)
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("both classes are needed to weight the loss")
    return 1.0 / n_pos, 1.0 / n_neg


def betas_for_g(f_scores):
    n_pos, n_neg = _class_counts(pseudo_labels(f_scores))
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("f must score at least one sample on each side of 0")
    return 0.99 / n_pos, 0.01 / n_neg


def loss(g_scores, labels, beta_plus, beta_minus, gamma):
    """Weighted logistic loss of scores ``g`` against +-1 reference labels."""
    g = np.asarray(g_scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    if g.shape != pos.shape:
        raise InvalidInputError("scores and labels differ in length")
    z = gamma * g
    # expit never overflows: terms saturate to 0/1 for large |z|
    return float(beta_minus * expit(z[~pos]).sum() + beta_plus * expit(-z[pos]).sum())


def loss_gradient_wrt_scores(g_scores, labels, beta_plus, beta_minus, gamma):
    g = np.asarray(g_scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    z = gamma * g
    slope = gamma * expit(z) * expit(-z)
    return np.where(pos, -beta_plus * slope, beta_minus * slope)


def loss_gradient_wrt_gram(g_scores, labels, model, beta_plus, beta_minus, gamma):
    """``dJ/dK_ij`` treating ``K_ij = K_ji`` as one variable per unordered pair.

    Off-diagonal entries are ``a_i c_j + a_j c_i`` and diagonal entries
    ``a_i c_i``, where ``a = dJ/dg`` and ``c = alpha * y`` of ``model``.
    """
    a = loss_gradient_wrt_scores(g_scores, labels, beta_plus, beta_minus, gamma)
    c = model.coef
    if a.shape != c.shape:
        raise InvalidInputError("scores and SVM model differ in length")
    D = np.outer(a, c)
    D = D + D.T
    D[np.diag_indices_from(D)] *= 0.5
    return D


def _pair_gradient(a, c, rows, cols):
    d = a[rows] * c[cols] + a[cols] * c[rows]
    return np.where(rows == cols, 0.5 * d, d)


def adapt_step(step, history, new_objective, decay=0.99):
    """Next step size after observing ``new_objective``.

    The step shrinks by ``decay`` when ``|J_t - J_{t-1}|`` grew compared to
    the previous change and grows by ``1 / decay`` otherwise (ties included).
    Until two changes have been seen the step is left alone.
    """
    if not history:
        raise InvalidInputError("history must hold at least one objective")
    if len(history) < 2:
        return step
    prev = abs(history[-1] - history[-2])
    cur = abs(new_objective - history[-1])
    return step * decay if cur > prev else step / decay


def _fit_svm(gram, labels, config, alpha0=None):
    return svm.solve_dual(gram, labels, C=config.svm_C, tol=config.svm_tol,
                          max_passes=config.svm_max_passes, alpha0=alpha0)


def _split_eer(pred, ref):
    dr, fa = detection_metrics(pred, ref)
    return eer(dr, fa)


def train(samples, targets, arch, bank, config, mode="labels", validation=None,
          network=None, on_epoch=None):
    """Alternating optimisation of network weights and SVM.

    Parameters
    ----------
    samples : (n, d) array
    targets : (n,) array
        True +-1 labels (``mode="labels"``) or real f-scores (``mode="scores"``).
    arch : sequence of int
        Layer sizes, first equal to ``bank.num_chunks``, last equal to 1.
    bank : KernelBank
    config : DistillConfig
    validation : (features, labels), optional
        Scored every epoch for the training log.
    network : KernelNetwork, optional
        Starting weights; flat initialisation by default.
    on_epoch : callable, optional
        Receives each log record (dict) as it is produced.

    Raises
    ------
    TrainingDivergedError
        If the objective or the weights become non-finite.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.dim:
        raise InvalidInputError(f"samples must be (n, {bank.dim})")
    if mode == "labels":
        labels = np.asarray(targets).astype(np.int64)
        if not np.all(np.isin(labels, (-1, 1))):
            raise InvalidInputError("labels must be -1/+1")
        default_betas = betas_for_f
    elif mode == "scores":
        labels = pseudo_labels(targets)
        default_betas = betas_for_g
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    if labels.shape != (len(X),):
        raise InvalidInputError("targets length differs from samples")
    n_pos, n_neg = _class_counts(labels)
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("both (pseudo-)classes must be present")
    bp, bm = config.beta_plus, config.beta_minus
    if bp is None or bm is None:
        dbp, dbm = default_betas(targets)
        bp = dbp if bp is None else bp
        bm = dbm if bm is None else bm

    net = kernel_net.init_flat(arch) if network is None else network.copy()
    if net.num_inputs != bank.num_chunks:
        raise InvalidInputError("architecture input width differs from the bank size")

    n = len(X)
    pair_base = kernel_net.pair_base_vectors(bank, X)
    rows, cols = kernel_net.upper_pairs(n)
    diag = np.flatnonzero(rows == cols)
    val_base = None
    if validation is not None:
        Xv, yv = validation
        val_base = _ValidationScorer(bank, X, np.asarray(Xv, dtype=np.float64), np.asarray(yv))

    rng = np.random.default_rng(config.seed)
    fy = labels.astype(np.float64)

    def refit(alpha0, epoch):
        gram = kernel_net.gram_from_pairs(net, pair_base, n)
        if not np.all(np.isfinite(gram)):
            raise TrainingDivergedError(f"kernel values overflowed at epoch {epoch}", state)
        model = _fit_svm(gram, fy, config, alpha0)
        scores = gram @ model.coef + model.bias
        return gram, model, scores

    state = None
    gram, model, scores = refit(None, 0)
    J = loss(scores, labels, bp, bm, config.gamma)
    step = config.initial_step
    history = [J]
    state = TrainingState(net, model, step, history, X, labels, scores)
    state.log.append(_record(0, J, step, labels, scores, net, model, val_base))
    if on_epoch is not None:
        on_epoch(state.log[-1])
    if not math.isfinite(J):
        raise TrainingDivergedError("objective is not finite at initialisation", state)

    for epoch in range(1, config.max_epochs + 1):
        a = loss_gradient_wrt_scores(scores, labels, bp, bm, config.gamma)
        c = model.coef
        active = (c[rows] != 0) | (c[cols] != 0)
        batch_of = np.empty(n, dtype=np.int64)
        for b, idx in enumerate(np.array_split(rng.permutation(n), config.num_batches)):
            batch_of[idx] = b
        pair_batch = batch_of[rows]
        saved = [w.copy() for w in net.weights]
        for _ in range(_MAX_RETRIES + 1):
            for b in range(config.num_batches):
                sel = np.flatnonzero(active & (pair_batch == b))
                if len(sel) == 0:
                    continue
                upstream = _pair_gradient(a, c, rows[sel], cols[sel])
                _, acts = kernel_net.forward_columns(net, pair_base[:, sel],
                                                      keep_activations=True)
                grads = kernel_net.backward_batch(net, acts, upstream)
                for w, gw in zip(net.weights, grads):
                    w -= step * gw
            if not all(np.all(np.isfinite(w)) for w in net.weights):
                state.epochs = epoch
                raise TrainingDivergedError(f"weights became non-finite at epoch {epoch}", state)
            # An all-zero diagonal means the output unit is rectified away on every
            # pair, and a jump of the objective by _BLOWUP means the scores were
            # thrown into the flat tails of the logistic. No gradient comes back
            # from either, so the update is undone and retried with half the step.
            if np.any(kernel_net.forward_columns(net, pair_base[:, diag]) > 0):
                gram, new_model, new_scores = refit(model.alphas, epoch)
                J = loss(new_scores, labels, bp, bm, config.gamma)
                if not J > _BLOWUP * max(history[-1], 1e-12):
                    model, scores = new_model, new_scores
                    break
                what = "objective jumped"
            else:
                what = "kernel vanished"
            for w, w0 in zip(net.weights, saved):
                w[...] = w0
            step *= 0.5
            _log.warning("epoch %d: %s, step halved to %g", epoch, what, step)
        else:
            _log.warning("epoch %d: no acceptable update, weights left unchanged", epoch)
            gram, model, scores = refit(model.alphas, epoch)
            J = loss(scores, labels, bp, bm, config.gamma)
        state.svm, state.train_scores, state.epochs = model, scores, epoch
        if not math.isfinite(J):
            raise TrainingDivergedError(f"objective is not finite at epoch {epoch}", state)
        step = adapt_step(step, history, J, config.step_decay)
        history.append(J)
        state.step = step
        state.log.append(_record(epoch, J, step, labels, scores, net, model, val_base))
        if on_epoch is not None:
            on_epoch(state.log[-1])
        w = config.conv_window
        if len(history) > w:
            ref = history[-1 - w]
            if abs(J - ref) <= config.conv_rtol * max(abs(ref), 1e-300):
                state.converged = True
                break
    return state


class _ValidationScorer:
    """Scores validation samples against the current support vectors."""

    def __init__(self, bank, train_X, val_X, val_labels):
        self.base = base_kernel_matrix(bank, val_X, train_X) if len(val_X) else None
        self.labels = val_labels

    def eer(self, net, model):
        if self.base is None:
            return math.nan
        sv = np.flatnonzero(model.alphas > 0)
        if len(sv) == 0:
            scores = np.full(len(self.labels), model.bias)
        else:
            flat = self.base[:, sv].reshape(-1, self.base.shape[2])
            k = kernel_net.forward_batch(net, flat).reshape(len(self.labels), len(sv))
            scores = k @ model.coef[sv] + model.bias
        return _split_eer(svm.predict(scores), self.labels)


def _record(epoch, J, step, labels, scores, net, model, val_scorer):
    train_eer = _split_eer(svm.predict(scores), labels)
    val_eer = val_scorer.eer(net, model) if val_scorer is not None else math.nan
    return {"epoch": epoch, "objective": J, "step": step,
            "train_eer": train_eer, "val_eer": val_eer,
            "support": int(np.sum(model.alphas > 0))}


def with_betas(config, beta_plus, beta_minus):
    return replace(config, beta_plus=beta_plus, beta_minus=beta_minus)
