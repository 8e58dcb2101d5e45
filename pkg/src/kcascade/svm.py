"""SVM layer on a precomputed Gram matrix.

The dual

    max_a  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij
    s.t.   0 <= a_i <= C,  sum_i a_i y_i = 0

is solved by SMO with second-order working-set selection (Fan, Chen and
Lin). The Gram matrix may be indefinite, so a pair with non-positive
curvature is moved to the end of its feasible segment.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_TOL = 1e-3
DEFAULT_C = 1.0
DEFAULT_MAX_PASSES = 200
_TAU = 1e-12


@dataclass
class SvmModel:
    """Dual coefficients and bias.

    ``labels`` are the +-1 targets the model was trained on; training samples
    themselves live with whoever owns the Gram matrix.
    """

    alphas: np.ndarray
    bias: float
    labels: np.ndarray
    C: float
    converged: bool = True
    degenerate: bool = False
    iterations: int = 0

    @property
    def coef(self):
        """``alpha_i * y_i``, the weight of training sample ``i`` in a score."""
        return self.alphas * self.labels

    def support(self):
        return nonzero_support(self)

    def dual_objective(self, gram):
        return dual_objective(self.alphas, self.labels, gram)


def dual_objective(alphas, labels, gram):
    c = alphas * labels
    return float(alphas.sum() - 0.5 * c @ gram @ c)


def _check_problem(gram, labels, C):
    gram = np.asarray(gram, dtype=np.float64)
    labels = np.asarray(labels)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise InvalidInputError(f"gram must be square, got {gram.shape}")
    if labels.shape != (gram.shape[0],):
        raise InvalidInputError("labels length differs from gram size")
    if not np.all(np.isin(labels, (-1, 1))):
        raise InvalidInputError("labels must be -1 or +1")
    if not np.all(np.isfinite(gram)):
        raise InvalidInputError("gram contains NaN or Inf")
    if np.max(np.abs(gram - gram.T), initial=0.0) > 1e-9:
        raise InvalidInputError("gram is not symmetric")
    if not C > 0:
        raise InvalidInputError("C must be positive")
    return gram, labels.astype(np.float64)


def solve_dual(gram, labels, C=DEFAULT_C, tol=DEFAULT_TOL, max_passes=DEFAULT_MAX_PASSES,
               alpha0=None, history=None):
    """Solve the SVM dual by SMO.

    Parameters
    ----------
    gram : (n, n) array
        Symmetric kernel matrix.
    labels : (n,) array of +-1
    C : float
        Box bound on every dual coefficient.
    tol : float
        Stop when the maximal KKT violation ``m(a) - M(a)`` drops below this.
    max_passes : int
        Iteration budget in units of ``n`` pair updates.
    alpha0 : array, optional
        Feasible warm start (box and equality constraint). Used by the
        alternating training loop, where consecutive Gram matrices are close.
    history : list, optional
        If given, the dual objective after every pair update is appended.

    Returns
    -------
    SvmModel
        ``converged`` is False when the budget ran out first.
    """
    K, y = _check_problem(gram, labels, C)
    n = len(y)
    n_pos = int(np.sum(y > 0))
    if n_pos in (0, n):
        warnings.warn("single-class labels: returning the constant model", RuntimeWarning,
                      stacklevel=2)
        return SvmModel(np.zeros(n), float(y[0]), y, float(C), converged=True, degenerate=True)

    if alpha0 is None:
        a = np.zeros(n)
    else:
        a = np.clip(np.array(alpha0, dtype=np.float64), 0.0, C)
        if abs(a @ y) > 1e-9:
            a = np.zeros(n)
    # gradient of the minimisation form 1/2 a'Qa - e'a, with Q = yy' * K
    G = y * (K @ (a * y)) - 1.0
    diag = np.diag(K).copy()
    obj = -(0.5 * (a * y) @ K @ (a * y) - a.sum())
    if history is not None:
        history.append(obj)

    budget = max(1, int(max_passes)) * n
    converged = False
    it = 0
    while it < budget:
        minus_yg = -y * G
        up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
        low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
        if not up.any() or not low.any():
            converged = True
            break
        up_idx = np.flatnonzero(up)
        i = up_idx[np.argmax(minus_yg[up_idx])]
        m_val = minus_yg[i]
        low_idx = np.flatnonzero(low)
        M_val = np.min(minus_yg[low_idx])
        if m_val - M_val < tol:
            converged = True
            break
        # second-order choice of j among violators
        cand = low_idx[minus_yg[low_idx] < m_val]
        b = m_val - minus_yg[cand]
        curv = diag[i] + diag[cand] - 2.0 * K[i, cand]
        curv = np.where(curv > 0, curv, _TAU)
        j = cand[np.argmin(-(b * b) / curv)]

        # move a_i += y_i * t, a_j -= y_j * t, with t >= 0
        slope = y[i] * G[i] - y[j] * G[j]
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        lim_i = C - a[i] if y[i] > 0 else a[i]
        lim_j = a[j] if y[j] > 0 else C - a[j]
        t_max = min(lim_i, lim_j)
        if eta > 0:
            t = min(-slope / eta, t_max)
        else:
            t = t_max
        gain = -(slope * t + 0.5 * eta * t * t)
        if not gain > 0:
            break

        old_i, old_j = a[i], a[j]
        a[i] = old_i + y[i] * t
        a[j] = old_j - y[j] * t
        if t == lim_i:
            a[i] = C if y[i] > 0 else 0.0
        if t == lim_j:
            a[j] = 0.0 if y[j] > 0 else C
        a[i] = min(max(a[i], 0.0), C)
        a[j] = min(max(a[j], 0.0), C)
        d_i = a[i] - old_i
        d_j = a[j] - old_j
        G += y * (K[:, i] * (y[i] * d_i) + K[:, j] * (y[j] * d_j))
        obj += gain
        if history is not None:
            history.append(obj)
        it += 1

    bias = _bias(a, y, G, C)
    return SvmModel(a, bias, y, float(C), converged=converged, iterations=it)


def _bias(a, y, G, C):
    # y_i - sum_j a_j y_j K_ij == -y_i G_i
    r = -y * G
    free = (a > 0) & (a < C)
    if free.any():
        return float(np.mean(r[free]))
    # bounds from the KKT conditions of bounded variables
    lo_mask = ((y > 0) & (a == 0)) | ((y < 0) & (a == C))
    hi_mask = ((y > 0) & (a == C)) | ((y < 0) & (a == 0))
    lo = np.max(r[lo_mask]) if lo_mask.any() else -np.inf
    hi = np.min(r[hi_mask]) if hi_mask.any() else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    return float(lo if np.isfinite(lo) else hi)


def decision(model, kernel_row):
    """Score ``sum_i a_i y_i k_i + b`` for one kernel row or a ``(m, n)`` block."""
    k = np.asarray(kernel_row, dtype=np.float64)
    if k.shape[-1] != len(model.alphas):
        raise InvalidInputError(
            f"kernel row length {k.shape[-1]} differs from {len(model.alphas)} training samples")
    return k @ model.coef + model.bias


def predict(scores):
    """Sign of the scores with ties at 0 mapped to -1."""
    return np.where(np.asarray(scores) > 0, 1, -1)


def nonzero_support(model):
    return [int(i) for i in np.flatnonzero(model.alphas > 0)]
