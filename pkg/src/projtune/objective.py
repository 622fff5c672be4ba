"""Loss, analytic gradient, test-time entropy objective, and a finite-
difference gradient oracle.

The gradient composes, per flattened view-sample x with u = W^T x + b,
v = u/||u||:  softmax-CE gradient at the logits, the temperature scale, the
Jacobian of L2 normalization (I - v v^T)/||u||, and the outer product with x;
the anchor term contributes 2*lambda*(W - W0). The bias is frozen, so no bias
gradient exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError
from .model import FeatureBank, ProjectionHead, TextClassifier, _check_compat
from .numerics import DEGENERATE_NORM, entropy, log_softmax

__all__ = [
    "LossBreakdown", "ce_loss", "frob_reg", "total_loss", "grad_total_loss",
    "finite_diff_grad", "entropy_objective", "grad_entropy_objective",
]


@dataclass
class LossBreakdown:
    ce: float
    reg: float
    lam: float

    @property
    def total(self) -> float:
        return self.ce + self.lam * self.reg


def ce_loss(logits: np.ndarray, labels) -> float:
    """Mean cross-entropy of rows of ``logits`` against integer labels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ShapeError("logits must be a non-empty (N, K) matrix")
    if labels.shape != (logits.shape[0],):
        raise ShapeError("one label per logits row required")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise InvalidInputError("label out of range")
    lsm = log_softmax(logits)
    return float(-np.mean(lsm[np.arange(len(labels)), labels]))


def frob_reg(W: np.ndarray, W0: np.ndarray) -> float:
    """Squared Frobenius norm of W - W0 (sum reduction)."""
    W = np.asarray(W, dtype=np.float64)
    W0 = np.asarray(W0, dtype=np.float64)
    if W.shape != W0.shape:
        raise ShapeError("frob_reg: shape mismatch")
    d = W - W0
    return float(np.sum(d * d))


def _flatten_views(bank: FeatureBank, labels) -> tuple[np.ndarray, np.ndarray]:
    """All views of each sample become independent samples with its label."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (bank.n_samples,):
        raise ShapeError("one label per bank sample required")
    n, v, d = bank.X.shape
    xf = bank.X.reshape(n * v, d)
    yf = np.repeat(labels, v)
    return xf, yf


def _forward_flat(head: ProjectionHead, cls: TextClassifier, xf: np.ndarray):
    """Shared forward pass on flattened samples; returns intermediates."""
    u = xf @ head.W
    if head.b is not None:
        u = u + head.b
    norms = np.sqrt(np.sum(u * u, axis=1))
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    v = u / safe[:, None]
    v[degenerate] = u[degenerate]
    logits = head.temp * (v @ cls.T.T)
    return u, v, norms, degenerate, logits


def total_loss(head: ProjectionHead, cls: TextClassifier, bank: FeatureBank,
               labels, lam: float) -> LossBreakdown:
    """CE over all flattened view-samples plus lam * squared-Frobenius anchor."""
    _check_compat(head, cls, bank)
    if lam < 0:
        raise InvalidInputError("lambda must be >= 0")
    xf, yf = _flatten_views(bank, labels)
    _, _, _, _, logits = _forward_flat(head, cls, xf)
    return LossBreakdown(ce=ce_loss(logits, yf), reg=frob_reg(head.W, head.W0),
                         lam=lam)


def _grad_through_normalization(g_v: np.ndarray, v: np.ndarray,
                                norms: np.ndarray,
                                degenerate: np.ndarray) -> np.ndarray:
    """Apply the L2-normalization Jacobian (I - v v^T)/||u|| row-wise.

    Degenerate rows get zero gradient (fail-soft, mirrors the forward pass).
    """
    safe = np.where(degenerate, 1.0, norms)
    g_u = (g_v - np.sum(g_v * v, axis=1, keepdims=True) * v) / safe[:, None]
    g_u[degenerate] = 0.0
    return g_u


def grad_total_loss(head: ProjectionHead, cls: TextClassifier,
                    bank: FeatureBank, labels, lam: float) -> np.ndarray:
    """Analytic d(total_loss)/dW, shape (D_o, D)."""
    _check_compat(head, cls, bank)
    if lam < 0:
        raise InvalidInputError("lambda must be >= 0")
    if bank.n_samples < 1:
        raise InvalidInputError("need at least one sample")
    xf, yf = _flatten_views(bank, labels)
    if np.any(yf < 0) or np.any(yf >= cls.n_classes):
        raise InvalidInputError("label out of range")
    m = xf.shape[0]
    _, v, norms, degenerate, logits = _forward_flat(head, cls, xf)
    p = np.exp(log_softmax(logits))
    p[np.arange(m), yf] -= 1.0
    g_v = (head.temp / m) * (p @ cls.T)
    g_u = _grad_through_normalization(g_v, v, norms, degenerate)
    return xf.T @ g_u + 2.0 * lam * (head.W - head.W0)


def finite_diff_grad(head: ProjectionHead, cls: TextClassifier,
                     bank: FeatureBank, labels, lam: float,
                     step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle over every entry of W."""
    if step <= 0:
        raise InvalidInputError("step must be positive")
    probe = head.copy()
    grad = np.zeros_like(probe.W)
    it = np.nditer(probe.W, flags=["multi_index"])
    while not it.finished:
        ij = it.multi_index
        orig = probe.W[ij]
        probe.W[ij] = orig + step
        f_plus = total_loss(probe, cls, bank, labels, lam).total
        probe.W[ij] = orig - step
        f_minus = total_loss(probe, cls, bank, labels, lam).total
        probe.W[ij] = orig
        grad[ij] = (f_plus - f_minus) / (2.0 * step)
        it.iternext()
    return grad


def _view_probs(head: ProjectionHead, cls: TextClassifier,
                views: np.ndarray) -> np.ndarray:
    """Softmax class probabilities per view row, shape (V, K)."""
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[1] != head.d_in:
        raise ShapeError("views must be (V, D_o) matching the head")
    _, _, _, _, logits = _forward_flat(head, cls, views)
    return np.exp(log_softmax(logits))


def entropy_objective(head: ProjectionHead, cls: TextClassifier,
                      views: np.ndarray, selection) -> float:
    """Entropy of the mean softmax distribution over the selected views."""
    selection = np.asarray(selection, dtype=np.int64)
    if selection.size == 0:
        raise InvalidInputError("selection must be non-empty")
    probs = _view_probs(head, cls, np.asarray(views)[selection])
    return entropy(np.mean(probs, axis=0))


def grad_entropy_objective(head: ProjectionHead, cls: TextClassifier,
                           views: np.ndarray, selection) -> np.ndarray:
    """Analytic gradient of ``entropy_objective`` with respect to W."""
    selection = np.asarray(selection, dtype=np.int64)
    if selection.size == 0:
        raise InvalidInputError("selection must be non-empty")
    xs = np.asarray(views, dtype=np.float64)[selection]
    m = xs.shape[0]
    _, v, norms, degenerate, logits = _forward_flat(head, cls, xs)
    p = np.exp(log_softmax(logits))
    p_bar = np.mean(p, axis=0)
    # dH/dp_bar, then back through the per-view softmax Jacobians.
    a = -(np.log(p_bar) + 1.0)
    g_logits = (p * (a[None, :] - np.sum(p * a[None, :], axis=1, keepdims=True))) / m
    g_v = head.temp * (g_logits @ cls.T)
    g_u = _grad_through_normalization(g_v, v, norms, degenerate)
    return xs.T @ g_u
