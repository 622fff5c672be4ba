"""Feature-space baselines and variants: zero-shot, linear probe, Linear
Adapter, TaskRes residual, text-projector variant, and the logit-bias
decomposition. All share the model module's forward primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError, UnsupportedInputError
from .model import (FeatureBank, ProjectionHead, TextClassifier, _check_compat,
                    class_logits, predict)
from .numerics import DEGENERATE_NORM, l2_normalize_rows, log_softmax
from .objective import _grad_through_normalization, ce_loss, frob_reg
from .trainer import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, TrainConfig, resolve_lambda

# method tags used in the PROJ-family container
METHOD_PROLIP = 0
METHOD_LINEAR_PROBE = 1
METHOD_LINEAR_ADAPTER = 2
METHOD_TASKRES = 3
METHOD_TEXTPROJ = 4


def zero_shot_predict(head0: ProjectionHead, cls: TextClassifier,
                      bank: FeatureBank) -> np.ndarray:
    """Zero-shot argmax predictions; the head must still sit at its anchor."""
    if not head0.at_anchor():
        raise InvalidInputError("zero_shot_predict requires W == W0")
    return predict(class_logits(head0, cls, bank, view=0))


def _projected_views0(head0: ProjectionHead, bank: FeatureBank) -> np.ndarray:
    """Unit-norm embeddings of view 0, the shared evaluation convention."""
    u = bank.X[:, 0, :] @ head0.W
    if head0.b is not None:
        u = u + head0.b
    return l2_normalize_rows(u)


def _projected_flat(head0: ProjectionHead, bank: FeatureBank) -> np.ndarray:
    """Unit-norm embeddings of all flattened view-samples."""
    n, v, d = bank.X.shape
    u = bank.X.reshape(n * v, d) @ head0.W
    if head0.b is not None:
        u = u + head0.b
    return l2_normalize_rows(u)


def _flat_labels(bank: FeatureBank, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (bank.n_samples,):
        raise ShapeError("one label per sample required")
    return np.repeat(labels, bank.n_views)


def _adam_loop(param: np.ndarray, grad_fn, cfg: TrainConfig) -> np.ndarray:
    """Shared full-batch optimizer loop for the baseline trainers."""
    w = param.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for epoch in range(cfg.epochs):
        g = grad_fn(w)
        if cfg.optimizer == "plain_gd":
            w = w - cfg.lr * g
        else:
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
            m_hat = m / (1.0 - ADAM_BETA1 ** (epoch + 1))
            v_hat = v / (1.0 - ADAM_BETA2 ** (epoch + 1))
            w = w - cfg.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return w


# --------------------------------------------------------------------------
# Linear probe (closed-set: output dimensionality fixed at K)

@dataclass
class LinearProbe:
    C: np.ndarray                # (K, D)
    temp: float
    init_from_text: bool = True


def probe_logits(probe: LinearProbe, head0: ProjectionHead,
                 bank: FeatureBank, view: int = 0) -> np.ndarray:
    u = bank.X[:, view, :] @ head0.W
    if head0.b is not None:
        u = u + head0.b
    return probe.temp * (l2_normalize_rows(u) @ probe.C.T)


def linear_probe_init(cls: TextClassifier, temp: float,
                      init_from_text: bool = True) -> LinearProbe:
    c0 = cls.T.copy() if init_from_text else np.zeros_like(cls.T)
    return LinearProbe(C=c0, temp=temp, init_from_text=init_from_text)


def linear_probe_train(bank: FeatureBank, labels, cls: TextClassifier,
                       head0: ProjectionHead, cfg: TrainConfig,
                       init_from_text: bool = True) -> LinearProbe:
    """Full-batch CE on temp * <v, c_k>; no anchor regularizer."""
    _check_compat(head0, cls, bank)
    vmat = _projected_flat(head0, bank)
    yf = _flat_labels(bank, labels)
    n_flat = vmat.shape[0]
    probe = linear_probe_init(cls, head0.temp, init_from_text)

    def grad_fn(c):
        logits = probe.temp * (vmat @ c.T)
        p = np.exp(log_softmax(logits))
        p[np.arange(n_flat), yf] -= 1.0
        return (probe.temp / n_flat) * (p.T @ vmat)

    probe.C = _adam_loop(probe.C, grad_fn, cfg)
    return probe


# --------------------------------------------------------------------------
# Linear Adapter (identity-anchored DxD map in the shared space)

@dataclass
class LinearAdapter:
    A: np.ndarray                # (D, D); anchor is exactly the identity
    temp: float

    @property
    def A0(self) -> np.ndarray:
        return np.eye(self.A.shape[0])


def adapter_logits(adapter: LinearAdapter, head0: ProjectionHead,
                   cls: TextClassifier, bank: FeatureBank,
                   view: int = 0) -> np.ndarray:
    """A@v is re-normalized before cosine scoring, so identity init matches
    the zero-shot path exactly (v is already unit-norm)."""
    u = bank.X[:, view, :] @ head0.W
    if head0.b is not None:
        u = u + head0.b
    v = l2_normalize_rows(u)
    return adapter.temp * (l2_normalize_rows(v @ adapter.A.T) @ cls.T.T)


def linear_adapter_train(bank: FeatureBank, labels, cls: TextClassifier,
                         head0: ProjectionHead, cfg: TrainConfig) -> LinearAdapter:
    """CE + lambda * ||A - I||_F^2 with A initialized at the identity."""
    _check_compat(head0, cls, bank)
    vmat = _projected_flat(head0, bank)
    yf = _flat_labels(bank, labels)
    n_flat = vmat.shape[0]
    lam = resolve_lambda(cfg.lam)
    eye = np.eye(head0.d_out)
    temp = head0.temp

    def grad_fn(a):
        u = vmat @ a.T
        norms = np.sqrt(np.sum(u * u, axis=1))
        degenerate = norms < DEGENERATE_NORM
        safe = np.where(degenerate, 1.0, norms)
        w = u / safe[:, None]
        w[degenerate] = u[degenerate]
        logits = temp * (w @ cls.T.T)
        p = np.exp(log_softmax(logits))
        p[np.arange(n_flat), yf] -= 1.0
        g_w = (temp / n_flat) * (p @ cls.T)
        g_u = _grad_through_normalization(g_w, w, norms, degenerate)
        return g_u.T @ vmat + 2.0 * lam * (a - eye)

    a_final = _adam_loop(eye, grad_fn, cfg)
    return LinearAdapter(A=a_final, temp=temp)


# --------------------------------------------------------------------------
# TaskRes (additive per-class residual on the frozen text rows)

@dataclass
class TaskResHead:
    r: np.ndarray                # (K, D), zero-initialized
    alpha: float = 0.1
    temp: float = 100.0


def taskres_logits(tr: TaskResHead, head0: ProjectionHead, cls: TextClassifier,
                   bank: FeatureBank, view: int = 0) -> np.ndarray:
    u = bank.X[:, view, :] @ head0.W
    if head0.b is not None:
        u = u + head0.b
    v = l2_normalize_rows(u)
    return tr.temp * (v @ (cls.T + tr.alpha * tr.r).T)


def taskres_train(bank: FeatureBank, labels, cls: TextClassifier,
                  head0: ProjectionHead, cfg: TrainConfig,
                  alpha: float = 0.1) -> TaskResHead:
    """Trains the residual r by CE on temp * <v, t_k + alpha*r_k>; t frozen."""
    _check_compat(head0, cls, bank)
    vmat = _projected_flat(head0, bank)
    yf = _flat_labels(bank, labels)
    n_flat = vmat.shape[0]
    temp = head0.temp

    def grad_fn(r):
        logits = temp * (vmat @ (cls.T + alpha * r).T)
        p = np.exp(log_softmax(logits))
        p[np.arange(n_flat), yf] -= 1.0
        return (alpha * temp / n_flat) * (p.T @ vmat)

    r_final = _adam_loop(np.zeros_like(cls.T), grad_fn, cfg)
    return TaskResHead(r=r_final, alpha=alpha, temp=temp)


# --------------------------------------------------------------------------
# Text-projector variant (fine-tune the textual projection instead)

@dataclass
class TextProjHead:
    Wt: np.ndarray               # (D_ot, D)
    Wt0: np.ndarray              # frozen snapshot
    temp: float = 100.0

    def text_rows(self, text_pre: np.ndarray) -> np.ndarray:
        return l2_normalize_rows(np.asarray(text_pre, np.float64) @ self.Wt)


def textproj_logits(tp: TextProjHead, text_pre: np.ndarray,
                    head0: ProjectionHead, bank: FeatureBank,
                    view: int = 0) -> np.ndarray:
    u = bank.X[:, view, :] @ head0.W
    if head0.b is not None:
        u = u + head0.b
    v = l2_normalize_rows(u)
    return tp.temp * (v @ tp.text_rows(text_pre).T)


def text_proj_train(text_pre: np.ndarray | None, bank: FeatureBank, labels,
                    head0: ProjectionHead, wt0: np.ndarray,
                    cfg: TrainConfig) -> TextProjHead:
    """CE + lambda * ||Wt - Wt0||_F^2; the visual head stays fully frozen."""
    if text_pre is None:
        raise UnsupportedInputError(
            "text pre-projection features are required for the text-projector variant")
    text_pre = np.asarray(text_pre, dtype=np.float64)
    wt0 = np.asarray(wt0, dtype=np.float64)
    if text_pre.shape[1] != wt0.shape[0]:
        raise ShapeError("text features do not match the text projector shape")
    vmat = _projected_flat(head0, bank)
    yf = _flat_labels(bank, labels)
    n_flat = vmat.shape[0]
    lam = resolve_lambda(cfg.lam)
    temp = head0.temp

    def grad_fn(wt):
        u = text_pre @ wt                     # (K, D)
        norms = np.sqrt(np.sum(u * u, axis=1))
        degenerate = norms < DEGENERATE_NORM
        safe = np.where(degenerate, 1.0, norms)
        t = u / safe[:, None]
        t[degenerate] = u[degenerate]
        logits = temp * (vmat @ t.T)
        p = np.exp(log_softmax(logits))
        p[np.arange(n_flat), yf] -= 1.0
        g_t = (temp / n_flat) * (p.T @ vmat)  # (K, D) gradient w.r.t. rows t_k
        g_u = _grad_through_normalization(g_t, t, norms, degenerate)
        return text_pre.T @ g_u + 2.0 * lam * (wt - wt0)

    wt_final = _adam_loop(wt0, grad_fn, cfg)
    return TextProjHead(Wt=wt_final, Wt0=wt0.copy(), temp=temp)


def text_proj_loss(tp: TextProjHead, text_pre: np.ndarray,
                   head0: ProjectionHead, bank: FeatureBank, labels,
                   lam: float) -> float:
    vmat = _projected_flat(head0, bank)
    yf = _flat_labels(bank, labels)
    logits = tp.temp * (vmat @ tp.text_rows(text_pre).T)
    return ce_loss(logits, yf) + lam * frob_reg(tp.Wt, tp.Wt0)


# --------------------------------------------------------------------------
# Logit-bias decomposition

def bias_decompose(head: ProjectionHead) -> np.ndarray:
    """B = W - W0; on raw (un-normalized) scores x^T W t = x^T W0 t + x^T B t."""
    return head.W - head.W0
