"""Projection head, text classifier, feature bank, and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ShapeError
from .numerics import l2_normalize_rows

DEFAULT_TEMP = 100.0


@dataclass
class ProjectionHead:
    """Trainable projection matrix with frozen bias and pretrained anchor.

    W maps pre-projection features (dim D_o) into the shared space (dim D).
    W0 is the frozen pretrained snapshot used by the anchor regularizer; b,
    when present, is never trained.
    """

    W: np.ndarray                 # (D_o, D)
    W0: np.ndarray                # (D_o, D), frozen
    b: np.ndarray | None = None   # (D,), frozen, absent for ViT-style heads
    temp: float = DEFAULT_TEMP    # 1/tau

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.W0 = np.asarray(self.W0, dtype=np.float64)
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.shape != self.W0.shape:
            raise ShapeError("W and W0 must share shape")
        if self.W.ndim != 2:
            raise ShapeError("W must be 2-D")
        if self.b is not None and self.b.shape != (self.W.shape[1],):
            raise ShapeError("bias length must equal output dim D")
        if self.temp <= 0:
            raise InvalidInputError("temp must be positive")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.W0))):
            raise InvalidInputError("head weights must be finite")

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(
            W=self.W.copy(),
            W0=self.W0.copy(),
            b=None if self.b is None else self.b.copy(),
            temp=self.temp,
        )

    def at_anchor(self, tol: float = 0.0) -> bool:
        if tol == 0.0:
            return bool(np.array_equal(self.W, self.W0))
        return bool(np.max(np.abs(self.W - self.W0)) <= tol)


@dataclass
class TextClassifier:
    """K unit-norm class embedding rows plus class names."""

    T: np.ndarray                 # (K, D), unit-norm rows
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.T.ndim != 2 or self.T.shape[0] < 2:
            raise ShapeError("classifier needs K >= 2 rows")
        if not self.class_names:
            self.class_names = [f"class_{k}" for k in range(self.T.shape[0])]
        if len(self.class_names) != self.T.shape[0]:
            raise ShapeError("one class name per row required")
        if len(set(self.class_names)) != len(self.class_names):
            raise InvalidInputError("class names must be unique")
        norms = np.linalg.norm(self.T, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise InvalidInputError("classifier rows must be unit norm (1e-4)")

    @property
    def n_classes(self) -> int:
        return self.T.shape[0]

    @property
    def dim(self) -> int:
        return self.T.shape[1]


@dataclass
class FeatureBank:
    """N samples x V augmentation views of pre-projection features."""

    X: np.ndarray                     # (N, V, D_o)
    labels: np.ndarray | None = None  # (N,) int, optional
    split_tag: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 3:
            raise ShapeError("features must be (N, V, D_o)")
        if self.X.shape[1] < 1:
            raise ShapeError("view count must be >= 1")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInputError("features must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.X.shape[0],):
                raise ShapeError("labels must have length N")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_views(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.X.shape[2]


def project(head: ProjectionHead, x: np.ndarray) -> np.ndarray:
    """Project a pre-projection feature vector and L2-normalize the result."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (head.d_in,):
        raise ShapeError(f"expected ({head.d_in},) input, got {x.shape}")
    u = x @ head.W
    if head.b is not None:
        u = u + head.b
    return l2_normalize_rows(u)


def _check_compat(head: ProjectionHead, cls: TextClassifier, bank: FeatureBank):
    if bank.dim != head.d_in:
        raise ShapeError(f"bank dim {bank.dim} != head input dim {head.d_in}")
    if cls.dim != head.d_out:
        raise ShapeError(f"classifier dim {cls.dim} != head output dim {head.d_out}")


def class_logits(head: ProjectionHead, cls: TextClassifier, bank: FeatureBank,
                 view: int = 0) -> np.ndarray:
    """Temperature-scaled cosine similarities, shape (N, K)."""
    _check_compat(head, cls, bank)
    if not 0 <= view < bank.n_views:
        raise ShapeError(f"view {view} out of range [0, {bank.n_views})")
    u = bank.X[:, view, :] @ head.W
    if head.b is not None:
        u = u + head.b
    v = l2_normalize_rows(u)
    return head.temp * (v @ cls.T.T)


def predict(logits: np.ndarray) -> np.ndarray:
    """Per-row argmax with ties broken toward the lowest class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.size == 0:
        raise ShapeError("logits must be a non-empty (N, K) matrix")
    return np.argmax(logits, axis=1)  # np.argmax takes the first maximum
