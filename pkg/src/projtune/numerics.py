"""Dense linear-algebra and probability primitives.

All compute is float64 regardless of on-disk precision, reductions run in
fixed index order, and every function is pure, so results are bitwise
reproducible on one machine.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

# Row norms below this are treated as degenerate and passed through unchanged.
DEGENERATE_NORM = 1e-12


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def l2_normalize_rows(m, return_flags: bool = False):
    """Normalize each row of ``m`` to unit L2 norm.

    Rows with norm < 1e-12 are returned unchanged (fail-soft). When
    ``return_flags`` is true also returns a boolean vector marking those
    degenerate rows.
    """
    m = _as_f64(m)
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("l2_normalize_rows: non-finite input")
    vec_in = m.ndim == 1
    rows = m.reshape(1, -1) if vec_in else m
    norms = np.sqrt(np.sum(rows * rows, axis=1))
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    out = rows / safe[:, None]
    out[degenerate] = rows[degenerate]
    if vec_in:
        out = out[0]
        degenerate = degenerate[0]
    if return_flags:
        return out, degenerate
    return out


def log_softmax(v) -> np.ndarray:
    """Numerically stable log-softmax: v - max(v) - log(sum(exp(v - max)))."""
    v = _as_f64(v)
    if v.size == 0:
        raise InvalidInputError("log_softmax: empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("log_softmax: non-finite input")
    shifted = v - np.max(v, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(v) -> np.ndarray:
    return np.exp(log_softmax(v))


def entropy(p) -> float:
    """Shannon entropy in nats with the 0*ln(0) := 0 convention."""
    p = _as_f64(p)
    if p.size == 0:
        raise InvalidInputError("entropy: empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("entropy: entries must be finite and >= 0")
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))
