"""Full-batch fine-tuning of the projection matrix, lambda schedules, and
grid sweeps for the few-shot-validation protocol."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedError, InvalidInputError
from .model import FeatureBank, ProjectionHead, TextClassifier, class_logits, predict
from .objective import LossBreakdown, grad_total_loss, total_loss

# Paper protocol grids for the few-shot-validation setting.
DEFAULT_LR_GRID = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
DEFAULT_LAMBDA_GRID = (10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-4, 0.0)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LambdaSchedule:
    """Regularizer weight policy: a constant or a decreasing function of N."""

    kind: str                 # constant | inverse_shots | inverse_shots_squared | zero
    value: float = 0.0        # for kind == constant
    shots: int = 0            # for the parametric kinds

    KINDS = ("constant", "inverse_shots", "inverse_shots_squared", "zero")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidInputError(f"unknown lambda schedule kind {self.kind!r}")
        if self.kind == "constant" and self.value < 0:
            raise InvalidInputError("constant lambda must be >= 0")


def resolve_lambda(s: LambdaSchedule) -> float:
    if s.kind == "constant":
        return float(s.value)
    if s.kind == "zero":
        return 0.0
    if s.shots < 1:
        raise InvalidInputError("parametric lambda schedules need shots >= 1")
    if s.kind == "inverse_shots":
        return 1.0 / s.shots
    return 1.0 / (s.shots * s.shots)


@dataclass
class TrainConfig:
    lr: float
    epochs: int = 300
    optimizer: str = "adaptive_moments"   # or "plain_gd"
    schedule: str = "constant_lr"         # or "cosine_decay"
    seed: int = 0
    lam: LambdaSchedule = field(default_factory=lambda: LambdaSchedule("zero"))

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidInputError("lr must be >= 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.optimizer not in ("adaptive_moments", "plain_gd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant_lr", "cosine_decay"):
            raise InvalidInputError(f"unknown lr schedule {self.schedule!r}")

    def config_hash(self) -> str:
        payload = {
            "lr": self.lr, "epochs": self.epochs, "optimizer": self.optimizer,
            "schedule": self.schedule, "seed": self.seed,
            "lambda": [self.lam.kind, self.lam.value, self.lam.shots],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainHistory:
    records: list[dict]
    final_hash: str

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r) for r in self.records) + "\n"


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.schedule == "constant_lr":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))


def train(head: ProjectionHead, cls: TextClassifier, bank: FeatureBank,
          labels, cfg: TrainConfig) -> tuple[ProjectionHead, TrainHistory]:
    """Run cfg.epochs full-batch steps on the total loss; W0 and b untouched."""
    lam = resolve_lambda(cfg.lam)
    out = head.copy()
    m = np.zeros_like(out.W)
    v = np.zeros_like(out.W)
    records = []
    last_finite = out.W.copy()
    for epoch in range(cfg.epochs):
        # overflow on the way to divergence is expected; isfinite catches it
        with np.errstate(over="ignore", invalid="ignore"):
            breakdown = total_loss(out, cls, bank, labels, lam)
        if not np.isfinite(breakdown.total):
            raise DivergedError(epoch, last_w=last_finite)
        last_finite = out.W.copy()
        grad = grad_total_loss(out, cls, bank, labels, lam)
        lr = _epoch_lr(cfg, epoch)
        if cfg.optimizer == "plain_gd":
            out.W = out.W - lr * grad
        else:
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1 ** (epoch + 1))
            v_hat = v / (1.0 - ADAM_BETA2 ** (epoch + 1))
            out.W = out.W - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        records.append({
            "epoch": epoch, "ce": breakdown.ce, "reg": breakdown.reg,
            "total": breakdown.total, "lambda": lam, "lr": lr,
        })
        if not np.all(np.isfinite(out.W)):
            raise DivergedError(epoch, last_w=last_finite)
    final_hash = hashlib.sha256(out.W.tobytes()).hexdigest()[:16]
    return out, TrainHistory(records=records, final_hash=final_hash)


def _worker_count() -> int:
    raw = os.environ.get("PROJTUNE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def grid_sweep(head: ProjectionHead, cls: TextClassifier,
               train_bank: FeatureBank, train_labels,
               val_bank: FeatureBank, val_labels,
               lr_grid=DEFAULT_LR_GRID, lambda_grid=DEFAULT_LAMBDA_GRID,
               epochs: int = 300, seed: int = 0):
    """Train one head per (lr, lambda) cell from the same anchor snapshot.

    Returns (best TrainConfig, result table). Diverged cells score accuracy 0
    with a marker instead of failing the sweep. Ties prefer smaller lr, then
    larger lambda; the table is assembled in grid order regardless of how many
    workers ran the cells.
    """
    if val_labels is None:
        raise InvalidInputError("validation bank must be labeled")
    cells = [(lr, lam) for lr in lr_grid for lam in lambda_grid]

    def run_cell(cell):
        lr, lam = cell
        cfg = TrainConfig(lr=lr, epochs=epochs, seed=seed,
                          lam=LambdaSchedule("constant", value=lam))
        row = {"lr": lr, "lambda": lam, "diverged": False, "accuracy": 0.0}
        try:
            trained, _ = train(head, cls, train_bank, train_labels, cfg)
        except DivergedError:
            row["diverged"] = True
            return row
        preds = predict(class_logits(trained, cls, val_bank, view=0))
        row["accuracy"] = float(np.mean(preds == np.asarray(val_labels)))
        return row

    workers = _worker_count()
    if workers == 1:
        table = [run_cell(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(run_cell, cells))

    def rank(row):
        # maximize accuracy; ties -> smaller lr, then larger lambda
        return (-row["accuracy"], row["lr"], -row["lambda"])

    best = min(table, key=rank)
    best_cfg = TrainConfig(lr=best["lr"], epochs=epochs, seed=seed,
                           lam=LambdaSchedule("constant", value=best["lambda"]))
    return best_cfg, table
