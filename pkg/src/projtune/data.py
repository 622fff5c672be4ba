"""Binary file formats (FBANK/TCLS/PROJ), few-shot sampling, base/new
splitting, and the synthetic scenario generator.

All formats are little-endian and versioned by magic; on-disk floats are
32-bit while in-memory compute stays 64-bit. Writers write a temp file and
atomically rename it into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagicError, GenerationError, InvalidHeaderError,
                     InvalidInputError, SizeMismatchError, TruncatedFileError)
from .model import FeatureBank, ProjectionHead, TextClassifier
from .numerics import l2_normalize_rows

FBANK_MAGIC = b"PLIPFB1\0"
TCLS_MAGIC = b"PLIPTC1\0"
PROJ_MAGIC = b"PLIPPJ1\0"


def _atomic_write(path, blob: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise TruncatedFileError(f"{self.path}: truncated file")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f32_array(self, count: int, shape) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)

    def done(self):
        if self.off != len(self.blob):
            raise SizeMismatchError(
                f"{self.path}: {len(self.blob) - self.off} trailing bytes")


def _check_magic(r: _Reader, magic: bytes):
    got = r.take(len(magic))
    if got != magic:
        raise BadMagicError(f"{r.path}: bad magic {got!r}")


# --------------------------------------------------------------------------
# FBANK

def write_fbank(bank: FeatureBank, path):
    n, v, d_o = bank.X.shape
    parts = [FBANK_MAGIC,
             struct.pack("<IIII", d_o, n, v, 1 if bank.labels is not None else 0)]
    if bank.labels is not None:
        parts.append(np.asarray(bank.labels, dtype="<u4").tobytes())
    parts.append(bank.X.astype("<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def read_fbank(path) -> FeatureBank:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    _check_magic(r, FBANK_MAGIC)
    d_o, n, v, has_labels = r.u32(), r.u32(), r.u32(), r.u32()
    if d_o == 0 or n == 0 or v == 0 or has_labels > 1:
        raise InvalidHeaderError(f"{path}: invalid FBANK header "
                                 f"(D_o={d_o}, N={n}, V={v}, has_labels={has_labels})")
    labels = None
    if has_labels:
        labels = np.frombuffer(r.take(4 * n), dtype="<u4").astype(np.int64)
    x = r.f32_array(n * v * d_o, (n, v, d_o))
    r.done()
    return FeatureBank(X=x, labels=labels)


# --------------------------------------------------------------------------
# TCLS

def write_tcls(cls: TextClassifier, path):
    k, d = cls.T.shape
    parts = [TCLS_MAGIC, struct.pack("<II", d, k)]
    for name in cls.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    # rows are already unit-norm per the TextClassifier invariant; writing
    # them verbatim keeps write->read->write byte-identical
    parts.append(cls.T.astype("<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def read_tcls(path) -> TextClassifier:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    _check_magic(r, TCLS_MAGIC)
    d, k = r.u32(), r.u32()
    if d == 0 or k < 2:
        raise InvalidHeaderError(f"{path}: invalid TCLS header (D={d}, K={k})")
    names = []
    for _ in range(k):
        ln = r.u32()
        names.append(r.take(ln).decode("utf-8"))
    t = r.f32_array(k * d, (k, d))
    r.done()
    norms = np.linalg.norm(t, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise InvalidInputError(f"{path}: classifier rows not unit norm")
    return TextClassifier(T=t, class_names=names)


# --------------------------------------------------------------------------
# PROJ

def write_proj(head: ProjectionHead, path, method_tag: int = 0):
    d_o, d = head.W.shape
    parts = [PROJ_MAGIC,
             struct.pack("<IIII", d_o, d, 1 if head.b is not None else 0,
                         method_tag),
             struct.pack("<f", head.temp),
             head.W.astype("<f4").tobytes()]
    if head.b is not None:
        parts.append(head.b.astype("<f4").tobytes())
    parts.append(head.W0.astype("<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def read_proj(path) -> tuple[ProjectionHead, int]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    _check_magic(r, PROJ_MAGIC)
    d_o, d, has_bias, method_tag = r.u32(), r.u32(), r.u32(), r.u32()
    if d_o == 0 or d == 0 or has_bias > 1:
        raise InvalidHeaderError(f"{path}: invalid PROJ header "
                                 f"(D_o={d_o}, D={d}, has_bias={has_bias})")
    temp = r.f32()
    if not temp > 0:
        raise InvalidHeaderError(f"{path}: temp must be positive")
    w = r.f32_array(d_o * d, (d_o, d))
    b = r.f32_array(d, (d,)) if has_bias else None
    w0 = r.f32_array(d_o * d, (d_o, d))
    r.done()
    return ProjectionHead(W=w, W0=w0, b=b, temp=float(temp)), method_tag


def write_manifest(path, **fields):
    """Provenance sidecar (dataset name, split, source checkpoint, template)."""
    _atomic_write(path, json.dumps(fields, indent=2, sort_keys=True).encode())


# --------------------------------------------------------------------------
# few-shot sampling and base/new splitting

def sample_few_shot(bank: FeatureBank, shots: int, seed: int) -> FeatureBank:
    """Exactly ``shots`` samples per class, chosen by seeded shuffle.

    Per-sample view blocks travel intact; deterministic per seed.
    """
    if bank.labels is None:
        raise InvalidInputError("few-shot sampling needs a labeled bank")
    rng = np.random.default_rng(seed)
    chosen = []
    for k in sorted(set(bank.labels.tolist())):
        idx = np.flatnonzero(bank.labels == k)
        if len(idx) < shots:
            raise InvalidInputError(
                f"class {k} has {len(idx)} samples, need {shots}")
        perm = rng.permutation(len(idx))
        chosen.extend(idx[perm[:shots]].tolist())
    chosen = np.array(sorted(chosen))
    return FeatureBank(X=bank.X[chosen].copy(), labels=bank.labels[chosen].copy(),
                       split_tag=f"{bank.split_tag}:fewshot{shots}")


def split_base_new(cls: TextClassifier, bank: FeatureBank):
    """First ceil(K/2) class ids are base, the rest new; labels remapped.

    Returns ((cls_base, bank_base), (cls_new, bank_new)).
    """
    k = cls.n_classes
    if k < 2:
        raise InvalidInputError("need K >= 2 to split")
    n_base = (k + 1) // 2
    base_ids = list(range(n_base))
    new_ids = list(range(n_base, k))

    def side(ids):
        sub_cls = TextClassifier(T=l2_normalize_rows(cls.T[ids]),
                                 class_names=[cls.class_names[i] for i in ids])
        remap = {orig: j for j, orig in enumerate(ids)}
        if bank.labels is None:
            raise InvalidInputError("base/new split needs a labeled bank")
        mask = np.isin(bank.labels, ids)
        labels = np.array([remap[int(l)] for l in bank.labels[mask]], dtype=np.int64)
        sub_bank = FeatureBank(X=bank.X[mask].copy(), labels=labels,
                               split_tag=bank.split_tag)
        return sub_cls, sub_bank

    return side(base_ids), side(new_ids)


# --------------------------------------------------------------------------
# synthetic scenario generator

@dataclass
class SynthConfig:
    n_classes: int = 10
    d_pre: int = 32            # pre-projection dim D_o
    d_embed: int = 16          # shared-space dim D
    shots: int = 4             # train samples per class
    views: int = 4
    test_per_class: int = 20
    sigma_x: float = 0.5       # cluster noise
    sigma_t: float = 0.25      # text perturbation
    sigma_w: float = 1.4       # anchor drift between W0 and the oracle W*
    seed: int = 0

    def __post_init__(self):
        if self.d_embed > self.d_pre:
            raise InvalidInputError("embedding dim must be <= pre-projection dim")
        for name in ("n_classes", "d_pre", "d_embed", "shots", "views",
                     "test_per_class"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.n_classes < 2:
            raise InvalidInputError("need at least 2 classes")

    def config_hash(self) -> str:
        import hashlib
        blob = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SynthScenario:
    train: FeatureBank
    val: FeatureBank
    test: FeatureBank
    cls: TextClassifier
    head0: ProjectionHead
    zero_shot_acc: float


MAX_REDRAWS = 100
ZS_ACC_RANGE = (0.3, 0.9)


def _draw_bank(rng, prototypes, per_class, views, sigma_x, tag) -> FeatureBank:
    k, d_pre = prototypes.shape
    n = k * per_class
    labels = np.repeat(np.arange(k), per_class)
    base = prototypes[labels] + sigma_x * rng.standard_normal((n, d_pre))
    # view 0 is the un-augmented sample; extra views add jitter at sigma_x/2
    x = np.empty((n, views, d_pre))
    x[:, 0, :] = base
    for v in range(1, views):
        x[:, v, :] = base + (sigma_x / 2.0) * rng.standard_normal((n, d_pre))
    return FeatureBank(X=x, labels=labels, split_tag=tag)


def synth_generate(cfg: SynthConfig) -> SynthScenario:
    """Deterministic synthetic scenario with zero-shot headroom.

    Draws an oracle projector W* and class prototypes, derives text rows from
    the projected prototypes (sigma_t noise), and drifts the pretrained anchor
    W0 = W* + sigma_w * noise. Redraws (up to 100 times) until zero-shot test
    accuracy lands in [0.3, 0.9] when any noise is present.
    """
    noiseless = cfg.sigma_w == 0 and cfg.sigma_t == 0 and cfg.sigma_x == 0
    for attempt in range(MAX_REDRAWS):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, attempt]))
        w_star = rng.standard_normal((cfg.d_pre, cfg.d_embed)) / np.sqrt(cfg.d_pre)
        prototypes = rng.standard_normal((cfg.n_classes, cfg.d_pre))
        t_rows = l2_normalize_rows(
            prototypes @ w_star
            + cfg.sigma_t * rng.standard_normal((cfg.n_classes, cfg.d_embed)))
        cls = TextClassifier(T=t_rows)
        w0 = w_star + cfg.sigma_w * rng.standard_normal(w_star.shape) / np.sqrt(cfg.d_pre)
        head0 = ProjectionHead(W=w0.copy(), W0=w0.copy())

        train = _draw_bank(rng, prototypes, cfg.shots, cfg.views, cfg.sigma_x,
                           "train")
        val = _draw_bank(rng, prototypes, cfg.shots, cfg.views, cfg.sigma_x,
                         "val")
        test = _draw_bank(rng, prototypes, cfg.test_per_class, 1, cfg.sigma_x,
                          "test")

        from .model import class_logits, predict  # local to avoid cycle at import
        preds = predict(class_logits(head0, cls, test, view=0))
        zs_acc = float(np.mean(preds == test.labels))
        if noiseless or ZS_ACC_RANGE[0] <= zs_acc <= ZS_ACC_RANGE[1]:
            return SynthScenario(train=train, val=val, test=test, cls=cls,
                                 head0=head0, zero_shot_acc=zs_acc)
    raise GenerationError(
        f"could not reach zero-shot accuracy in {ZS_ACC_RANGE} after "
        f"{MAX_REDRAWS} redraws; adjust noise levels in the config")
