"""Shared fixtures and scenario builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from projtune.model import FeatureBank, ProjectionHead, TextClassifier
from projtune.numerics import l2_normalize_rows


def random_instance(rng, d_pre=None, d_emb=None, k=None, n=None, v=None,
                    with_bias=False):
    """A small random (head, classifier, labeled bank) triple."""
    d_pre = d_pre or int(rng.integers(3, 17))
    d_emb = d_emb or int(rng.integers(2, min(d_pre, 8) + 1))
    k = k or int(rng.integers(2, 9))
    n = n or int(rng.integers(1, 33))
    v = v or int(rng.integers(1, 4))
    head = ProjectionHead(
        W=rng.standard_normal((d_pre, d_emb)),
        W0=rng.standard_normal((d_pre, d_emb)),
        b=rng.standard_normal(d_emb) if with_bias else None,
    )
    cls = TextClassifier(T=l2_normalize_rows(rng.standard_normal((k, d_emb))))
    bank = FeatureBank(X=rng.standard_normal((n, v, d_pre)),
                       labels=rng.integers(0, k, size=n))
    return head, cls, bank


def clustered_scenario(seed, k=10, d_pre=32, d_emb=16, shots=4, views=1,
                       test_per_class=20, sigma_train=0.5, sigma_test=0.5,
                       sigma_w=0.5):
    """Prototype-clustered scenario with independent train/test noise levels.

    The anchor W0 drifts from the oracle projector that defined the text rows,
    so zero-shot is good but imperfect and fine-tuning has headroom.
    """
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal((d_pre, d_emb)) / np.sqrt(d_pre)
    protos = rng.standard_normal((k, d_pre))
    cls = TextClassifier(T=l2_normalize_rows(protos @ w_star))
    w0 = w_star + sigma_w * rng.standard_normal((d_pre, d_emb)) / np.sqrt(d_pre)
    head = ProjectionHead(W=w0.copy(), W0=w0.copy())

    tr_labels = np.repeat(np.arange(k), shots)
    xtr = (protos[tr_labels][:, None, :]
           + sigma_train * rng.standard_normal((k * shots, views, d_pre)))
    train_bank = FeatureBank(X=xtr, labels=tr_labels, split_tag="train")

    te_labels = np.repeat(np.arange(k), test_per_class)
    xte = (protos[te_labels]
           + sigma_test * rng.standard_normal((k * test_per_class, d_pre)))
    test_bank = FeatureBank(X=xte[:, None, :], labels=te_labels,
                            split_tag="test")
    return head, cls, train_bank, test_bank


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
