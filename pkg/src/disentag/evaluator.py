"""Evaluation: entity-level span PRF and the post-hoc domain probe.

Spans count as correct only on exact (type, start, end) match; scores are
micro-averaged over sentences. The domain probe is a zero-initialized affine
softmax classifier trained full-batch on frozen features; it touches no model
gradients (pure numpy by construction).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class EntitySpan:
    etype: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def bio_spans(tags: Sequence[str]) -> list[EntitySpan]:
    """Decode BIO tags to spans; an orphan I- opens a span like B- would."""
    spans: list[EntitySpan] = []
    start = None
    etype = None
    for i, tag in enumerate(tags):
        if tag == "O":
            if start is not None:
                spans.append(EntitySpan(etype, start, i))
                start, etype = None, None
        elif tag.startswith("B-") or (
            tag.startswith("I-") and (start is None or tag[2:] != etype)
        ):
            if start is not None:
                spans.append(EntitySpan(etype, start, i))
            start, etype = i, tag[2:]
        elif tag.startswith("I-"):
            continue
        else:
            raise ValueError(f"invalid BIO tag {tag!r}")
    if start is not None:
        spans.append(EntitySpan(etype, start, len(tags)))
    return spans


def _score(tp: int, fp: int, fn: int) -> PRF:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return PRF(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


def entity_prf(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    restrict_types: set[str] | None = None,
) -> PRF:
    """Micro-averaged exact-match span scores over aligned sentences.

    ``restrict_types`` drops both gold and predicted spans outside the set
    before matching (used for common/non-common breakdowns).
    """
    if len(gold) != len(pred):
        raise ValueError("gold and prediction sentence counts differ")
    tp = fp = fn = 0
    for gtags, ptags in zip(gold, pred):
        if len(gtags) != len(ptags):
            raise ValueError("sentence length mismatch between gold and prediction")
        gspans = set(bio_spans(gtags))
        pspans = set(bio_spans(ptags))
        if restrict_types is not None:
            gspans = {s for s in gspans if s.etype in restrict_types}
            pspans = {s for s in pspans if s.etype in restrict_types}
        tp += len(gspans & pspans)
        fp += len(pspans - gspans)
        fn += len(gspans - pspans)
    return _score(tp, fp, fn)


def entity_breakdown(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    common_types: set[str],
) -> dict[str, PRF]:
    """Overall plus common-type and non-common-type subset scores."""
    all_types = {s.etype for tags in gold for s in bio_spans(tags)}
    return {
        "overall": entity_prf(gold, pred),
        "common": entity_prf(gold, pred, restrict_types=common_types),
        "non_common": entity_prf(gold, pred, restrict_types=all_types - common_types),
    }


def domain_probe(
    features: np.ndarray,
    domain_ids: np.ndarray,
    seed: int,
    *,
    steps: int = 100,
    lr: float = 0.1,
    train_fraction: float = 0.7,
) -> float:
    """Held-out accuracy of an affine softmax probe on frozen features.

    70/30 split by a seeded shuffle; features standardized with train-split
    statistics so the fixed learning rate is scale-free; zero-initialized
    weights; full-batch gradient descent. Raises if the input covers fewer
    than two domains.
    """
    features = np.asarray(features, dtype=np.float64)
    domain_ids = np.asarray(domain_ids, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != domain_ids.shape[0]:
        raise ValueError("features must be (N, D) aligned with domain ids")
    classes = np.unique(domain_ids)
    if classes.size < 2:
        raise ValueError("domain probe needs samples from at least two domains")
    n = features.shape[0]
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    if cut < 1 or cut >= n:
        raise ValueError("split leaves an empty train or eval side")
    train_idx, eval_idx = order[:cut], order[cut:]
    x_tr, y_tr = features[train_idx], domain_ids[train_idx]
    x_ev, y_ev = features[eval_idx], domain_ids[eval_idx]
    mean = x_tr.mean(axis=0)
    std = x_tr.std(axis=0) + 1e-8
    x_tr = (x_tr - mean) / std
    x_ev = (x_ev - mean) / std

    num_classes = int(classes.max()) + 1
    w = np.zeros((features.shape[1], num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y_tr]
    for _ in range(steps):
        logits = x_tr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        delta = (probs - onehot) / x_tr.shape[0]
        w -= lr * (x_tr.T @ delta)
        b -= lr * delta.sum(axis=0)
    pred = np.argmax(x_ev @ w + b, axis=1)
    return float(np.mean(pred == y_ev))
