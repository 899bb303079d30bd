"""Verification accuracy, dataset-membership probe and overlap consistency."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datagen import SyntheticCorpus, candidate_pairs, make_verification_pairs
from .losses import linear_logits, softmax_loss
from .model import embed_forward
from .numerics import Prng, glorot_uniform, l2_normalize_rows


@dataclass
class EvalReport:
    verification_accuracy: float
    best_threshold: float
    domain_probe_accuracy: float | None
    overlap_same_id_cosine: float | None
    cross_id_cosine: float | None
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return asdict(self)


def pair_similarities(embeddings, pairs) -> tuple[np.ndarray, np.ndarray]:
    e = l2_normalize_rows(embeddings)
    i = np.array([p[0] for p in pairs], dtype=np.int64)
    j = np.array([p[1] for p in pairs], dtype=np.int64)
    same = np.array([bool(p[2]) for p in pairs])
    return np.sum(e[i] * e[j], axis=1), same


def best_threshold(sims, same) -> tuple[float, float]:
    """Sweep every midpoint plus +-inf; predict "same" when sim >= t.

    Ties in accuracy go to the smaller threshold.
    """
    sims = np.asarray(sims, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    n = sims.size
    if not same.any() or same.all():
        raise ValueError("need at least one positive and one negative pair")
    u = np.unique(sims)
    thresholds = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])
    # Correct = positives at or above t plus negatives below t.
    pos_sorted = np.sort(sims[same])
    neg_sorted = np.sort(sims[~same])
    pos_above = pos_sorted.size - np.searchsorted(pos_sorted, thresholds, side="left")
    neg_below = np.searchsorted(neg_sorted, thresholds, side="left")
    correct = pos_above + neg_below
    best = int(np.argmax(correct))  # first max = smallest threshold
    return float(correct[best] / n), float(thresholds[best])


def verification_accuracy(embeddings, pairs) -> tuple[float, float]:
    sims, same = pair_similarities(embeddings, pairs)
    return best_threshold(sims, same)


def domain_probe(
    embeddings,
    dataset_ids,
    prng: Prng,
    steps: int = 500,
    lr: float = 0.5,
    momentum: float = 0.9,
    train_fraction: float = 0.7,
) -> float:
    """Held-out accuracy of a softmax classifier predicting the dataset from frozen embeddings.

    The split is stratified per dataset. The classifier is trained full-batch
    with SGD plus momentum from a seeded Glorot initialization.
    """
    ids = np.asarray(dataset_ids, dtype=np.int64)
    k = int(ids.max()) + 1 if ids.size else 0
    if np.unique(ids).size < 2:
        raise ValueError("domain probe needs at least two datasets; got a single dataset")
    x = l2_normalize_rows(embeddings)
    train_rows, test_rows = [], []
    for d in range(k):
        rows = np.flatnonzero(ids == d)
        rows = rows[prng.permutation(rows.size)]
        cut = int(round(train_fraction * rows.size))
        train_rows.append(rows[:cut])
        test_rows.append(rows[cut:])
    tr, te = np.concatenate(train_rows), np.concatenate(test_rows)
    if te.size == 0 or tr.size == 0:
        raise ValueError("too few samples for a 70/30 probe split")

    W = glorot_uniform(prng, k, x.shape[1])
    b = np.zeros(k)
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    for _ in range(steps):
        out = softmax_loss(linear_logits(x[tr], W, b), ids[tr])
        gW, gb = out.grad_logits.T @ x[tr], out.grad_logits.sum(axis=0)
        vW = momentum * vW + gW
        vb = momentum * vb + gb
        W -= lr * vW
        b -= lr * vb
    pred = np.argmax(linear_logits(x[te], W, b), axis=1)
    return float(np.mean(pred == ids[te]))


def overlap_consistency(embeddings, corpus: SyntheticCorpus, prng: Prng | None = None, n_cross: int = 10_000):
    """Mean cosine of same-identity cross-dataset pairs, and of different-identity pairs.

    ``embeddings`` rows align with ``corpus`` samples.
    """
    e = l2_normalize_rows(embeddings)
    gid, ds = corpus.global_identity, corpus.dataset_id
    same_sum, same_n = 0.0, 0
    for g in np.unique(gid):
        rows = np.flatnonzero(gid == g)
        if np.unique(ds[rows]).size < 2:
            continue
        sims = e[rows] @ e[rows].T
        cross = ds[rows][:, None] != ds[rows][None, :]
        same_sum += sims[np.triu(cross, k=1)].sum()
        same_n += int(np.triu(cross, k=1).sum())
    if same_n == 0:
        raise ValueError("no shared identities with samples in two or more datasets")

    if np.unique(gid).size < 2:
        raise ValueError("need at least two identities")
    prng = prng if prng is not None else Prng(0)
    n = len(gid)
    need = n_cross
    ii, jj = [], []
    while need > 0:
        a = prng.integers(0, n, size=2 * need)
        c = prng.integers(0, n, size=2 * need)
        keep = gid[a] != gid[c]
        ii.append(a[keep][:need])
        jj.append(c[keep][:need])
        need -= int(min(keep.sum(), need))
    i, j = np.concatenate(ii), np.concatenate(jj)
    cross_mean = float(np.mean(np.sum(e[i] * e[j], axis=1)))
    return float(same_sum / same_n), cross_mean


def evaluate_params(params, corpus: SyntheticCorpus, n_pos: int = 600, n_neg: int = 600, seed: int = 0,
                    probe_steps: int = 500, probe_lr: float = 0.5) -> tuple[EvalReport, list[str]]:
    """Full report on the corpus' held-out split.

    Metrics that the corpus cannot support (one dataset, no shared
    identities) are reported as ``None``; the reasons come back as notes.
    """
    notes = []
    ev = corpus.eval_split() if corpus.eval_idx.size else corpus
    emb = embed_forward(params, ev.features).embeddings

    pos, neg = candidate_pairs(ev)
    if n_pos > pos.shape[1] or n_neg > neg.shape[1]:
        n_pos, n_neg = min(n_pos, pos.shape[1]), min(n_neg, neg.shape[1])
        notes.append(f"pair counts capped at {n_pos} positive / {n_neg} negative")
    pairs = make_verification_pairs(ev, n_pos, n_neg, Prng((seed, 7)))
    acc, thr = verification_accuracy(emb, pairs)

    probe = None
    try:
        probe = domain_probe(emb, ev.dataset_id, Prng((seed, 8)), steps=probe_steps, lr=probe_lr)
    except ValueError as exc:
        notes.append(f"domain probe skipped: {exc}")
    same_cos = cross_cos = None
    try:
        same_cos, cross_cos = overlap_consistency(emb, ev, Prng((seed, 9)))
    except ValueError as exc:
        notes.append(f"overlap consistency skipped: {exc}")
    report = EvalReport(acc, thr, probe, same_cos, cross_cos, n_pos, n_neg)
    return report, notes
