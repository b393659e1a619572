"""Accuracy metrics for rating prediction and top-N ranking."""

import numpy as np


def rmse(preds, truth) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    if preds.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((preds - truth) ** 2)))


def rank_items(items, scores) -> np.ndarray:
    """Items by descending score; equal scores keep ascending item id."""
    items = np.asarray(items)
    order = np.lexsort((items, -np.asarray(scores, dtype=np.float64)))
    return items[order]


def positive_ranks(rankings, positives) -> np.ndarray:
    """1-based position of each row's positive item in its ranked list."""
    ranks = []
    for row, pos in zip(rankings, positives):
        hit = np.flatnonzero(np.asarray(row) == pos)
        if len(hit) == 0:
            raise ValueError(f"positive item {pos} missing from its ranked list")
        ranks.append(hit[0] + 1)
    return np.asarray(ranks, dtype=np.int64)


def _as_ranks(rankings, positives):
    if positives is None:
        return np.asarray(rankings, dtype=np.int64)
    return positive_ranks(rankings, positives)


def hr_at_n(rankings, positives=None, n=20) -> float:
    """Fraction of lists whose positive lands in the top ``n``.

    ``rankings`` are ranked item lists (with ``positives`` given), or
    already-computed 1-based ranks of the positives.
    """
    ranks = _as_ranks(rankings, positives)
    if ranks.size == 0:
        raise ValueError("no ranked lists")
    return float(np.mean(ranks <= n))


def ndcg_at_n(rankings, positives=None, n=20) -> float:
    """Mean NDCG@n with a single relevant item per list (IDCG = 1)."""
    ranks = _as_ranks(rankings, positives)
    if ranks.size == 0:
        raise ValueError("no ranked lists")
    gains = np.where(ranks <= n, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def grouped_positive_ranks(groups, items, scores, labels) -> np.ndarray:
    """Rank of the single positive inside each group of candidates, ordered by
    group id. Ties rank the lower item id first."""
    groups = np.asarray(groups)
    items = np.asarray(items)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels > 0)
    pos = pos[np.argsort(groups[pos], kind="stable")]
    gid = groups[pos]
    if len(np.unique(gid)) != len(gid):
        raise ValueError("each group needs exactly one positive")
    slot = np.searchsorted(gid, groups)
    slot = np.minimum(slot, len(gid) - 1)
    if not np.array_equal(gid[slot], groups):
        raise ValueError("group without a positive item")
    ps, pi = scores[pos][slot], items[pos][slot]
    ahead = (scores > ps) | ((scores == ps) & (items < pi))
    return 1 + np.bincount(slot, weights=ahead, minlength=len(gid)).astype(np.int64)


def ranking_metrics(groups, items, scores, labels, n=20) -> tuple[float, float]:
    ranks = grouped_positive_ranks(groups, items, scores, labels)
    return hr_at_n(ranks, n=n), ndcg_at_n(ranks, n=n)
