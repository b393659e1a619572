"""User/item KNN with cosine similarity; one snapshot per neighbor count."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..utils import check_pairs


def cosine_similarity(a, b) -> float:
    """Cosine of two sparse rating vectors.

    Vectors are dicts ``{index: value}`` or dense arrays in which 0 marks a
    missing rating. Returns 0 when either vector has zero norm.
    """
    if isinstance(a, dict) or isinstance(b, dict):
        a, b = dict(a), dict(b)
        dot = sum(a[k] * b[k] for k in a.keys() & b.keys())
        na = np.sqrt(sum(v * v for v in a.values()))
        nb = np.sqrt(sum(v * v for v in b.values()))
    else:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        dot = float(a @ b)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(dot / (na * nb), -1.0, 1.0))


def similarity_table(rows: sp.csr_matrix) -> np.ndarray:
    """All-pairs cosine between the rows of a sparse matrix (dense result)."""
    gram = (rows @ rows.T).toarray()
    norms = np.sqrt(np.diag(gram))
    denom = np.outer(norms, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, gram / denom, 0.0)
    return np.clip(sim, -1.0, 1.0)


@njit(cache=True)
def _knn_predict(sim, anchors, groups, indptr, indices, values, k, implicit,
                 fallback, out):
    for n in range(anchors.shape[0]):
        a = anchors[n]
        g = groups[n]
        lo = indptr[g]
        hi = indptr[g + 1]
        m = hi - lo
        cand = np.empty(m, dtype=np.int64)
        s = np.empty(m)
        c = 0
        for t in range(lo, hi):
            b = indices[t]
            if b == a:
                continue
            w = sim[a, b]
            if w > 0.0:
                cand[c] = t
                s[c] = -w
                c += 1
        if c == 0:
            out[n] = fallback[n]
            continue
        order = np.argsort(s[:c], kind="mergesort")
        top = min(k, c)
        num = 0.0
        den = 0.0
        for r in range(top):
            t = cand[order[r]]
            w = -s[order[r]]
            num += w * values[t]
            den += w
        out[n] = num if implicit else num / den


@dataclass
class KNNModel:
    """KNN snapshot at neighbor count ``k``.

    For ``kind='user'`` the neighbors of (u, i) are the users who rated i,
    ranked by similarity to u; ``kind='item'`` swaps the roles. Only positive
    similarities contribute. With no usable neighbor the prediction falls back
    to the anchor's mean rating, then the global mean (0 for implicit scores).
    """

    kind: str
    k: int
    similarity: np.ndarray
    by_group: sp.csr_matrix
    anchor_means: np.ndarray
    anchor_counts: np.ndarray
    global_mean: float
    implicit: bool = False
    num_users: int = 0
    num_items: int = 0

    @property
    def tag(self):
        return self.k

    @property
    def source(self):
        return f"{self.kind}knn"

    def predict(self, pairs) -> np.ndarray:
        pairs = check_pairs(pairs, self.num_users, self.num_items)
        if self.kind == "user":
            anchors, groups = pairs[:, 0], pairs[:, 1]
        else:
            anchors, groups = pairs[:, 1], pairs[:, 0]
        if self.implicit:
            fallback = np.zeros(len(pairs))
        else:
            fallback = np.where(self.anchor_counts[anchors] > 0,
                                self.anchor_means[anchors], self.global_mean)
        out = np.empty(len(pairs))
        g = self.by_group
        _knn_predict(self.similarity, anchors, groups, g.indptr.astype(np.int64),
                     g.indices.astype(np.int64), g.data.astype(np.float64),
                     int(self.k), bool(self.implicit), fallback, out)
        return out


class KNNRecommender(RegressorMixin, BaseEstimator):
    """Neighborhood CF producing one snapshot per entry of ``k_list``.

    Rating vectors are mean-centered before the cosine is taken (anchors'
    own mean); in implicit mode vectors are binary and the score is the sum
    of the top-k similarities.
    """

    def __init__(self, kind="item", k_list=tuple(range(10, 101, 10)), implicit=False):
        self.kind = kind
        self.k_list = k_list
        self.implicit = implicit

    def fit(self, train, y=None):
        if self.kind not in ("user", "item"):
            raise ValueError(f"kind must be 'user' or 'item', got {self.kind!r}")
        ks = sorted(int(k) for k in self.k_list)
        if not ks or ks[0] < 1:
            raise ValueError("k_list must be non-empty with counts >= 1")
        values = np.ones(len(train)) if self.implicit else train.ratings
        ui = sp.csr_matrix((values, (train.users, train.items)),
                           shape=(train.num_users, train.num_items))
        # anchors index the similarity table; groups hold the candidate neighbors
        if self.kind == "user":
            anchor_mat, group_mat = ui, ui.T.tocsr()
        else:
            anchor_mat, group_mat = ui.T.tocsr(), ui
        group_mat.sort_indices()
        counts = np.diff(anchor_mat.indptr)
        sums = np.asarray(anchor_mat.sum(axis=1)).ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            means = np.where(counts > 0, sums / counts, 0.0)
        if self.implicit:
            centered = anchor_mat
        else:
            centered = anchor_mat.copy().astype(np.float64)
            centered.data = centered.data - np.repeat(means, counts)
            centered.eliminate_zeros()
        self.similarity_ = similarity_table(centered)
        gm = float(values.mean()) if len(values) else 0.0
        self.snapshots_ = [
            KNNModel(self.kind, k, self.similarity_, group_mat, means, counts, gm,
                     bool(self.implicit), train.num_users, train.num_items)
            for k in ks
        ]
        return self

    def predict(self, pairs) -> np.ndarray:
        """Predictions of the largest-k snapshot."""
        check_is_fitted(self, "snapshots_")
        return self.snapshots_[-1].predict(pairs)


def knn_snapshots(train, kind="item", k_list=tuple(range(10, 101, 10)), implicit=False):
    if not len(k_list):
        raise ValueError("k_list must be non-empty")
    return KNNRecommender(kind, tuple(k_list), implicit).fit(train).snapshots_
