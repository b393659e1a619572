"""Shared machinery for ensemble combiners trained on soft snapshot labels."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..metrics import ranking_metrics, rmse
from .adam import Adam
from .network import kl_loss, optimal_tags, soft_label_matrix, softmax
from ..snapshot_store import SnapshotSet
from ..utils import derive_seed

_log = logging.getLogger(__name__)

TASKS = ("rating", "ranking")


def check_snapshot_set(X, n_snapshots=None) -> SnapshotSet:
    if not isinstance(X, SnapshotSet):
        raise TypeError(f"expected a SnapshotSet, got {type(X).__name__}")
    if n_snapshots is not None and X.n_snapshots != n_snapshots:
        raise ValueError(f"snapshot set has {X.n_snapshots} snapshots, model expects {n_snapshots}")
    return X


def validation_score(X: SnapshotSet, y, scores, task, n_cutoff=20) -> float:
    """RMSE (clipped to the rating scale) for ratings, HR@n for ranking; each
    validation user forms one candidate group."""
    if task == "rating":
        p = scores if X.rating_scale is None else np.clip(scores, *X.rating_scale)
        return rmse(p, y)
    hr, _ = ranking_metrics(X.pairs[:, 0], X.pairs[:, 1], scores, y, n_cutoff)
    return hr


def _better(task, new, old):
    return old is None or (new < old if task == "rating" else new > old)


class SoftLabelEnsemble(RegressorMixin, BaseEstimator):
    """Mini-batch Adam on the KL divergence to per-example soft labels, keeping
    the parameters with the best validation score.

    Subclasses implement ``_setup``, ``_forward`` and ``_backward``.
    """

    def _labels(self, X, y):
        e_o = optimal_tags(X.preds, y, X.tags)
        return soft_label_matrix(X.tags, e_o, self.alpha)

    def _mean_loss(self, X, Y):
        total = 0.0
        for rows in self._chunks(len(X)):
            _, logits = self._forward(X, rows, "infer", None)
            total += kl_loss(Y[rows], logits=logits).sum()
        return total / len(X)

    def _chunks(self, n, size=2048):
        for start in range(0, n, size):
            yield np.arange(start, min(n, start + size))

    def fit(self, X, y, eval_set=None, **fit_params):
        X = check_snapshot_set(X)
        y = np.asarray(y, dtype=np.float64)
        if len(y) != len(X):
            raise ValueError("y must align with the pairs of X")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        self._setup(X, **fit_params)
        self.tags_ = X.tags
        self.n_snapshots_ = X.n_snapshots
        self.rating_scale_ = X.rating_scale
        Y = self._labels(X, y)
        shuffle = np.random.default_rng(derive_seed(self.seed, "shuffle"))
        noise = np.random.default_rng(derive_seed(self.seed, "dropout"))
        opt = Adam(self.lr, self.beta1, self.beta2, self.eps)

        self.loss_curve_ = [self._mean_loss(X, Y)]
        self.validation_curve_ = []
        best, self.best_epoch_ = None, 0
        best_params = {k: v.copy() for k, v in self.params_.items()}
        if eval_set is not None:
            best = self._score(*eval_set)
            self.validation_curve_.append(best)
        for epoch in range(1, self.max_epochs + 1):
            order = shuffle.permutation(len(X))
            for start in range(0, len(X), self.batch_size):
                rows = order[start:start + self.batch_size]
                trace, _ = self._forward(X, rows, "train", noise)
                opt.step(self.params_, self._backward(trace, Y[rows]))
            self.loss_curve_.append(self._mean_loss(X, Y))
            if eval_set is not None:
                score = self._score(*eval_set)
                self.validation_curve_.append(score)
                if _better(self.task, score, best):
                    best, self.best_epoch_ = score, epoch
                    best_params = {k: v.copy() for k, v in self.params_.items()}
            else:
                self.best_epoch_ = epoch
                best_params = self.params_
            _log.info("%s epoch %d: train KL %.5f, validation %s", type(self).__name__,
                      epoch, self.loss_curve_[-1], self.validation_curve_[-1:] or None)
        self.params_ = {k: v.copy() for k, v in best_params.items()}
        self.best_score_ = best
        return self

    def _score(self, X_val, y_val):
        return validation_score(X_val, np.asarray(y_val, dtype=np.float64),
                                self.predict(X_val), self.task, self.n_cutoff)

    def predict_weights(self, X) -> np.ndarray:
        """Per-pair ensemble weights (rows on the simplex)."""
        check_is_fitted(self, "params_")
        X = check_snapshot_set(X, self.n_snapshots_)
        out = np.empty((len(X), X.n_snapshots))
        for rows in self._chunks(len(X)):
            _, logits = self._forward(X, rows, "infer", None)
            out[rows] = softmax(logits)
        return out

    def predict(self, X) -> np.ndarray:
        """Weighted average of the snapshot predictions of every pair."""
        w = self.predict_weights(X)
        return np.sum(w * X.preds, axis=1)
