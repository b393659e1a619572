"""Comparison combiners over a SnapshotSet: best single snapshot, plain
averaging, an MLP stacker (HSE) and cyclic-LR snapshot averaging (SE)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError
from .neuse.network import softmax
from .neuse.training import SoftLabelEnsemble, check_snapshot_set
from .utils import derive_seed

LOWER_IS_BETTER = {"rmse": True, "hr": False, "ndcg": False}


def single_select(sset) -> int:
    """Index of the snapshot with the best recorded validation score.

    RMSE-like metrics are minimized, HR/NDCG maximized; ties go to the
    smaller tag (lower index).
    """
    if sset.n_snapshots == 0:
        raise ValueError("empty snapshot set")
    vals = [m.validation for m in sset.metas]
    if any(v is None for v in vals):
        raise ValueError("snapshot set lacks validation scores")
    vals = np.asarray(vals, dtype=np.float64)
    minimize = LOWER_IS_BETTER.get((sset.validation_metric or "rmse").split("@")[0], True)
    return int(np.argmin(vals) if minimize else np.argmax(vals))


def average_combine(r_hat) -> float | np.ndarray:
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if r_hat.shape[-1] == 0:
        raise ValueError("empty prediction vector")
    return r_hat.mean(axis=-1)


def se_combine(cyclic_set) -> np.ndarray:
    """SE averages the cycle-end snapshots of a cyclic-LR run."""
    if cyclic_set.source.endswith("knn"):
        raise ConfigError("SE applies only to SGD-trained models, not KNN snapshots")
    return average_combine(cyclic_set.preds)


class SingleSnapshot(RegressorMixin, BaseEstimator):
    """Predict with the snapshot that scored best on validation."""

    def fit(self, X, y=None):
        X = check_snapshot_set(X)
        self.index_ = single_select(X)
        self.tag_ = X.metas[self.index_].tag
        return self

    def predict(self, X):
        check_is_fitted(self, "index_")
        return check_snapshot_set(X).preds[:, self.index_]


class AverageEnsemble(RegressorMixin, BaseEstimator):
    def fit(self, X, y=None):
        self.n_snapshots_ = check_snapshot_set(X).n_snapshots
        return self

    def predict(self, X):
        return average_combine(check_snapshot_set(X).preds)


class SnapshotEnsembleSE(AverageEnsemble):
    """Average over cycle-end snapshots; rejects KNN-derived sets."""

    def predict(self, X):
        return se_combine(check_snapshot_set(X))


class HSE(SoftLabelEnsemble):
    """Horizontal stacked ensemble: an MLP from the snapshot predictions to
    softmax ensemble weights, trained on the same soft-label KL objective as
    NeuSE.
    """

    def __init__(self, hidden=32, alpha=1.0, lr=0.01, batch_size=128, beta1=0.9, beta2=0.999,
                 eps=1e-8, init_std=0.01, max_epochs=20, zero_output=False, task="rating",
                 n_cutoff=20, seed=0):
        self.hidden = hidden
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.init_std = init_std
        self.max_epochs = max_epochs
        self.zero_output = zero_output
        self.task = task
        self.n_cutoff = n_cutoff
        self.seed = seed

    def _setup(self, X):
        self.params_ = hse_init(X.n_snapshots, self.hidden, self.init_std,
                                derive_seed(self.seed, "init"), self.zero_output)

    def _forward(self, X, rows, mode, rng):
        cache = hse_forward(self.params_, X.preds[rows])
        return cache, cache["logits"]

    def _backward(self, cache, Y):
        return hse_backward(cache, Y, self.params_)


def hse_init(n_snapshots, hidden, init_std, seed, zero_output=False) -> dict:
    rng = np.random.default_rng(seed)
    params = {
        "W1": rng.normal(0.0, init_std, (n_snapshots, hidden)),
        "b1": rng.normal(0.0, init_std, hidden),
        "W2": rng.normal(0.0, init_std, (hidden, n_snapshots)),
        "b2": rng.normal(0.0, init_std, n_snapshots),
    }
    if zero_output:
        params["W2"][:] = 0.0
        params["b2"][:] = 0.0
    return params


def hse_forward(params, r_hat) -> dict:
    r_hat = np.atleast_2d(np.asarray(r_hat, dtype=np.float64))
    pre = r_hat @ params["W1"] + params["b1"]
    h = np.maximum(pre, 0.0)
    logits = h @ params["W2"] + params["b2"]
    return {"x": r_hat, "pre": pre, "h": h, "logits": logits, "y_hat": softmax(logits)}


def hse_backward(cache, Y, params) -> dict:
    B = len(cache["x"])
    dlogits = (cache["y_hat"] - Y) / B
    dh = dlogits @ params["W2"].T
    dpre = dh * (cache["pre"] > 0)
    return {
        "W2": cache["h"].T @ dlogits,
        "b2": dlogits.sum(axis=0),
        "W1": cache["x"].T @ dpre,
        "b1": dpre.sum(axis=0),
    }


def hse_train(sset, split_targets, config=None, eval_set=None) -> HSE:
    return HSE(**(config or {})).fit(sset, split_targets, eval_set=eval_set)


def hse_predict(model: HSE, r_hat) -> np.ndarray:
    check_is_fitted(model, "params_")
    cache = hse_forward(model.params_, r_hat)
    return np.sum(cache["y_hat"] * cache["x"], axis=1)
