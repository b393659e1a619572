"""Biased matrix factorization (RSVD) and a pairwise factorization machine,
both fitted with plain SGD while capturing snapshot models."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import TrainingDivergedError
from ..utils import check_pairs
from .schedule import SnapshotSchedule

_log = logging.getLogger(__name__)


@dataclass
class MFModel:
    """One RSVD snapshot: ``mu + b_u + b_i + U_u . V_i``."""

    U: np.ndarray
    V: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_mean: float
    tag: int = 0
    source: str = "rsvd"

    @property
    def f(self):
        return self.U.shape[1]

    @property
    def num_users(self):
        return self.U.shape[0]

    @property
    def num_items(self):
        return self.V.shape[0]

    def predict(self, pairs) -> np.ndarray:
        pairs = check_pairs(pairs, self.num_users, self.num_items)
        u, i = pairs[:, 0], pairs[:, 1]
        return (self.global_mean + self.user_bias[u] + self.item_bias[i]
                + np.einsum("nk,nk->n", self.U[u], self.V[i]))


@dataclass
class FMModel:
    """One FM snapshot over the one-hot (user, item) feature pair.

    Feature ``u`` is the user and ``num_users + i`` the item, so the pairwise
    term reduces to ``<Vf[u], Vf[num_users + i]>``.
    """

    w0: float
    w: np.ndarray
    Vf: np.ndarray
    num_users: int
    tag: int = 0
    source: str = "fm"

    @property
    def f(self):
        return self.Vf.shape[1]

    @property
    def num_items(self):
        return self.w.shape[0] - self.num_users

    def predict(self, pairs) -> np.ndarray:
        pairs = check_pairs(pairs, self.num_users, self.num_items)
        u, j = pairs[:, 0], pairs[:, 1] + self.num_users
        return self.w0 + self.w[u] + self.w[j] + np.einsum("nk,nk->n", self.Vf[u], self.Vf[j])


@njit(cache=True)
def _mf_epoch(users, items, targets, order, mu, bu, bi, P, Q, lr, reg):
    k = P.shape[1]
    for t in range(order.shape[0]):
        idx = order[t]
        u = users[idx]
        i = items[idx]
        pred = mu + bu[u] + bi[i]
        for f in range(k):
            pred += P[u, f] * Q[i, f]
        e = targets[idx] - pred
        bu[u] += lr * (e - reg * bu[u])
        bi[i] += lr * (e - reg * bi[i])
        for f in range(k):
            pu = P[u, f]
            qi = Q[i, f]
            P[u, f] += lr * (e * qi - reg * pu)
            Q[i, f] += lr * (e * pu - reg * qi)


@njit(cache=True)
def _fm_epoch(users, items, targets, order, n_users, w0, w, V, lr, reg):
    """Returns the updated global bias (a scalar cannot be updated in place)."""
    k = V.shape[1]
    for t in range(order.shape[0]):
        idx = order[t]
        u = users[idx]
        j = n_users + items[idx]
        pred = w0 + w[u] + w[j]
        for f in range(k):
            pred += V[u, f] * V[j, f]
        e = targets[idx] - pred
        w0 += lr * e
        w[u] += lr * (e - reg * w[u])
        w[j] += lr * (e - reg * w[j])
        for f in range(k):
            vu = V[u, f]
            vj = V[j, f]
            V[u, f] += lr * (e * vj - reg * vu)
            V[j, f] += lr * (e * vu - reg * vj)
    return w0


def sample_implicit(train, n_negatives, rng):
    """Positives with target 1 plus ``n_negatives`` uniform non-interacted items
    per positive with target 0."""
    pos_keys = train.interaction_keys()
    n = len(train)
    neg_u = np.repeat(train.users, n_negatives)
    neg_i = rng.integers(0, train.num_items, size=len(neg_u))
    while True:
        keys = neg_u * train.num_items + neg_i
        loc = np.searchsorted(pos_keys, keys)
        bad = (loc < len(pos_keys)) & (pos_keys[np.minimum(loc, len(pos_keys) - 1)] == keys)
        if not bad.any():
            break
        neg_i[bad] = rng.integers(0, train.num_items, size=int(bad.sum()))
    users = np.concatenate([train.users, neg_u])
    items = np.concatenate([train.items, neg_i])
    targets = np.concatenate([np.ones(n), np.zeros(len(neg_u))])
    return users, items, targets


class _SGDFactorizer(RegressorMixin, BaseEstimator):
    source = ""

    def __init__(self, n_factors=8, lr=0.005, reg=0.02, delta_T=10, max_epoch=90,
                 schedule="every-delta-T", cycles=1, init_std=0.01, implicit=False,
                 n_negatives=4, seed=0):
        self.n_factors = n_factors
        self.lr = lr
        self.reg = reg
        self.delta_T = delta_T
        self.max_epoch = max_epoch
        self.schedule = schedule
        self.cycles = cycles
        self.init_std = init_std
        self.implicit = implicit
        self.n_negatives = n_negatives
        self.seed = seed

    def _schedule(self) -> SnapshotSchedule:
        return SnapshotSchedule(mode=self.schedule, delta_T=self.delta_T,
                                max_epoch=self.max_epoch, cycles=self.cycles)

    def _check_params(self):
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        if self.lr <= 0 or self.reg < 0 or self.init_std < 0:
            raise ValueError("lr must be positive, reg and init_std non-negative")

    def fit(self, train, y=None):
        """Run SGD for ``max_epoch`` epochs over ``train`` (a RatingDataset),
        deep-copying the model at every scheduled epoch into ``snapshots_``."""
        self._check_params()
        schedule = self._schedule()
        capture = set(schedule.capture_epochs())
        rng = np.random.default_rng(self.seed)
        self._init_params(train, rng)
        if not self.implicit:
            users, items, targets = train.users, train.items, train.ratings
        self.snapshots_ = []
        self.loss_curve_ = []
        for epoch in range(schedule.max_epoch):
            if self.implicit:
                users, items, targets = sample_implicit(train, self.n_negatives, rng)
            order = rng.permutation(len(users))
            lr = schedule.learning_rate(epoch, self.lr)
            self._epoch(users, items, targets, order, lr)
            if not self._finite():
                raise TrainingDivergedError(epoch + 1)
            pred = self._current(epoch + 1).predict(np.column_stack([users, items]))
            self.loss_curve_.append(float(np.sqrt(np.mean((targets - pred) ** 2))))
            if epoch + 1 in capture:
                self.snapshots_.append(copy.deepcopy(self._current(epoch + 1)))
        self.model_ = self._current(schedule.max_epoch)
        _log.debug("%s: %d snapshots, final train rmse %s", self.source,
                   len(self.snapshots_), self.loss_curve_[-1:] or None)
        return self

    def predict(self, pairs) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict(pairs)


class RSVD(_SGDFactorizer):
    """Regularized SVD with user/item biases, fitted by SGD on squared error.

    The global mean is fixed to the mean training target; factors and biases
    start from Gaussian(0, ``init_std``) and share one L2 coefficient.
    """

    source = "rsvd"

    def _init_params(self, train, rng):
        s = self.init_std
        self.U_ = rng.normal(0.0, s, (train.num_users, self.n_factors))
        self.V_ = rng.normal(0.0, s, (train.num_items, self.n_factors))
        self.bu_ = rng.normal(0.0, s, train.num_users)
        self.bi_ = rng.normal(0.0, s, train.num_items)
        if self.implicit:
            self.mu_ = 1.0 / (1.0 + self.n_negatives)
        else:
            self.mu_ = float(train.ratings.mean())

    def _epoch(self, users, items, targets, order, lr):
        _mf_epoch(users, items, targets, order, self.mu_, self.bu_, self.bi_,
                  self.U_, self.V_, lr, self.reg)

    def _finite(self):
        return all(np.isfinite(a).all() for a in (self.U_, self.V_, self.bu_, self.bi_))

    def _current(self, tag):
        return MFModel(self.U_, self.V_, self.bu_, self.bi_, self.mu_, tag, self.source)


class FMRegressor(_SGDFactorizer):
    """Second-order factorization machine over user/item one-hot features,
    fitted by SGD. The global bias starts at the mean target and is not
    regularized."""

    source = "fm"

    def _init_params(self, train, rng):
        s = self.init_std
        n = train.num_users + train.num_items
        self.num_users_ = train.num_users
        self.w_ = rng.normal(0.0, s, n)
        self.Vf_ = rng.normal(0.0, s, (n, self.n_factors))
        if self.implicit:
            self.w0_ = 1.0 / (1.0 + self.n_negatives)
        else:
            self.w0_ = float(train.ratings.mean())

    def _epoch(self, users, items, targets, order, lr):
        self.w0_ = float(_fm_epoch(users, items, targets, order, self.num_users_,
                                   self.w0_, self.w_, self.Vf_, lr, self.reg))

    def _finite(self):
        return np.isfinite(self.w0_) and np.isfinite(self.w_).all() and np.isfinite(self.Vf_).all()

    def _current(self, tag):
        return FMModel(self.w0_, self.w_, self.Vf_, self.num_users_, tag, self.source)


def _estimator_kwargs(config, schedule):
    kw = dict(config or {})
    if schedule is not None:
        kw.update(schedule=schedule.mode, delta_T=schedule.delta_T,
                  max_epoch=schedule.max_epoch, cycles=schedule.cycles)
    return kw


def train_rsvd(train, config=None, schedule: SnapshotSchedule | None = None) -> list[MFModel]:
    return RSVD(**_estimator_kwargs(config, schedule)).fit(train).snapshots_


def train_fm_sgd(train, config=None, schedule: SnapshotSchedule | None = None) -> list[FMModel]:
    return FMRegressor(**_estimator_kwargs(config, schedule)).fit(train).snapshots_
