from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .training import SoftLabelEnsemble
from ..utils import derive_seed
from .network import NeighborTables, NeuSEConfig, backward, forward, init_params
from .persist import load_params, save_params


class NeuSE(SoftLabelEnsemble):
    """Neural snapshot ensemble.

    A multi-hop memory network reads a model memory, the neighborhood of the
    item (users who rated it) and the neighborhood of the user (items they
    rated), then outputs softmax weights over the snapshots. It is trained
    with KL divergence against soft labels centred on each pair's best
    snapshot; the prediction is the weighted average of snapshot outputs.

    Parameters
    ----------
    d : int
        User/item embedding size; memory slots have size ``2 * d``.
    hops : int
        Number of memory hops (1 = single memory layer).
    activation : {'relu', 'sigmoid', 'tanh'}
        Transfer nonlinearity between hops.
    dropout : float
        Inverted-dropout rate on the pair embedding and hop states.
    alpha : float
        Sharpness of the soft labels.
    task : {'rating', 'ranking'}
        Chooses the validation metric (RMSE or HR@``n_cutoff``).
    """

    def __init__(self, d=16, hops=2, activation="relu", dropout=0.5, alpha=1.0, lr=0.01,
                 batch_size=128, beta1=0.9, beta2=0.999, eps=1e-8, init_std=0.01,
                 max_epochs=20, task="rating", n_cutoff=20, seed=0):
        self.d = d
        self.hops = hops
        self.activation = activation
        self.dropout = dropout
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.init_std = init_std
        self.max_epochs = max_epochs
        self.task = task
        self.n_cutoff = n_cutoff
        self.seed = seed

    @property
    def config(self) -> NeuSEConfig:
        return NeuSEConfig(self.d, self.hops, self.activation, self.dropout, self.alpha,
                           self.lr, self.batch_size, self.beta1, self.beta2, self.eps,
                           self.init_std, self.max_epochs, self.seed)

    def fit(self, X, y, neighbors=None, eval_set=None):
        """Train on the snapshot predictions ``X`` with targets ``y``.

        ``neighbors`` is the training :class:`~snapens.dataset.NeighborIndex`;
        ``eval_set=(X_val, y_val)`` enables best-epoch selection.
        """
        if neighbors is None:
            raise ValueError("NeuSE.fit needs the neighbor index")
        return super().fit(X, y, eval_set=eval_set, neighbors=neighbors)

    def _setup(self, X, neighbors):
        self.config_ = self.config
        self.tables_ = NeighborTables(neighbors)
        self.params_ = init_params(neighbors.num_users, neighbors.num_items, X.n_snapshots,
                                   self.config_, seed=derive_seed(self.seed, "init"))

    def _forward(self, X, rows, mode, rng):
        batch = self.tables_.batch(X.pairs[rows, 0], X.pairs[rows, 1], X.preds[rows])
        trace = forward(self.params_, batch, self.config_, mode, rng)
        return trace, trace.logits

    def _backward(self, trace, Y):
        return backward(trace, Y, self.params_, self.config_)

    def trace(self, X, rows=None, mode="infer", rng=None):
        """Forward trace (attention weights, hop states, ...) for rows of ``X``."""
        rows = np.arange(len(X)) if rows is None else np.asarray(rows)
        return self._forward(X, rows, mode, rng)[0]

    def save(self, path):
        """Write the fitted parameters as a versioned binary blob."""
        check_is_fitted(self, "params_")
        meta = {
            "estimator": "NeuSE",
            "hyperparameters": self.get_params(),
            "tags": [float(t) for t in self.tags_],
            "rating_scale": None if self.rating_scale_ is None else list(self.rating_scale_),
            "best_epoch": int(self.best_epoch_),
        }
        save_params(path, self.params_, meta)

    @classmethod
    def load(cls, path, neighbors):
        """Rebuild a fitted estimator from :meth:`save` output."""
        params, meta = load_params(path)
        if meta.get("estimator") != "NeuSE":
            raise ValueError(f"{path} does not hold NeuSE parameters")
        model = cls(**meta["hyperparameters"])
        model.config_ = model.config
        model.tables_ = NeighborTables(neighbors)
        model.params_ = params
        model.tags_ = np.asarray(meta["tags"], dtype=np.float64)
        model.n_snapshots_ = len(model.tags_)
        scale = meta["rating_scale"]
        model.rating_scale_ = None if scale is None else tuple(scale)
        model.best_epoch_ = meta["best_epoch"]
        return model
