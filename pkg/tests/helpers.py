"""Finite-difference gradient checks shared by the unit and acceptance suites."""

import numpy as np

from snapens.dataset import RatingDataset, build_neighbor_index
from snapens.ensembles import hse_backward, hse_forward, hse_init
from snapens.neuse.network import (
    NeighborTables, NeuSEConfig, backward, forward, init_params, kl_loss, soft_label_matrix,
)

TAGS = [10, 20, 30]


def toy_neighbors():
    """3 users x 3 items; every user and item has at least one neighbor, and
    some neighborhoods empty out once the target pair is excluded."""
    train = RatingDataset([0, 0, 1, 1, 2], [0, 1, 1, 2, 0], [1, 2, 3, 4, 5], [1, 2, 3, 4, 5],
                          3, 3, (1, 5))
    return build_neighbor_index(train, 50)


def toy_batch(seed=0):
    rng = np.random.default_rng(seed)
    users = np.array([0, 1, 2, 0, 2, 1])
    items = np.array([0, 1, 2, 2, 1, 0])
    qp = rng.uniform(1, 5, (len(users), 3))
    e_o = np.array([10, 20, 30, 20, 10, 30])
    Y = soft_label_matrix(TAGS, e_o, 1.0)
    return NeighborTables(toy_neighbors()).batch(users, items, qp), Y


def relative_error(num, ana):
    den = np.linalg.norm(num) + np.linalg.norm(ana)
    return 0.0 if den == 0 else float(np.linalg.norm(num - ana) / den)


def numeric_grad(loss, params, step=1e-5):
    out = {}
    for name, v in params.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            orig = v[idx]
            v[idx] = orig + step
            up = loss()
            v[idx] = orig - step
            down = loss()
            v[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def neuse_grad_errors(hops=2, activation="relu", seed=1, step=1e-5):
    cfg = NeuSEConfig(d=2, hops=hops, activation=activation, dropout=0.0, init_std=0.5)
    params = init_params(3, 3, 3, cfg, seed=seed)
    batch, Y = toy_batch()

    def loss():
        return kl_loss(Y, logits=forward(params, batch, cfg).logits).mean()

    analytic = backward(forward(params, batch, cfg), Y, params, cfg)
    numeric = numeric_grad(loss, params, step)
    return {k: relative_error(numeric[k], analytic[k]) for k in params}


def hse_grad_errors(hidden=4, seed=1, step=1e-5):
    params = hse_init(3, hidden, 0.5, seed)
    _, Y = toy_batch()
    x = np.random.default_rng(seed).uniform(1, 5, (len(Y), 3))

    def loss():
        return kl_loss(Y, logits=hse_forward(params, x)["logits"]).mean()

    analytic = hse_backward(hse_forward(params, x), Y, params)
    numeric = numeric_grad(loss, params, step)
    return {k: relative_error(numeric[k], analytic[k]) for k in params}
