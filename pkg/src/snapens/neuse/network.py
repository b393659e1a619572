"""Multi-memory attention network that maps a (user, item) pair and its
snapshot predictions to ensemble weights over the snapshots.

Everything is batched: a leading axis of size B runs through every array.
Gradients are derived by hand; ``tests/test_gradients.py`` checks them
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..exceptions import NumericError

ACTIVATIONS = ("relu", "sigmoid", "tanh")


@dataclass(frozen=True)
class NeuSEConfig:
    d: int = 16
    hops: int = 2
    activation: str = "relu"
    dropout: float = 0.5
    alpha: float = 1.0
    lr: float = 0.01
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_std: float = 0.01
    max_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.hops < 1 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("d, hops and batch_size must be >= 1, max_epochs >= 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.alpha <= 0 or self.lr <= 0 or self.init_std < 0:
            raise ValueError("alpha and lr must be positive, init_std non-negative")

    @property
    def D(self) -> int:
        return 2 * self.d


def param_shapes(num_users, num_items, n_snapshots, config: NeuSEConfig) -> dict:
    d, D, nm = config.d, config.D, n_snapshots
    width = nm + 3 * D + 3
    shapes = {
        "user_embed": (num_users, d),
        "item_embed": (num_items, d),
        "M_m": (nm, D), "C_m": (nm, D),
        "M_u": (num_users, D), "C_u": (num_users, D),
        "M_i": (num_items, D), "C_i": (num_items, D),
        "W_model": (D,), "b_model": (1,),
        "W_user": (D,), "b_user": (1,),
        "W_item": (D,), "b_item": (1,),
        "W_out": (width, nm), "b_out": (nm,),
    }
    for h in range(1, config.hops):
        shapes[f"W_att{h}"] = (width, nm)
        shapes[f"b_att{h}"] = (nm,)
        shapes[f"W_hop{h}"] = (D, D)
        shapes[f"b_hop{h}"] = (D,)
    return shapes


def init_params(num_users, num_items, n_snapshots, config: NeuSEConfig, seed=None) -> dict:
    """Every tensor i.i.d. Gaussian(0, init_std), drawn in a fixed order."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return {name: rng.normal(0.0, config.init_std, shape)
            for name, shape in param_shapes(num_users, num_items, n_snapshots, config).items()}


# -- building blocks -------------------------------------------------------

def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def masked_softmax(scores, mask):
    """Softmax over the valid slots of each row; rows without any valid slot
    get all-zero weights."""
    s = np.where(mask, scores, -np.inf)
    top = np.max(s, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, scores, 0.0) - top), 0.0)
    den = e.sum(axis=-1, keepdims=True)
    return np.divide(e, den, out=np.zeros_like(e), where=den > 0)


def embed_pair(users, items, params) -> np.ndarray:
    """``e_ui = [e_u ; e_i]`` for arrays (or scalars) of ids."""
    ue, ie = params["user_embed"], params["item_embed"]
    users, items = np.asarray(users), np.asarray(items)
    if np.any(users < 0) or np.any(users >= len(ue)):
        raise IndexError("user id out of range")
    if np.any(items < 0) or np.any(items >= len(ie)):
        raise IndexError("item id out of range")
    return np.concatenate([ue[users], ie[items]], axis=-1)


def memory_attend(query, internal, external, mask=None):
    """Attention read over memory slots.

    ``query`` is (D,) or (B, D). ``internal``/``external`` are (K, D) slot
    tables shared by the batch or (B, K, D) per-example gathers. Returns the
    simplex weights and ``q = sum_k w_k c_k``. An empty slot set raises
    ``ValueError`` unless a mask is given, in which case empty rows read as
    zero.
    """
    single = np.ndim(query) == 1
    q = np.atleast_2d(query)
    if internal.ndim == 2:
        if internal.shape[0] == 0:
            raise ValueError("empty neighborhood")
        scores = q @ internal.T
        w = softmax(scores) if mask is None else masked_softmax(scores, mask)
        out = w @ external
    else:
        if internal.shape[1] == 0:
            raise ValueError("empty neighborhood")
        scores = np.matmul(internal, q[:, :, None])[..., 0]
        w = softmax(scores) if mask is None else masked_softmax(scores, mask)
        out = np.matmul(w[:, None, :], external)[:, 0]
    if single:
        return w[0], out[0]
    return w, out


def bias_project(q, W, b):
    return q @ W + np.asarray(b).reshape(-1)[0]


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return np.tanh(x)


def _act_grad(name, pre, out):
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "sigmoid":
        return out * (1.0 - out)
    return 1.0 - out * out


# -- batches and traces ----------------------------------------------------

@dataclass
class Batch:
    users: np.ndarray
    items: np.ndarray
    qp: np.ndarray
    nbr_users: np.ndarray  # N(i): (B, K) user ids
    nbr_users_mask: np.ndarray
    nbr_items: np.ndarray  # N(u): (B, K) item ids
    nbr_items_mask: np.ndarray


class NeighborTables:
    """Padded neighbor lists, ready for batched gathers."""

    def __init__(self, neighbors):
        self.item_users, self.item_len = neighbors.padded("item")
        self.user_items, self.user_len = neighbors.padded("user")
        self.num_users = neighbors.num_users
        self.num_items = neighbors.num_items

    def batch(self, users, items, qp) -> Batch:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        K = self.item_users.shape[1]
        slots = np.arange(K)
        nu = self.item_users[items]
        mu = (slots < self.item_len[items][:, None]) & (nu != users[:, None])
        Ki = self.user_items.shape[1]
        ni = self.user_items[users]
        mi = (np.arange(Ki) < self.user_len[users][:, None]) & (ni != items[:, None])
        return Batch(users, items, np.asarray(qp, dtype=np.float64), nu, mu, ni, mi)


@dataclass
class HopTrace:
    query: np.ndarray
    w_model: np.ndarray
    q_m: np.ndarray
    w_user: np.ndarray
    q_u: np.ndarray
    user_nonempty: np.ndarray
    w_item: np.ndarray
    q_i: np.ndarray
    item_nonempty: np.ndarray
    b_m: np.ndarray
    b_u: np.ndarray
    b_i: np.ndarray
    x: np.ndarray = None
    # transfer hops only
    p_hop: np.ndarray = None
    o_hop: np.ndarray = None
    pre: np.ndarray = None
    act: np.ndarray = None
    mask: np.ndarray = None


@dataclass
class ForwardTrace:
    batch: Batch
    e_ui: np.ndarray
    z0: np.ndarray
    mask0: np.ndarray
    hops: list = field(default_factory=list)
    logits: np.ndarray = None
    y_hat: np.ndarray = None

    @property
    def states(self):
        """Hop states ``z^0 .. z^{H-1}`` after dropout."""
        return [self.z0] + [h.act if h.mask is None else h.act * h.mask for h in self.hops[:-1]]


def _dropout_mask(shape, rate, rng):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _check(name, a):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activation in {name}")


def _read_memories(params, batch, z):
    w_m, q_m = memory_attend(z, params["M_m"], params["C_m"])
    Mu, Cu = params["M_u"][batch.nbr_users], params["C_u"][batch.nbr_users]
    w_u, q_u = memory_attend(z, Mu, Cu, batch.nbr_users_mask)
    Mi, Ci = params["M_i"][batch.nbr_items], params["C_i"][batch.nbr_items]
    w_i, q_i = memory_attend(z, Mi, Ci, batch.nbr_items_mask)
    u_ok = batch.nbr_users_mask.any(axis=1).astype(np.float64)
    i_ok = batch.nbr_items_mask.any(axis=1).astype(np.float64)
    b_m = bias_project(q_m, params["W_model"], params["b_model"])
    b_u = bias_project(q_u, params["W_user"], params["b_user"]) * u_ok
    b_i = bias_project(q_i, params["W_item"], params["b_item"]) * i_ok
    return HopTrace(z, w_m, q_m, w_u, q_u, u_ok, w_i, q_i, i_ok, b_m, b_u, b_i)


def forward(params, batch: Batch, config: NeuSEConfig, mode="infer", rng=None) -> ForwardTrace:
    """Run all hops; ``mode='train'`` applies inverted dropout to ``e_ui`` and
    every hop state."""
    train = mode == "train" and config.dropout > 0
    if train and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    e_ui = embed_pair(batch.users, batch.items, params)
    mask0 = _dropout_mask(e_ui.shape, config.dropout, rng) if train else None
    z = e_ui * mask0 if train else e_ui
    trace = ForwardTrace(batch, e_ui, z, mask0)
    for h in range(1, config.hops + 1):
        ht = _read_memories(params, batch, z)
        trace.hops.append(ht)
        if h < config.hops:
            ht.x = np.concatenate([ht.q_m, ht.q_u, ht.q_i, batch.qp,
                                   ht.b_m[:, None], ht.b_u[:, None], ht.b_i[:, None]], axis=1)
            ht.p_hop = softmax(ht.x @ params[f"W_att{h}"] + params[f"b_att{h}"])
            ht.o_hop = ht.p_hop @ params["C_m"]
            ht.pre = z @ params[f"W_hop{h}"].T + ht.o_hop + params[f"b_hop{h}"]
            ht.act = _act(config.activation, ht.pre)
            _check(f"hop {h} state", ht.act)
            ht.mask = _dropout_mask(ht.act.shape, config.dropout, rng) if train else None
            z = ht.act * ht.mask if train else ht.act
        else:
            ht.x = np.concatenate([batch.qp, ht.q_m, ht.q_u, ht.q_i,
                                   ht.b_m[:, None], ht.b_u[:, None], ht.b_i[:, None]], axis=1)
            trace.logits = ht.x @ params["W_out"] + params["b_out"]
            _check("output logits", trace.logits)
            trace.y_hat = softmax(trace.logits)
    return trace


# -- loss and labels -------------------------------------------------------

@dataclass(frozen=True)
class SoftLabel:
    y: np.ndarray
    e_o: float
    x: np.ndarray


def soft_labels(tags, e_o, alpha=1.0) -> SoftLabel:
    """``y = softmax(x)`` with ``x_s = (|e_s - e_o| + 1) ** -alpha``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    tags = np.asarray(tags, dtype=np.float64)
    x = (np.abs(tags - e_o) + 1.0) ** (-alpha)
    return SoftLabel(softmax(x), float(e_o), x)


def soft_label_matrix(tags, e_o, alpha=1.0) -> np.ndarray:
    """Row-wise soft labels for an array of optimal tags."""
    tags = np.asarray(tags, dtype=np.float64)
    x = (np.abs(tags[None, :] - np.asarray(e_o, dtype=np.float64)[:, None]) + 1.0) ** (-alpha)
    return softmax(x, axis=1)


def optimal_tags(preds, targets, tags) -> np.ndarray:
    """Tag of the snapshot closest to each target; ties go to the smaller tag."""
    preds = np.asarray(preds, dtype=np.float64)
    err = np.abs(preds - np.asarray(targets, dtype=np.float64)[:, None])
    return np.asarray(tags, dtype=np.float64)[np.argmin(err, axis=1)]


def kl_loss(y, y_hat=None, logits=None):
    """``sum_s y_s (ln y_s - ln y_hat_s)`` along the last axis, with 0 ln 0 = 0.

    Pass ``logits`` instead of ``y_hat`` for a log-domain evaluation.
    """
    y = np.asarray(y, dtype=np.float64)
    log_q = log_softmax(np.asarray(logits)) if logits is not None else np.log(y_hat)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(y > 0, y * (np.log(np.where(y > 0, y, 1.0)) - log_q), 0.0)
    return terms.sum(axis=-1)


def ensemble_predict(y_hat, r_hat):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if y_hat.shape[-1] != r_hat.shape[-1]:
        raise ValueError(f"weight length {y_hat.shape[-1]} != prediction length {r_hat.shape[-1]}")
    return np.sum(y_hat * r_hat, axis=-1)


# -- backward --------------------------------------------------------------

def _attend_grad(z, w, dq, internal, external, mask=None):
    """Gradients of a memory read: returns (dz, d_internal, d_external);
    the memory grads match the shape of ``internal``."""
    if internal.ndim == 2:
        d_ext = w.T @ dq
        dw = dq @ external.T
        dp = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
        return dp @ internal, dp.T @ z, d_ext
    d_ext = w[:, :, None] * dq[:, None, :]
    dw = np.matmul(external, dq[:, :, None])[..., 0]
    dp = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
    d_int = dp[:, :, None] * z[:, None, :]
    return np.matmul(dp[:, None, :], internal)[:, 0], d_int, d_ext


def _scatter(g_int, g_ext, ids, d_int, d_ext):
    """Row-wise scatter-add of gathered gradients into two tables sharing ids."""
    n = ids.size
    D = g_int.shape[1]
    sel = sp.csr_matrix((np.ones(n), (ids.ravel(), np.arange(n))), shape=(g_int.shape[0], n))
    both = sel @ np.hstack([d_int.reshape(n, D), d_ext.reshape(n, D)])
    g_int += both[:, :D]
    g_ext += both[:, D:]


def backward(trace: ForwardTrace, y, params, config: NeuSEConfig, reduction="mean") -> dict:
    """Gradients of the (mean or summed) KL loss over the batch, for every
    parameter; untouched rows stay zero."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    batch = trace.batch
    B = len(batch.users)
    D = config.D
    nm = batch.qp.shape[1]
    scale = 1.0 / B if reduction == "mean" else 1.0

    dlogits = (trace.y_hat - y) * scale
    last = trace.hops[-1]
    grads["W_out"] += last.x.T @ dlogits
    grads["b_out"] += dlogits.sum(axis=0)
    dx = dlogits @ params["W_out"].T
    # final concat: [q_p, q_m, q_u, q_i, b_m, b_u, b_i]
    o = nm
    dqs = (dx[:, o:o + D], dx[:, o + D:o + 2 * D], dx[:, o + 2 * D:o + 3 * D])
    dbs = dx[:, o + 3 * D], dx[:, o + 3 * D + 1], dx[:, o + 3 * D + 2]

    dz = _memory_backward(last, dqs, dbs, batch, params, grads)
    states = trace.states
    for h in range(config.hops - 1, 0, -1):
        ht = trace.hops[h - 1]
        d_act = dz if ht.mask is None else dz * ht.mask
        dpre = d_act * _act_grad(config.activation, ht.pre, ht.act)
        z_prev = states[h - 1]
        grads[f"W_hop{h}"] += dpre.T @ z_prev
        grads[f"b_hop{h}"] += dpre.sum(axis=0)
        dz_prev = dpre @ params[f"W_hop{h}"]
        # o^h = p^h C_m
        grads["C_m"] += ht.p_hop.T @ dpre
        dp = dpre @ params["C_m"].T
        dlog = ht.p_hop * (dp - np.sum(ht.p_hop * dp, axis=1, keepdims=True))
        grads[f"W_att{h}"] += ht.x.T @ dlog
        grads[f"b_att{h}"] += dlog.sum(axis=0)
        dxh = dlog @ params[f"W_att{h}"].T
        # hop concat: [q_m, q_u, q_i, q_p, b_m, b_u, b_i]
        dqs = (dxh[:, :D], dxh[:, D:2 * D], dxh[:, 2 * D:3 * D])
        c = 3 * D + nm
        dbs = dxh[:, c], dxh[:, c + 1], dxh[:, c + 2]
        dz = dz_prev + _memory_backward(ht, dqs, dbs, batch, params, grads)

    if trace.mask0 is not None:
        dz = dz * trace.mask0
    d = config.d
    np.add.at(grads["user_embed"], batch.users, dz[:, :d])
    np.add.at(grads["item_embed"], batch.items, dz[:, d:])
    return grads


def _memory_backward(ht: HopTrace, dqs, dbs, batch, params, grads):
    dq_m, dq_u, dq_i = (g.copy() for g in dqs)
    db_m, db_u, db_i = dbs
    db_u = db_u * ht.user_nonempty
    db_i = db_i * ht.item_nonempty
    for name, q, db, dq in (("model", ht.q_m, db_m, dq_m), ("user", ht.q_u, db_u, dq_u),
                            ("item", ht.q_i, db_i, dq_i)):
        grads[f"W_{name}"] += q.T @ db
        grads[f"b_{name}"] += db.sum()
        dq += db[:, None] * params[f"W_{name}"]
    z = ht.query
    dz, dM, dC = _attend_grad(z, ht.w_model, dq_m, params["M_m"], params["C_m"])
    grads["M_m"] += dM
    grads["C_m"] += dC
    Mu, Cu = params["M_u"][batch.nbr_users], params["C_u"][batch.nbr_users]
    dzu, dM, dC = _attend_grad(z, ht.w_user, dq_u, Mu, Cu)
    _scatter(grads["M_u"], grads["C_u"], batch.nbr_users, dM, dC)
    Mi, Ci = params["M_i"][batch.nbr_items], params["C_i"][batch.nbr_items]
    dzi, dM, dC = _attend_grad(z, ht.w_item, dq_i, Mi, Ci)
    _scatter(grads["M_i"], grads["C_i"], batch.nbr_items, dM, dC)
    return dz + dzu + dzi
