import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snapens.dataset import RatingDataset, build_neighbor_index
from snapens.exceptions import NumericError
from snapens.neuse import (
    Adam, NeighborTables, NeuSE, NeuSEConfig, adam_step, backward, embed_pair, ensemble_predict,
    forward, init_params, kl_loss, load_params, memory_attend, optimal_tags, save_params,
    soft_label_matrix, soft_labels,
)
from snapens.exceptions import SnapshotFormatError
from snapens.snapshot_store import SnapshotMeta, SnapshotSet
from snapens.utils import derive_seed

from helpers import TAGS, hse_grad_errors, neuse_grad_errors, toy_batch, toy_neighbors


class TestSoftLabels:
    def test_scripted_oracle(self):
        # frozen from an independent evaluation: x = (1/11, 1, 1/11)
        lab = soft_labels([10, 20, 30], 20, 1.0)
        np.testing.assert_allclose(lab.x, [1 / 11, 1.0, 1 / 11])
        np.testing.assert_allclose(lab.y, [0.2231, 0.5538, 0.2231], atol=1e-4)

    def test_uniform_when_all_equal(self):
        np.testing.assert_allclose(soft_labels([5, 5, 5, 5], 5).y, 0.25)

    def test_sharp_limit(self):
        # x tends to one-hot as alpha grows, so y tends to softmax(0, 1, 0):
        # the peak is capped at e / (e + 2), not 1
        y = soft_labels([10, 20, 30], 20, 50.0).y
        assert np.argmax(y) == 1
        assert y[1] == pytest.approx(np.e / (np.e + 2), abs=1e-12)
        assert soft_labels([10, 20, 30], 20, 2.0).y[1] < y[1]

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            soft_labels([1, 2], 1, 0.0)

    @given(st.lists(st.integers(0, 200), min_size=1, max_size=12, unique=True),
           st.integers(0, 200), st.floats(0.1, 5.0), st.integers(-500, 500))
    def test_properties(self, tags, e_o, alpha, shift):
        y = soft_labels(tags, e_o, alpha).y
        assert abs(y.sum() - 1.0) < 1e-12
        dist = np.abs(np.asarray(tags) - e_o)
        order = np.argsort(dist, kind="stable")
        assert np.all(np.diff(y[order]) <= 1e-15)
        # translation invariance
        shifted = soft_labels(np.asarray(tags) + shift, e_o + shift, alpha).y
        np.testing.assert_allclose(shifted, y, rtol=1e-12)
        # permutation equivariance
        perm = np.random.default_rng(len(tags)).permutation(len(tags))
        np.testing.assert_allclose(soft_labels(np.asarray(tags)[perm], e_o, alpha).y, y[perm])

    def test_matrix_matches_rows(self):
        m = soft_label_matrix(TAGS, [10, 30], 2.0)
        np.testing.assert_allclose(m[0], soft_labels(TAGS, 10, 2.0).y)
        np.testing.assert_allclose(m[1], soft_labels(TAGS, 30, 2.0).y)

    def test_optimal_tags_tie_to_smaller(self):
        preds = np.array([[3.0, 5.0, 6.0], [2.0, 4.0, 4.0]])
        # first row: |3-4| == |5-4| -> tag 10; second: 4 twice -> tag 20
        np.testing.assert_array_equal(optimal_tags(preds, [4.0, 4.0], TAGS), [10, 20])


class TestKL:
    def test_examples(self):
        assert kl_loss([0.2, 0.8], [0.2, 0.8]) == pytest.approx(0.0, abs=1e-15)
        assert kl_loss([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2))

    def test_logits_form(self):
        logits = np.array([0.3, -1.0, 2.0])
        q = np.exp(logits) / np.exp(logits).sum()
        y = np.array([0.5, 0.25, 0.25])
        assert kl_loss(y, logits=logits) == pytest.approx(kl_loss(y, q), rel=1e-12)

    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6),
           st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=6))
    def test_gibbs(self, yraw, logits):
        n = min(len(yraw), len(logits))
        y = np.asarray(yraw[:n]) + 1e-3
        y /= y.sum()
        loss = kl_loss(y, logits=np.asarray(logits[:n]))
        assert loss >= -1e-12
        assert kl_loss(y, y) == pytest.approx(0.0, abs=1e-12)


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        new, _ = adam_step(p, {"w": np.zeros(2)}, lr=0.1)
        np.testing.assert_array_equal(new["w"], p["w"])

    def test_first_step_sign(self):
        p = {"w": np.array([1.0, -2.0, 0.5])}
        g = {"w": np.array([3.0, -0.2, 0.05])}
        new, state = adam_step(p, g, lr=0.01)
        np.testing.assert_allclose(new["w"] - p["w"], -0.01 * np.sign(g["w"]), rtol=1e-6)
        assert state["t"] == 1

    def test_stateful(self):
        p = {"w": np.array([1.0])}
        g = {"w": np.array([0.5])}
        a, s = adam_step(p, g, lr=0.01)
        a, _ = adam_step(a, {"w": np.array([-0.3])}, s, lr=0.01)
        b, _ = adam_step(p, g, lr=0.02)
        assert a["w"][0] != b["w"][0]

    def test_class_matches_functional(self):
        p = {"w": np.array([1.0, 2.0])}
        q = {"w": p["w"].copy()}
        opt, state = Adam(0.05), None
        for g in ([0.1, -0.4], [0.3, 0.2]):
            opt.step(p, {"w": np.array(g)})
            q, state = adam_step(q, {"w": np.array(g)}, state, lr=0.05)
        np.testing.assert_allclose(p["w"], q["w"], rtol=1e-15)


class TestForward:
    cfg = NeuSEConfig(d=2, hops=2, dropout=0.0, init_std=0.5)

    def test_embed_pair(self):
        params = init_params(3, 3, 3, self.cfg, seed=0)
        e = embed_pair(1, 2, params)
        np.testing.assert_array_equal(e, np.r_[params["user_embed"][1], params["item_embed"][2]])
        with pytest.raises(IndexError):
            embed_pair(3, 0, params)

    def test_memory_attend_examples(self):
        w, q = memory_attend(np.zeros(2), np.eye(2), np.array([[1.0, 0.0], [0.0, 3.0]]))
        np.testing.assert_allclose(w, [0.5, 0.5])
        np.testing.assert_allclose(q, [0.5, 1.5])
        with pytest.raises(ValueError):
            memory_attend(np.zeros(2), np.zeros((0, 2)), np.zeros((0, 2)))
        w, q = memory_attend(np.zeros((1, 2)), np.zeros((1, 3, 2)), np.ones((1, 3, 2)),
                             mask=np.zeros((1, 3), bool))
        assert w.sum() == 0 and np.all(q == 0)

    def test_simplex_and_target_exclusion(self):
        params = init_params(3, 3, 3, self.cfg, seed=2)
        batch, _ = toy_batch()
        t = forward(params, batch, self.cfg)
        np.testing.assert_allclose(t.y_hat.sum(1), 1.0, atol=1e-12)
        # user 2 rated only item 0, so N(u) is empty for the pair (2, 0)
        batch2 = NeighborTables(toy_neighbors()).batch([2], [0], np.ones((1, 3)))
        t2 = forward(params, batch2, self.cfg)
        h = t2.hops[-1]
        assert h.w_item.sum() == 0 and np.all(h.q_i == 0) and h.b_i[0] == 0

    def test_dropout_off_modes_agree(self):
        params = init_params(3, 3, 3, self.cfg, seed=3)
        batch, _ = toy_batch()
        a = forward(params, batch, self.cfg, "infer")
        b = forward(params, batch, self.cfg, "train", np.random.default_rng(0))
        assert np.array_equal(a.y_hat, b.y_hat)

    def test_dropout_train_needs_rng(self):
        cfg = NeuSEConfig(d=2, hops=2, dropout=0.5)
        params = init_params(3, 3, 3, cfg, seed=0)
        batch, _ = toy_batch()
        with pytest.raises(ValueError):
            forward(params, batch, cfg, "train")
        t = forward(params, batch, cfg, "train", np.random.default_rng(0))
        assert set(np.unique(t.mask0)) <= {0.0, 2.0}

    def test_zero_hop_transfer(self):
        params = init_params(3, 3, 3, self.cfg, seed=4)
        params["W_hop1"][:] = 0.0
        params["b_hop1"][:] = 0.0
        batch, _ = toy_batch()
        t = forward(params, batch, self.cfg)
        np.testing.assert_array_equal(t.hops[0].act, np.maximum(t.hops[0].o_hop, 0.0))
        assert np.isfinite(t.y_hat).all()

    def test_non_finite_raises(self):
        params = init_params(3, 3, 3, self.cfg, seed=0)
        params["W_out"][0, 0] = np.inf
        batch, _ = toy_batch()
        with pytest.raises(NumericError):
            forward(params, batch, self.cfg)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 3),
           st.sampled_from(["relu", "tanh", "sigmoid"]))
    def test_simplex_property(self, seed, hops, act):
        cfg = NeuSEConfig(d=2, hops=hops, activation=act, dropout=0.0, init_std=1.0)
        params = init_params(3, 3, 3, cfg, seed=seed)
        batch, _ = toy_batch(seed % 1000)
        t = forward(params, batch, cfg)
        np.testing.assert_allclose(t.y_hat.sum(1), 1.0, atol=1e-9)
        for h in t.hops:
            np.testing.assert_allclose(h.w_model.sum(1), 1.0, atol=1e-9)
            for w, ok in ((h.w_user, h.user_nonempty), (h.w_item, h.item_nonempty)):
                np.testing.assert_allclose(w.sum(1), ok, atol=1e-9)
        p = ensemble_predict(t.y_hat, batch.qp)
        assert np.all(p >= batch.qp.min(1) - 1e-12) and np.all(p <= batch.qp.max(1) + 1e-12)


class TestEnsemblePredict:
    def test_examples(self):
        r = np.array([1.0, 2.0, 4.0])
        assert ensemble_predict(np.full(3, 1 / 3), r) == pytest.approx(7 / 3)
        assert ensemble_predict([0, 1, 0], r) == 2.0
        assert ensemble_predict([0.2, 0.5, 0.3], [3.3, 3.3, 3.3]) == pytest.approx(3.3)
        with pytest.raises(ValueError):
            ensemble_predict([0.5, 0.5], r)


class TestBackward:
    @pytest.mark.parametrize("hops,act", [(1, "relu"), (2, "relu"), (2, "tanh"), (3, "sigmoid")])
    def test_finite_differences(self, hops, act):
        errors = neuse_grad_errors(hops, act)
        bad = {k: e for k, e in errors.items() if e >= 1e-4}
        assert not bad

    def test_hse_finite_differences(self):
        assert max(hse_grad_errors().values()) < 1e-4

    def test_output_bias_identity(self):
        cfg = NeuSEConfig(d=2, hops=2, dropout=0.0, init_std=0.5)
        params = init_params(3, 3, 3, cfg, seed=0)
        batch, _ = toy_batch()
        t = forward(params, batch, cfg)
        g = backward(t, t.y_hat.copy(), params, cfg)
        np.testing.assert_allclose(g["b_out"], 0.0, atol=1e-15)

    def test_untouched_rows_zero(self):
        cfg = NeuSEConfig(d=2, hops=2, dropout=0.0, init_std=0.5)
        train = RatingDataset([0, 0, 1, 3, 2], [0, 2, 1, 1, 3], [1.0, 2, 3, 4, 5], [1, 2, 3, 4, 5],
                              5, 4, (1, 5))
        params = init_params(5, 4, 3, cfg, seed=0)
        batch = NeighborTables(build_neighbor_index(train)).batch([0], [1], np.ones((1, 3)))
        t = forward(params, batch, cfg)
        g = backward(t, np.array([[0.2, 0.5, 0.3]]), params, cfg)
        assert np.all(g["user_embed"][1:] == 0) and np.any(g["user_embed"][0] != 0)
        assert np.all(g["item_embed"][[0, 2, 3]] == 0)
        # N(1) = {users 1, 3}, N(0) = {items 0, 2}; other memory rows are untouched
        assert np.all(g["M_u"][[0, 2, 4]] == 0) and np.all(g["C_u"][[0, 2, 4]] == 0)
        assert np.any(g["M_u"][1] != 0) and np.any(g["C_u"][3] != 0)
        assert np.all(g["C_i"][[1, 3]] == 0) and np.any(g["C_i"][[0, 2]] != 0)


def _toy_sets(n=40, seed=0):
    rng = np.random.default_rng(seed)
    users = rng.integers(0, 3, n)
    items = rng.integers(0, 3, n)
    pairs = np.column_stack([users, items])
    base = rng.uniform(1, 5, n)
    preds = np.clip(base[:, None] + rng.normal(0, 0.5, (n, 3)), 1, 5)
    metas = tuple(SnapshotMeta(k, t, "rsvd") for k, t in enumerate(TAGS))
    return SnapshotSet(metas, pairs, preds, (1.0, 5.0)), base


class TestEstimator:
    def test_zero_epochs_returns_init(self):
        X, y = _toy_sets()
        est = NeuSE(d=2, max_epochs=0, seed=3).fit(X, y, neighbors=toy_neighbors())
        init = init_params(3, 3, 3, est.config_, seed=derive_seed(3, "init"))
        for k in init:
            np.testing.assert_array_equal(est.params_[k], init[k])
        assert est.loss_curve_ and len(est.loss_curve_) == 1

    def test_deterministic(self):
        X, y = _toy_sets()
        runs = [NeuSE(d=2, max_epochs=3, batch_size=8, seed=7)
                .fit(X, y, neighbors=toy_neighbors(), eval_set=(X, y)) for _ in range(2)]
        assert runs[0].best_score_ == runs[1].best_score_
        np.testing.assert_array_equal(runs[0].predict(X), runs[1].predict(X))

    def test_predict_in_hull(self):
        X, y = _toy_sets()
        est = NeuSE(d=2, max_epochs=2, batch_size=8).fit(X, y, neighbors=toy_neighbors())
        p = est.predict(X)
        assert np.all(p >= X.preds.min(1) - 1e-12) and np.all(p <= X.preds.max(1) + 1e-12)
        np.testing.assert_allclose(est.predict_weights(X).sum(1), 1.0)

    def test_needs_neighbors(self):
        X, y = _toy_sets()
        with pytest.raises(ValueError):
            NeuSE().fit(X, y)
        with pytest.raises(TypeError):
            NeuSE().fit(X.preds, y, neighbors=toy_neighbors())

    def test_sklearn_api(self):
        est = NeuSE(d=4, hops=1)
        assert est.get_params()["hops"] == 1
        assert est.set_params(alpha=2.0).config.alpha == 2.0

    def test_save_load_round_trip(self, tmp_path):
        X, y = _toy_sets()
        nb = toy_neighbors()
        est = NeuSE(d=2, max_epochs=1, batch_size=8).fit(X, y, neighbors=nb)
        est.save(tmp_path / "m.params")
        back = NeuSE.load(tmp_path / "m.params", nb)
        for k in est.params_:
            assert est.params_[k].tobytes() == back.params_[k].tobytes()
        np.testing.assert_array_equal(est.predict(X), back.predict(X))
        assert back.get_params() == est.get_params()


class TestParamsBlob:
    def test_round_trip_and_header(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(2,)), "c": np.zeros((0, 5))}
        save_params(tmp_path / "p.bin", params, {"note": "x"})
        raw = (tmp_path / "p.bin").read_bytes()
        assert raw[:8] == b"SNAPENSP"
        back, meta = load_params(tmp_path / "p.bin")
        assert meta == {"note": "x"} and list(back) == ["a", "b", "c"]
        for k in params:
            assert back[k].shape == params[k].shape
            assert back[k].tobytes() == params[k].tobytes()

    def test_errors(self, tmp_path):
        p = tmp_path / "p.bin"
        save_params(p, {"a": np.ones(4)})
        raw = p.read_bytes()
        p.write_bytes(raw[:-3])
        with pytest.raises(SnapshotFormatError, match="truncated"):
            load_params(p)
        p.write_bytes(b"NOTMAGIC" + raw[8:])
        with pytest.raises(SnapshotFormatError, match="not a parameter blob"):
            load_params(p)
        p.write_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
        with pytest.raises(SnapshotFormatError, match="version 2"):
            load_params(p)
        p.write_bytes(b"")
        with pytest.raises(SnapshotFormatError):
            load_params(p)
