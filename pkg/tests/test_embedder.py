import math

import numpy as np
import pytest

from rym.data import LabeledSeries, Recording, ValenceState
from rym.embedder import (
    ContrastiveBatch,
    EmbedderModel,
    EncoderConfig,
    TrainingDivergedError,
    _batch_step,
    batch_infonce,
    build_pool,
    encode,
    encode_windows,
    forward,
    infonce_loss,
    init_encoder,
    load_model,
    sample_contrastive_batch,
    save_model,
    train,
)


def make_series(subject, labels, n_channels=2, rate=10.0, seed=0, offset_scale=0.0):
    """Random recording whose per-state channel offsets make labels decodable
    when offset_scale > 0."""
    labels = np.asarray(labels, dtype=np.int8)
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((n_channels, labels.size))
    if offset_scale:
        patterns = {
            -1: rng.standard_normal(n_channels),
            0: np.zeros(n_channels),
            1: rng.standard_normal(n_channels),
        }
        for code, pat in patterns.items():
            samples[:, labels == code] += offset_scale * pat[:, None]
    rec = Recording(
        subject_id=subject,
        sample_rate_hz=rate,
        channels=tuple(f"c{i}" for i in range(n_channels)),
        samples=samples,
    )
    return LabeledSeries(recording=rec, labels=labels)


SMALL = EncoderConfig(
    receptive_field=3, hidden_units=4, out_dim=3, batch_size=8, iterations=5, seed=11
)


class TestInfoNCE:
    def test_uniform_similarity_gives_log_n(self):
        # every candidate equally similar -> softmax is uniform over N entries
        v = np.array([1.0, 0.0, 0.0])
        for n_neg in (1, 3, 9):
            loss = infonce_loss(v, v, [v] * n_neg, temperature=0.7)
            assert loss == pytest.approx(math.log(n_neg + 1), abs=1e-12)

    def test_orthogonal_negative_value(self):
        a = np.array([1.0, 0.0])
        n = np.array([0.0, 1.0])
        # -log(e / (e + 1)) evaluated independently
        expect = math.log(math.e + 1.0) - 1.0
        assert infonce_loss(a, a, [n], 1.0) == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(0.3133, abs=5e-5)

    def test_matches_bruteforce_scalar_reference(self):
        rng = np.random.default_rng(5)
        vecs = rng.standard_normal((7, 5))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        a, p, negs = vecs[0], vecs[1], vecs[2:]
        tau = 0.5
        # independent reference: plain python floats, no shared code path
        num = math.exp(float(np.dot(a, p)) / tau)
        den = num + sum(math.exp(float(np.dot(a, n)) / tau) for n in negs)
        expect = -math.log(num / den)
        assert infonce_loss(a, p, negs, tau) == pytest.approx(expect, abs=1e-10)

    def test_rejects_bad_temperature_and_shapes(self):
        v = np.ones(3) / math.sqrt(3)
        with pytest.raises(ValueError, match="temperature"):
            infonce_loss(v, v, [v], 0.0)
        with pytest.raises(ValueError, match="dimension"):
            infonce_loss(v, np.ones(4) / 2.0, [v], 1.0)
        with pytest.raises(ValueError, match="negative"):
            infonce_loss(v, v, np.empty((0, 3)), 1.0)

    def test_batch_matches_single_anchor_loss(self):
        rng = np.random.default_rng(9)
        b, d, tau = 6, 4, 0.8
        A, P, Ng = (rng.standard_normal((b, d)) for _ in range(3))
        for m in (A, P, Ng):
            m /= np.linalg.norm(m, axis=1, keepdims=True)
        loss, *_ = batch_infonce(A, P, Ng, tau)
        singles = [infonce_loss(A[i], P[i], Ng, tau) for i in range(b)]
        assert loss == pytest.approx(np.mean(singles), abs=1e-12)

    def test_batch_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        b, d = 4, 3
        A, P, Ng = (rng.standard_normal((b, d)) for _ in range(3))
        loss, dA, dP, dNg = batch_infonce(A, P, Ng, 0.9)
        eps = 1e-6
        for M, dM in ((A, dA), (P, dP), (Ng, dNg)):
            for idx in np.ndindex(M.shape):
                M[idx] += eps
                up = batch_infonce(A, P, Ng, 0.9)[0]
                M[idx] -= 2 * eps
                down = batch_infonce(A, P, Ng, 0.9)[0]
                M[idx] += eps
                fd = (up - down) / (2 * eps)
                assert dM[idx] == pytest.approx(fd, abs=1e-7)


class TestEncoder:
    def test_embeddings_unit_norm(self):
        rng = np.random.default_rng(0)
        enc = init_encoder(rng, 2, SMALL)
        emb = forward(enc, rng.standard_normal((20, 2, 3)), SMALL)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-6)

    def test_deterministic_for_seed(self):
        win = np.random.default_rng(1).standard_normal((1, 2, 3))
        a = forward(init_encoder(np.random.default_rng(4), 2, SMALL), win, SMALL)
        b = forward(init_encoder(np.random.default_rng(4), 2, SMALL), win, SMALL)
        np.testing.assert_array_equal(a, b)

    def test_zero_params_raise(self):
        enc = init_encoder(np.random.default_rng(0), 2, SMALL)
        for arr in enc.params().values():
            arr[...] = 0.0
        with pytest.raises(ValueError, match="zero-norm"):
            forward(enc, np.ones((1, 2, 3)), SMALL)

    def test_shape_mismatch_rejected(self):
        enc = init_encoder(np.random.default_rng(0), 2, SMALL)
        with pytest.raises(ValueError, match="shape"):
            forward(enc, np.ones((1, 3, 3)), SMALL)

    def test_receptive_field_one(self):
        cfg = EncoderConfig(receptive_field=1, hidden_units=3, out_dim=2, batch_size=4)
        enc = init_encoder(np.random.default_rng(2), 2, cfg)
        emb = forward(enc, np.random.default_rng(3).standard_normal((5, 2, 1)), cfg)
        assert emb.shape == (5, 2)


def full_loss(encoders, pool, batch, cfg):
    """Recompute the scalar batch loss from scratch (forward only)."""
    roles = (batch.anchor, batch.positive, batch.negative)
    embs = []
    for flat in roles:
        out = np.empty((len(flat), cfg.out_dim))
        sess = pool.session_of(flat)
        for si, sid in enumerate(pool.session_ids):
            rows = np.flatnonzero(sess == si)
            if rows.size:
                out[rows] = forward(encoders[sid], pool.gather(flat[rows], si), cfg)
        embs.append(out)
    return batch_infonce(embs[0], embs[1], embs[2], cfg.temperature)[0]


class TestGradientCheck:
    def test_analytic_grads_match_central_differences(self):
        # the acceptance-level check at module granularity: every encoder
        # parameter, random small instances
        cfg = SMALL
        failures = []
        for trial in range(4):
            rng = np.random.default_rng(100 + trial)
            sessions = [
                make_series(f"s{i}", rng.integers(-1, 2, size=30), seed=200 + trial * 3 + i)
                for i in range(2)
            ]
            pool = build_pool(sessions, cfg.receptive_field)
            encoders = {sid: init_encoder(rng, 2, cfg) for sid in pool.session_ids}
            batch = sample_contrastive_batch(pool, cfg, rng)
            _, grads = _batch_step(encoders, pool, batch, cfg)
            step = 1e-5
            for sid, g in grads.items():
                enc = encoders[sid]
                for name, grad in g.items():
                    arr = getattr(enc, name)
                    for idx in np.ndindex(arr.shape):
                        arr[idx] += step
                        up = full_loss(encoders, pool, batch, cfg)
                        arr[idx] -= 2 * step
                        down = full_loss(encoders, pool, batch, cfg)
                        arr[idx] += step
                        fd = (up - down) / (2 * step)
                        denom = max(abs(fd), abs(grad[idx]), 1e-8)
                        rel = abs(grad[idx] - fd) / denom
                        if rel > 1e-4:
                            failures.append((trial, sid, name, idx, rel))
        assert not failures, failures[:10]


class TestSampling:
    def test_single_session_all_neutral(self):
        sessions = [make_series("a", np.zeros(40, dtype=int))]
        pool = build_pool(sessions, 3)
        batch = sample_contrastive_batch(pool, SMALL, np.random.default_rng(0))
        assert np.all(pool.label_of(batch.positive) == 0)

    def test_positive_comes_from_other_session_when_needed(self):
        # label +1 exists only in session b; anchors with that label must pull
        # their positive from b
        labels_a = np.zeros(40, dtype=int)
        labels_b = np.ones(40, dtype=int)
        sessions = [make_series("a", labels_a), make_series("b", labels_b, seed=1)]
        pool = build_pool(sessions, 3)
        cfg = EncoderConfig(receptive_field=3, hidden_units=4, out_dim=3, batch_size=64)
        batch = sample_contrastive_batch(pool, cfg, np.random.default_rng(2))
        pos_sessions = pool.session_of(batch.positive)
        anchor_labels = pool.label_of(batch.anchor)
        b_index = pool.session_ids.index("b")
        assert np.all(pos_sessions[anchor_labels == 1] == b_index)
        np.testing.assert_array_equal(
            pool.label_of(batch.positive), anchor_labels
        )

    def test_positive_never_equals_anchor(self):
        sessions = [make_series("a", np.zeros(30, dtype=int))]
        pool = build_pool(sessions, 3)
        cfg = EncoderConfig(receptive_field=3, hidden_units=4, out_dim=3, batch_size=512)
        batch = sample_contrastive_batch(pool, cfg, np.random.default_rng(3))
        assert np.all(batch.anchor != batch.positive)

    def test_lone_label_rejected(self):
        labels = np.zeros(30, dtype=int)
        labels[14] = 1  # with receptive_field 3, exactly one +1-centered window
        sessions = [make_series("a", labels)]
        pool = build_pool(sessions, 3)
        with pytest.raises(ValueError, match="POSITIVE"):
            sample_contrastive_batch(pool, SMALL, np.random.default_rng(0))

    def test_pool_label_histogram_order_independent(self):
        s1 = make_series("a", np.random.default_rng(0).integers(-1, 2, 50), seed=2)
        s2 = make_series("b", np.random.default_rng(1).integers(-1, 2, 50), seed=3)
        p_fwd = build_pool([s1, s2], 3)
        p_rev = build_pool([s2, s1], 3)
        np.testing.assert_array_equal(p_fwd.labels, p_rev.labels)
        assert p_fwd.session_ids == p_rev.session_ids


class TestTraining:
    def _sessions(self, n=3, length=120, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for i in range(n):
            labels = np.repeat(rng.permutation([-1, 0, 1, -1, 0, 1]), length // 6)
            out.append(make_series(f"s{i}", labels, seed=50 + i, offset_scale=1.0))
        return out

    def test_loss_trend_decreases(self):
        cfg = EncoderConfig(
            receptive_field=3, hidden_units=8, out_dim=3, batch_size=64,
            iterations=120, learning_rate=0.05, seed=7,
        )
        model = train(self._sessions(), cfg)
        hist = model.loss_history
        assert hist.shape == (120,)
        q = len(hist) // 4
        assert hist[-q:].mean() < hist[:q].mean()

    def test_zero_iterations_is_seeded_init(self):
        cfg = EncoderConfig(
            receptive_field=3, hidden_units=4, out_dim=3, batch_size=16, iterations=0, seed=5
        )
        sessions = self._sessions(n=2)
        model = train(sessions, cfg)
        assert model.loss_history.size == 0
        pool = build_pool(sessions, cfg.receptive_field)
        rng = np.random.default_rng(cfg.seed)
        for sid in pool.session_ids:
            expect = init_encoder(rng, 2, cfg)
            got = model.encoders[sid]
            for name, arr in expect.params().items():
                np.testing.assert_array_equal(got.params()[name], arr)

    def test_bitwise_deterministic(self):
        cfg = EncoderConfig(
            receptive_field=3, hidden_units=4, out_dim=3, batch_size=32,
            iterations=25, seed=9,
        )
        h1 = train(self._sessions(), cfg).loss_history
        h2 = train(self._sessions(), cfg).loss_history
        assert np.array_equal(h1, h2)

    def test_divergence_aborts_with_step_index(self, monkeypatch):
        # bounded similarities make organic divergence nearly impossible, so
        # drive the abort path by poisoning the loss at a known step
        import rym.embedder as emb_mod

        cfg = EncoderConfig(
            receptive_field=3, hidden_units=4, out_dim=3, batch_size=16,
            iterations=50, seed=1,
        )
        real = emb_mod._batch_step
        calls = {"n": 0}

        def poisoned(*args, **kwargs):
            loss, grads = real(*args, **kwargs)
            calls["n"] += 1
            return (float("nan") if calls["n"] == 3 else loss), grads

        monkeypatch.setattr(emb_mod, "_batch_step", poisoned)
        with pytest.raises(TrainingDivergedError) as err:
            train(self._sessions(n=2), cfg)
        assert err.value.step == 2
        assert "step 2" in str(err.value)

    def test_encode_ops(self):
        cfg = EncoderConfig(
            receptive_field=3, hidden_units=4, out_dim=3, batch_size=16, iterations=2, seed=3
        )
        sessions = self._sessions(n=2)
        model = train(sessions, cfg)
        win = np.random.default_rng(0).standard_normal((2, 3))
        emb = encode(model, "s0", win)
        assert np.linalg.norm(emb) == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_array_equal(encode(model, "s0", win), emb)
        with pytest.raises(KeyError, match="unknown session"):
            encode(model, "nope", win)

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = EncoderConfig(
            receptive_field=3, hidden_units=4, out_dim=3, batch_size=16, iterations=4, seed=2
        )
        sessions = self._sessions(n=2)
        model = train(sessions, cfg)
        save_model(tmp_path / "m.npz", model)
        back = load_model(tmp_path / "m.npz")
        assert back.config == model.config
        np.testing.assert_array_equal(back.loss_history, model.loss_history)
        win = np.random.default_rng(1).standard_normal((5, 2, 3))
        np.testing.assert_array_equal(
            encode_windows(back, "s1", win), encode_windows(model, "s1", win)
        )
