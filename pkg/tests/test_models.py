"""Model forward passes: encoder/joint/decoder contracts, the acoustics-free
internal-LM modes, and their independence from everything acoustic."""

import numpy as np
import pytest

from asrfuse import layers, models
from asrfuse.numerics import log_softmax, logsumexp


def zero_params(store):
    for name in store.names():
        store[name][...] = 0.0
    return store


def manual_lstm_step(x, h, c, Wx, Wh, b):
    """Independent single-step LSTM oracle written out gate by gate."""
    H = Wh.shape[0]
    g = x @ Wx + h @ Wh + b

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    i, f, o = sig(g[:H]), sig(g[H:2 * H]), sig(g[2 * H:3 * H])
    cc = np.tanh(g[3 * H:])
    c2 = f * c + i * cc
    return o * np.tanh(c2), c2


class TestRnntEncode:
    def test_output_length_equals_frames(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 0)
        for T in (1, 2, 7):
            H = models.rnnt_encode(params, tiny_rnnt_cfg, rng.normal(size=(T, 3)))
            assert H.shape == (T, tiny_rnnt_cfg.enc_hidden)

    def test_deterministic(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 0)
        x = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(
            models.rnnt_encode(params, tiny_rnnt_cfg, x),
            models.rnnt_encode(params, tiny_rnnt_cfg, x))

    def test_single_step_matches_manual_lstm(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 3)
        x = rng.normal(size=(1, 3))
        H = models.rnnt_encode(params, tiny_rnnt_cfg, x)
        h = np.zeros(tiny_rnnt_cfg.enc_hidden)
        c = np.zeros(tiny_rnnt_cfg.enc_hidden)
        h, c = manual_lstm_step(x[0], h, c, params["rnnt.enc.l0.Wx"],
                                params["rnnt.enc.l0.Wh"], params["rnnt.enc.l0.b"])
        np.testing.assert_allclose(H[0], h, atol=1e-14)

    def test_zero_weights_give_zero_state(self, tiny_rnnt_cfg):
        params = zero_params(models.init_rnnt(tiny_rnnt_cfg, 0))
        H = models.rnnt_encode(params, tiny_rnnt_cfg, np.ones((2, 3)))
        np.testing.assert_array_equal(H, np.zeros_like(H))

    def test_shape_mismatch_rejected(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 0)
        with pytest.raises(ValueError, match="feature matrix"):
            models.rnnt_encode(params, tiny_rnnt_cfg, rng.normal(size=(4, 5)))


class TestRnntJoint:
    def test_matches_dense_reference(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 5)
        h_enc = rng.normal(size=tiny_rnnt_cfg.enc_hidden)
        h_pred = rng.normal(size=tiny_rnnt_cfg.pred_hidden)
        z, f_t, g_u = models.rnnt_joint(params, h_enc, h_pred)
        expect_f = params["rnnt.joint.W_e"] @ h_enc + params["rnnt.joint.b_e"]
        expect_g = params["rnnt.joint.W_p"] @ h_pred + params["rnnt.joint.b_p"]
        expect = params["rnnt.joint.W_j"] @ np.tanh(expect_f + expect_g) \
            + params["rnnt.joint.b_j"]
        np.testing.assert_allclose(z, expect, atol=1e-14)
        np.testing.assert_allclose(f_t, expect_f, atol=1e-14)
        np.testing.assert_allclose(g_u, expect_g, atol=1e-14)

    def test_all_zero_params_give_zero_logits(self, tiny_rnnt_cfg):
        params = zero_params(models.init_rnnt(tiny_rnnt_cfg, 0))
        z, _, _ = models.rnnt_joint(params, np.zeros(5), np.zeros(5))
        np.testing.assert_array_equal(z, np.zeros(5))

    def test_zero_acoustics_reduce_to_ilm_logits(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 6)
        params["rnnt.joint.b_e"][...] = 0.0
        h_pred = rng.normal(size=tiny_rnnt_cfg.pred_hidden)
        z, _, _ = models.rnnt_joint(params, np.zeros(tiny_rnnt_cfg.enc_hidden),
                                    h_pred)
        np.testing.assert_allclose(z, models.rnnt_ilm_logits(params, h_pred),
                                   atol=1e-14)

    def test_grid_matches_single_cells(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 7)
        H = rng.normal(size=(3, tiny_rnnt_cfg.enc_hidden))
        G = rng.normal(size=(2, tiny_rnnt_cfg.pred_hidden))
        Z, _ = models.rnnt_joint_grid_cached(params, H, G)
        for t in range(3):
            for u in range(2):
                z, _, _ = models.rnnt_joint(params, H[t], G[u])
                np.testing.assert_allclose(Z[t, u], z, atol=1e-12)


class TestRnntIlm:
    def test_uniform_for_zero_params(self, tiny_rnnt_cfg):
        params = zero_params(models.init_rnnt(tiny_rnnt_cfg, 0))
        lp = models.rnnt_ilm_step(params, tiny_rnnt_cfg, np.zeros(5))
        np.testing.assert_allclose(
            lp.values, np.full(4, -np.log(4)), atol=1e-15)

    def test_normalized_over_tokens(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 8)
        for _ in range(20):
            lp = models.rnnt_ilm_step(params, tiny_rnnt_cfg,
                                      rng.normal(size=5))
            assert lp.values.shape == (4,)
            assert abs(logsumexp(lp.values)) < 1e-9

    def test_independent_of_features_and_encoder_params(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 9)
        scorer = models.RnntIlmScorer(params, tiny_rnnt_cfg)
        y = [0, 3, 1]

        def chained():
            state = scorer.start()
            out = []
            lp, state = scorer.step(state, tiny_rnnt_cfg.vocab.sos)
            for t in y:
                out.append(lp.values.copy())
                lp, state = scorer.step(state, t)
            return np.stack(out)

        before = chained()
        for name in models.rnnt_encoder_param_names(params):
            params[name][...] += rng.normal(size=params[name].shape)
        after = chained()
        np.testing.assert_array_equal(before, after)

    def test_mutating_ilm_params_changes_output(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 10)
        h = rng.normal(size=5)
        before = models.rnnt_ilm_step(params, tiny_rnnt_cfg, h).values.copy()
        params["rnnt.joint.W_p"][...] += 0.5
        after = models.rnnt_ilm_step(params, tiny_rnnt_cfg, h).values
        assert not np.allclose(before, after)


class TestPredictionState:
    def test_advance_matches_sequence_forward(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 11)
        y = [2, 0, 1]
        G, _ = models.rnnt_predict_cached(params, tiny_rnnt_cfg, y)
        state = models.rnnt_init_state(params, tiny_rnnt_cfg)
        np.testing.assert_allclose(state.h_pred, G[0], atol=1e-14)
        for u, tok in enumerate(y):
            state = models.rnnt_advance_pred(params, tiny_rnnt_cfg, state, tok)
            np.testing.assert_allclose(state.h_pred, G[u + 1], atol=1e-14)

    def test_lang_embedding_cache_consistent(self, tiny_rnnt_cfg, rng):
        params = models.init_rnnt(tiny_rnnt_cfg, 12)
        state = models.rnnt_init_state(params, tiny_rnnt_cfg)
        np.testing.assert_allclose(
            state.lang_emb, models.rnnt_lang_embed(params, state.h_pred),
            atol=1e-14)

    def test_blank_never_embedded(self, tiny_rnnt_cfg):
        params = models.init_rnnt(tiny_rnnt_cfg, 13)
        # the blank id indexes the joint output, not the embedding table, so
        # feeding it through the prediction network must be a usage error in
        # the vocabulary contract
        with pytest.raises(ValueError):
            tiny_rnnt_cfg.vocab.check_tokens([tiny_rnnt_cfg.vocab.blank])


class TestAedDecodeStep:
    def test_degenerate_attention_single_frame(self, tiny_aed_cfg, rng):
        params = models.init_aed(tiny_aed_cfg, 1)
        H = rng.normal(size=(1, tiny_aed_cfg.enc_out))
        state = models.aed_init_state(params, tiny_aed_cfg, H)
        e = models.aed_embed(params, tiny_aed_cfg.vocab.sos)
        lp, new = models.aed_decode_step(params, tiny_aed_cfg, state, e,
                                         state.c, H)
        np.testing.assert_allclose(new.a, [1.0], atol=1e-15)
        np.testing.assert_allclose(new.c, H[0], atol=1e-14)

    def test_zero_params_uniform(self, tiny_aed_cfg):
        params = zero_params(models.init_aed(tiny_aed_cfg, 0))
        H = np.zeros((3, tiny_aed_cfg.enc_out))
        state = models.aed_init_state(params, tiny_aed_cfg, H)
        lp, _ = models.aed_decode_step(
            params, tiny_aed_cfg, state,
            models.aed_embed(params, tiny_aed_cfg.vocab.sos), state.c, H)
        np.testing.assert_allclose(lp.values, np.full(5, -np.log(5)),
                                   atol=1e-15)

    def test_matches_stepwise_reference(self, tiny_aed_cfg, rng):
        params = models.init_aed(tiny_aed_cfg, 2)
        H = rng.normal(size=(4, tiny_aed_cfg.enc_out))
        state = models.aed_init_state(params, tiny_aed_cfg, H)
        e = models.aed_embed(params, 2)
        lp, new = models.aed_decode_step(params, tiny_aed_cfg, state, e,
                                         state.c, H)
        # independent recomputation of the step
        h, c = manual_lstm_step(e + state.c, np.zeros(5), np.zeros(5),
                                params["aed.dec.l0.Wx"],
                                params["aed.dec.l0.Wh"], params["aed.dec.l0.b"])
        z = params["aed.out.W_d"] @ h + params["aed.out.b_d"]
        np.testing.assert_allclose(lp.values, log_softmax(z), atol=1e-13)
        a, cvec, _ = layers.attention_forward(
            H, h, state.a, {
                "W_enc": params["aed.att.W_enc"],
                "W_dec": params["aed.att.W_dec"],
                "W_loc": params["aed.att.W_loc"],
                "b": params["aed.att.b"],
                "v": params["aed.att.v"],
                "conv": params["aed.att.conv"],
            })
        np.testing.assert_allclose(new.a, a, atol=1e-13)
        np.testing.assert_allclose(new.c, cvec, atol=1e-13)

    def test_attention_weights_normalized(self, tiny_aed_cfg, rng):
        params = models.init_aed(tiny_aed_cfg, 3)
        H = rng.normal(size=(6, tiny_aed_cfg.enc_out))
        state = models.aed_init_state(params, tiny_aed_cfg, H)
        for tok in (tiny_aed_cfg.vocab.sos, 1, 2):
            e = models.aed_embed(params, tok)
            _, state = models.aed_decode_step(params, tiny_aed_cfg, state, e,
                                              state.c, H)
            assert np.all(state.a >= 0)
            assert abs(state.a.sum() - 1.0) < 1e-9
            np.testing.assert_allclose(state.c, state.a @ H, atol=1e-12)

    def test_dimension_mismatch_rejected(self, tiny_aed_cfg, rng):
        params = models.init_aed(tiny_aed_cfg, 4)
        H = rng.normal(size=(2, tiny_aed_cfg.enc_out))
        state = models.aed_init_state(params, tiny_aed_cfg, H)
        with pytest.raises(ValueError, match="mismatch"):
            models.aed_decode_step(params, tiny_aed_cfg, state,
                                   np.zeros(3), state.c, H)


class TestAedIlm:
    def test_equals_decode_step_on_zero_encoder_states(self, tiny_aed_cfg, rng):
        params = models.init_aed(tiny_aed_cfg, 5)
        H = np.zeros((4, tiny_aed_cfg.enc_out))
        state = models.aed_init_state(params, tiny_aed_cfg, H)
        ilm_state = models.aed_init_ilm_state(params, tiny_aed_cfg)
        for tok in (tiny_aed_cfg.vocab.sos, 1, 3, 0):
            e = models.aed_embed(params, tok)
            lp_full, state = models.aed_decode_step(params, tiny_aed_cfg,
                                                    state, e, state.c, H)
            lp_ilm, ilm_state = models.aed_ilm_step(params, tiny_aed_cfg,
                                                    ilm_state, e)
            np.testing.assert_allclose(lp_full.values, lp_ilm.values,
                                       atol=1e-13)

    def test_zero_params_uniform(self, tiny_aed_cfg):
        params = zero_params(models.init_aed(tiny_aed_cfg, 0))
        state = models.aed_init_ilm_state(params, tiny_aed_cfg)
        lp, _ = models.aed_ilm_step(params, tiny_aed_cfg, state,
                                    np.zeros(tiny_aed_cfg.embed_dim))
        np.testing.assert_allclose(lp.values, np.full(5, -np.log(5)),
                                   atol=1e-15)

    def test_independent_of_encoder_and_attention(self, tiny_aed_cfg, rng):
        params = models.init_aed(tiny_aed_cfg, 6)
        scorer = models.AedIlmScorer(params, tiny_aed_cfg)
        y = [1, 0, 2]

        def chained():
            state = scorer.start()
            rows = []
            lp, state = scorer.step(state, tiny_aed_cfg.vocab.sos)
            for t in y:
                rows.append(lp.values.copy())
                lp, state = scorer.step(state, t)
            rows.append(lp.values.copy())
            return np.stack(rows)

        before = chained()
        mutate = (models.aed_encoder_param_names(params)
                  + models.aed_attention_param_names(params))
        for name in mutate:
            params[name][...] += rng.normal(size=params[name].shape)
        np.testing.assert_array_equal(before, chained())


class TestModelCheckpoint:
    def test_save_load_roundtrip(self, tiny_rnnt_cfg, tmp_path):
        params = models.init_rnnt(tiny_rnnt_cfg, 20)
        model = models.Model("rnnt", tiny_rnnt_cfg, params)
        path = tmp_path / "m.ckpt"
        model.save(path)
        loaded = models.Model.load(path)
        assert loaded.family == "rnnt"
        assert loaded.cfg == tiny_rnnt_cfg
        for name in params.names():
            np.testing.assert_array_equal(loaded.params[name], params[name])
