import numpy as np
import pytest

from segaw import nn
from segaw.errors import ShapeError
from segaw.features import FeatureMatrix
from segaw.segments import PASS, SEGMENT, BoundarySet, actions_to_boundaries
from segaw.segmental import (SsaeConfig, SsaeParams, decide_actions,
                             decode_segments, encode_segments, gate_forward,
                             gate_logprob_grads, init_ssae,
                             autoencoder_loss_and_grads,
                             reconstruction_error_and_embedding_grads,
                             reconstruction_loss, run_gate)


def small_config(**kw):
    base = dict(feature_dim=3, gas_dim=2, hidden_dim=4,
                gate_hidden=3, gate_layers=2)
    base.update(kw)
    return SsaeConfig(**base)


def make_model(seed=0, **kw):
    cfg = small_config(**kw)
    return init_ssae(np.random.default_rng(seed), cfg)


def make_utterance(seed, n_frames, cfg):
    rng = np.random.default_rng(seed)
    feats = FeatureMatrix("u", rng.standard_normal((n_frames, cfg.feature_dim)))
    gas = rng.uniform(0.1, 0.9, (n_frames, cfg.gas_dim))
    return feats, gas


class TestGate:
    def test_zero_weights_give_uniform_policy(self):
        params = make_model()
        for name in params.gate_names():
            params.values[name].fill(0.0)
        feats, gas = make_utterance(1, 6, params.config)
        policy = gate_forward(params, feats, gas, np.zeros(6, dtype=np.uint8))
        np.testing.assert_array_equal(policy, np.full((6, 2), 0.5))

    def test_single_frame_utterance(self):
        params = make_model()
        feats, gas = make_utterance(2, 1, params.config)
        policy = gate_forward(params, feats, gas, np.array([SEGMENT], dtype=np.uint8))
        assert policy.shape == (1, 2)

    def test_rows_are_distributions(self):
        params = make_model(3)
        feats, gas = make_utterance(3, 9, params.config)
        policy, _ = run_gate(params, feats, gas, mode="greedy")
        np.testing.assert_allclose(policy.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(policy > 0) and np.all(policy < 1)

    def test_replay_is_bit_identical(self):
        params = make_model(4)
        feats, gas = make_utterance(4, 8, params.config)
        actions = np.array([0, 1, 0, 0, 1, 0, 1, 0], dtype=np.uint8)
        p1 = gate_forward(params, feats, gas, actions)
        p2 = gate_forward(params, feats, gas, actions)
        np.testing.assert_array_equal(p1, p2)

    def test_previous_action_feeds_state(self):
        params = make_model(5)
        feats, gas = make_utterance(5, 6, params.config)
        a1 = np.array([1, 0, 0, 0, 0, 0], dtype=np.uint8)
        a2 = np.array([0, 0, 0, 0, 0, 0], dtype=np.uint8)
        p1 = gate_forward(params, feats, gas, a1)
        p2 = gate_forward(params, feats, gas, a2)
        # frame 1 shares the "segment" start convention; later frames diverge
        np.testing.assert_array_equal(p1[0], p2[0])
        assert not np.array_equal(p1[1:], p2[1:])

    def test_gas_row_mismatch_rejected(self):
        params = make_model(6)
        feats, gas = make_utterance(6, 6, params.config)
        with pytest.raises(ShapeError):
            gate_forward(params, feats, gas[:-1], np.zeros(6, dtype=np.uint8))


class TestDecideActions:
    def test_greedy_picks_dominant_action(self):
        policy = np.tile([0.9, 0.1], (5, 1))
        np.testing.assert_array_equal(decide_actions(policy, "greedy"),
                                      np.ones(5, dtype=np.uint8))

    def test_greedy_tie_falls_to_pass(self):
        policy = np.tile([0.5, 0.5], (4, 1))
        np.testing.assert_array_equal(decide_actions(policy, "greedy"),
                                      np.zeros(4, dtype=np.uint8))

    def test_greedy_is_deterministic(self):
        rng = np.random.default_rng(0)
        p = rng.random((20, 1))
        policy = np.hstack([p, 1 - p])
        np.testing.assert_array_equal(decide_actions(policy, "greedy"),
                                      decide_actions(policy, "greedy"))

    def test_sampling_frequency_matches_probability(self):
        policy = np.tile([0.5, 0.5], (10000, 1))
        actions = decide_actions(policy, "sample", np.random.default_rng(77))
        assert abs(actions.mean() - 0.5) < 0.02


class TestEncoder:
    def test_segment_isolation_bit_exact(self):
        params = make_model(7)
        cfg = params.config
        feats, _ = make_utterance(7, 6, cfg)
        bounds = BoundarySet.from_ends([3], 6)
        emb = encode_segments(params, feats, bounds)
        alone1 = encode_segments(
            params, FeatureMatrix("a", feats.frames[:3].copy()),
            BoundarySet.from_ends([3], 3))
        alone2 = encode_segments(
            params, FeatureMatrix("b", feats.frames[3:].copy()),
            BoundarySet.from_ends([3], 3))
        np.testing.assert_array_equal(emb[0], alone1[0])
        np.testing.assert_array_equal(emb[1], alone2[0])

    def test_permuting_other_segment_leaves_embedding_unchanged(self):
        params = make_model(8)
        feats, _ = make_utterance(8, 6, params.config)
        bounds = BoundarySet.from_ends([3], 6)
        e1 = encode_segments(params, feats, bounds)[0]
        shuffled = feats.frames.copy()
        shuffled[3:] = shuffled[3:][::-1]
        e1_after = encode_segments(params, FeatureMatrix("u", shuffled), bounds)[0]
        np.testing.assert_array_equal(e1, e1_after)

    def test_single_segment_equals_plain_lstm_run(self):
        params = make_model(9)
        feats, _ = make_utterance(9, 5, params.config)
        emb = encode_segments(params, feats, BoundarySet.from_ends([], 5))
        outs, _ = nn.lstm_run(params.encoder_cells(), feats.frames)
        np.testing.assert_array_equal(emb[0], outs[-1])

    def test_frame_count_mismatch_rejected(self):
        params = make_model(10)
        feats, _ = make_utterance(10, 5, params.config)
        with pytest.raises(ShapeError):
            encode_segments(params, feats, BoundarySet.from_ends([3], 6))


class TestDecoder:
    def test_output_shape_matches_input(self):
        params = make_model(11)
        feats, _ = make_utterance(11, 7, params.config)
        bounds = BoundarySet.from_ends([2, 5], 7)
        emb = encode_segments(params, feats, bounds)
        recon = decode_segments(params, emb, bounds)
        assert recon.shape == feats.frames.shape

    def test_perturbing_other_embedding_leaves_segment_unchanged(self):
        params = make_model(12)
        feats, _ = make_utterance(12, 8, params.config)
        bounds = BoundarySet.from_ends([4], 8)
        emb = encode_segments(params, feats, bounds)
        recon = decode_segments(params, emb, bounds)
        emb2 = emb.copy()
        emb2[1] += 10.0
        recon2 = decode_segments(params, emb2, bounds)
        np.testing.assert_array_equal(recon[:4], recon2[:4])
        assert not np.array_equal(recon[4:], recon2[4:])

    def test_embedding_count_mismatch_rejected(self):
        params = make_model(13)
        feats, _ = make_utterance(13, 6, params.config)
        bounds = BoundarySet.from_ends([3], 6)
        with pytest.raises(ShapeError):
            decode_segments(params, np.zeros((3, 4)), bounds)


class TestReconstructionLoss:
    def test_identical_is_zero(self):
        x = np.random.default_rng(0).standard_normal((4, 5))
        assert reconstruction_loss(x, x) == 0.0

    def test_all_ones_difference(self):
        x = np.zeros((2, 39))
        assert reconstruction_loss(x, x + 1.0) == 2.0

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = rng.standard_normal((3, 4))
            b = rng.standard_normal((3, 4))
            assert reconstruction_loss(a, b) >= 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestGradients:
    def ae_param_fixture(self, teacher_forcing=False):
        params = make_model(14)
        feats, _ = make_utterance(14, 6, params.config)
        bounds = BoundarySet.from_ends([2], 6)
        subset = params.subset(params.autoencoder_names())

        def loss(ps):
            loss_val, _ = autoencoder_loss_and_grads(
                params, feats, bounds, teacher_forcing=teacher_forcing)
            return loss_val

        def grad(ps):
            _, grads = autoencoder_loss_and_grads(
                params, feats, bounds, teacher_forcing=teacher_forcing)
            return grads

        return subset, loss, grad

    def test_autoencoder_gradients_free_running(self):
        subset, loss, grad = self.ae_param_fixture(teacher_forcing=False)
        result = nn.finite_diff_check(loss, grad, subset)
        assert result.max_rel_error < 1e-4, str(result)

    def test_autoencoder_gradients_teacher_forced(self):
        subset, loss, grad = self.ae_param_fixture(teacher_forcing=True)
        result = nn.finite_diff_check(loss, grad, subset)
        assert result.max_rel_error < 1e-4, str(result)

    def test_gate_logprob_gradients(self):
        params = make_model(15)
        feats, gas = make_utterance(15, 5, params.config)
        actions = np.array([1, 0, 0, 1, 0], dtype=np.uint8)
        subset = params.subset(params.gate_names())

        def loss(ps):
            policy = gate_forward(params, feats, gas, actions)
            taken = np.where(actions == SEGMENT, policy[:, 0], policy[:, 1])
            return float(np.sum(np.log(taken)))

        def grad(ps):
            _, grads = gate_logprob_grads(params, feats, gas, actions, 1.0)
            return grads

        result = nn.finite_diff_check(loss, grad, subset)
        assert result.max_rel_error < 1e-4, str(result)

    def test_decoder_cross_segment_gradients_exactly_zero(self):
        params = make_model(16)
        feats, _ = make_utterance(16, 9, params.config)
        bounds = BoundarySet.from_ends([3, 6], 9)
        for n in range(3):
            _, d_emb = reconstruction_error_and_embedding_grads(
                params, feats, bounds, only_segment=n)
            for m in range(3):
                if m == n:
                    assert np.any(d_emb[m] != 0.0)
                else:
                    assert np.all(d_emb[m] == 0.0)

    def test_embedding_gradient_matches_finite_difference(self):
        params = make_model(17)
        cfg = params.config
        feats, _ = make_utterance(17, 6, cfg)
        bounds = BoundarySet.from_ends([3], 6)
        emb = encode_segments(params, feats, bounds)
        _, d_emb = reconstruction_error_and_embedding_grads(
            params, feats, bounds, only_segment=0)
        wrapped = {"emb": emb.copy()}

        def loss(ps):
            recon = decode_segments(params, ps["emb"], bounds)
            return reconstruction_loss(feats.frames[:3], recon[:3])

        def grad(ps):
            return {"emb": d_emb}

        result = nn.finite_diff_check(loss, grad, wrapped)
        assert result.max_rel_error < 1e-4, str(result)
