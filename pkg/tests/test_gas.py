import numpy as np
import pytest

from segaw.errors import InputError, ShapeError
from segaw.features import FeatureMatrix
from segaw.gas import (GasConfig, GasModel, extract_gas, gas_boundary_signal,
                       gas_segment, init_gas_model, train_gas_autoencoder)
from segaw.synth import SynthConfig, generate_corpus


def zero_model(feature_dim=3, hidden_dim=4):
    cfg = GasConfig(feature_dim=feature_dim, hidden_dim=hidden_dim)
    model = init_gas_model(np.random.default_rng(0), cfg)
    for arr in model.values.values():
        arr.fill(0.0)
    return model


def synth_features(n_utts, seed=0, sigma=0.05):
    cfg = SynthConfig(lexicon_size=4, feature_dim=4, template_len_min=6,
                      template_len_max=10, words_min=2, words_max=4,
                      noise_sigma=sigma, n_train=n_utts, n_test=0, seed=seed)
    corpus = generate_corpus(cfg)
    return corpus, [u.feats for u in corpus.train]


class TestTraining:
    def test_tiny_corpus_halves_mse(self):
        _, feats = synth_features(10, seed=1)
        cfg = GasConfig(feature_dim=4, hidden_dim=8, epochs=50, lr=3e-3)
        model, history = train_gas_autoencoder(feats, cfg,
                                               np.random.default_rng(2))
        assert model.trained
        assert history["epoch_loss"][-1] < 0.5 * history["epoch_loss"][0]
        assert history["holdout_final"] < history["holdout_initial"]

    def test_empty_corpus_rejected(self):
        with pytest.raises(InputError):
            train_gas_autoencoder([], GasConfig())

    def test_constant_utterance_memorized(self):
        frames = np.tile([0.3, -0.7], (20, 1))
        feats = [FeatureMatrix("c", frames)]
        cfg = GasConfig(feature_dim=2, hidden_dim=6, epochs=150, lr=1e-2)
        _, history = train_gas_autoencoder(feats, cfg, np.random.default_rng(3))
        per_frame = history["holdout_final"]
        assert per_frame < 1e-3


class TestExtraction:
    def test_zero_weights_give_half(self):
        model = zero_model()
        feats = FeatureMatrix("u", np.random.default_rng(1).standard_normal((7, 3)))
        gas = extract_gas(model, feats)
        np.testing.assert_array_equal(gas, np.full((7, 4), 0.5))

    def test_values_in_open_unit_interval(self):
        cfg = GasConfig(feature_dim=3, hidden_dim=5)
        model = init_gas_model(np.random.default_rng(4), cfg)
        feats = FeatureMatrix("u", 5 * np.random.default_rng(5).standard_normal((30, 3)))
        gas = extract_gas(model, feats)
        assert np.all(gas > 0.0) and np.all(gas < 1.0)

    def test_deterministic(self):
        cfg = GasConfig(feature_dim=3, hidden_dim=5)
        model = init_gas_model(np.random.default_rng(6), cfg)
        feats = FeatureMatrix("u", np.random.default_rng(7).standard_normal((9, 3)))
        np.testing.assert_array_equal(extract_gas(model, feats),
                                      extract_gas(model, feats))

    def test_dim_mismatch_rejected(self):
        model = zero_model(feature_dim=3)
        feats = FeatureMatrix("u", np.zeros((5, 4)))
        with pytest.raises(ShapeError):
            extract_gas(model, feats)

    def test_boundary_frames_have_larger_gas_change(self):
        corpus, feats = synth_features(15, seed=8)
        cfg = GasConfig(feature_dim=4, hidden_dim=8, epochs=30, lr=3e-3)
        model, _ = train_gas_autoencoder(feats, cfg, np.random.default_rng(9))
        at_boundary, within = [], []
        for u in corpus.train:
            gas = extract_gas(model, u.feats)
            step = np.linalg.norm(np.diff(gas, axis=0), axis=1)
            ends = set(u.bounds.interior_ends)
            for t in range(1, u.feats.n_frames):
                # step[t-1] is the change between frames t and t+1
                (at_boundary if t in ends else within).append(step[t - 1])
        assert np.median(at_boundary) > np.median(within)


class TestSegmenter:
    def test_constant_gas_gives_no_interior_boundaries(self):
        gas = np.full((12, 4), 0.5)
        bounds = gas_segment(gas)
        assert bounds.segments == ((1, 12),)

    def test_single_step_gives_single_boundary(self):
        gas = np.full((10, 3), 0.2)
        gas[6:] = 0.8  # change between frames 6 and 7
        bounds = gas_segment(gas)
        assert bounds.interior_ends == [6]

    def test_min_gap_keeps_stronger_peak(self):
        T = 12
        sig_gas = np.full((T, 1), 0.5)
        # two steps two frames apart; the second is larger
        sig_gas[4:] += 0.1
        sig_gas[6:] += 0.3
        bounds = gas_segment(sig_gas, threshold=0.05, min_gap=4)
        assert bounds.interior_ends == [6]

    def test_output_strictly_increasing_within_range(self):
        rng = np.random.default_rng(10)
        gas = rng.uniform(0.05, 0.95, (40, 5))
        bounds = gas_segment(gas)
        ends = bounds.interior_ends
        assert all(1 <= e < 40 for e in ends)
        assert all(a < b for a, b in zip(ends, ends[1:]))

    def test_boundary_signal_length(self):
        gas = np.random.default_rng(11).uniform(0.1, 0.9, (9, 2))
        assert gas_boundary_signal(gas).shape == (8,)
