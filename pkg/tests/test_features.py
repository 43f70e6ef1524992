import io
import wave

import numpy as np
import pytest

from segaw.errors import InputError
from segaw.features import (FeatureConfig, FeatureMatrix, apply_cmvn,
                            compute_mfcc, load_wav)


def write_wav(path, pcm, rate=16000, channels=1, width=2):
    data = np.clip(np.asarray(pcm) * 32767, -32768, 32767).astype("<i2")
    if channels == 2:
        data = np.repeat(data, 2)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(data.tobytes())


def sine(freq, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


class TestMfcc:
    def test_one_second_gives_98_frames(self):
        feat = compute_mfcc(sine(440.0, 1.0))
        assert feat.n_frames == (16000 - 400) // 160 + 1 == 98
        assert feat.dim == 39

    def test_silence_frames_identical_and_deltas_zero(self):
        feat = compute_mfcc(np.zeros(8000))
        assert np.all(feat.frames == feat.frames[0])
        assert np.all(feat.frames[:, 13:] == 0.0)

    def test_different_pitches_differ(self):
        a = compute_mfcc(sine(440.0)).frames.mean(axis=0)
        b = compute_mfcc(sine(880.0)).frames.mean(axis=0)
        cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert cos < 0.999

    def test_deterministic(self):
        pcm = sine(300.0, 0.5)
        f1 = compute_mfcc(pcm).frames
        f2 = compute_mfcc(pcm).frames
        np.testing.assert_array_equal(f1, f2)

    def test_too_short_signal_rejected(self):
        with pytest.raises(InputError):
            compute_mfcc(np.zeros(399))


class TestCmvn:
    def test_hand_computed_column(self):
        feat = FeatureMatrix("u", np.array([[1.0], [2.0], [3.0]]))
        out = apply_cmvn(feat).frames[:, 0]
        np.testing.assert_allclose(out, [-1.224744871, 0.0, 1.224744871],
                                   atol=1e-8)

    def test_moments_after_normalization(self):
        rng = np.random.default_rng(4)
        feat = FeatureMatrix("u", 3.0 + 2.5 * rng.standard_normal((50, 6)))
        out = apply_cmvn(feat).frames
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-3)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        feat = FeatureMatrix("u", rng.standard_normal((30, 4)))
        once = apply_cmvn(feat)
        twice = apply_cmvn(once)
        np.testing.assert_allclose(twice.frames, once.frames, atol=1e-9)

    def test_constant_column_maps_to_zeros(self):
        feat = FeatureMatrix("u", np.full((10, 2), 7.0))
        assert np.all(apply_cmvn(feat).frames == 0.0)


class TestWavLoading:
    def test_roundtrip(self, tmp_path):
        pcm = sine(500.0, 0.25)
        write_wav(tmp_path / "a.wav", pcm)
        loaded = load_wav(tmp_path / "a.wav")
        assert loaded.shape[0] == pcm.shape[0]
        assert np.max(np.abs(loaded - pcm)) < 1e-3  # 16-bit quantization

    def test_wrong_rate_rejected(self, tmp_path):
        write_wav(tmp_path / "b.wav", sine(500.0, 0.25, rate=8000), rate=8000)
        with pytest.raises(InputError, match="Hz"):
            load_wav(tmp_path / "b.wav")

    def test_stereo_rejected(self, tmp_path):
        write_wav(tmp_path / "c.wav", sine(500.0, 0.1), channels=2)
        with pytest.raises(InputError, match="mono"):
            load_wav(tmp_path / "c.wav")
