"""Acoustic feature extraction: MFCCs with deltas, and per-utterance CMVN.

Frame geometry is 25 ms Hamming windows on a 10 ms hop at 16 kHz, so one
frame per 10 ms and a 40 ms tolerance is exactly +/-4 frames.  Cepstral
coefficient 0 is replaced by log frame energy; deltas use a +/-2 frame
regression window with edge replication.
"""

import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import InputError, ShapeError


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    window_s: float = 0.025
    hop_s: float = 0.010
    n_mels: int = 26
    n_ceps: int = 13
    n_fft: int = 512
    preemphasis: float = 0.97
    delta_window: int = 2
    log_floor: float = 1e-10

    @property
    def window_len(self):
        return int(round(self.window_s * self.sample_rate))

    @property
    def hop_len(self):
        return int(round(self.hop_s * self.sample_rate))


@dataclass
class FeatureMatrix:
    """Per-utterance features: ``frames`` is (T, d) float64."""

    utterance_id: str
    frames: np.ndarray

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def load_wav(path, expect_rate=16000):
    """Read a mono 16-bit PCM WAV file; anything else is rejected."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise InputError(f"{path}: expected mono, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise InputError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        if w.getframerate() != expect_rate:
            raise InputError(f"{path}: expected {expect_rate} Hz, got {w.getframerate()} Hz")
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return pcm


def _mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular mel filters over the rfft bins, (n_mels, n_fft//2 + 1)."""
    nyquist = cfg.sample_rate / 2.0
    pts = _mel_inv(np.linspace(_mel(0.0), _mel(nyquist), cfg.n_mels + 2))
    bins = np.floor((cfg.n_fft + 1) * pts / cfg.sample_rate).astype(int)
    fb = np.zeros((cfg.n_mels, cfg.n_fft // 2 + 1))
    for m in range(1, cfg.n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, mid):
            if mid > lo:
                fb[m - 1, k] = (k - lo) / (mid - lo)
        for k in range(mid, hi):
            if hi > mid:
                fb[m - 1, k] = (hi - k) / (hi - mid)
    return fb


def _deltas(x, win):
    """Regression deltas over +/-``win`` frames, edges replicated."""
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], win, axis=0), x,
                             np.repeat(x[-1:], win, axis=0)])
    denom = 2.0 * sum(j * j for j in range(1, win + 1))
    out = np.zeros_like(x)
    for j in range(1, win + 1):
        out += j * (padded[win + j:win + j + T] - padded[win - j:win - j + T])
    return out / denom


def compute_mfcc(pcm, utterance_id="", config=None):
    """13 MFCCs (c0 = log energy) + deltas + delta-deltas per 10 ms frame."""
    cfg = config or FeatureConfig()
    pcm = np.asarray(pcm, dtype=np.float64)
    wl, hop = cfg.window_len, cfg.hop_len
    if pcm.ndim != 1:
        raise InputError("expected a 1-D sample array")
    if pcm.shape[0] < wl:
        raise InputError(
            f"signal too short: {pcm.shape[0]} samples < one {wl}-sample window")
    emph = np.concatenate([pcm[:1], pcm[1:] - cfg.preemphasis * pcm[:-1]])
    n_frames = (emph.shape[0] - wl) // hop + 1
    idx = np.arange(wl)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emph[idx]
    energy = np.log(np.maximum(np.sum(frames * frames, axis=1), cfg.log_floor))
    windowed = frames * np.hamming(wl)
    spec = np.abs(np.fft.rfft(windowed, n=cfg.n_fft)) ** 2
    mel_e = spec @ mel_filterbank(cfg).T
    ceps = dct(np.log(np.maximum(mel_e, cfg.log_floor)), type=2, norm="ortho", axis=1)
    static = ceps[:, :cfg.n_ceps].copy()
    static[:, 0] = energy
    d1 = _deltas(static, cfg.delta_window)
    d2 = _deltas(d1, cfg.delta_window)
    return FeatureMatrix(utterance_id, np.concatenate([static, d1, d2], axis=1))


def apply_cmvn(feat):
    """Per-utterance, per-dimension zero mean and unit (population) variance.

    Dimensions with (near-)zero variance map to all zeros rather than
    dividing by nothing.  Idempotent within float tolerance.
    """
    x = feat.frames
    if x.ndim != 2:
        raise ShapeError("feature frames must be (T, d)")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    centered = x - mu
    out = np.where(sd < 1e-12, 0.0, centered / np.where(sd < 1e-12, 1.0, sd))
    return FeatureMatrix(feat.utterance_id, out)


def featurize_wav(path, utterance_id=None, config=None, cmvn=True):
    pcm = load_wav(path, (config or FeatureConfig()).sample_rate)
    uid = utterance_id if utterance_id is not None else str(path)
    feat = compute_mfcc(pcm, uid, config)
    return apply_cmvn(feat) if cmvn else feat
