"""Gate activation signals from a pretrained GRU autoencoder.

A plain sequence autoencoder (GRU encoder -> GRU decoder, teacher-forced
reconstruction) is trained on unlabeled features.  Its encoder update-gate
activations, one vector per frame, are the gate activation signal (GAS)
consumed by the segmentation gate; a simple peak picker over the temporal
difference of that signal doubles as a standalone segmentation baseline.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import InputError, ShapeError, TrainingError
from .segments import BoundarySet
from .segmental import reconstruction_loss


@dataclass
class GasConfig:
    feature_dim: int = 39
    hidden_dim: int = 100
    lr: float = 1e-3
    epochs: int = 10
    holdout_fraction: float = 0.1
    gas_layer: int = 0  # encoder layer whose update gate is the signal


@dataclass
class GasModel:
    config: GasConfig
    values: dict = field(default_factory=dict)
    trained: bool = False

    def encoder_cells(self):
        return [{"w": self.values["enc.0.w"], "b": self.values["enc.0.b"]}]

    def decoder_cells(self):
        return [{"w": self.values["dec.0.w"], "b": self.values["dec.0.b"]}]


def init_gas_model(rng, config):
    values = {}
    for l, cell in enumerate(nn.gru_stack_init(rng, config.feature_dim,
                                               config.hidden_dim, 1)):
        values[f"enc.{l}.w"] = cell["w"]
        values[f"enc.{l}.b"] = cell["b"]
    for l, cell in enumerate(nn.gru_stack_init(rng, config.feature_dim,
                                               config.hidden_dim, 1)):
        values[f"dec.{l}.w"] = cell["w"]
        values[f"dec.{l}.b"] = cell["b"]
    values["out.w"] = rng.uniform(-nn.INIT_SCALE, nn.INIT_SCALE,
                                  (config.feature_dim, config.hidden_dim))
    values["out.b"] = np.zeros(config.feature_dim)
    return GasModel(config, values)


def _reconstruct(model, frames, want_grads):
    """Teacher-forced forward pass; optionally backprop, returning grads."""
    v = model.values
    d = model.config.feature_dim
    T = frames.shape[0]
    enc = model.encoder_cells()
    dec = model.decoder_cells()
    _, enc_state, _, enc_caches = nn.gru_run_cached(enc, frames)
    # decoder inputs: zero frame, then the previous target frame
    dec_in = np.zeros((T, d))
    dec_in[1:] = frames[:-1]
    dec_hs, _, _, dec_caches = nn.gru_run_cached(dec, dec_in, state=[enc_state[0]])
    recon = dec_hs @ v["out.w"].T + v["out.b"]
    loss = reconstruction_loss(frames, recon)
    if not want_grads:
        return loss, None
    grads = nn.zero_grads(v)
    d_recon = (2.0 / d) * (recon - frames)
    grads["out.w"] += d_recon.T @ dec_hs
    grads["out.b"] += d_recon.sum(axis=0)
    d_hs = d_recon @ v["out.w"]
    _, d_state0 = nn.gru_backward(dec, dec_caches, d_hs, grads, "dec.")
    d_enc_outs = np.zeros((T, model.config.hidden_dim))
    nn.gru_backward(enc, enc_caches, d_enc_outs, grads, "enc.",
                    d_state_final=[d_state0[0]])
    return loss, grads


def corpus_mse(model, corpus):
    total = 0.0
    frames = 0
    for feat in corpus:
        loss, _ = _reconstruct(model, feat.frames, want_grads=False)
        total += loss
        frames += feat.n_frames
    return total / frames


def train_gas_autoencoder(corpus, config=None, rng=None):
    """Train the GRU autoencoder; returns (model, history).

    ``history`` carries per-epoch mean losses plus held-out reconstruction
    MSE before and after training (train MSE when the corpus is too small to
    split).
    """
    if not corpus:
        raise InputError("cannot train on an empty corpus")
    cfg = config or GasConfig(feature_dim=corpus[0].dim)
    rng = rng or np.random.default_rng(0)
    model = init_gas_model(rng, cfg)
    n_hold = int(len(corpus) * cfg.holdout_fraction) if len(corpus) >= 5 else 0
    train, hold = corpus[:len(corpus) - n_hold], corpus[len(corpus) - n_hold:]
    eval_set = hold if hold else train
    history = {"epoch_loss": [], "holdout_initial": corpus_mse(model, eval_set)}
    opt = nn.adam_init(model.values, lr=cfg.lr)
    for _ in range(cfg.epochs):
        total = 0.0
        for feat in train:
            loss, grads = _reconstruct(model, feat.frames, want_grads=True)
            if not np.isfinite(loss):
                raise TrainingError("gate-signal autoencoder loss diverged")
            nn.adam_update(model.values, grads, opt)
            total += loss
        history["epoch_loss"].append(total / len(train))
    history["holdout_final"] = corpus_mse(model, eval_set)
    model.trained = True
    return model, history


def extract_gas(model, feat):
    """Per-frame encoder update-gate activations, (T, hidden_dim)."""
    if feat.dim != model.config.feature_dim:
        raise ShapeError(f"features have dim {feat.dim}, "
                         f"model expects {model.config.feature_dim}")
    _, _, gates, _ = nn.gru_run_cached(model.encoder_cells(), feat.frames)
    return gates[model.config.gas_layer].copy()


def gas_boundary_signal(gas):
    """Temporal difference of the mean update gate; entry t is the change
    between frames t and t+1 (length T-1)."""
    m = gas.mean(axis=1)
    return np.abs(np.diff(m))


def gas_segment(gas, threshold=None, min_gap=4):
    """Peak-pick the boundary signal into a :class:`BoundarySet`.

    Peaks must strictly exceed ``threshold`` (default: per-utterance mean + 1
    std of the signal); stronger peaks suppress weaker ones closer than
    ``min_gap`` frames.
    """
    T = gas.shape[0]
    sig = gas_boundary_signal(gas)
    if threshold is None:
        threshold = sig.mean() + sig.std() if sig.size else 0.0
    peaks = []
    for i in range(sig.size):  # i-th entry -> boundary after frame i+1
        left = sig[i - 1] if i > 0 else -np.inf
        right = sig[i + 1] if i + 1 < sig.size else -np.inf
        if sig[i] > threshold and sig[i] > left and sig[i] >= right:
            peaks.append((sig[i], i + 1))
    peaks.sort(key=lambda p: (-p[0], p[1]))
    kept = []
    for strength, t in peaks:
        if all(abs(t - u) >= min_gap for u in kept):
            kept.append(t)
    return BoundarySet.from_ends(sorted(kept), T)
