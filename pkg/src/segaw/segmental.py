"""Segmental sequence-to-sequence autoencoder.

Three cooperating parts over one utterance of features:

* a segmentation gate: an LSTM stack over per-frame state
  ``[x_t || g_t || a_(t-1)]`` (features, pretrained-autoencoder gate signal,
  previous action) whose softmax head emits per-frame probabilities for the
  actions "segment" and "pass".  The gate is never reset inside an utterance.
* a reset encoder: an LSTM restarted from its initial state at every segment
  start, so each segment embedding depends on that segment's frames only.
* a reset backward decoder: per segment, an LSTM initialized from the segment
  embedding through learned linear maps, emitting frames last-to-first while
  feeding each reconstructed frame back in as the next input (free-running;
  teacher forcing available for stability experiments).

Parameters live in one flat dict of float64 arrays so Adam and the gradient
checker can address every tensor by name.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ShapeError
from .segments import PASS, SEGMENT, BoundarySet, actions_to_boundaries


@dataclass
class SsaeConfig:
    feature_dim: int = 39
    gas_dim: int = 100
    hidden_dim: int = 100   # encoder and decoder LSTM units; also embedding dim
    gate_hidden: int = 256
    gate_layers: int = 2
    teacher_forcing: bool = False
    # initial "segment" logit bias: positive values start the gate
    # over-segmenting, so training trims the rate down instead of having to
    # bootstrap boundary confidence from nothing
    policy_bias_init: float = 0.0

    @property
    def gate_input_dim(self):
        return self.feature_dim + self.gas_dim + 1


@dataclass
class SsaeParams:
    config: SsaeConfig
    values: dict = field(default_factory=dict)

    def encoder_cells(self):
        return _stack_view(self.values, "enc.")

    def decoder_cells(self):
        return _stack_view(self.values, "dec.")

    def gate_cells(self):
        return _stack_view(self.values, "gate.")

    def autoencoder_names(self):
        return [k for k in self.values
                if k.startswith(("enc.", "dec.", "dec_h0", "dec_c0", "out."))]

    def gate_names(self):
        return [k for k in self.values if k.startswith(("gate.", "pi."))]

    def subset(self, names):
        return {k: self.values[k] for k in names}


def _stack_view(values, prefix):
    cells = []
    l = 0
    while f"{prefix}{l}.w" in values:
        cells.append({"w": values[f"{prefix}{l}.w"], "b": values[f"{prefix}{l}.b"]})
        l += 1
    return cells


def init_autoencoder_values(rng, config):
    """Fresh encoder/decoder parameter draw.

    Draw order (fixed so re-initialization is reproducible from a seeded rng):
    encoder cells, decoder cells, decoder h0 map, decoder c0 map, output
    projection.  Biases start at zero (LSTM forget gates at +1).
    """
    h = config.hidden_dim
    values = {}
    for l, cell in enumerate(nn.lstm_stack_init(rng, config.feature_dim, h, 1)):
        values[f"enc.{l}.w"] = cell["w"]
        values[f"enc.{l}.b"] = cell["b"]
    for l, cell in enumerate(nn.lstm_stack_init(rng, config.feature_dim, h, 1)):
        values[f"dec.{l}.w"] = cell["w"]
        values[f"dec.{l}.b"] = cell["b"]
    values["dec_h0.w"] = rng.uniform(-nn.INIT_SCALE, nn.INIT_SCALE, (h, h))
    values["dec_h0.b"] = np.zeros(h)
    values["dec_c0.w"] = rng.uniform(-nn.INIT_SCALE, nn.INIT_SCALE, (h, h))
    values["dec_c0.b"] = np.zeros(h)
    values["out.w"] = rng.uniform(-nn.INIT_SCALE, nn.INIT_SCALE, (config.feature_dim, h))
    values["out.b"] = np.zeros(config.feature_dim)
    return values


def init_gate_values(rng, config):
    values = {}
    cells = nn.lstm_stack_init(rng, config.gate_input_dim,
                               config.gate_hidden, config.gate_layers)
    for l, cell in enumerate(cells):
        values[f"gate.{l}.w"] = cell["w"]
        values[f"gate.{l}.b"] = cell["b"]
    values["pi.w"] = rng.uniform(-nn.INIT_SCALE, nn.INIT_SCALE, (2, config.gate_hidden))
    values["pi.b"] = np.array([config.policy_bias_init, 0.0])
    return values


def init_ssae(rng, config):
    values = init_autoencoder_values(rng, config)
    values.update(init_gate_values(rng, config))
    return SsaeParams(config, values)


# ---------------------------------------------------------------------------
# Segmentation gate
# ---------------------------------------------------------------------------

def _check_gate_inputs(params, feats, gas):
    cfg = params.config
    if feats.frames.shape[1] != cfg.feature_dim:
        raise ShapeError(f"features have dim {feats.frames.shape[1]}, "
                         f"model expects {cfg.feature_dim}")
    if gas.shape[0] != feats.n_frames:
        raise ShapeError(f"gate signal has {gas.shape[0]} rows for "
                         f"{feats.n_frames} frames")
    if gas.shape[1] != cfg.gas_dim:
        raise ShapeError(f"gate signal has dim {gas.shape[1]}, "
                         f"model expects {cfg.gas_dim}")


def _gate_input(feats, gas, t, prev_action):
    return np.concatenate((feats.frames[t], gas[t], [float(prev_action)]))


def decide_actions(policy, mode, rng=None):
    """Pick per-frame actions from a (T, 2) policy matrix.

    ``greedy`` takes "segment" only when it is strictly more probable than
    "pass" (exact ties fall to "pass"); ``sample`` draws each frame from its
    row.  Note that during an interleaved gate pass each decided action feeds
    the next gate state, so this function is applied one row at a time there.
    """
    policy = np.asarray(policy)
    if mode == "greedy":
        return np.where(policy[:, 0] > policy[:, 1], SEGMENT, PASS).astype(np.uint8)
    if mode == "sample":
        draws = rng.random(policy.shape[0])
        return np.where(draws < policy[:, 0], SEGMENT, PASS).astype(np.uint8)
    raise ValueError(f"unknown decision mode: {mode}")


def gate_forward(params, feats, gas, actions):
    """Replay the gate over an utterance with a known action sequence.

    Frame t's state uses action t-1 (the action before frame 1 is "segment":
    an utterance starts a word).  Returns the (T, 2) per-frame policy with
    column 0 = "segment" and column 1 = "pass".
    """
    policy, _, _ = _gate_scan(params, feats, gas, actions=np.asarray(actions))
    return policy


def run_gate(params, feats, gas, mode, rng=None):
    """One interleaved decide+advance pass; returns (policy, actions)."""
    policy, actions, _ = _gate_scan(params, feats, gas, mode=mode, rng=rng)
    return policy, actions


def _gate_scan(params, feats, gas, actions=None, mode=None, rng=None, cached=False):
    _check_gate_inputs(params, feats, gas)
    T = feats.n_frames
    cells = params.gate_cells()
    pi_w, pi_b = params.values["pi.w"], params.values["pi.b"]
    state = nn.zero_lstm_state(cells)
    caches = [[None] * T for _ in cells] if cached else None
    hidden = np.empty((T, pi_w.shape[1]))
    inputs = np.empty((T, params.config.gate_input_dim))
    policy = np.empty((T, 2))
    out_actions = np.empty(T, dtype=np.uint8)
    if actions is not None and actions.shape[0] != T:
        raise ShapeError(f"{actions.shape[0]} actions for {T} frames")
    prev = SEGMENT
    for t in range(T):
        inp = _gate_input(feats, gas, t, prev)
        inputs[t] = inp
        for l, cell in enumerate(cells):
            h, c = state[l]
            h2, c2, cache = nn._lstm_cell_forward(cell, h, c, inp)
            if cached:
                caches[l][t] = cache
            state[l] = (h2, c2)
            inp = h2
        hidden[t] = inp
        policy[t] = nn.softmax(pi_w @ inp + pi_b)
        if actions is not None:
            a = int(actions[t])
        else:
            a = int(decide_actions(policy[t:t + 1], mode, rng)[0])
        out_actions[t] = a
        prev = a
    extras = (hidden, inputs, caches)
    return policy, out_actions, extras


def gate_logprob_grads(params, feats, gas, actions, step_weights, scan=None):
    """Gradients of ``sum_t step_weights[t] * log pi_t(a_t)`` w.r.t. gate params.

    ``step_weights`` may be a scalar, a per-frame array, or a callable mapping
    the per-frame log-probabilities of the taken actions to per-frame weights
    (used by the clipped-surrogate update).  ``scan`` can pass a cached
    forward pass already run under the current parameters.  Returns
    ``(logprobs, grads)``; only gate/policy-head names appear in ``grads``.
    """
    actions = np.asarray(actions)
    if scan is None:
        policy, _, (hidden, _, caches) = _gate_scan(
            params, feats, gas, actions=actions, cached=True)
    else:
        policy, hidden, caches = scan
    T = policy.shape[0]
    taken = np.where(actions == SEGMENT, policy[:, 0], policy[:, 1])
    logprobs = np.log(taken)
    if callable(step_weights):
        w = np.asarray(step_weights(logprobs), dtype=np.float64)
    else:
        w = np.asarray(step_weights, dtype=np.float64)
    if w.ndim == 0:
        w = np.full(T, float(w))
    grads = nn.zero_grads(params.subset(params.gate_names()))
    pi_w = params.values["pi.w"]
    d_hidden = np.empty_like(hidden)
    for t in range(T):
        onehot = np.array([1.0, 0.0]) if actions[t] == SEGMENT else np.array([0.0, 1.0])
        dlogit = w[t] * (onehot - policy[t])
        grads["pi.w"] += np.outer(dlogit, hidden[t])
        grads["pi.b"] += dlogit
        d_hidden[t] = pi_w.T @ dlogit
    nn.lstm_backward(params.gate_cells(), caches, d_hidden, grads, "gate.")
    return logprobs, grads


# ---------------------------------------------------------------------------
# Reset encoder
# ---------------------------------------------------------------------------

def encode_segments(params, feats, bounds):
    """One embedding per segment: the encoder's output at the segment's last
    frame, with the encoder restarted from its initial state at each segment
    start.  Embeddings are therefore bit-identical to encoding each segment
    as a standalone utterance.
    """
    emb, _ = _encode_cached(params, feats, bounds, cached=False)
    return emb


def _encode_cached(params, feats, bounds, cached=True):
    if bounds.n_frames != feats.n_frames:
        raise ShapeError(f"boundaries cover {bounds.n_frames} frames, "
                         f"features have {feats.n_frames}")
    cells = params.encoder_cells()
    emb = np.empty((len(bounds), params.config.hidden_dim))
    seg_caches = []
    for n, (t1, t2) in enumerate(bounds.segments):
        xs = feats.frames[t1 - 1:t2]
        if cached:
            outs, _, caches = nn.lstm_run_cached(cells, xs)
            seg_caches.append(caches)
            emb[n] = outs[-1]
        else:
            outs, _ = nn.lstm_run(cells, xs)
            emb[n] = outs[-1]
    return emb, seg_caches


# ---------------------------------------------------------------------------
# Reset backward decoder
# ---------------------------------------------------------------------------

def decode_segments(params, emb, bounds, targets=None):
    """Reconstruct an utterance from its segment embeddings.

    Per segment the decoder starts from linear maps of the embedding and
    produces frames in reverse order (t2 first); each step consumes the
    previously produced frame, or the previous target frame when ``targets``
    is given (teacher forcing).  Rows come back in forward frame order.
    """
    recon, _ = _decode_cached(params, emb, bounds, targets, cached=False)
    return recon


def _decode_cached(params, emb, bounds, targets=None, cached=True):
    emb = np.asarray(emb)
    if emb.shape[0] != len(bounds):
        raise ShapeError(f"{emb.shape[0]} embeddings for {len(bounds)} segments")
    if emb.ndim != 2 or emb.shape[1] != params.config.hidden_dim:
        raise ShapeError(f"embeddings must be (N, {params.config.hidden_dim})")
    v = params.values
    cell = params.decoder_cells()[0]
    d = params.config.feature_dim
    recon = np.empty((bounds.n_frames, d))
    seg_caches = []
    for n, (t1, t2) in enumerate(bounds.segments):
        e = emb[n]
        h = v["dec_h0.w"] @ e + v["dec_h0.b"]
        c = v["dec_c0.w"] @ e + v["dec_c0.b"]
        u = np.zeros(d)
        steps = []
        for k in range(t2 - t1 + 1):
            h, c, cache = nn._lstm_cell_forward(cell, h, c, u)
            x_hat = v["out.w"] @ h + v["out.b"]
            pos = t2 - k  # 1-based frame being produced
            recon[pos - 1] = x_hat
            if cached:
                steps.append((cache, h, u))
            if targets is not None:
                u = targets[pos - 1]
            else:
                u = x_hat
        if cached:
            seg_caches.append(steps)
    return recon, seg_caches


def reconstruction_loss(original, reconstructed):
    """Sum over frames of the squared error averaged over feature dims."""
    a = np.asarray(original)
    b = np.asarray(reconstructed)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = b - a
    return float(np.sum(diff * diff) / a.shape[1])


# ---------------------------------------------------------------------------
# Autoencoder loss gradient (through both resets and the free-running loop)
# ---------------------------------------------------------------------------

def autoencoder_loss_and_grads(params, feats, bounds, teacher_forcing=False):
    """Reconstruction loss and its gradients w.r.t. encoder/decoder params.

    Segments are independent: the encoder restarts per segment and the
    decoder's only cross-frame path is its own feedback inside a segment, so
    gradients of one segment's error w.r.t. another segment's embedding are
    exactly zero.
    """
    loss, grads, _ = _ae_backward(params, feats, bounds, teacher_forcing)
    return loss, grads


def reconstruction_error_and_embedding_grads(params, feats, bounds,
                                             teacher_forcing=False,
                                             only_segment=None):
    """Reconstruction error and d(error)/d(embedding), per segment.

    With ``only_segment=n`` the loss is restricted to segment n's frames, so
    the returned embedding gradients expose the decoder's isolation: rows for
    other segments are exactly zero.
    """
    loss, _, d_emb = _ae_backward(params, feats, bounds, teacher_forcing,
                                  want_param_grads=False,
                                  only_segment=only_segment)
    return loss, d_emb


def _ae_backward(params, feats, bounds, teacher_forcing, want_param_grads=True,
                 only_segment=None):
    v = params.values
    cfg = params.config
    d = cfg.feature_dim
    emb, enc_caches = _encode_cached(params, feats, bounds)
    targets = feats.frames if teacher_forcing else None
    recon, dec_caches = _decode_cached(params, emb, bounds, targets)
    if only_segment is None:
        loss = reconstruction_loss(feats.frames, recon)
    else:
        t1, t2 = bounds.segments[only_segment]
        loss = reconstruction_loss(feats.frames[t1 - 1:t2], recon[t1 - 1:t2])

    names = params.autoencoder_names() if want_param_grads else []
    grads = nn.zero_grads({k: v[k] for k in names}) if want_param_grads else None
    dec_cell = params.decoder_cells()[0]
    enc_cells = params.encoder_cells()
    d_emb = np.zeros_like(emb)

    for n, (t1, t2) in enumerate(bounds.segments):
        in_loss = only_segment is None or n == only_segment
        steps = dec_caches[n]
        L = len(steps)
        dh = np.zeros(cfg.hidden_dim)
        dc = np.zeros(cfg.hidden_dim)
        du_next = None  # gradient flowing into the next step's input (reverse order)
        # walk decoder steps backwards: k = L-1 .. 0
        for k in range(L - 1, -1, -1):
            cache, h_k, _u_k = steps[k]
            pos = t2 - k
            if in_loss:
                d_xhat = (2.0 / d) * (recon[pos - 1] - feats.frames[pos - 1])
            else:
                d_xhat = np.zeros(d)
            if du_next is not None and not teacher_forcing:
                d_xhat = d_xhat + du_next
            if want_param_grads:
                grads["out.w"] += np.outer(d_xhat, h_k)
                grads["out.b"] += d_xhat
            dh_k = dh + v["out.w"].T @ d_xhat
            if want_param_grads:
                dh, dc, du_next = nn._lstm_cell_backward(
                    dec_cell, cache, dh_k, dc, grads, "dec.0.w", "dec.0.b")
            else:
                scratch = {"dec.0.w": np.zeros_like(v["dec.0.w"]),
                           "dec.0.b": np.zeros_like(v["dec.0.b"])}
                dh, dc, du_next = nn._lstm_cell_backward(
                    dec_cell, cache, dh_k, dc, scratch, "dec.0.w", "dec.0.b")
        # dh, dc are now gradients w.r.t. the decoder's initial state
        de = v["dec_h0.w"].T @ dh + v["dec_c0.w"].T @ dc
        d_emb[n] = de
        if want_param_grads:
            grads["dec_h0.w"] += np.outer(dh, emb[n])
            grads["dec_h0.b"] += dh
            grads["dec_c0.w"] += np.outer(dc, emb[n])
            grads["dec_c0.b"] += dc
            # encoder BPTT inside this segment: gradient enters at the last
            # step's hidden output only
            T_seg = t2 - t1 + 1
            d_outs = np.zeros((T_seg, cfg.hidden_dim))
            d_outs[-1] = de
            nn.lstm_backward(enc_cells, enc_caches[n], d_outs, grads, "enc.")
    return loss, grads, d_emb


# ---------------------------------------------------------------------------
# Convenience wrappers
# ---------------------------------------------------------------------------

def greedy_boundaries(params, feats, gas):
    _, actions = run_gate(params, feats, gas, mode="greedy")
    return actions_to_boundaries(actions)


def embed_utterance(params, feats, gas=None, bounds=None):
    """Segment (greedy, unless ``bounds`` is given) and embed one utterance."""
    if bounds is None:
        bounds = greedy_boundaries(params, feats, gas)
    return bounds, encode_segments(params, feats, bounds)
