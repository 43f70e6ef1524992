"""Two-phase training loop.

Phase 1 fits the encoder/decoder to the reconstruction loss under the current
(frozen) gate's sampled segmentations; phase 2 improves the gate by policy
gradient using rewards from the frozen encoder/decoder.  The phases alternate
for a configured number of outer iterations, and the encoder/decoder restart
from a fresh seeded initialization at every phase-1 entry (warm starts hurt
stability); the gate persists throughout.

Rewards per sampled segmentation: the negated reconstruction error, and the
negated segment-count/length ratio scaled by ``reward_weight``; the reward is
the minimum of the two, so reconstruction dominates until segment counts get
out of hand.  A per-utterance baseline (mean reward over ``baseline_samples``
rollouts) centers the advantages.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, InputError, TrainingError
from .segments import actions_to_boundaries
from .segmental import (SsaeParams, _gate_scan, autoencoder_loss_and_grads,
                        decode_segments, encode_segments, gate_logprob_grads,
                        init_autoencoder_values, init_gate_values,
                        reconstruction_loss)


@dataclass
class TrainConfig:
    reward_weight: float = 5.0    # weight on the segment-rate reward term
    baseline_samples: int = 5     # rollouts per utterance for the baseline
    lr_phase1: float = 1e-3
    lr_phase2: float = 3e-4
    phase1_epochs: int = 20
    phase2_episodes: int = 1      # passes over the corpus per outer iteration
    phase2_batch: int = 8         # utterances per gate update
    phase2_utterances: int = 0    # cap per episode (0 = whole corpus)
    outer_iterations: int = 5
    mode: str = "reinforce"       # "reinforce" | "ppo"
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    grad_clip: float = 5.0
    teacher_forcing: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.reward_weight <= 0:
            raise ConfigError("reward_weight must be positive")
        if self.baseline_samples < 2:
            raise ConfigError("need at least 2 baseline samples")
        if self.mode not in ("reinforce", "ppo"):
            raise ConfigError(f"unknown training mode: {self.mode}")
        if self.ppo_clip <= 0:
            raise ConfigError("ppo_clip must be positive")


@dataclass
class RewardRecord:
    """Reward for one sampled segmentation of one utterance."""

    r_mse: float
    r_nt: float
    r: float


def compute_reward(recon_error, n_segments, n_frames, reward_weight):
    """min(-recon_error, -reward_weight * N/T); both terms are non-positive."""
    if n_frames < 1 or n_segments < 1:
        raise InputError("need at least one frame and one segment")
    r_mse = -float(recon_error)
    r_nt = -float(n_segments) / float(n_frames)
    return RewardRecord(r_mse, r_nt, min(r_mse, reward_weight * r_nt))


def compute_baseline(rewards):
    """Mean reward over an utterance's sampled segmentations."""
    rewards = list(rewards)
    if not rewards:
        raise InputError("no rewards to average")
    return math.fsum(rewards) / len(rewards)


def centered_advantages(rewards):
    """Rewards minus their mean, snapped to a shared power-of-two grid.

    Raw float differences from the mean rarely sum to exactly zero; on a
    common grid every partial sum is exact, so the advantages sum to 0.0
    bit-for-bit (at a ~1e-13 relative perturbation, irrelevant to learning).
    """
    r = np.asarray(rewards, dtype=np.float64)
    a = r - compute_baseline(r)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0 or not np.isfinite(scale):
        return np.zeros_like(a)
    grid = 2.0 ** (math.floor(math.log2(scale)) - 45)
    if grid == 0.0:  # subnormal-scale rewards; exactness is moot there
        return a
    ints = np.rint(a / grid).astype(np.int64)
    ints[int(np.argmax(np.abs(a)))] -= ints.sum()
    return ints.astype(np.float64) * grid


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

@dataclass
class Rollout:
    actions: np.ndarray
    bounds: object
    reward: RewardRecord
    logprobs: np.ndarray  # log pi_t(a_t) under the sampling policy
    scan: tuple = None    # cached gate forward (policy, hidden, caches)


def reconstruction_reward_fn(params, config):
    """Default reward: free-running (or teacher-forced, per config)
    reconstruction error under the current encoder/decoder."""

    def fn(feats, actions, bounds):
        emb = encode_segments(params, feats, bounds)
        targets = feats.frames if config.teacher_forcing else None
        recon = decode_segments(params, emb, bounds, targets)
        err = reconstruction_loss(feats.frames, recon)
        if not np.isfinite(err):
            raise TrainingError("non-finite reconstruction error in rollout")
        return compute_reward(err, len(bounds), feats.n_frames,
                              config.reward_weight)

    return fn


def _sample_rollout(params, feats, gas, rng, reward_fn):
    policy, actions, (hidden, _, caches) = _gate_scan(
        params, feats, gas, mode="sample", rng=rng, cached=True)
    bounds = actions_to_boundaries(actions)
    reward = reward_fn(feats, actions, bounds)
    taken = np.where(actions == 1, policy[:, 0], policy[:, 1])
    return Rollout(actions, bounds, reward, np.log(taken),
                   (policy, hidden, caches))


# ---------------------------------------------------------------------------
# Policy-gradient step
# ---------------------------------------------------------------------------

def policy_gradient_step(params, batch, config, opt, rng, reward_fn=None):
    """One gate update from a batch of (features, gas) utterances.

    Draws ``baseline_samples`` segmentations per utterance, centers their
    rewards, and applies either the plain policy-gradient estimator or the
    clipped-surrogate update with ``ppo_epochs`` inner passes.  Only gate
    parameters change.  Returns per-batch diagnostics.
    """
    if reward_fn is None:
        reward_fn = reconstruction_reward_fn(params, config)
    M = config.baseline_samples
    per_utt = []
    for feats, gas in batch:
        rollouts = [_sample_rollout(params, feats, gas, rng, reward_fn)
                    for _ in range(M)]
        adv = centered_advantages([ro.reward.r for ro in rollouts])
        per_utt.append((feats, gas, rollouts, adv))

    gate = params.subset(params.gate_names())
    denom = float(M * len(batch))
    n_updates = config.ppo_epochs if config.mode == "ppo" else 1
    grad_norm = 0.0
    for k in range(n_updates):
        grads = nn.zero_grads(gate)
        for feats, gas, rollouts, adv in per_utt:
            for ro, a in zip(rollouts, adv):
                if a == 0.0:
                    continue
                scan = ro.scan if k == 0 else None  # params unchanged on pass 0
                if config.mode == "reinforce":
                    # descend on -sum_t log pi_t(a_t) * advantage
                    _, g = gate_logprob_grads(params, feats, gas, ro.actions,
                                              step_weights=-a, scan=scan)
                else:
                    def weights(logp_new, _old=ro.logprobs, _a=a):
                        ratio = np.exp(logp_new - _old)
                        clipped = np.clip(ratio, 1.0 - config.ppo_clip,
                                          1.0 + config.ppo_clip)
                        # surrogate is min(ratio*A, clipped*A); gradient flows
                        # through ratio only where the raw branch is taken
                        take_raw = ratio * _a <= clipped * _a
                        return np.where(take_raw, -_a, 0.0) * ratio
                    _, g = gate_logprob_grads(params, feats, gas, ro.actions,
                                              step_weights=weights, scan=scan)
                for name in grads:
                    grads[name] += g[name]
        for name in grads:
            grads[name] /= denom
        grad_norm = nn.clip_global_norm(grads, config.grad_clip)
        nn.adam_update(gate, grads, opt)

    records = [ro.reward for _, _, ros, _ in per_utt for ro in ros]
    nts = [len(ro.bounds) / ro.bounds.n_frames
           for _, _, ros, _ in per_utt for ro in ros]
    return {
        "mean_r": float(np.mean([r.r for r in records])),
        "mean_r_mse": float(np.mean([r.r_mse for r in records])),
        "mean_r_nt": float(np.mean([r.r_nt for r in records])),
        "mean_nt": float(np.mean(nts)),
        "grad_norm": float(grad_norm),
    }


# ---------------------------------------------------------------------------
# Phase 1
# ---------------------------------------------------------------------------

def train_phase1(params, corpus, config, rng, boundaries=None, opt=None):
    """Fit encoder/decoder by reconstruction; the gate only samples.

    ``corpus`` is a list of (features, gas) pairs; ``boundaries`` optionally
    fixes the segmentation (then gas may be None), otherwise each epoch
    resamples it from the frozen gate.  Returns the per-epoch loss curve.
    """
    ae = params.subset(params.autoencoder_names())
    if opt is None:
        opt = nn.adam_init(ae, lr=config.lr_phase1)
    losses = []
    for _ in range(config.phase1_epochs):
        total = 0.0
        for i, (feats, gas) in enumerate(corpus):
            if boundaries is not None:
                bounds = boundaries[i]
            else:
                _, actions, _ = _gate_scan(params, feats, gas,
                                           mode="sample", rng=rng)
                bounds = actions_to_boundaries(actions)
            loss, grads = autoencoder_loss_and_grads(
                params, feats, bounds, teacher_forcing=config.teacher_forcing)
            if not np.isfinite(loss):
                raise TrainingError("reconstruction loss diverged in phase 1")
            nn.clip_global_norm(grads, config.grad_clip)
            nn.adam_update(ae, grads, opt)
            total += loss
        losses.append(total)
    return losses


# ---------------------------------------------------------------------------
# Iterative two-phase loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: SsaeParams
    metrics: list
    ae_inits: list = field(default_factory=list)


def train_iterative(corpus, ssae_config, config, eval_hook=None,
                    record_inits=False):
    """Alternate phase 1 and phase 2 for ``outer_iterations`` rounds.

    Three derived rng streams (gate init, encoder/decoder re-inits, action
    sampling) keep runs reproducible; the k-th phase-1 entry takes the k-th
    fresh draw from the re-init stream rather than warm-starting.
    ``eval_hook(iteration, params) -> dict`` can append evaluation numbers to
    each iteration's metrics record.
    """
    if not corpus:
        raise InputError("cannot train on an empty corpus")
    ss = np.random.SeedSequence(config.seed)
    gate_ss, ae_ss, sample_ss = ss.spawn(3)
    ae_rng = np.random.default_rng(ae_ss)
    sample_rng = np.random.default_rng(sample_ss)
    params = SsaeParams(ssae_config,
                        init_gate_values(np.random.default_rng(gate_ss),
                                         ssae_config))
    gate_opt = nn.adam_init(params.subset(params.gate_names()),
                            lr=config.lr_phase2)
    result = TrainResult(params, [])
    for it in range(1, config.outer_iterations + 1):
        fresh = init_autoencoder_values(ae_rng, ssae_config)
        params.values.update(fresh)
        if record_inits:
            result.ae_inits.append({k: v.copy() for k, v in fresh.items()})
        losses = train_phase1(params, corpus, config, sample_rng)
        result.metrics.append({"iteration": it, "phase": 1,
                               "loss": losses[-1], "epoch_losses": losses})

        diag_sum = {}
        n_steps = 0
        for _ in range(config.phase2_episodes):
            order = sample_rng.permutation(len(corpus))
            if config.phase2_utterances:
                order = order[:config.phase2_utterances]
            for lo in range(0, len(order), config.phase2_batch):
                batch = [corpus[j] for j in order[lo:lo + config.phase2_batch]]
                diag = policy_gradient_step(params, batch, config,
                                            gate_opt, sample_rng)
                for key, val in diag.items():
                    diag_sum[key] = diag_sum.get(key, 0.0) + val
                n_steps += 1
        record = {"iteration": it, "phase": 2}
        record.update({k: v / n_steps for k, v in diag_sum.items()})
        if eval_hook is not None:
            record.update(eval_hook(it, params))
        result.metrics.append(record)
    return result
