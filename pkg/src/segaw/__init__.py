"""segaw: unsupervised spoken-word segmentation and segment embeddings.

A segmental sequence-to-sequence autoencoder learns to cut feature sequences
into word-like segments (a reinforcement-learned gate) and to embed each
segment as a fixed-size vector (a reset encoder/decoder pair), trained purely
from reconstruction.  The package adds the surrounding pipeline: MFCC
features, a pretrained GRU autoencoder supplying the gate's activation
signal, query-by-example retrieval over the embeddings (with a frame-level
DTW baseline), evaluation metrics, a synthetic corpus with exact boundaries,
and a batch CLI.
"""

__version__ = "0.1.0"

from .features import FeatureConfig, FeatureMatrix, apply_cmvn, compute_mfcc
from .gas import GasConfig, GasModel, extract_gas, gas_segment, train_gas_autoencoder
from .matching import MatchResult, cosine_sim, dtw_score, subsequence_score
from .evaluation import (corpus_prf, mean_average_precision, random_segment,
                         segmentation_prf)
from .segments import BoundarySet, actions_to_boundaries
from .segmental import (SsaeConfig, SsaeParams, decide_actions,
                        decode_segments, encode_segments, gate_forward,
                        init_ssae, reconstruction_loss, run_gate)
from .synth import SynthConfig, SynthCorpus, generate_corpus, relevance_table
from .training import (RewardRecord, TrainConfig, compute_baseline,
                       compute_reward, policy_gradient_step, train_iterative,
                       train_phase1)

__all__ = [
    "FeatureConfig", "FeatureMatrix", "apply_cmvn", "compute_mfcc",
    "GasConfig", "GasModel", "extract_gas", "gas_segment",
    "train_gas_autoencoder",
    "MatchResult", "cosine_sim", "dtw_score", "subsequence_score",
    "corpus_prf", "mean_average_precision", "random_segment",
    "segmentation_prf",
    "BoundarySet", "actions_to_boundaries",
    "SsaeConfig", "SsaeParams", "decide_actions", "decode_segments",
    "encode_segments", "gate_forward", "init_ssae", "reconstruction_loss",
    "run_gate",
    "SynthConfig", "SynthCorpus", "generate_corpus", "relevance_table",
    "RewardRecord", "TrainConfig", "compute_baseline", "compute_reward",
    "policy_gradient_step", "train_iterative", "train_phase1",
]
