"""Synthetic corpora with exact word boundaries.

A lexicon of smooth feature-space templates (random walks passed through a
3-frame moving average, then standardized) is concatenated into utterances;
each word instance is linearly time-warped by a random factor and gets i.i.d.
Gaussian noise.  Ground-truth boundaries fall on each word's final frame, so
segmentation and retrieval quality can be measured exactly.  Everything is
deterministic per seed, with one derived rng stream per utterance.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .features import FeatureMatrix
from .segments import BoundarySet


@dataclass
class SynthConfig:
    lexicon_size: int = 20
    feature_dim: int = 8
    template_len_min: int = 8
    template_len_max: int = 20
    words_min: int = 3
    words_max: int = 8
    noise_sigma: float = 0.1
    warp_min: float = 0.8
    warp_max: float = 1.25
    phone_inventory: int = 12     # shared short units words are built from
    channel_sigma: float = 0.0    # per-utterance constant feature offset
    n_train: int = 500
    n_test: int = 100
    n_query_words: int = 5
    n_query_instances: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.lexicon_size < 2:
            raise ConfigError("need at least 2 lexicon words")
        if self.template_len_min < 3:
            raise ConfigError("templates need at least 3 frames")
        if self.template_len_max < self.template_len_min:
            raise ConfigError("template length range is inverted")
        if not 0 < self.words_min <= self.words_max:
            raise ConfigError("words-per-utterance range is invalid")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        if not 0 < self.warp_min <= self.warp_max:
            raise ConfigError("warp factor range is invalid")


@dataclass
class SynthUtterance:
    feats: FeatureMatrix
    bounds: BoundarySet
    word_ids: list


@dataclass
class SynthCorpus:
    config: SynthConfig
    templates: list = field(default_factory=list)
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    @property
    def word_rate(self):
        """True boundaries per frame over the training split."""
        n_words = sum(len(u.word_ids) for u in self.train)
        n_frames = sum(u.feats.n_frames for u in self.train)
        return n_words / n_frames


def _smooth(x):
    padded = np.concatenate([x[:1], x, x[-1:]])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


def _smooth_walk(rng, length, dim):
    smooth = _smooth(np.cumsum(rng.standard_normal((length, dim)), axis=0))
    mu = smooth.mean(axis=0)
    sd = smooth.std(axis=0)
    return (smooth - mu) / np.where(sd < 1e-12, 1.0, sd)


def _make_template(rng, cfg, phones):
    """One lexicon word.

    With a phone inventory, a word is a sequence of shared short units cut to
    the target length and lightly smoothed at the joins, so single frames
    recur across different words (as speech frames do) while whole-word
    trajectories stay distinct.  Without one, each word is an independent
    smoothed random walk.  Returns (template, signature) where the signature
    identifies the construction for lexicon uniqueness checks.
    """
    target = int(rng.integers(cfg.template_len_min, cfg.template_len_max + 1))
    if not phones:
        return _smooth_walk(rng, target, cfg.feature_dim), ("walk", target, rng.integers(1 << 30))
    rows = []
    ids = []
    total = 0
    while total < target:
        k = int(rng.integers(len(phones)))
        ids.append(k)
        rows.append(phones[k])
        total += phones[k].shape[0]
    template = _smooth(np.concatenate(rows)[:target])
    return template, tuple(ids) + (target,)


def _warp(template, factor):
    length = template.shape[0]
    new_len = max(3, int(round(length * factor)))
    if new_len == length:
        return template.copy()
    pos = np.linspace(0.0, length - 1.0, new_len)
    grid = np.arange(length, dtype=np.float64)
    return np.column_stack([np.interp(pos, grid, template[:, j])
                            for j in range(template.shape[1])])


def _make_utterance(rng, cfg, templates, uid):
    n_words = int(rng.integers(cfg.words_min, cfg.words_max + 1))
    word_ids = [int(w) for w in rng.integers(1, cfg.lexicon_size + 1, n_words)]
    # speaker/channel stand-in: one constant offset for the whole utterance
    offset = cfg.channel_sigma * rng.standard_normal(cfg.feature_dim)
    pieces = []
    ends = []
    total = 0
    for wid in word_ids:
        factor = float(rng.uniform(cfg.warp_min, cfg.warp_max))
        inst = _warp(templates[wid - 1], factor)
        inst = inst + cfg.noise_sigma * rng.standard_normal(inst.shape)
        pieces.append(inst)
        total += inst.shape[0]
        ends.append(total)
    frames = np.concatenate(pieces) + offset
    return SynthUtterance(FeatureMatrix(uid, frames),
                          BoundarySet.from_ends(ends, total), word_ids)


def generate_corpus(config):
    """Build lexicon plus train/test splits, reproducible from the seed."""
    ss = np.random.SeedSequence(config.seed)
    streams = ss.spawn(1 + config.n_train + config.n_test)
    template_rng = np.random.default_rng(streams[0])
    corpus = SynthCorpus(config)
    phones = [_smooth_walk(template_rng, int(template_rng.integers(4, 7)),
                           config.feature_dim)
              for _ in range(config.phone_inventory)]
    seen = set()
    while len(corpus.templates) < config.lexicon_size:
        template, signature = _make_template(template_rng, config, phones)
        if signature in seen:  # two words must not share the same build
            continue
        seen.add(signature)
        corpus.templates.append(template)
    for i in range(config.n_train):
        rng = np.random.default_rng(streams[1 + i])
        corpus.train.append(_make_utterance(rng, config, corpus.templates,
                                            f"train{i:04d}"))
    for i in range(config.n_test):
        rng = np.random.default_rng(streams[1 + config.n_train + i])
        corpus.test.append(_make_utterance(rng, config, corpus.templates,
                                           f"test{i:04d}"))
    return corpus


def relevance_table(utterances, query_word_ids):
    """Map each query word id to the set of utterance ids containing it."""
    table = {}
    for wid in query_word_ids:
        table[wid] = {u.feats.utterance_id for u in utterances
                      if wid in u.word_ids}
    return table


@dataclass
class Query:
    query_id: str
    word_id: int
    feats: FeatureMatrix


def select_queries(corpus, rng):
    """Pick query words present in both splits and cut their instances out of
    training utterances (by true boundaries) as spoken queries."""
    cfg = corpus.config
    train_words = {w for u in corpus.train for w in u.word_ids}
    test_words = {w for u in corpus.test for w in u.word_ids}
    candidates = sorted(train_words & test_words)
    n_words = min(cfg.n_query_words, len(candidates))
    chosen = rng.choice(candidates, size=n_words, replace=False)
    queries = []
    for wid in sorted(int(w) for w in chosen):
        found = 0
        for u in corpus.train:
            if found >= cfg.n_query_instances:
                break
            for (t1, t2), w in zip(u.bounds.segments, u.word_ids):
                if w == wid:
                    frames = u.feats.frames[t1 - 1:t2].copy()
                    queries.append(Query(f"q{wid:03d}_{found}", wid,
                                         FeatureMatrix(f"q{wid:03d}_{found}",
                                                       frames)))
                    found += 1
                    break  # at most one instance per utterance
    return queries
