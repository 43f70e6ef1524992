import numpy as np
import pytest

from segaw.errors import ConfigError
from segaw.features import FeatureMatrix
from segaw.segments import BoundarySet
from segaw.segmental import SsaeConfig, encode_segments, init_ssae
from segaw.matching import subsequence_score
from segaw.synth import (SynthConfig, generate_corpus, relevance_table,
                         select_queries)


def clean_config(**kw):
    base = dict(lexicon_size=5, feature_dim=4, template_len_min=5,
                template_len_max=9, words_min=3, words_max=3,
                noise_sigma=0.0, warp_min=1.0, warp_max=1.0,
                n_train=20, n_test=8, seed=3)
    base.update(kw)
    return SynthConfig(**base)


class TestGeneration:
    def test_same_seed_bitwise_identical(self):
        c1 = generate_corpus(clean_config())
        c2 = generate_corpus(clean_config())
        for u1, u2 in zip(c1.train + c1.test, c2.train + c2.test):
            np.testing.assert_array_equal(u1.feats.frames, u2.feats.frames)
            assert u1.bounds.segments == u2.bounds.segments
            assert u1.word_ids == u2.word_ids

    def test_clean_instances_equal_templates(self):
        corpus = generate_corpus(clean_config())
        for u in corpus.train:
            for (t1, t2), wid in zip(u.bounds.segments, u.word_ids):
                np.testing.assert_array_equal(
                    u.feats.frames[t1 - 1:t2], corpus.templates[wid - 1])

    def test_fixed_word_count_gives_fixed_segments(self):
        corpus = generate_corpus(clean_config())
        for u in corpus.train + corpus.test:
            assert len(u.bounds) == 3
            assert len(u.word_ids) == 3

    def test_boundaries_are_cumulative_lengths(self):
        corpus = generate_corpus(clean_config(noise_sigma=0.1, warp_min=0.8,
                                              warp_max=1.25))
        for u in corpus.train:
            total = 0
            for (t1, t2) in u.bounds.segments:
                assert t1 == total + 1
                total = t2
            assert total == u.feats.n_frames

    def test_noise_and_warp_change_instances(self):
        corpus = generate_corpus(clean_config(noise_sigma=0.2, seed=5))
        u = corpus.train[0]
        t1, t2 = u.bounds.segments[0]
        template = corpus.templates[u.word_ids[0] - 1]
        assert not np.array_equal(u.feats.frames[t1 - 1:t2], template)

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(lexicon_size=1)
        with pytest.raises(ConfigError):
            SynthConfig(warp_min=0.0)
        with pytest.raises(ConfigError):
            SynthConfig(noise_sigma=-1.0)

    def test_word_rate(self):
        corpus = generate_corpus(clean_config())
        n_words = sum(len(u.word_ids) for u in corpus.train)
        n_frames = sum(u.feats.n_frames for u in corpus.train)
        assert corpus.word_rate == n_words / n_frames


class TestRelevance:
    def test_absent_word_has_empty_set(self):
        corpus = generate_corpus(clean_config())
        table = relevance_table(corpus.test, [999])
        assert table[999] == set()

    def test_ubiquitous_word_is_everywhere(self):
        corpus = generate_corpus(clean_config())
        utts = corpus.test
        for u in utts:
            u.word_ids[0] = 2  # plant word 2 in every utterance
        table = relevance_table(utts, [2])
        assert table[2] == {u.feats.utterance_id for u in utts}

    def test_matches_linear_scan(self):
        corpus = generate_corpus(clean_config(seed=9))
        table = relevance_table(corpus.test, [1, 2, 3])
        for wid in (1, 2, 3):
            expect = set()
            for u in corpus.test:
                for w in u.word_ids:
                    if w == wid:
                        expect.add(u.feats.utterance_id)
                        break
            assert table[wid] == expect


class TestQueries:
    def test_instances_cut_at_true_boundaries(self):
        corpus = generate_corpus(clean_config())
        queries = select_queries(corpus, np.random.default_rng(0))
        assert queries
        for q in queries:
            np.testing.assert_array_equal(q.feats.frames,
                                          corpus.templates[q.word_id - 1])

    def test_same_word_query_scores_one_on_clean_corpus(self):
        corpus = generate_corpus(clean_config())
        cfg = SsaeConfig(feature_dim=4, gas_dim=2, hidden_dim=6,
                         gate_hidden=4, gate_layers=1)
        params = init_ssae(np.random.default_rng(1), cfg)
        queries = select_queries(corpus, np.random.default_rng(0))
        q = queries[0]
        doc = next(u for u in corpus.test if q.word_id in u.word_ids)
        q_emb = encode_segments(params, q.feats,
                                BoundarySet.from_ends([], q.feats.n_frames))
        d_emb = encode_segments(params, doc.feats, doc.bounds)
        result = subsequence_score(q_emb, d_emb)
        assert result.score > 1.0 - 1e-9
        # the best offset is the matching word's position
        assert doc.word_ids[result.best_offset - 1] == q.word_id
