"""Synthetic corpus generator: determinism, rates, invariants."""

import pytest

from reentry import corpus, labeling, synth
from reentry.synth import SynthConfig


def single_pattern_config(pattern="AB", rate=0.27, n=1000, seed=99):
    return SynthConfig(pattern_weights={pattern: 1.0}, reentry_rates={pattern: rate},
                       n_conversations=n, seed=seed)


def measured_rate(convs, pattern):
    """Re-entry rate over instances cut exactly at the pattern prefix."""
    instances = corpus.extract_instances(convs)
    hits = [i for i in instances
            if i.position == len(pattern) and labeling.thread_pattern(i.context) == pattern]
    return sum(i.label_reentry for i in hits) / len(hits), len(hits)


class TestDeterminism:
    def test_same_config_same_bytes(self, tmp_path):
        cfg = single_pattern_config(n=50)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        corpus.write_corpus_jsonl(synth.generate_corpus(cfg), a)
        corpus.write_corpus_jsonl(synth.generate_corpus(cfg), b)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_output(self):
        a = synth.generate_corpus(single_pattern_config(n=20, seed=1))
        b = synth.generate_corpus(single_pattern_config(n=20, seed=2))
        assert a != b


class TestRates:
    def test_zero_rate_means_no_reentry(self):
        convs = synth.generate_corpus(single_pattern_config(rate=0.0, n=300))
        rate, count = measured_rate(convs, "AB")
        assert count == 300
        assert rate == 0.0

    def test_one_rate_means_always_reentry(self):
        convs = synth.generate_corpus(single_pattern_config(rate=1.0, n=300))
        rate, _ = measured_rate(convs, "AB")
        assert rate == 1.0

    def test_rate_converges_to_target(self):
        convs = synth.generate_corpus(single_pattern_config(rate=0.27, n=10000))
        rate, count = measured_rate(convs, "AB")
        assert count == 10000
        assert abs(rate - 0.27) < 0.02

    def test_multi_pattern_prefix_rates(self):
        cfg = SynthConfig(
            pattern_weights={"ABA": 0.5, "ABC": 0.5},
            reentry_rates={"ABA": 1.0, "ABC": 0.0},
            n_conversations=400, seed=7)
        convs = synth.generate_corpus(cfg)
        rate_aba, n_aba = measured_rate(convs, "ABA")
        rate_abc, n_abc = measured_rate(convs, "ABC")
        assert n_aba + n_abc == 400
        assert rate_aba == 1.0
        assert rate_abc == 0.0


class TestStructure:
    def test_prefix_realizes_sampled_pattern(self):
        convs = synth.generate_corpus(single_pattern_config(pattern="ABCA", rate=0.5, n=100))
        for conv in convs:
            assert labeling.thread_pattern(conv.turns[:4]) == "ABCA"

    def test_salt_token_leads_every_turn(self):
        convs = synth.generate_corpus(synth.default_config(n_conversations=50))
        for conv in convs:
            for turn in conv.turns:
                assert turn.tokens[0] == turn.author

    def test_turn_lengths_respect_range(self):
        cfg = single_pattern_config(n=50)
        cfg.turn_len_range = (3, 4)
        convs = synth.generate_corpus(cfg)
        for conv in convs:
            for turn in conv.turns:
                assert 4 <= len(turn.tokens) <= 5  # salt + 3..4 content tokens

    def test_all_conversations_pass_corpus_invariants(self, tmp_path):
        convs = synth.generate_corpus(synth.default_config(n_conversations=200))
        assert all(len(c.turns) >= 2 for c in convs)
        # Round-trip through the corpus format preserves everything.
        p = tmp_path / "c.jsonl"
        corpus.write_corpus_jsonl(convs, p)
        assert corpus.ingest_jsonl(p) == convs

    def test_default_config_covers_dominant_patterns(self):
        cfg = synth.default_config()
        assert {"AB", "ABA", "ABC"} <= set(cfg.pattern_weights)
        assert cfg.reentry_rates["AB"] == pytest.approx(0.27)


class TestConfigValidation:
    def test_weights_must_sum_to_one(self):
        cfg = SynthConfig(pattern_weights={"AB": 0.5}, reentry_rates={"AB": 0.5})
        with pytest.raises(ValueError, match="sum to 1"):
            synth.generate_corpus(cfg)

    def test_rates_must_cover_patterns(self):
        cfg = SynthConfig(pattern_weights={"AB": 1.0}, reentry_rates={})
        with pytest.raises(ValueError, match="missing re-entry rate"):
            cfg.validate()

    def test_rate_range(self):
        cfg = SynthConfig(pattern_weights={"AB": 1.0}, reentry_rates={"AB": 1.5})
        with pytest.raises(ValueError, match="in \\[0, 1\\]"):
            cfg.validate()

    def test_pattern_must_be_canonical(self):
        cfg = SynthConfig(pattern_weights={"BA": 1.0}, reentry_rates={"BA": 0.5})
        with pytest.raises(ValueError, match="canonical"):
            cfg.validate()

    def test_turn_len_range_order(self):
        cfg = single_pattern_config()
        cfg.turn_len_range = (5, 2)
        with pytest.raises(ValueError, match="turn_len_range"):
            cfg.validate()

    def test_json_roundtrip(self):
        cfg = synth.default_config(n_conversations=77, seed=5)
        back = SynthConfig.from_json(cfg.to_json())
        assert back == cfg
