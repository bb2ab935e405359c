"""Evaluation harness tests: four-stage splits, word-level scoring fixtures,
synthetic ink generation, lexicon construction, and config round-trips."""

import dataclasses
import math

import numpy as np
import pytest

from inkrecog.errors import TooFewSamplesError
from inkrecog.eval_harness import (
    ExperimentConfig,
    SynthConfig,
    SystemConfig,
    char_template,
    inject_hook,
    make_lexicon,
    recognition_rate,
    run_experiment,
    score_corpus,
    split_four_stages,
    synth_dataset,
    synth_dataset_with_stats,
)
from inkrecog.recognizer import Lexicon, synthetic_alphabet


# ---------------------------------------------------------------------------
# splits

class TestSplit:
    def _ids(self, n):
        return [f"s{i:03d}" for i in range(n)]

    def test_stages_partition_the_ids(self):
        ids = self._ids(40)
        split = split_four_stages(ids, seed=3)
        got = [sid for stage in split.stages() for sid in stage]
        assert sorted(got) == sorted(ids)
        # stages are pairwise disjoint
        assert len(set(got)) == len(got)

    def test_ratio_counts_largest_remainder(self):
        split = split_four_stages(self._ids(40),
                                  ratios=(0.6, 0.15, 0.1, 0.15), seed=0)
        assert [len(s) for s in split.stages()] == [24, 6, 4, 6]

    def test_deterministic_per_seed(self):
        ids = self._ids(25)
        assert split_four_stages(ids, seed=7) == split_four_stages(ids, seed=7)
        assert split_four_stages(ids, seed=7) != split_four_stages(ids, seed=8)

    def test_every_stage_nonempty(self):
        split = split_four_stages(self._ids(4), ratios=(0.97, 0.01, 0.01, 0.01),
                                  seed=1)
        assert all(len(s) >= 1 for s in split.stages())

    def test_too_few_samples_raises(self):
        with pytest.raises(TooFewSamplesError):
            split_four_stages(self._ids(3))


# ---------------------------------------------------------------------------
# scoring

class TestScoring:
    def test_all_correct(self):
        r = recognition_rate(["a", "b", "c"], ["a", "b", "c"])
        assert r.n_correct == 3 and r.recognition_rate == 100.0
        assert r.accuracy == 100.0

    def test_substitution(self):
        r = recognition_rate(["a", "x", "c"], ["a", "b", "c"])
        assert (r.n_correct, r.n_substitutions) == (2, 1)
        assert r.recognition_rate == pytest.approx(100 * 2 / 3)

    def test_deletion_and_insertion(self):
        r = recognition_rate(["a", "c"], ["a", "b", "c"])
        assert (r.n_correct, r.n_deletions, r.n_insertions) == (2, 1, 0)
        r = recognition_rate(["a", "x", "b"], ["a", "b"])
        assert (r.n_correct, r.n_insertions) == (2, 1)
        # insertions reduce accuracy but not the recognition rate
        assert r.recognition_rate == 100.0
        assert r.accuracy == pytest.approx(50.0)

    def test_rate_string_formatting(self):
        # 13 of 19 correct -> 68.4%
        pairs = [(["w"] * 13 + ["x"] * 6, ["w"] * 13 + ["y"] * 6)]
        report = score_corpus(pairs)
        assert report.n_ref_words == 19 and report.n_correct == 13
        assert report.rate_str() == "68.4%"

    def test_empty_reference(self):
        assert recognition_rate([], []).recognition_rate == 100.0
        assert recognition_rate(["a"], []).recognition_rate == 0.0

    def test_corpus_pools_counts(self):
        pairs = [
            (["a", "b"], ["a", "b"]),
            (["x"], ["a"]),
            ([], ["a"]),
        ]
        report = score_corpus(pairs)
        assert report.n_ref_words == 4
        assert report.n_correct == 2
        assert report.n_substitutions == 1
        assert report.n_deletions == 1
        assert report.recognition_rate == pytest.approx(50.0)

    def test_accuracy_clamped(self):
        r = recognition_rate(["x"] * 30, ["a"])
        assert r.accuracy == -100.0


# ---------------------------------------------------------------------------
# synthetic ink

class TestSynth:
    def test_templates_deterministic_and_distinct(self):
        a1, a2 = char_template("a"), char_template("a")
        assert np.array_equal(a1, a2)
        assert not np.array_equal(char_template("a"), char_template("b"))
        # templates live in the unit box and progress left to right
        assert (a1[:, 0] <= a1[-1, 0] + 1e-9).all()

    def test_dataset_deterministic_per_seed(self):
        ab = synthetic_alphabet(6)
        lex = make_lexicon(ab, 6)
        cfg = SynthConfig(alphabet_size=6, jitter_sigma=0.1, seed=5)
        d1 = synth_dataset(cfg, lex, 8)
        d2 = synth_dataset(cfg, lex, 8)
        assert len(d1) == 8
        for t1, t2 in zip(d1, d2):
            assert t1 == t2
        d3 = synth_dataset(dataclasses.replace(cfg, seed=6), lex, 8)
        assert any(t1 != t3 for t1, t3 in zip(d1, d3))

    def test_transcripts_and_stroke_counts(self):
        ab = synthetic_alphabet(6)
        lex = make_lexicon(ab, 6, word_len_range=(2, 2))
        cfg = SynthConfig(alphabet_size=6, words_per_line=3)
        traces = synth_dataset(cfg, lex, 5)
        for tr in traces:
            assert len(tr.transcript) == 3
            assert all(w in lex.words for w in tr.transcript)
            # one stroke per character
            assert len(tr.strokes) == sum(len(w) for w in tr.transcript)

    def test_defect_rates_match_probabilities(self):
        ab = synthetic_alphabet(6)
        lex = make_lexicon(ab, 6)
        cfg = SynthConfig(alphabet_size=6, hook_probability=0.4,
                          gap_probability=0.1, seed=2)
        traces, stats = synth_dataset_with_stats(cfg, lex, 60)
        hook_rate = stats.n_hooks / stats.n_strokes
        assert hook_rate == pytest.approx(0.4, abs=0.05)
        assert stats.n_dropped_points > 0

    def test_hook_injection_shape(self):
        rng = np.random.default_rng(0)
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        hooked = inject_hook(pts, rng, size=0.1)
        assert len(hooked) == 5
        # the tail is short relative to the stroke
        tail = np.hypot(*(hooked[-1] - hooked[2]))
        assert tail <= 0.1 + 1e-9

    def test_slant_shears_ink(self):
        ab = synthetic_alphabet(4)
        lex = Lexicon(words=("aa",))
        base = synth_dataset(SynthConfig(alphabet_size=4), lex, 1)[0]
        slanted = synth_dataset(
            SynthConfig(alphabet_size=4, slant_deg=30.0), lex, 1)[0]
        for p0, p1 in zip(base.all_points(), slanted.all_points()):
            assert p1.y == p0.y
            expect = p0.x + math.tan(math.radians(30.0)) * (1.0 - p0.y)
            assert p1.x == pytest.approx(expect)


class TestLexiconFactory:
    def test_size_lengths_and_uniqueness(self):
        ab = synthetic_alphabet(8)
        lex = make_lexicon(ab, 10, word_len_range=(3, 4), seed=2)
        assert len(lex.words) == 10
        assert len(set(lex.words)) == 10
        assert all(3 <= len(w) <= 4 for w in lex.words)
        assert all(c in ab.chars for w in lex.words for c in w)

    def test_deterministic(self):
        ab = synthetic_alphabet(8)
        assert make_lexicon(ab, 6, seed=4) == make_lexicon(ab, 6, seed=4)


# ---------------------------------------------------------------------------
# experiment plumbing

class TestExperiment:
    def test_config_from_dict_round_trip(self):
        doc = {
            "synth": {"jitter_sigma": 0.18, "words_per_line": 4},
            "n_lines": 16,
            "lexicon_size": 6,
            "word_len_range": [3, 4],
            "split_ratios": [0.5, 0.125, 0.125, 0.25],
            "n_states": 5,
            "systems": [
                {"system_id": "s1", "mode": "online",
                 "resample_distance": 0.11, "drop_features": [0]},
                {"system_id": "s2", "mode": "online", "n_states": 4,
                 "train_fraction": 0.9},
            ],
        }
        cfg = ExperimentConfig.from_dict(doc)
        assert cfg.synth.jitter_sigma == 0.18
        assert cfg.word_len_range == (3, 4)
        assert cfg.systems[0].drop_features == (0,)
        assert cfg.systems[1].train_fraction == 0.9
        assert cfg.systems[1].n_states == 4

    def test_noise_free_online_system_is_perfect(self):
        # with no jitter/hooks/gaps the generator is deterministic per
        # character, so a single trained system must reach 100%
        cfg = ExperimentConfig(
            synth=SynthConfig(alphabet_size=6, words_per_line=3),
            n_lines=16, lexicon_size=6, word_len_range=(2, 3),
            split_ratios=(0.5, 0.125, 0.125, 0.25),
            n_states=4, train_iterations=3,
            systems=(
                SystemConfig(system_id="online", mode="online"),
                SystemConfig(system_id="online2", mode="online",
                             resample_distance=0.13),
            ),
        )
        report = run_experiment(cfg)
        assert report.system_scores["online"].recognition_rate == 100.0
        assert report.combined.recognition_rate == 100.0

    def test_report_markdown_and_dict(self):
        cfg = ExperimentConfig(
            synth=SynthConfig(alphabet_size=6, words_per_line=2,
                              jitter_sigma=0.1),
            n_lines=12, lexicon_size=5, word_len_range=(2, 2),
            split_ratios=(0.5, 0.17, 0.08, 0.25),
            n_states=4, train_iterations=2,
            systems=(
                SystemConfig(system_id="s1", mode="online"),
                SystemConfig(system_id="s2", mode="online",
                             resample_distance=0.13),
            ),
        )
        report = run_experiment(cfg)
        md = report.to_markdown()
        assert "ROVER combination" in md
        assert "Delta" in md
        doc = report.to_dict()
        assert set(doc) == {"systems", "combined", "ranking", "best_single",
                            "delta"}
        assert doc["best_single"] in doc["systems"]

    def test_seed_override_rerolls_everything(self):
        cfg = ExperimentConfig(
            synth=SynthConfig(alphabet_size=6, words_per_line=2,
                              jitter_sigma=0.15),
            n_lines=12, lexicon_size=5, word_len_range=(2, 2),
            split_ratios=(0.5, 0.17, 0.08, 0.25),
            n_states=4, train_iterations=2,
            systems=(
                SystemConfig(system_id="s1", mode="online"),
                SystemConfig(system_id="s2", mode="online",
                             resample_distance=0.13),
            ),
        )
        r1 = run_experiment(cfg, seed=11)
        r2 = run_experiment(cfg, seed=11)
        assert r1.system_scores["s1"] == r2.system_scores["s1"]
