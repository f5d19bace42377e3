from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slufuse.asr_noise import (
    MIX_GRID,
    CorruptionSpec,
    MixSpec,
    calibrate,
    corpus_wer,
    corrupt_corpus,
    corrupt_to_wer,
    edit_distance,
    engine_presets,
    get_preset,
    inject_noise,
    measure_wer,
    mix_transcripts,
    read_transcripts,
    round_half_up,
    select_asr_ids,
    word_error_rate,
    write_transcripts,
)

from oracles import edit_distance_table

VOCAB = [f"w{i}" for i in range(20)]
words = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=8)


class TestWordErrorRate:
    @pytest.mark.parametrize("ref,hyp,expected", [
        (["turn", "on", "lights"], ["turn", "on", "lights"], 0.0),
        (["turn", "on", "lights"], ["turn", "off", "lights"], 1 / 3),
        (["a"], ["a", "b", "c"], 2.0),
        (["a", "b"], [], 1.0),
    ])
    def test_examples(self, ref, hyp, expected):
        assert word_error_rate(ref, hyp) == expected

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            word_error_rate([], ["a"])

    def test_small_exhaustive_oracle(self):
        table = edit_distance_table(("a", "b", "a"), 4, "ab")
        for hyp, dist in table.items():
            assert edit_distance(["a", "b", "a"], list(hyp)) == dist

    @given(words, words)
    def test_distance_symmetric_rate_not(self, x, y):
        assert edit_distance(x, y) == edit_distance(y, x)
        if x:
            assert word_error_rate(x, y) >= 0
            assert word_error_rate(x, x) == 0

    def test_corpus_wer_pools_words(self):
        assert corpus_wer([["a"], ["a", "b", "c"]], [["x"], ["a", "b", "c"]]) == 0.25

    def test_corpus_wer_length_mismatch(self):
        with pytest.raises(ValueError):
            corpus_wer([["a"]], [])


class TestInjectNoise:
    def _batch(self, n=10, length=9):
        return [[f"w{(i + j) % 20}" for j in range(length)] for i in range(n)]

    def test_zero_fraction_is_identity(self):
        batch = self._batch()
        assert inject_noise(batch, VOCAB, sentence_frac=0.0, rng=np.random.default_rng(0)) == batch

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_sentence_count(self, seed):
        batch = self._batch()
        out, edits = inject_noise(batch, VOCAB, rng=np.random.default_rng(seed), return_edits=True)
        assert sum(e > 0 for e in edits) == 3
        changed = sum(a != b for a, b in zip(batch, out))
        assert changed <= 3

    def test_input_not_mutated(self):
        batch = self._batch()
        before = [list(s) for s in batch]
        inject_noise(batch, VOCAB, sentence_frac=1.0, rng=np.random.default_rng(0))
        assert batch == before

    def test_mean_edits_on_nine_word_sentences(self):
        rng = np.random.default_rng(7)
        counts, dists = [], []
        batch = self._batch(n=100)
        for _ in range(100):
            out, edits = inject_noise(batch, VOCAB, sentence_frac=1.0, rng=rng, return_edits=True)
            counts.extend(edits)
            dists.extend(edit_distance(a, b) for a, b in zip(batch, out))
        assert len(counts) == 10_000
        assert np.mean(counts) == round_half_up(9 / 3) == 3
        # each edited position costs at most one word edit, at least one if not undone
        assert max(dists) <= 3 and np.mean(dists) > 2.5

    @given(st.lists(st.integers(1, 12), min_size=1, max_size=12), st.integers(0, 2**16))
    @settings(max_examples=60)
    def test_never_empties(self, lengths, seed):
        batch = [["w0"] * n for n in lengths]
        out = inject_noise(batch, VOCAB, sentence_frac=1.0, word_frac=1.0, rng=np.random.default_rng(seed))
        assert all(len(s) > 0 for s in out)

    @pytest.mark.parametrize("seed", range(20))
    def test_replacement_differs_from_original(self, seed):
        # single-word sentences can only be replaced (a drop would empty them) or added to
        out, _ = inject_noise([["w3"]], VOCAB, sentence_frac=1.0, rng=np.random.default_rng(seed), return_edits=True)
        assert out[0] != ["w3"]

    def test_token_ids(self):
        batch = [np.arange(2, 8)] * 4
        out = inject_noise(batch, list(range(2, 10)), sentence_frac=0.5, rng=np.random.default_rng(0))
        assert all(isinstance(t, (int, np.integer)) for s in out for t in s)

    def test_tiny_vocabulary(self):
        with pytest.raises(ValueError):
            inject_noise([["a"]], ["a"])


class TestCorruptToWer:
    def test_zero_target_is_identity(self):
        golden = ["turn", "on", "the", "lights"]
        assert corrupt_to_wer(golden, CorruptionSpec("x", 0.0), VOCAB) == golden

    def test_seeded(self):
        spec = CorruptionSpec("x", 0.3, seed=5)
        golden = VOCAB * 5
        assert corrupt_to_wer(golden, spec, VOCAB) == corrupt_to_wer(golden, spec, VOCAB)

    def test_target_04_with_default_mix(self, word_corpus):
        sents, vocab = word_corpus
        spec = calibrate(CorruptionSpec("x", 0.4, seed=1), sents, vocab)
        assert abs(measure_wer(spec, sents, vocab) - 0.4) <= 0.05

    @pytest.mark.parametrize("mix", [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)])
    def test_pure_edit_types(self, mix):
        golden = VOCAB * 50
        spec = CorruptionSpec("x", 0.2, *mix, seed=0)
        hyp = corrupt_to_wer(golden, spec, VOCAB)
        if mix[0]:
            assert len(hyp) == len(golden)
        else:
            assert len(hyp) < len(golden) and set(hyp) <= set(VOCAB)

    def test_substitutes_never_echo(self):
        golden = VOCAB * 20
        hyp = corrupt_to_wer(golden, CorruptionSpec("x", 1.0, 1.0, 0.0, 0.0), VOCAB, np.random.default_rng(0))
        assert all(a != b for a, b in zip(golden, hyp))

    def test_confusion_table(self):
        hyp = corrupt_to_wer(["on"] * 50, CorruptionSpec("x", 1.0, 1.0, 0.0, 0.0), VOCAB,
                             np.random.default_rng(0), confusions={"on": ["off"]})
        assert hyp == ["off"] * 50

    @pytest.mark.parametrize("bad", [dict(target_wer=1.5), dict(p_sub=0.5)])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            CorruptionSpec("x", **{"target_wer": 0.2, **bad})

    def test_corpus_dict_is_id_ordered(self):
        spec = CorruptionSpec("x", 0.3, seed=2)
        a = corrupt_corpus({"b": ["w1", "w2"], "a": ["w3"]}, spec, VOCAB)
        b = corrupt_corpus({"a": ["w3"], "b": ["w1", "w2"]}, spec, VOCAB)
        assert a == b and list(a) == ["a", "b"]


class TestPresets:
    def test_names_and_ordering(self):
        presets = {p.engine: p for p in engine_presets()}
        assert list(presets) == ["sim-academic", "sim-commercial-a", "sim-commercial-b"]
        assert presets["sim-academic"].target_wer == 0.45
        assert presets["sim-commercial-a"].target_wer == 0.12
        assert presets["sim-commercial-b"].target_wer == 0.15

    @pytest.mark.parametrize("preset", engine_presets(), ids=lambda p: p.engine)
    def test_realised_wer(self, preset, word_corpus):
        sents, vocab = word_corpus
        assert abs(measure_wer(preset, sents, vocab) - preset.target_wer) <= 0.05

    @pytest.mark.parametrize("preset", engine_presets(), ids=lambda p: p.engine)
    def test_deterministic(self, preset, word_corpus):
        sents, vocab = word_corpus
        assert corrupt_corpus(sents[:50], preset, vocab) == corrupt_corpus(sents[:50], preset, vocab)

    def test_calibration_moves_toward_target(self, word_corpus):
        sents, vocab = word_corpus
        raw = replace(get_preset("sim-academic"), delta=0.0)
        fitted = calibrate(raw, sents, vocab)
        assert abs(measure_wer(fitted, sents, vocab) - 0.45) <= abs(measure_wer(raw, sents, vocab) - 0.45) + 1e-3

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            get_preset("sim-nothing")


class TestMix:
    def _sets(self, n=100):
        golden = {f"u{i:03d}": ["g"] for i in range(n)}
        asr = {k: ["a"] for k in golden}
        return golden, asr

    @pytest.mark.parametrize("p,expected", [(0.0, 0), (0.2, 20), (0.4, 40), (1.0, 100)])
    def test_exact_counts(self, p, expected):
        golden, asr = self._sets()
        mixed = mix_transcripts(golden, asr, MixSpec(p, seed=4))
        assert sum(v == ["a"] for v in mixed.values()) == expected

    def test_nested_selection(self):
        ids = [f"u{i}" for i in range(37)]
        picks = [select_asr_ids(ids, p, 9) for p in MIX_GRID]
        assert all(a <= b for a, b in zip(picks, picks[1:]))

    def test_misaligned_ids(self):
        golden, asr = self._sets(5)
        asr.pop("u000")
        with pytest.raises(ValueError, match="aligned"):
            mix_transcripts(golden, asr, MixSpec(0.2))

    def test_off_grid_fraction(self):
        with pytest.raises(ValueError):
            MixSpec(0.3)
        assert MixSpec(0.3, grid=(0.0, 0.3)).asr_fraction == 0.3


class TestSidecar:
    def test_round_trip(self, tmp_path):
        hyps = {"u2": ["turn", "on"], "u1": ["dim"]}
        write_transcripts(tmp_path / "t.tsv", hyps, "sim-academic", "manifest.jsonl")
        assert read_transcripts(tmp_path / "t.tsv") == ("sim-academic", "manifest.jsonl", hyps)

    def test_bad_header(self, tmp_path):
        (tmp_path / "t.tsv").write_text("hello\n")
        with pytest.raises(ValueError, match="header"):
            read_transcripts(tmp_path / "t.tsv")
