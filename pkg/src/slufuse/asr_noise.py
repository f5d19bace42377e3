"""Transcript corruption and measurement.

* word error rate from a unit-cost word alignment
* train-time noise injection (add / drop / replace words)
* simulated ASR engines calibrated to a target corpus WER
* mixing golden and ASR transcripts at a fixed fraction
* sidecar transcript files keyed by utterance id
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

MIX_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
SIDECAR_RE = re.compile(r"^#slu-transcripts v1 source=(\S+) manifest=(\S*)$")


def round_half_up(x):
    return math.floor(x + 0.5)


# ---------------------------------------------------------------------------
# Word error rate
# ---------------------------------------------------------------------------

def edit_distance(ref, hyp):
    """Minimum number of word substitutions, deletions and insertions."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i]
        for j, h in enumerate(hyp, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def word_error_rate(ref, hyp):
    """(S + D + I) / len(ref); can exceed 1 when the hypothesis has insertions."""
    if len(ref) == 0:
        raise ValueError("word error rate is undefined for an empty reference")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(refs, hyps):
    """Pooled WER: total edits over total reference words."""
    refs = list(refs)
    hyps = list(hyps)
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    words = sum(len(r) for r in refs)
    if words == 0:
        raise ValueError("word error rate is undefined for an empty reference corpus")
    return sum(edit_distance(r, h) for r, h in zip(refs, hyps)) / words


# ---------------------------------------------------------------------------
# Uniform lexical sampling
# ---------------------------------------------------------------------------

class _WordSampler:
    def __init__(self, vocab):
        self.words = list(vocab)
        if not self.words:
            raise ValueError("empty vocabulary")
        self.index = {w: i for i, w in enumerate(self.words)}

    def any(self, rng):
        return self.words[rng.integers(len(self.words))]

    def other_than(self, word, rng):
        i = self.index.get(word)
        if i is None:
            return self.any(rng)
        j = rng.integers(len(self.words) - 1)
        return self.words[j + 1 if j >= i else j]


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

REPLACE, DROP, ADD = 0, 1, 2


def corrupt_sentence(words, n_edits, sampler, rng):
    """Apply ``n_edits`` edits at distinct positions; never empties the sentence."""
    words = list(words)
    n = len(words)
    n_edits = min(n_edits, n)
    positions = rng.choice(n, size=n_edits, replace=False)
    ops = rng.integers(3, size=n_edits)
    if n_edits == n and np.all(ops == DROP):
        ops[-1] = REPLACE
    plan = dict(zip(positions.tolist(), ops.tolist()))
    out = []
    for i, w in enumerate(words):
        op = plan.get(i)
        if op is None:
            out.append(w)
        elif op == REPLACE:
            out.append(sampler.other_than(w, rng))
        elif op == ADD:
            out.append(w)
            out.append(sampler.any(rng))
    return out


def inject_noise(batch, vocab, sentence_frac=0.3, word_frac=1 / 3, rng=None, return_edits=False):
    """Corrupt round(sentence_frac * B) sentences of a batch, each at
    max(1, round(word_frac * len)) word positions.

    Each edit is uniformly one of replace (by a different vocabulary word),
    drop, or add (a random word after the position). Items may be word
    strings or token ids, as long as ``vocab`` holds the same kind.
    """
    rng = rng if rng is not None else np.random.default_rng()
    sampler = _WordSampler(vocab)
    if len(sampler.words) < 2:
        raise ValueError("noise injection needs a vocabulary of at least two words")
    batch = [list(s) for s in batch]
    k = min(len(batch), round_half_up(sentence_frac * len(batch)))
    chosen = rng.choice(len(batch), size=k, replace=False) if k else []
    edits = [0] * len(batch)
    for i in sorted(int(c) for c in chosen):
        if not batch[i]:
            continue
        n_edits = min(len(batch[i]), max(1, round_half_up(word_frac * len(batch[i]))))
        batch[i] = corrupt_sentence(batch[i], n_edits, sampler, rng)
        edits[i] = n_edits
    return (batch, edits) if return_edits else batch


# ---------------------------------------------------------------------------
# Simulated ASR engines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    """A simulated engine: target WER, edit mix, seed and the calibrated insertion
    correction ``delta`` (per-word edit rate is
    ``target / (p_sub + p_del + p_ins * (1 + delta))``)."""

    engine: str
    target_wer: float
    p_sub: float = 0.8
    p_del: float = 0.1
    p_ins: float = 0.1
    seed: int = 0
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.target_wer <= 1.0:
            raise ValueError(f"target_wer must lie in [0, 1], got {self.target_wer}")
        mix = (self.p_sub, self.p_del, self.p_ins)
        if min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError(f"edit mix {mix} is not a probability distribution")

    @property
    def edit_rate(self):
        denom = self.p_sub + self.p_del + self.p_ins * (1.0 + self.delta)
        return min(1.0, self.target_wer / denom) if denom > 0 else 0.0


def corrupt_to_wer(golden, spec: CorruptionSpec, vocab, rng=None, confusions=None):
    """Simulated ASR hypothesis for one golden word sequence.

    Every word is independently edited with probability ``spec.edit_rate``.
    Substitutes come from ``confusions[word]`` when given, else uniformly from
    ``vocab`` minus the word itself.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    q = spec.edit_rate
    if q == 0.0:
        return list(golden)
    sampler = _WordSampler(vocab)
    cum = np.cumsum([spec.p_sub, spec.p_del, spec.p_ins])
    out = []
    for w in golden:
        if rng.random() >= q:
            out.append(w)
            continue
        op = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        if op == 0:
            table = confusions.get(w) if confusions else None
            out.append(table[rng.integers(len(table))] if table else sampler.other_than(w, rng))
        elif op == 2:
            out.append(w)
            out.append(sampler.any(rng))
    return out


def corrupt_corpus(transcripts, spec: CorruptionSpec, vocab, rng=None, confusions=None):
    """Corrupt a mapping id -> words (or a list of word lists) with one rng stream."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if isinstance(transcripts, dict):
        return {k: corrupt_to_wer(v, spec, vocab, rng, confusions) for k, v in sorted(transcripts.items())}
    return [corrupt_to_wer(v, spec, vocab, rng, confusions) for v in transcripts]


def measure_wer(spec: CorruptionSpec, corpus, vocab, seed=None):
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    hyps = corrupt_corpus(list(corpus), spec, vocab, rng)
    return corpus_wer(corpus, hyps)


def calibrate(spec: CorruptionSpec, corpus, vocab, iterations=4, seed=12345):
    """Fit ``delta`` so the measured corpus WER matches ``target_wer``.

    Measured WER is close to linear in the edit rate, so each round rescales
    the rate by target / measured and re-expresses it through ``delta``.
    """
    if spec.target_wer == 0.0 or spec.p_ins == 0.0:
        return spec
    current = spec
    for _ in range(iterations):
        measured = measure_wer(current, corpus, vocab, seed)
        if measured == 0.0:
            break
        rate = min(1.0, current.edit_rate * spec.target_wer / measured)
        denom = spec.target_wer / rate
        delta = (denom - spec.p_sub - spec.p_del) / spec.p_ins - 1.0
        current = replace(current, delta=float(delta))
    return current


def engine_presets():
    """Three simulated engines: one academic-grade, two commercial-grade.

    ``delta`` values come from :func:`calibrate` against the default
    synthetic corpus.
    """
    return [
        CorruptionSpec("sim-academic", 0.45, p_sub=0.7, p_del=0.15, p_ins=0.15, seed=101, delta=-0.0694),
        CorruptionSpec("sim-commercial-a", 0.12, p_sub=0.8, p_del=0.1, p_ins=0.1, seed=202, delta=-0.264),
        CorruptionSpec("sim-commercial-b", 0.15, p_sub=0.75, p_del=0.15, p_ins=0.1, seed=303, delta=-0.2054),
    ]


def get_preset(name):
    for p in engine_presets():
        if p.engine == name:
            return p
    raise KeyError(f"unknown engine preset {name!r}; choose from {[p.engine for p in engine_presets()]}")


# ---------------------------------------------------------------------------
# Golden / ASR mixing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixSpec:
    asr_fraction: float
    seed: int = 0
    grid: tuple[float, ...] = MIX_GRID

    def __post_init__(self):
        if not any(abs(self.asr_fraction - g) < 1e-12 for g in self.grid):
            raise ValueError(f"asr_fraction {self.asr_fraction} not in mix grid {self.grid}")


def select_asr_ids(ids, fraction, seed):
    """Exactly round(fraction * N) ids; prefixes of one seeded permutation, so
    larger fractions contain the smaller ones."""
    ids = sorted(ids)
    k = round_half_up(fraction * len(ids))
    order = np.random.default_rng(seed).permutation(len(ids))
    return {ids[i] for i in order[:k]}


def mix_transcripts(golden, asr, spec: MixSpec):
    """Replace a ``spec.asr_fraction`` share of golden transcripts by ASR output."""
    if set(golden) != set(asr):
        missing = sorted(set(golden) ^ set(asr))[:5]
        raise ValueError(f"golden and ASR transcript sets are not aligned by id (e.g. {missing})")
    picked = select_asr_ids(golden, spec.asr_fraction, spec.seed)
    return {k: list(asr[k] if k in picked else golden[k]) for k in sorted(golden)}


# ---------------------------------------------------------------------------
# Sidecar transcript files
# ---------------------------------------------------------------------------

def write_transcripts(path, transcripts, source, manifest_name=""):
    lines = [f"#slu-transcripts v1 source={source} manifest={manifest_name}"]
    for k in sorted(transcripts):
        lines.append(json.dumps({"id": k, "transcript": " ".join(transcripts[k])}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_transcripts(path):
    """Returns ``(source, manifest_name, {id: words})``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    m = SIDECAR_RE.match(lines[0]) if lines else None
    if not m:
        raise ValueError(f"{path}: bad transcript sidecar header")
    out = {}
    for line in lines[1:]:
        if line.strip():
            rec = json.loads(line)
            out[rec["id"]] = rec["transcript"].split()
    return m.group(1), m.group(2), out


def spec_to_dict(spec):
    return asdict(spec)
