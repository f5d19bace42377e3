"""Paired audio/text intent corpora: synthetic generation, manifests, batching.

Manifest files are line-delimited::

    #slu-manifest v1 task=<name> classes=<comma-separated class names>
    {"audio_path": "audio/utt00000.wav", "id": "utt00000", "label": 0, "split": "train", "transcript": "..."}
    ...

Audio paths are relative to the manifest's directory and point at mono
16-bit PCM wave files.
"""

from __future__ import annotations

import itertools
import json
import re
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
SPLITS = ("train", "valid", "test")
HEADER_RE = re.compile(r"^#slu-manifest v(\d+) task=(\S+) classes=(\S*)$")
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


class SchemaError(ManifestError):
    pass


class MissingAudioError(ManifestError):
    pass


class UnknownClassError(ManifestError):
    pass


class SplitLeakError(ManifestError):
    pass


class EmptyClassError(ManifestError):
    pass


class GenerationError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class Utterance:
    id: str
    golden: list[str]
    label: int
    split: str
    audio_path: str | None = None
    audio: Waveform | None = None

    @property
    def transcript(self):
        return " ".join(self.golden)


@dataclass
class CorpusManifest:
    task: str
    classes: list[str]
    utterances: list[Utterance]
    root: Path | None = None

    @property
    def num_classes(self):
        return len(self.classes)

    def split(self, name):
        return [u for u in self.utterances if u.split == name]

    def vocab_stats(self, split="train"):
        return Counter(w for u in self.split(split) for w in u.golden)

    def load_audio(self, utt):
        if utt.audio is None:
            if self.root is None or utt.audio_path is None:
                raise MissingAudioError(f"utterance {utt.id} has no audio")
            utt.audio = read_wav(self.root / utt.audio_path)
        return utt.audio


# ---------------------------------------------------------------------------
# Wave files
# ---------------------------------------------------------------------------

def quantize(samples):
    """Round to the 16-bit PCM grid so in-memory and on-disk audio agree."""
    return (np.round(np.clip(samples, -1.0, 1.0) * 32767.0) / 32767.0).astype(np.float32)


def write_wav(path, waveform: Waveform):
    pcm = np.round(np.clip(waveform.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(waveform.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path):
    path = Path(path)
    if not path.is_file():
        raise MissingAudioError(f"audio file not found: {path}")
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise MissingAudioError(f"{path}: expected mono 16-bit PCM")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise MissingAudioError(f"{path}: unreadable wave file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32767.0
    return Waveform(samples, rate)


# ---------------------------------------------------------------------------
# Synthetic task
# ---------------------------------------------------------------------------

# Each intent is carried by three adjacent cue words drawn from small
# intent-specific synonym lists; everything else is intent-neutral filler.
# Redundant cues make a single word error survivable, so text accuracy degrades
# gracefully at low WER and sharply at high WER.
DEFAULT_TEMPLATES = {
    intent: [f"{{lead}} {{{intent}_a}} {{{intent}_b}} {{{intent}_c}} the {{room}} {{device}} {{tail}}"]
    for intent in ("lights_on", "lights_off", "brighten", "dim", "set_color", "play_music")
}

DEFAULT_SLOTS = {
    "lead": ["", "please", "hey", "kindly"],
    "tail": ["", "now", "tonight", "today", "for me", "right away"],
    "room": ["kitchen", "bedroom", "bathroom", "garage", "hallway", "office", "attic", "basement",
             "lounge", "study", "nursery", "porch", "cellar", "library", "pantry", "veranda"],
    "device": ["lights", "lamps", "bulbs", "speakers", "panel", "system"],
    "lights_on_a": ["activate", "enable"],
    "lights_on_b": ["on", "lit"],
    "lights_on_c": ["glowing", "awake"],
    "lights_off_a": ["deactivate", "disable"],
    "lights_off_b": ["off", "dark"],
    "lights_off_c": ["sleeping", "unlit"],
    "brighten_a": ["raise", "boost"],
    "brighten_b": ["brighter", "stronger"],
    "brighten_c": ["vivid", "intense"],
    "dim_a": ["lower", "reduce"],
    "dim_b": ["dimmer", "softer"],
    "dim_c": ["faint", "gentle"],
    "set_color_a": ["tint", "paint"],
    "set_color_b": ["red", "green", "blue", "yellow"],
    "set_color_c": ["colored", "hued"],
    "play_music_a": ["stream", "tune"],
    "play_music_b": ["jazz", "rock", "classical", "pop"],
    "play_music_c": ["music", "songs"],
}


@dataclass
class SynthTaskSpec:
    task: str = "synth-lights"
    templates: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TEMPLATES.items()})
    slots: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SLOTS.items()})
    samples_per_split: dict[str, int] = field(default_factory=lambda: {"train": 210, "valid": 45, "test": 45})
    word_duration: float = 0.2
    tone_base_hz: float = 250.0
    tone_top_hz: float = 3500.0
    tone_count: int = 16
    pitch_jitter: float = 0.02
    snr_db: float = 20.0
    sample_rate: int = SAMPLE_RATE
    seed: int = 0

    @property
    def num_intents(self):
        return len(self.templates)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


_SLOT_RE = re.compile(r"\{(\w+)\}")


def expand_template(template, slots):
    """All word sequences a template can realise."""
    names = _SLOT_RE.findall(template)
    for name in names:
        if name not in slots:
            raise GenerationError(f"template {template!r} references unknown slot {name!r}")
    out = []
    for values in itertools.product(*(slots[n] for n in names)):
        it = iter(values)
        text = _SLOT_RE.sub(lambda _m: next(it), template)
        out.append(tuple(text.split()))
    return out


def task_vocabulary(spec: SynthTaskSpec):
    words = set()
    for templates in spec.templates.values():
        for t in templates:
            for sent in expand_template(t, spec.slots):
                words.update(sent)
    return sorted(words)


def word_signatures(spec: SynthTaskSpec):
    """Map each task word to a distinct pair of tone frequencies (Hz)."""
    vocab = task_vocabulary(spec)
    grid = np.geomspace(spec.tone_base_hz, spec.tone_top_hz, spec.tone_count)
    pairs = list(itertools.combinations(range(spec.tone_count), 2))
    if len(pairs) < len(vocab):
        raise GenerationError(f"{len(pairs)} tone pairs cannot cover {len(vocab)} words; raise tone_count")
    order = np.random.default_rng([spec.seed, 0x5167]).permutation(len(pairs))
    return {w: (float(grid[pairs[j][0]]), float(grid[pairs[j][1]])) for w, j in zip(vocab, order)}


def render_words(words, signatures, spec: SynthTaskSpec, rng):
    """Tone-signature audio: ``word_duration`` seconds per word plus white noise."""
    n = int(round(spec.word_duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    ramp = min(n // 2, int(0.01 * spec.sample_rate))
    env = np.ones(n)
    if ramp:
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    pitch = 1.0 + rng.uniform(-spec.pitch_jitter, spec.pitch_jitter)
    gain = rng.uniform(0.3, 0.6)
    chunks = []
    for w in words:
        f1, f2 = signatures[w]
        phase = rng.uniform(0, 2 * np.pi, size=2)
        tone = np.sin(2 * np.pi * f1 * pitch * t + phase[0]) + 0.8 * np.sin(2 * np.pi * f2 * pitch * t + phase[1])
        chunks.append(0.5 * gain * env * tone)
    clean = np.concatenate(chunks) if chunks else np.zeros(0)
    rms = np.sqrt(np.mean(clean ** 2)) if clean.size else 0.0
    noise = rng.standard_normal(clean.size) * rms / (10.0 ** (spec.snr_db / 20.0))
    return quantize(clean + noise)


def generate_synth(spec: SynthTaskSpec) -> CorpusManifest:
    """Sample a stratified synthetic corpus; deterministic given ``spec.seed``."""
    if spec.num_intents < 2:
        raise GenerationError("a synthetic task needs at least two intents")
    realisations = {}
    owner = {}
    for label, (intent, templates) in enumerate(spec.templates.items()):
        sents = []
        for t in templates:
            expanded = expand_template(t, spec.slots)
            if not expanded or any(len(s) == 0 for s in expanded):
                raise GenerationError(f"template {t!r} of intent {intent!r} realises an empty sentence")
            sents.extend(expanded)
        for s in set(sents):
            if s in owner and owner[s] != intent:
                raise GenerationError(f"sentence {' '.join(s)!r} realised by intents {owner[s]!r} and {intent!r}")
            owner[s] = intent
        realisations[intent] = sents

    signatures = word_signatures(spec)
    rng = np.random.default_rng(spec.seed)
    utterances = []
    counter = 0
    for split in SPLITS:
        n = spec.samples_per_split.get(split, 0)
        for label, intent in enumerate(spec.templates):
            pool = realisations[intent]
            for _ in range(n):
                words = list(pool[rng.integers(len(pool))])
                audio = Waveform(render_words(words, signatures, spec, rng), spec.sample_rate)
                uid = f"utt{counter:05d}"
                counter += 1
                utterances.append(Utterance(uid, words, label, split, f"audio/{uid}.wav", audio))
    return CorpusManifest(spec.task, list(spec.templates), utterances)


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def save_manifest(manifest: CorpusManifest, path, write_audio=True):
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    for name in manifest.classes:
        if "," in name or any(c.isspace() for c in name):
            raise SchemaError(f"class name {name!r} may not contain commas or whitespace")
    lines = [f"#slu-manifest v{MANIFEST_VERSION} task={manifest.task} classes={','.join(manifest.classes)}"]
    for u in manifest.utterances:
        rel = u.audio_path or f"audio/{u.id}.wav"
        if write_audio and u.audio is not None:
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
            write_wav(root / rel, u.audio)
        lines.append(json.dumps(
            {"id": u.id, "audio_path": rel, "transcript": u.transcript, "label": u.label, "split": u.split},
            sort_keys=True, separators=(", ", ": ")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.root = root
    return path


def parse_header(line):
    m = HEADER_RE.match(line.rstrip("\n"))
    if not m:
        raise SchemaError(f"bad manifest header: {line.strip()!r}")
    version = int(m.group(1))
    if version != MANIFEST_VERSION:
        raise SchemaError(f"unsupported manifest version v{version}")
    classes = [c for c in m.group(3).split(",") if c]
    return m.group(2), classes


def load_manifest(path, load_audio=True) -> CorpusManifest:
    """Read and eagerly validate a manifest (and, by default, its audio)."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty manifest")
    task, classes = parse_header(lines[0])
    utterances = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            u = Utterance(str(rec["id"]), str(rec["transcript"]).split(), int(rec["label"]),
                          str(rec["split"]), str(rec["audio_path"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: malformed record ({exc})") from exc
        utterances.append(u)
    manifest = CorpusManifest(task, classes, utterances, path.parent)
    validate_manifest(manifest, check_audio=load_audio)
    if load_audio:
        for u in manifest.utterances:
            manifest.load_audio(u)
    return manifest


def validate_manifest(manifest: CorpusManifest, check_audio=True):
    seen = {}
    n_classes = manifest.num_classes
    for u in manifest.utterances:
        if u.split not in SPLITS:
            raise SchemaError(f"utterance {u.id}: unknown split {u.split!r}")
        if not 0 <= u.label < n_classes:
            raise UnknownClassError(f"utterance {u.id}: label {u.label} outside {n_classes} classes")
        if not u.golden:
            raise SchemaError(f"utterance {u.id}: empty golden transcript")
        if u.id in seen:
            if seen[u.id] != u.split:
                raise SplitLeakError(f"utterance {u.id} appears in splits {seen[u.id]!r} and {u.split!r}")
            raise SchemaError(f"duplicate utterance id {u.id}")
        seen[u.id] = u.split
        if check_audio and u.audio is None:
            if manifest.root is None or u.audio_path is None:
                raise MissingAudioError(f"utterance {u.id}: no audio path")
            if not (manifest.root / u.audio_path).is_file():
                raise MissingAudioError(f"utterance {u.id}: audio file {u.audio_path} not found")
    train_labels = {u.label for u in manifest.utterances if u.split == "train"}
    missing = [manifest.classes[i] for i in range(n_classes) if i not in train_labels]
    if missing:
        raise EmptyClassError(f"classes without training examples: {', '.join(missing)}")


def batch_iter(manifest, split, batch_size, shuffle_seed=None, epoch=0):
    """Batches of utterances; the order is a pure function of (seed, epoch)."""
    items = manifest.split(split) if isinstance(manifest, CorpusManifest) else list(manifest)
    if not items:
        raise ValueError(f"split {split!r} is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(items))
    if shuffle_seed is not None:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(items))
    return [[items[i] for i in order[s:s + batch_size]] for s in range(0, len(items), batch_size)]
