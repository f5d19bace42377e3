"""Robustness sweep: branch and fusion metrics over engines, mix fractions and seeds."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import asr_noise
from .fusion import FtFusion, fuse, predict
from .metrics import MetricReport
from .pipeline import load_model

CSV_COLUMNS = ("task", "model", "fusion_mode", "engine", "mix_fraction", "seed", "accuracy", "macro_f1", "micro_f1")
MODELS = ("text", "speech", "mlu")
FUSION_MODES = ("avg", "agg", "ft")


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    models: tuple[str, ...] = MODELS
    fusion_modes: tuple[str, ...] = ("avg", "agg")
    engines: tuple[str, ...] = tuple(p.engine for p in asr_noise.engine_presets())
    grid: tuple[float, ...] = asr_noise.MIX_GRID
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    split: str = "test"
    parallelism: int = 1

    def __post_init__(self):
        for name in ("models", "engines", "grid", "seeds"):
            if not getattr(self, name):
                raise SweepError(f"sweep {name} must be non-empty")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise SweepError(f"unknown models {sorted(bad)}; expected a subset of {MODELS}")
        bad = set(self.fusion_modes) - set(FUSION_MODES)
        if bad:
            raise SweepError(f"unknown fusion modes {sorted(bad)}")
        if "mlu" in self.models and not self.fusion_modes:
            raise SweepError("model 'mlu' needs at least one fusion mode")
        for p in self.grid:
            if not 0.0 <= p <= 1.0:
                raise SweepError(f"mix fraction {p} outside [0, 1]")
        for e in self.engines:
            asr_noise.get_preset(e)
        if self.parallelism < 1:
            raise SweepError("parallelism must be >= 1")

    def cells(self):
        for model in self.models:
            for mode in (self.fusion_modes if model == "mlu" else ("none",)):
                for engine in self.engines:
                    for p in self.grid:
                        for seed in self.seeds:
                            yield model, mode, engine, p, seed


def _needed_checkpoints(model, mode):
    if model == "text":
        return ("text",)
    if model == "speech":
        return ("speech",)
    return ("speech", "text", "fusion") if mode == "ft" else ("speech", "text")


def _check_checkpoints(spec, checkpoints, task):
    for model, mode, engine, p, seed in spec.cells():
        for need in _needed_checkpoints(model, mode):
            if need not in checkpoints or checkpoints[need] is None:
                raise SweepError(f"missing {need!r} checkpoint for cell model={model} fusion_mode={mode} "
                                 f"engine={engine} mix_fraction={p:g} seed={seed}")
    for name, ckpt in checkpoints.items():
        meta = getattr(ckpt, "metadata", None) or {}
        trained_on = meta.get("task")
        if trained_on is not None and trained_on != task:
            raise SweepError(f"checkpoint {name!r} was trained on task {trained_on!r}, manifest is {task!r}")


def engine_hypotheses(golden, engine, seed, vocab_words):
    """Simulated ASR output for every utterance of a split; one rng stream per (engine, seed)."""
    preset = asr_noise.get_preset(engine)
    rng = np.random.default_rng([preset.seed, seed])
    return asr_noise.corrupt_corpus(golden, preset, vocab_words, rng)


def run_sweep(spec: SweepSpec, manifest, checkpoints) -> list[MetricReport]:
    """One :class:`MetricReport` per cell, sorted by cell key.

    ``checkpoints`` maps ``"speech"``, ``"text"`` and optionally ``"fusion"``
    to :class:`~slufuse.nn.Checkpoint` objects (or already-built models).
    """
    _check_checkpoints(spec, checkpoints, manifest.task)
    models = {k: (load_model(v) if hasattr(v, "metadata") else v) for k, v in checkpoints.items()}
    utts = manifest.split(spec.split)
    if not utts:
        raise SweepError(f"manifest has no {spec.split!r} utterances")
    labels = np.array([u.label for u in utts])
    ids = [u.id for u in utts]
    golden = {u.id: list(u.golden) for u in utts}
    L = manifest.num_classes

    z_speech = None
    if "speech" in models and ("speech" in spec.models or "mlu" in spec.models):
        sm = models["speech"]
        z_speech = sm.predict_logits(sm.prepare(utts, manifest))
    text_model = models.get("text")
    head: FtFusion | None = models.get("fusion")

    def cell_rows(engine, seed):
        rows = []
        base = dict(task=manifest.task, engine=engine, seed=seed)
        hyps = None
        if text_model is not None:
            hyps = dict(zip(ids, engine_hypotheses([golden[i] for i in ids], engine, seed, text_model.vocab.words)))
        for p in spec.grid:
            z_text = None
            if hyps is not None:
                mixed = asr_noise.mix_transcripts(golden, hyps, asr_noise.MixSpec(p, seed, grid=spec.grid))
                z_text = text_model.predict_logits([text_model.encode(mixed[i]) for i in ids])
            cell = dict(base, mix_fraction=float(p))
            if "text" in spec.models:
                rows.append(MetricReport.compute(z_text.argmax(1), labels, L, model="text", fusion_mode="none", **cell))
            if "speech" in spec.models:
                rows.append(MetricReport.compute(z_speech.argmax(1), labels, L, model="speech", fusion_mode="none", **cell))
            if "mlu" in spec.models:
                for mode in spec.fusion_modes:
                    preds = predict(fuse(mode, z_speech, z_text, head))
                    rows.append(MetricReport.compute(preds, labels, L, model="mlu", fusion_mode=mode, **cell))
        return rows

    jobs = [(e, s) for e in spec.engines for s in spec.seeds]
    if spec.parallelism > 1:
        with ThreadPoolExecutor(max_workers=spec.parallelism) as pool:
            chunks = list(pool.map(lambda job: cell_rows(*job), jobs))
    else:
        chunks = [cell_rows(*job) for job in jobs]
    reports = [r for chunk in chunks for r in chunk]
    reports.sort(key=cell_key)
    return reports


def cell_key(r):
    return (r.model, r.fusion_mode, r.engine, r.mix_fraction, r.seed)


def _fmt(x):
    return f"{x:.6f}"


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(reports, key=cell_key):
        w.writerow([r.task, r.model, r.fusion_mode, r.engine, f"{r.mix_fraction:g}", r.seed,
                    _fmt(r.accuracy), _fmt(r.macro_f1), _fmt(r.micro_f1)])
    return buf.getvalue()


def write_csv(reports, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(reports_to_csv(reports))


def read_csv(path):
    """Rows as dicts with numeric fields converted."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise SweepError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
        rows = []
        for row in reader:
            row["mix_fraction"] = float(row["mix_fraction"])
            row["seed"] = int(row["seed"])
            for k in ("accuracy", "macro_f1", "micro_f1"):
                row[k] = float(row[k])
            rows.append(row)
    return rows
