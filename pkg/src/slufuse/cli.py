"""Command-line interface: ``slufuse <command> [options]``.

Exit status is 0 on success, 1 on invalid input (bad flags, malformed or
missing files, unknown presets) and 2 on unexpected internal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, asr_noise
from .corpus import ManifestError, SynthTaskSpec, generate_synth, load_manifest, save_manifest
from .metrics import MetricReport
from .nn import Checkpoint
from .pipeline import PRESETS, build_vocabulary, fit_fusion_head, load_model, train_branch
from .sweep import FUSION_MODES, MODELS, SweepError, SweepSpec, read_csv, run_sweep, write_csv

SEED_ENV = "SLU_FUSE_SEED"


class UsageError(Exception):
    """Bad command line; reported with the usage text and exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v)


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v)


def _names(text):
    return tuple(v for v in text.split(",") if v)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    spec = SynthTaskSpec(seed=args.seed, snr_db=args.snr_db,
                         samples_per_split={"train": args.train, "valid": args.valid, "test": args.test})
    manifest = generate_synth(spec)
    path = save_manifest(manifest, Path(args.out) / "manifest.jsonl")
    print(f"wrote {len(manifest.utterances)} utterances, {manifest.num_classes} classes to {path}")


def _load_ckpt(path, what):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} checkpoint not found: {p}")
    return Checkpoint.load(p)


def cmd_train(args):
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.branch == "fusion":
        speech = load_model(_load_ckpt(args.speech, "speech") or _missing("--speech"))
        text = load_model(_load_ckpt(args.text, "text") or _missing("--text"))
        head = fit_fusion_head(speech, text, manifest, seed=args.seed)
        ckpt = head.to_checkpoint("fusion")
        ckpt.metadata["task"] = manifest.task
        ckpt.save(out)
        print(f"wrote fusion head to {out}")
        return
    overrides = {k: v for k, v in (("lr0", args.lr0), ("max_epochs", args.max_epochs),
                                   ("patience", args.patience)) if v is not None}
    _, ckpt, log = train_branch(args.branch, manifest, args.preset, args.seed,
                                noise_injection=args.noise_injection, **overrides)
    ckpt.save(out)
    log_path = out.with_suffix(".log.tsv")
    log_path.write_text(log.to_table(), encoding="utf-8")
    print(f"wrote {args.branch} checkpoint to {out} (best epoch {log.best_epoch}, "
          f"valid acc {log.best_valid_acc:.4f}, stop: {log.stop_reason}); log in {log_path}")


def _missing(flag):
    raise UsageError(f"train --branch fusion requires {flag}")


def cmd_corrupt(args):
    manifest = load_manifest(args.manifest, load_audio=False)
    utts = manifest.split(args.split)
    if not utts:
        raise ValueError(f"manifest has no {args.split!r} utterances")
    preset = asr_noise.get_preset(args.preset)
    vocab = build_vocabulary(manifest).words
    rng = np.random.default_rng([preset.seed, args.seed])
    hyps = asr_noise.corrupt_corpus({u.id: u.golden for u in utts}, preset, vocab, rng)
    asr_noise.write_transcripts(args.out, hyps, preset.engine, Path(args.manifest).name)
    wer = asr_noise.corpus_wer([u.golden for u in sorted(utts, key=lambda u: u.id)],
                               [hyps[k] for k in sorted(hyps)])
    print(f"wrote {len(hyps)} {preset.engine} transcripts to {args.out} (corpus WER {wer:.4f})")


def _read_transcript_file(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"transcript file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if text.startswith("#slu-transcripts"):
        return asr_noise.read_transcripts(p)[2]
    return [line.split() for line in text.splitlines()]


def cmd_wer(args):
    ref = _read_transcript_file(args.ref)
    hyp = _read_transcript_file(args.hyp)
    if isinstance(ref, dict) != isinstance(hyp, dict):
        raise ValueError("--ref and --hyp must both be plain text or both be transcript sidecars")
    if isinstance(ref, dict):
        if set(ref) != set(hyp):
            raise ValueError("--ref and --hyp cover different utterance ids")
        keys = sorted(ref)
        ref, hyp = [ref[k] for k in keys], [hyp[k] for k in keys]
    print(round(asr_noise.corpus_wer(ref, hyp), 6))


def _branch_checkpoints(args):
    return {"speech": _load_ckpt(args.speech, "speech"), "text": _load_ckpt(args.text, "text"),
            "fusion": _load_ckpt(args.fusion, "fusion")}


def cmd_eval(args):
    manifest = load_manifest(args.manifest)
    mode = "none" if args.model != "mlu" else args.fusion_mode
    spec = SweepSpec(models=(args.model,), fusion_modes=(mode,) if args.model == "mlu" else (),
                     engines=(args.engine,), grid=(args.mix,), seeds=(args.seed,))
    ckpts = {k: v for k, v in _branch_checkpoints(args).items() if v is not None}
    (report,) = run_sweep(spec, manifest, ckpts)
    print(json.dumps(asdict(report), sort_keys=True))


def cmd_sweep(args):
    manifest = load_manifest(args.manifest)
    spec = SweepSpec(models=_names(args.models), fusion_modes=_names(args.fusion_modes),
                     engines=_names(args.engines), grid=_floats(args.grid),
                     seeds=_ints(args.seeds) if args.seeds else tuple(range(args.seed, args.seed + 5)),
                     parallelism=args.parallelism)
    ckpts = {k: v for k, v in _branch_checkpoints(args).items() if v is not None}
    reports = run_sweep(spec, manifest, ckpts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(reports, out)
    print(f"wrote {len(reports)} rows to {out}")


def cmd_report(args):
    from .plotting import ascii_table, plot_sweep

    csv_path = Path(args.csv)
    if not csv_path.is_file():
        raise FileNotFoundError(f"sweep CSV not found: {csv_path}")
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    table = ascii_table(rows, args.metric)
    sys.stdout.write(table)
    txt = csv_path.with_suffix(".txt")
    txt.write_text(table, encoding="utf-8")
    png = Path(args.out) if args.out else csv_path.with_suffix(".png")
    plot_sweep(rows, png, args.metric)
    print(f"wrote {txt} and {png}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    seed = default_seed()
    engines = [p.engine for p in asr_noise.engine_presets()]
    parser = _Parser(prog="slufuse", description="Speech + text late-fusion intent classification workbench.")
    parser.add_argument("--version", action="version", version=f"slufuse {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic audio+text task")
    p.add_argument("--out", required=True, help="output directory (manifest.jsonl + audio/)")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--train", type=int, default=210, help="training utterances per intent")
    p.add_argument("--valid", type=int, default=45)
    p.add_argument("--test", type=int, default=45)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a branch (speech|text) or fit the ft fusion head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--branch", required=True, choices=("speech", "text", "fusion"))
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--noise-injection", action="store_true", help="corrupt text inputs during training")
    p.add_argument("--lr0", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--speech", help="speech checkpoint (fusion only)")
    p.add_argument("--text", help="text checkpoint (fusion only)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("corrupt", help="write simulated ASR transcripts for a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", required=True, choices=engines)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("wer", help="corpus word error rate between two transcript files")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=cmd_wer)

    def model_flags(q):
        q.add_argument("--manifest", required=True)
        q.add_argument("--speech", help="speech checkpoint")
        q.add_argument("--text", help="text checkpoint")
        q.add_argument("--fusion", help="ft fusion head checkpoint")

    p = sub.add_parser("eval", help="evaluate one (model, engine, mix fraction, seed) cell")
    model_flags(p)
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--fusion-mode", default="avg", choices=FUSION_MODES)
    p.add_argument("--preset", dest="engine", default=engines[0], choices=engines, help="ASR engine preset")
    p.add_argument("--mix", type=float, default=0.0, help="fraction of test transcripts replaced by ASR output")
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate all cells and write a CSV")
    model_flags(p)
    p.add_argument("--models", default=",".join(MODELS))
    p.add_argument("--fusion-modes", default="avg,agg")
    p.add_argument("--engines", default=",".join(engines))
    p.add_argument("--grid", default=",".join(f"{g:g}" for g in asr_noise.MIX_GRID))
    p.add_argument("--seed", type=int, default=seed, help="first of five consecutive seeds")
    p.add_argument("--seeds", help="explicit comma-separated seeds (overrides --seed)")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="ASCII table and F1 plot from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--metric", default="macro_f1", choices=("macro_f1", "micro_f1", "accuracy"))
    p.add_argument("--out", help="figure path (default: next to the CSV, .png)")
    p.set_defaults(func=cmd_report)
    return parser


VALIDATION_ERRORS = (UsageError, ManifestError, SweepError, FileNotFoundError, KeyError, ValueError)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except VALIDATION_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"slufuse {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"slufuse {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
