"""Named configuration presets and the glue that trains each branch from a manifest.

``paper`` keeps the full-size encoder and optimiser settings; ``desk`` shrinks
the speech encoder and featurizer and raises the learning rate so that a full
run finishes on one CPU in a few minutes.
"""

from __future__ import annotations

import copy
from dataclasses import replace

import numpy as np

from .corpus import CorpusManifest
from .fusion import FtFusion
from .nn import softmax
from .speech import FeaturizerConfig, SpeechEncoderConfig, SpeechModel
from .text import TextModel, Vocabulary
from .trainer import TrainConfig, train

PRESETS = {
    "paper": {
        "speech": {},
        "text": {},
        "train": {},
    },
    "desk": {
        "speech": {"feature_dim": 64, "lstm_hidden": 64, "projection_dim": 32, "readout": "mean",
                   "featurizer": {"channels": 64}},
        "text": {"embed_dim": 64, "hidden": 64},
        "train": {"lr0": 1e-3, "max_epochs": 60, "patience": 20},
    },
}


def get_preset(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def speech_config(preset, num_classes) -> SpeechEncoderConfig:
    kw = dict(get_preset(preset)["speech"] if isinstance(preset, str) else preset["speech"])
    feat = kw.pop("featurizer", {})
    return SpeechEncoderConfig(num_classes=num_classes, featurizer=replace(FeaturizerConfig(), **feat), **kw)


def train_config(preset, seed=0, noise_injection=False, **overrides) -> TrainConfig:
    kw = dict(get_preset(preset)["train"] if isinstance(preset, str) else preset["train"])
    kw.update(overrides)
    return TrainConfig(seed=seed, noise_injection=noise_injection, **kw)


def build_vocabulary(manifest: CorpusManifest):
    return Vocabulary.build([u.golden for u in manifest.split("train")])


def train_branch(branch, manifest: CorpusManifest, preset="desk", seed=0, noise_injection=False, **overrides):
    """Train one branch; returns ``(model, checkpoint, TrainLog)``."""
    p = get_preset(preset)
    cfg = train_config(p, seed, noise_injection, **overrides)
    if branch == "speech":
        model = SpeechModel(speech_config(p, manifest.num_classes), seed=seed)
    elif branch == "text":
        model = TextModel.create(build_vocabulary(manifest), manifest.num_classes, seed=seed,
                                 dropout=cfg.dropout, **p["text"])
    else:
        raise ValueError(f"unknown branch {branch!r}; expected 'speech' or 'text'")
    ckpt, log = train(model, manifest, cfg, name=branch)
    return model, ckpt, log


def fit_fusion_head(speech_model, text_model, manifest: CorpusManifest, seed=0):
    """Fit the ``ft`` head on frozen-branch probabilities over the training split."""
    utts = manifest.split("train")
    p_s = softmax(speech_model.predict_logits(speech_model.prepare(utts, manifest)))
    p_t = softmax(text_model.predict_logits(text_model.prepare(utts, manifest)))
    labels = np.array([u.label for u in utts])
    return FtFusion(manifest.num_classes).fit(p_s, p_t, labels, seed=seed)


def load_model(ckpt):
    kind = ckpt.metadata.get("kind")
    if kind == "speech":
        return SpeechModel.from_checkpoint(ckpt)
    if kind == "text":
        return TextModel.from_checkpoint(ckpt)
    if kind == "fusion":
        return FtFusion.from_checkpoint(ckpt)
    raise ValueError(f"checkpoint {ckpt.name!r} has unknown kind {kind!r}")
