"""Text branch: word tokenizer, vocabulary and a small recurrent classifier."""

from __future__ import annotations

import math
import re
import string
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .nn import (
    Checkpoint,
    ParameterSet,
    dropout,
    dropout_backward,
    embedding_backward,
    embedding_forward,
    linear_backward,
    linear_forward,
    rnn_backward,
    rnn_forward,
)

PAD = "<pad>"
UNK = "<unk>"
RESERVED = (PAD, UNK)
PAD_ID, UNK_ID = 0, 1

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize(text):
    return _PUNCT.sub("", text.lower()).split()


class Vocabulary:
    """Word <-> id map; ids 0 and 1 are reserved for padding and unknown words."""

    def __init__(self, words):
        self.itos = list(RESERVED) + [w for w in words if w not in RESERVED]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate words in vocabulary")

    @classmethod
    def build(cls, transcripts, min_count=1):
        """From training transcripts (token lists or strings); sorted for stable ids."""
        counts = {}
        for t in transcripts:
            for w in (normalize(t) if isinstance(t, str) else t):
                counts[w] = counts.get(w, 0) + 1
        return cls(sorted(w for w, c in counts.items() if c >= min_count))

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, word):
        return word in self.stoi

    @property
    def words(self):
        """Non-reserved words, in id order."""
        return self.itos[len(RESERVED):]

    def id(self, word):
        return self.stoi.get(word, UNK_ID)

    def save(self, path):
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls([line for line in Path(path).read_text(encoding="utf-8").split("\n") if line])


@dataclass
class TokenSequence:
    ids: np.ndarray
    raw: list[str]

    def __len__(self):
        return len(self.raw)

    def detokenize(self):
        return " ".join(self.raw)


def tokenize(text, vocab: Vocabulary):
    """Lowercase, strip punctuation, split on whitespace; unknown words map to UNK."""
    raw = normalize(text) if isinstance(text, str) else [w for t in text for w in normalize(t)]
    return TokenSequence(np.array([vocab.id(w) for w in raw], dtype=np.int64), raw)


@dataclass
class TextEncoderConfig:
    vocab_size: int
    num_classes: int
    embed_dim: int = 64
    hidden: int = 64
    dropout: float = 0.3


def init_text_params(cfg: TextEncoderConfig, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    e, h, n = cfg.embed_dim, cfg.hidden, cfg.num_classes
    emb = rng.standard_normal((cfg.vocab_size, e)) * 0.3
    emb[PAD_ID] = 0.0
    lim = math.sqrt(6.0 / (h + n))
    params = ParameterSet({
        "emb": emb,
        "rnn.wx": rng.uniform(-1, 1, (e, h)) / math.sqrt(e),
        "rnn.wh": np.linalg.qr(rng.standard_normal((h, h)))[0] * 0.5,
        "rnn.b": np.zeros(h),
        "cls.w": rng.uniform(-lim, lim, (h, n)),
        "cls.b": np.zeros(n),
    })
    return params.astype(dtype)


class TextModel:
    """embedding -> tanh recurrence -> masked mean-pool -> dropout -> linear."""

    modality = "text"

    def __init__(self, vocab: Vocabulary, cfg: TextEncoderConfig, seed=0, params=None):
        if cfg.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}")
        self.vocab = vocab
        self.cfg = cfg
        self.params = params if params is not None else init_text_params(cfg, seed)

    @classmethod
    def create(cls, vocab, num_classes, seed=0, **kw):
        return cls(vocab, TextEncoderConfig(len(vocab), num_classes, **kw), seed)

    # -- data -------------------------------------------------------------
    def encode(self, words):
        return tokenize(words, self.vocab).ids

    def prepare(self, utterances, manifest=None):
        return [self.encode(u.golden) for u in utterances]

    def noise_vocabulary(self):
        return np.arange(len(RESERVED), len(self.vocab), dtype=np.int64)

    # -- compute ----------------------------------------------------------
    def forward(self, seqs, train=False, rng=None):
        lengths = np.array([len(s) for s in seqs])
        steps = max(int(lengths.max()), 1)
        ids = np.full((len(seqs), steps), PAD_ID, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
        mask = (np.arange(steps)[None, :] < lengths[:, None]).astype(self.params["cls.w"].dtype)
        x, c_emb = embedding_forward(ids, self.params["emb"])
        hs, c_rnn = rnn_forward(x, self.params["rnn.wx"], self.params["rnn.wh"], self.params["rnn.b"])
        denom = np.maximum(lengths, 1)[:, None].astype(hs.dtype)
        pooled = (hs * mask[..., None]).sum(axis=1) / denom
        dropped, keep = dropout(pooled, self.cfg.dropout, train, rng)
        logits, c_cls = linear_forward(dropped, self.params["cls.w"], self.params["cls.b"])
        return logits, (c_emb, c_rnn, mask, denom, keep, c_cls)

    def backward(self, dlogits, cache):
        c_emb, c_rnn, mask, denom, keep, c_cls = cache
        dpool, dw, db = linear_backward(dlogits, c_cls)
        self.params.accumulate("cls.w", dw)
        self.params.accumulate("cls.b", db)
        dpool = dropout_backward(dpool, keep)
        dhs = (dpool / denom)[:, None, :] * mask[..., None]
        dx, dwx, dwh, drb = rnn_backward(dhs, c_rnn)
        self.params.accumulate("rnn.wx", dwx)
        self.params.accumulate("rnn.wh", dwh)
        self.params.accumulate("rnn.b", drb)
        self.params.accumulate("emb", embedding_backward(dx, c_emb))

    def predict_logits(self, inputs, batch_size=256):
        outs = [self.forward(inputs[s:s + batch_size], train=False)[0] for s in range(0, len(inputs), batch_size)]
        return np.concatenate(outs).astype(np.float64)

    def logits(self, tokens):
        ids = tokens.ids if isinstance(tokens, TokenSequence) else np.asarray(tokens, dtype=np.int64)
        return self.forward([ids], train=False)[0][0]

    # -- state ------------------------------------------------------------
    def state(self):
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            self.params.values[k] = v.copy()

    def to_checkpoint(self, name="text"):
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        return Checkpoint(name, arrays, {"kind": "text", "config": asdict(self.cfg), "vocab": self.vocab.words})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        if ckpt.metadata.get("kind") != "text":
            raise ValueError(f"checkpoint {ckpt.name!r} is not a text model")
        vocab = Vocabulary(ckpt.metadata["vocab"])
        params = ParameterSet({k[6:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("param/")})
        return cls(vocab, TextEncoderConfig(**ckpt.metadata["config"]), params=params)


def text_logits(tokens, model: TextModel):
    """Eval-mode logits ``[L]`` for one token sequence (or word list / string)."""
    if not isinstance(tokens, TokenSequence):
        tokens = tokenize(tokens, model.vocab)
    return model.logits(tokens)
