"""Late score fusion of speech and text class scores.

Modes:

avg
    softmax of the class-wise average of the two branches' probabilities.
    The outer softmax runs over probabilities, so it flattens the
    distribution but never changes the argmax.
agg
    average the branches' pre-softmax logits, then softmax.
ft
    learned per-class blend ``w_s * p_s + w_t * p_t + b`` of frozen-branch
    probabilities, then softmax; fitted with cross-entropy.
"""

from __future__ import annotations

import numpy as np

from .nn import Adam, Checkpoint, ParameterSet, cross_entropy, softmax

MODES = ("avg", "agg", "ft")


class FusionNotFittedError(RuntimeError):
    pass


def _check_pair(a, b, kind):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{kind} shapes differ: {a.shape} vs {b.shape}")
    if a.shape[-1] < 1:
        raise ValueError(f"empty {kind} vectors")
    return a, b


def _check_probs(p, name):
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError(f"{name} is not a probability vector")


def fuse_avg(p_speech, p_text):
    p_speech, p_text = _check_pair(p_speech, p_text, "probability")
    _check_probs(p_speech, "p_speech")
    _check_probs(p_text, "p_text")
    return softmax((p_speech + p_text) / 2.0)


def fuse_agg(z_speech, z_text):
    z_speech, z_text = _check_pair(z_speech, z_text, "logit")
    return softmax((z_speech + z_text) / 2.0)


class FtFusion:
    """Per-class affine blend of branch probabilities."""

    def __init__(self, num_classes, w_speech=None, w_text=None, bias=None):
        self.num_classes = num_classes
        fitted = w_speech is not None
        self.params = ParameterSet({
            "w_speech": np.full(num_classes, 0.5) if w_speech is None else np.broadcast_to(w_speech, (num_classes,)).astype(np.float64),
            "w_text": np.full(num_classes, 0.5) if w_text is None else np.broadcast_to(w_text, (num_classes,)).astype(np.float64),
            "bias": np.zeros(num_classes) if bias is None else np.broadcast_to(bias, (num_classes,)).astype(np.float64),
        })
        self.fitted = fitted

    def scores(self, p_speech, p_text):
        return self.params["w_speech"] * p_speech + self.params["w_text"] * p_text + self.params["bias"]

    def __call__(self, p_speech, p_text):
        if not self.fitted:
            raise FusionNotFittedError("ft fusion not fitted; call fit() or load fitted parameters")
        p_speech, p_text = _check_pair(p_speech, p_text, "probability")
        if p_speech.shape[-1] != self.num_classes:
            raise ValueError(f"expected {self.num_classes} classes, got {p_speech.shape[-1]}")
        return softmax(self.scores(p_speech, p_text))

    def fit(self, p_speech, p_text, labels, epochs=200, lr=0.05, batch_size=64, seed=0):
        """Cross-entropy fit on frozen-branch outputs of the training split."""
        p_speech, p_text = _check_pair(p_speech, p_text, "probability")
        labels = np.asarray(labels)
        rng = np.random.default_rng(seed)
        opt = Adam()
        for epoch in range(epochs):
            lr_t = 0.5 * lr * (1.0 + np.cos(np.pi * epoch / epochs))
            order = rng.permutation(len(labels))
            for s in range(0, len(order), batch_size):
                idx = order[s:s + batch_size]
                ps, pt = p_speech[idx], p_text[idx]
                _, dz = cross_entropy(self.scores(ps, pt), labels[idx])
                self.params.zero_grad()
                self.params.accumulate("w_speech", (dz * ps).sum(axis=0))
                self.params.accumulate("w_text", (dz * pt).sum(axis=0))
                self.params.accumulate("bias", dz.sum(axis=0))
                opt.step(self.params, lr_t)
        self.fitted = True
        return self

    def to_checkpoint(self, name="fusion"):
        if not self.fitted:
            raise FusionNotFittedError("refusing to save an unfitted ft fusion head")
        return Checkpoint(name, dict(self.params.items()), {"kind": "fusion", "num_classes": self.num_classes})

    @classmethod
    def from_checkpoint(cls, ckpt):
        if ckpt.metadata.get("kind") != "fusion":
            raise ValueError(f"checkpoint {ckpt.name!r} is not a fusion head")
        a = ckpt.arrays
        return cls(ckpt.metadata["num_classes"], a["w_speech"], a["w_text"], a["bias"])


def fuse_ft(p_speech, p_text, head: FtFusion):
    return head(p_speech, p_text)


def predict(fused):
    """Arg-max class; ties go to the lowest class id."""
    return np.argmax(np.asarray(fused), axis=-1)


def fuse(mode, logits_speech, logits_text, head=None):
    """Fused probabilities from branch logits for any mode."""
    if mode == "agg":
        return fuse_agg(logits_speech, logits_text)
    p_s = softmax(np.asarray(logits_speech, dtype=np.float64))
    p_t = softmax(np.asarray(logits_text, dtype=np.float64))
    if mode == "avg":
        return fuse_avg(p_s, p_t)
    if mode == "ft":
        if head is None:
            raise FusionNotFittedError("ft fusion needs a fitted head")
        return head(p_s, p_t)
    raise ValueError(f"unknown fusion mode {mode!r}; expected one of {MODES}")
