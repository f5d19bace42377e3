"""Speech branch: frozen conv featurizer -> conv module -> projected LSTM -> classifier.

The featurizer mirrors the wav2vec layout (five strided encoder convolutions,
a causal context network) but uses fixed random weights drawn from
``frozen_seed``. With the default strides it emits one frame per 10 ms and
each encoder frame sees 465 samples (~30 ms); the nine causal context
layers extend that to ~210 ms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Waveform
from .nn import (
    Checkpoint,
    ParameterSet,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    dropout,
    dropout_backward,
    glu_backward,
    glu_forward,
    linear_backward,
    linear_forward,
    lstmp_backward,
    lstmp_forward,
    swish_backward,
    swish_forward,
)


class AudioTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturizerConfig:
    channels: int = 512
    encoder_kernels: tuple[int, ...] = (10, 8, 4, 4, 4)
    encoder_strides: tuple[int, ...] = (5, 4, 2, 2, 2)
    context_layers: int = 9
    context_kernel: int = 3
    frozen_seed: int = 0
    sample_rate: int = 16000

    @property
    def hop(self):
        return math.prod(self.encoder_strides)

    @property
    def receptive_field(self):
        """Samples seen by one encoder frame."""
        rf, jump = 1, 1
        for k, s in zip(self.encoder_kernels, self.encoder_strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    @property
    def context_span_seconds(self):
        frames = 1 + self.context_layers * (self.context_kernel - 1)
        return ((frames - 1) * self.hop + self.receptive_field) / self.sample_rate

    def num_frames(self, n_samples):
        n = n_samples
        for k, s in zip(self.encoder_kernels, self.encoder_strides):
            n = (n - k) // s + 1
        return n

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["encoder_kernels"] = tuple(d["encoder_kernels"])
        d["encoder_strides"] = tuple(d["encoder_strides"])
        return cls(**d)


class Featurizer:
    """Frozen feature extractor; its weights are read-only arrays."""

    def __init__(self, cfg: FeaturizerConfig = FeaturizerConfig()):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.frozen_seed, 0xFEA7])
        self.weights = {}
        cin = 1
        for i, k in enumerate(cfg.encoder_kernels):
            self.weights[f"enc{i}.w"] = rng.standard_normal((k, cin, cfg.channels)) * math.sqrt(2.0 / (k * cin))
            self.weights[f"enc{i}.b"] = 0.1 * rng.standard_normal(cfg.channels)
            cin = cfg.channels
        for i in range(cfg.context_layers):
            fan_in = cfg.context_kernel * cfg.channels
            self.weights[f"ctx{i}.w"] = rng.standard_normal((cfg.context_kernel, cfg.channels, cfg.channels)) * math.sqrt(2.0 / fan_in)
            self.weights[f"ctx{i}.b"] = 0.1 * rng.standard_normal(cfg.channels)
        for w in self.weights.values():
            w.flags.writeable = False

    def __call__(self, waveform):
        samples = waveform.samples if isinstance(waveform, Waveform) else np.asarray(waveform)
        cfg = self.cfg
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if len(samples) < cfg.receptive_field:
            raise AudioTooShortError(
                f"{len(samples)} samples is shorter than one {cfg.receptive_field}-sample analysis window")
        z = samples.astype(np.float64)[:, None]
        for i, s in enumerate(cfg.encoder_strides):
            z, _ = conv1d_forward(z, self.weights[f"enc{i}.w"], self.weights[f"enc{i}.b"], stride=s)
            np.maximum(z, 0.0, out=z)
        z = _normalize(np.log1p(z))
        c = z
        # damped residual keeps the encoder signal from drowning in random context
        scale = 1.0 / math.sqrt(max(cfg.context_layers, 1))
        for i in range(cfg.context_layers):
            h, _ = conv1d_forward(c, self.weights[f"ctx{i}.w"], self.weights[f"ctx{i}.b"], causal=True)
            c = c + scale * np.maximum(h, 0.0)
        return _normalize(c).astype(np.float32)


def _normalize(x, eps=1e-5):
    # one mean/variance over features and time for the whole utterance
    return (x - x.mean()) / np.sqrt(x.var() + eps)


_FEATURIZERS: dict[FeaturizerConfig, Featurizer] = {}


def get_featurizer(cfg: FeaturizerConfig):
    if cfg not in _FEATURIZERS:
        _FEATURIZERS[cfg] = Featurizer(cfg)
    return _FEATURIZERS[cfg]


def featurize(waveform, cfg: FeaturizerConfig = FeaturizerConfig()):
    """Frame sequence ``[N, channels]`` for one waveform."""
    return get_featurizer(cfg)(waveform)


# ---------------------------------------------------------------------------
# Trainable encoder
# ---------------------------------------------------------------------------

@dataclass
class SpeechEncoderConfig:
    feature_dim: int = 512
    lstm_hidden: int = 1024
    projection_dim: int = 512
    depthwise_kernel: int = 15
    num_classes: int = 31
    dropout: float = 0.3
    readout: str = "last"
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)

    def __post_init__(self):
        if isinstance(self.featurizer, dict):
            self.featurizer = FeaturizerConfig.from_dict(self.featurizer)
        for name in ("feature_dim", "lstm_hidden", "projection_dim", "depthwise_kernel", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.readout not in ("last", "mean"):
            raise ValueError(f"readout must be 'last' or 'mean', got {self.readout!r}")
        if self.featurizer.channels != self.feature_dim:
            raise ValueError(f"featurizer emits {self.featurizer.channels} channels, encoder expects {self.feature_dim}")

    def to_dict(self):
        d = asdict(self)
        d["featurizer"]["encoder_kernels"] = list(self.featurizer.encoder_kernels)
        d["featurizer"]["encoder_strides"] = list(self.featurizer.encoder_strides)
        return d


def init_speech_params(cfg: SpeechEncoderConfig, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    d, h, p, k, n = cfg.feature_dim, cfg.lstm_hidden, cfg.projection_dim, cfg.depthwise_kernel, cfg.num_classes

    def uni(shape, fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, shape)

    lstm_b = np.zeros(4 * h)
    lstm_b[h:2 * h] = 1.0
    params = ParameterSet({
        "conv.pw.w": uni((d, 2 * d), d, 2 * d),
        "conv.pw.b": np.zeros(2 * d),
        "conv.dw.w": rng.standard_normal((k, d)) / math.sqrt(k),
        "conv.dw.b": np.zeros(d),
        "conv.bn.gamma": np.ones(d),
        "conv.bn.beta": np.zeros(d),
        "lstm.wx": rng.uniform(-1, 1, (d, 4 * h)) / math.sqrt(h),
        "lstm.wh": rng.uniform(-1, 1, (p, 4 * h)) / math.sqrt(h),
        "lstm.b": lstm_b,
        "lstm.proj": uni((h, p), h, p),
        "cls.w": uni((p, n), p, n),
        "cls.b": np.zeros(n),
    })
    buffers = {"conv.bn.mean": np.zeros(d), "conv.bn.var": np.ones(d)}
    return params.astype(dtype), {k: v.astype(dtype) for k, v in buffers.items()}


def conv_module_forward(x, params, buffers, train, mask=None):
    """Pointwise conv -> GLU -> causal depthwise conv -> batchnorm -> swish.

    x: [B, T, D]. Returns ``(y, cache, new_buffers)``; length is preserved.
    """
    a, c_pw = linear_forward(x, params["conv.pw.w"], params["conv.pw.b"])
    g, c_glu = glu_forward(a)
    dw, c_dw = conv1d_forward(g, params["conv.dw.w"], params["conv.dw.b"], causal=True, depthwise=True)
    bn, c_bn, (mean, var) = batchnorm_forward(
        dw, params["conv.bn.gamma"], params["conv.bn.beta"],
        buffers["conv.bn.mean"], buffers["conv.bn.var"], train, mask=mask)
    y, c_sw = swish_forward(bn)
    return y, (c_pw, c_glu, c_dw, c_bn, c_sw), {"conv.bn.mean": mean, "conv.bn.var": var}


def conv_module_backward(dy, cache, params):
    c_pw, c_glu, c_dw, c_bn, c_sw = cache
    d = swish_backward(dy, c_sw)
    d, dgamma, dbeta = batchnorm_backward(d, c_bn)
    d, ddw, ddb = conv1d_backward(d, c_dw)
    d = glu_backward(d, c_glu)
    dx, dpw, dpb = linear_backward(d, c_pw)
    params.accumulate("conv.bn.gamma", dgamma)
    params.accumulate("conv.bn.beta", dbeta)
    params.accumulate("conv.dw.w", ddw)
    params.accumulate("conv.dw.b", ddb)
    params.accumulate("conv.pw.w", dpw)
    params.accumulate("conv.pw.b", dpb)
    return dx


def lstmp_module_forward(x, params):
    """Returns (s, s_bar, cache): hidden states [B,T,H] and projections [B,T,P]."""
    return lstmp_forward(x, params["lstm.wx"], params["lstm.wh"], params["lstm.b"], params["lstm.proj"])


def pad_batch(seqs, dtype=np.float32):
    lengths = np.array([len(s) for s in seqs])
    out = np.zeros((len(seqs), lengths.max(), seqs[0].shape[1]), dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]
    return out, lengths, mask


class SpeechModel:
    """Speech classifier; trainable parameters exclude the frozen featurizer."""

    modality = "speech"

    def __init__(self, cfg: SpeechEncoderConfig, seed=0, params=None, buffers=None):
        self.cfg = cfg
        self.featurizer = get_featurizer(cfg.featurizer)
        if params is None:
            params, buffers = init_speech_params(cfg, seed)
        self.params = params
        self.buffers = buffers
        self._feature_cache: dict[str, np.ndarray] = {}

    # -- data -------------------------------------------------------------
    def features(self, waveform):
        return self.featurizer(waveform)

    def prepare(self, utterances, manifest=None):
        out = []
        for u in utterances:
            key = u.id if u.audio_path is None else f"{u.id}:{u.audio_path}"
            if key not in self._feature_cache:
                audio = u.audio if u.audio is not None else manifest.load_audio(u)
                self._feature_cache[key] = self.features(audio)
            out.append(self._feature_cache[key])
        return out

    # -- compute ----------------------------------------------------------
    def forward(self, seqs, train=False, rng=None):
        x, lengths, mask = pad_batch(seqs, self.params["cls.w"].dtype)
        if x.shape[2] != self.cfg.feature_dim:
            raise ValueError(f"input dim {x.shape[2]} != feature_dim {self.cfg.feature_dim}")
        y, c_conv, new_buffers = conv_module_forward(x, self.params, self.buffers, train, mask)
        if train:
            self.buffers = new_buffers
        _, s_bar, c_lstm = lstmp_module_forward(y, self.params)
        rows = np.arange(len(seqs))
        if self.cfg.readout == "last":
            pooled = s_bar[rows, lengths - 1]
        else:
            pooled = (s_bar * mask[..., None]).sum(axis=1) / lengths[:, None]
        dropped, keep = dropout(pooled, self.cfg.dropout, train, rng)
        logits, c_cls = linear_forward(dropped, self.params["cls.w"], self.params["cls.b"])
        return logits, (c_conv, c_lstm, keep, c_cls, lengths, mask, s_bar.shape)

    def backward(self, dlogits, cache):
        c_conv, c_lstm, keep, c_cls, lengths, mask, sbar_shape = cache
        dpool, dw, db = linear_backward(dlogits, c_cls)
        self.params.accumulate("cls.w", dw)
        self.params.accumulate("cls.b", db)
        dpool = dropout_backward(dpool, keep)
        ds_bar = np.zeros(sbar_shape, dtype=dpool.dtype)
        rows = np.arange(len(lengths))
        if self.cfg.readout == "last":
            ds_bar[rows, lengths - 1] = dpool
        else:
            ds_bar[:] = (dpool / lengths[:, None])[:, None, :] * mask[..., None]
        dy, dwx, dwh, dlb, dproj = lstmp_backward(None, ds_bar, c_lstm)
        self.params.accumulate("lstm.wx", dwx)
        self.params.accumulate("lstm.wh", dwh)
        self.params.accumulate("lstm.b", dlb)
        self.params.accumulate("lstm.proj", dproj)
        return conv_module_backward(dy, c_conv, self.params)

    def predict_logits(self, inputs, batch_size=64):
        outs = []
        # similar lengths together keeps padding small; order is restored below
        order = np.argsort([len(s) for s in inputs], kind="stable")
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            logits, _ = self.forward([inputs[i] for i in idx], train=False)
            outs.append((idx, logits))
        result = np.empty((len(inputs), self.cfg.num_classes), dtype=np.float64)
        for idx, logits in outs:
            result[idx] = logits
        return result

    def logits(self, waveform):
        return self.forward([self.features(waveform)], train=False)[0][0]

    # -- state ------------------------------------------------------------
    def state(self):
        return {k: v.copy() for k, v in self.params.items()}, {k: v.copy() for k, v in self.buffers.items()}

    def load_state(self, state):
        values, buffers = state
        for k, v in values.items():
            self.params.values[k] = v.copy()
        self.buffers = {k: v.copy() for k, v in buffers.items()}

    def to_checkpoint(self, name="speech"):
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return Checkpoint(name, arrays, {"kind": "speech", "config": self.cfg.to_dict()})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        if ckpt.metadata.get("kind") != "speech":
            raise ValueError(f"checkpoint {ckpt.name!r} is not a speech model")
        cfg = SpeechEncoderConfig(**ckpt.metadata["config"])
        params = ParameterSet({k[6:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("param/")})
        buffers = {k[7:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("buffer/")}
        return cls(cfg, params=params, buffers=buffers)


def speech_logits(waveform, model: SpeechModel):
    """Eval-mode logits ``[L]`` for one waveform."""
    return model.logits(waveform)
