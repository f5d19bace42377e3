"""Functional layers with explicit forward/backward passes.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Arrays follow the input dtype,
so float32 training and float64 gradient checks share one code path.

Sequence tensors are laid out ``[B, T, C]``; 2-D inputs ``[T, C]`` are
accepted wherever a single sequence makes sense.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def sigmoid(x):
    # tanh form is overflow-free for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------

def linear_forward(x, w, b):
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} incompatible with weight shape {w.shape}")
    return x @ w + b, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    n_in, n_out = w.shape
    dx = dy @ w.T
    dw = x.reshape(-1, n_in).T @ dy.reshape(-1, n_out)
    db = dy.reshape(-1, n_out).sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# 1-D convolution
# ---------------------------------------------------------------------------

def conv1d_forward(x, weight, bias=None, stride=1, causal=False, depthwise=False):
    """1-D convolution over time.

    ``weight`` is ``[k, Cin, Cout]``, or ``[k, C]`` when ``depthwise``.
    Causal mode left-pads by ``k - 1`` frames; otherwise no padding is used.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"conv1d: expected [B, T, C] or [T, C] input, got {x.shape}")
    k = weight.shape[0]
    if k < 1 or stride < 1:
        raise ValueError(f"conv1d: kernel width {k} and stride {stride} must be >= 1")
    cin = x.shape[2]
    if depthwise:
        if weight.ndim != 2 or weight.shape[1] != cin:
            raise ShapeError(f"conv1d: depthwise weight {weight.shape} needs Cin == Cout == {cin}")
        cout = cin
    else:
        if weight.ndim != 3 or weight.shape[1] != cin:
            raise ShapeError(f"conv1d: input shape {x.shape} incompatible with weight shape {weight.shape}")
        cout = weight.shape[2]
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} does not match {cout} output channels")

    pad = k - 1 if causal else 0
    xp = np.pad(x, ((0, 0), (pad, 0), (0, 0))) if pad else x
    t_in = xp.shape[1]
    if t_in < k:
        raise ValueError(f"conv1d: input length {x.shape[1]} shorter than kernel width {k}; output would be empty")
    windows = sliding_window_view(xp, k, axis=1)[:, ::stride]  # [B, T', Cin, k]
    if depthwise:
        y = np.einsum("btck,kc->btc", windows, weight)
    else:
        y = np.einsum("btck,kco->bto", windows, weight, optimize=True)
    if bias is not None:
        y = y + bias
    cache = (windows, weight, x.shape, pad, stride, depthwise, squeeze, bias is not None)
    return (y[0] if squeeze else y), cache


def conv1d_backward(dy, cache):
    windows, weight, x_shape, pad, stride, depthwise, squeeze, has_bias = cache
    if squeeze:
        dy = dy[None]
    k = weight.shape[0]
    if depthwise:
        dw = np.einsum("btck,btc->kc", windows, dy)
        dwin = np.einsum("btc,kc->btck", dy, weight)
    else:
        dw = np.einsum("btck,bto->kco", windows, dy, optimize=True)
        dwin = np.einsum("bto,kco->btck", dy, weight, optimize=True)
    t_out = dy.shape[1]
    dxp = np.zeros((x_shape[0], x_shape[1] + pad, x_shape[2]), dtype=dy.dtype)
    span = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[:, j:j + span:stride] += dwin[..., j]
    dx = dxp[:, pad:]
    db = dy.sum(axis=(0, 1)) if has_bias else None
    return (dx[0] if squeeze else dx), dw, db


# ---------------------------------------------------------------------------
# Gating and activations
# ---------------------------------------------------------------------------

def glu_forward(x):
    c2 = x.shape[-1]
    if c2 % 2:
        raise ShapeError(f"glu: channel count {c2} must be even")
    a, b = x[..., : c2 // 2], x[..., c2 // 2:]
    gate = sigmoid(b)
    return a * gate, (a, gate)


def glu_backward(dy, cache):
    a, gate = cache
    return np.concatenate([dy * gate, dy * a * gate * (1.0 - gate)], axis=-1)


def swish_forward(x):
    s = sigmoid(x)
    return x * s, (x, s)


def swish_backward(dy, cache):
    x, s = cache
    return dy * (s + x * s * (1.0 - s))


# ---------------------------------------------------------------------------
# Batch normalisation
# ---------------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=0.1, eps=1e-5, mask=None):
    """Normalise the last axis using statistics over all leading axes.

    ``mask`` (shape ``x.shape[:-1]``) excludes padded frames from the batch
    statistics. Returns ``(out, cache, (new_mean, new_var))``; the running
    statistics are returned, never mutated.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma {gamma.shape} / beta {beta.shape} do not match {c} channels")
    if not train:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean) * inv_std
        return gamma * xhat + beta, (False, xhat, inv_std, gamma, None, None), (running_mean, running_var)

    x2 = x.reshape(-1, c)
    if mask is None:
        m = np.ones((x2.shape[0], 1), dtype=x.dtype)
    else:
        m = mask.reshape(-1, 1).astype(x.dtype)
    n = m.sum()
    if n <= 0:
        raise ValueError("batchnorm: train mode needs at least one unmasked frame")
    mean = (m * x2).sum(axis=0) / n
    var = (m * (x2 - mean) ** 2).sum(axis=0) / n
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    unbiased = var * n / (n - 1) if n > 1 else var
    new_mean = (1 - momentum) * running_mean + momentum * mean
    new_var = (1 - momentum) * running_var + momentum * unbiased
    cache = (True, xhat, inv_std, gamma, m, n)
    return gamma * xhat + beta, cache, (new_mean.astype(running_mean.dtype), new_var.astype(running_var.dtype))


def batchnorm_backward(dy, cache):
    train, xhat, inv_std, gamma, m, n = cache
    c = dy.shape[-1]
    dgamma = (dy * xhat).reshape(-1, c).sum(axis=0)
    dbeta = dy.reshape(-1, c).sum(axis=0)
    g = dy * gamma
    if not train:
        return g * inv_std, dgamma, dbeta
    g2 = g.reshape(-1, c)
    xh2 = xhat.reshape(-1, c)
    # every output depends on the batch statistics, masked or not
    sum_g = g2.sum(axis=0)
    sum_gx = (g2 * xh2).sum(axis=0)
    dx = inv_std * (g2 - m * (sum_g + xh2 * sum_gx) / n)
    return dx.reshape(dy.shape), dgamma, dbeta


# ---------------------------------------------------------------------------
# Recurrent cells
# ---------------------------------------------------------------------------

def lstm_step(x_t, h_prev, c_prev, wx, wh, b):
    """One LSTM step with gate order (input, forget, candidate, output).

    ``h_prev`` is whatever the cell recurs on; for a projected LSTM that is
    the projected output, so ``wh`` is ``[P, 4H]`` rather than ``[H, 4H]``.
    """
    hidden = c_prev.shape[-1]
    if wx.shape != (x_t.shape[-1], 4 * hidden) or wh.shape != (h_prev.shape[-1], 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeError(
            f"lstm_step: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} inconsistent with "
            f"wx {wx.shape}, wh {wh.shape}, b {b.shape}")
    z = x_t @ wx + h_prev @ wh + b
    return _lstm_cell(z, c_prev, hidden)


def _lstm_cell(z, c_prev, hidden):
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, c_prev, tc)


def _lstm_cell_backward(dh, dc, cell_cache):
    i, f, g, o, c_prev, tc = cell_cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=-1)
    return dz, dc * f


def lstm_step_backward(dh, dc, x_t, h_prev, wx, wh, cell_cache):
    """Gradients of one step; returns ``(dx, dh_prev, dc_prev, dwx, dwh, db)``."""
    dz, dc_prev = _lstm_cell_backward(dh, dc, cell_cache)
    return dz @ wx.T, dz @ wh.T, dc_prev, x_t.T @ dz, h_prev.T @ dz, dz.sum(axis=0)


def lstmp_forward(x, wx, wh, b, w_proj):
    """Unidirectional LSTM whose projected output feeds the recurrence.

    x: [B, T, D]; wx: [D, 4H]; wh: [P, 4H]; b: [4H]; w_proj: [H, P].
    Returns hidden states s [B, T, H] and projections s_bar [B, T, P].
    """
    if x.ndim != 3:
        raise ShapeError(f"lstmp: expected [B, T, D] input, got {x.shape}")
    hidden = w_proj.shape[0]
    if wx.shape != (x.shape[2], 4 * hidden) or wh.shape != (w_proj.shape[1], 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeError(f"lstmp: x {x.shape} inconsistent with wx {wx.shape}, wh {wh.shape}, "
                         f"b {b.shape}, proj {w_proj.shape}")
    bsz, steps, _ = x.shape
    proj = w_proj.shape[1]
    gx = x @ wx + b
    r = np.zeros((bsz, proj), dtype=x.dtype)
    c = np.zeros((bsz, hidden), dtype=x.dtype)
    hs = np.empty((bsz, steps, hidden), dtype=x.dtype)
    rs = np.empty((bsz, steps, proj), dtype=x.dtype)
    cells = []
    for t in range(steps):
        h, c, cell = _lstm_cell(gx[:, t] + r @ wh, c, hidden)
        r = h @ w_proj
        hs[:, t] = h
        rs[:, t] = r
        cells.append(cell)
    return hs, rs, (x, wx, wh, w_proj, hs, rs, cells)


def lstmp_backward(ds, ds_bar, cache):
    """Backward through time. ``ds`` (grad w.r.t. hidden states) may be None."""
    x, wx, wh, w_proj, hs, rs, cells = cache
    bsz, steps, _ = x.shape
    hidden, proj = w_proj.shape
    dgx = np.empty((bsz, steps, 4 * hidden), dtype=x.dtype)
    dwh = np.zeros_like(wh)
    dproj = np.zeros_like(w_proj)
    dr_next = np.zeros((bsz, proj), dtype=x.dtype)
    dc = np.zeros((bsz, hidden), dtype=x.dtype)
    for t in range(steps - 1, -1, -1):
        dr = ds_bar[:, t] + dr_next
        dproj += hs[:, t].T @ dr
        dh = dr @ w_proj.T
        if ds is not None:
            dh = dh + ds[:, t]
        dz, dc = _lstm_cell_backward(dh, dc, cells[t])
        dgx[:, t] = dz
        if t > 0:
            dwh += rs[:, t - 1].T @ dz
        dr_next = dz @ wh.T
    dx = dgx @ wx.T
    dwx = x.reshape(-1, x.shape[2]).T @ dgx.reshape(-1, 4 * hidden)
    db = dgx.sum(axis=(0, 1))
    return dx, dwx, dwh, db, dproj


def rnn_forward(x, wx, wh, b):
    """Elman recurrence h_t = tanh(x_t wx + h_{t-1} wh + b) over [B, T, D]."""
    if x.ndim != 3 or wx.shape[0] != x.shape[2] or wh.shape != (wx.shape[1], wx.shape[1]) or b.shape != (wx.shape[1],):
        raise ShapeError(f"rnn: x {x.shape} inconsistent with wx {wx.shape}, wh {wh.shape}, b {b.shape}")
    bsz, steps, _ = x.shape
    hidden = wx.shape[1]
    gx = x @ wx + b
    hs = np.empty((bsz, steps, hidden), dtype=x.dtype)
    h = np.zeros((bsz, hidden), dtype=x.dtype)
    for t in range(steps):
        h = np.tanh(gx[:, t] + h @ wh)
        hs[:, t] = h
    return hs, (x, wx, wh, hs)


def rnn_backward(dhs, cache):
    x, wx, wh, hs = cache
    bsz, steps, _ = x.shape
    hidden = wx.shape[1]
    dz_all = np.empty_like(hs)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((bsz, hidden), dtype=x.dtype)
    for t in range(steps - 1, -1, -1):
        h = hs[:, t]
        dz = (dhs[:, t] + dh_next) * (1.0 - h * h)
        dz_all[:, t] = dz
        if t > 0:
            dwh += hs[:, t - 1].T @ dz
        dh_next = dz @ wh.T
    dx = dz_all @ wx.T
    dwx = x.reshape(-1, x.shape[2]).T @ dz_all.reshape(-1, hidden)
    return dx, dwx, dwh, dz_all.sum(axis=(0, 1))


# ---------------------------------------------------------------------------
# Embedding, dropout
# ---------------------------------------------------------------------------

def embedding_forward(ids, table):
    return table[ids], (ids, table.shape)


def embedding_backward(dy, cache):
    ids, shape = cache
    dtable = np.zeros(shape, dtype=dy.dtype)
    np.add.at(dtable, ids.reshape(-1), dy.reshape(-1, shape[1]))
    return dtable


def dropout(x, p, train, rng):
    """Inverted dropout. Returns ``(out, keep_mask)``; the mask is None in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


# ---------------------------------------------------------------------------
# Softmax and loss
# ---------------------------------------------------------------------------

def softmax(z, axis=-1):
    z = np.asarray(z)
    if z.size == 0 or z.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``.

    Accepts a single logit vector with an integer label, or a ``[B, L]``
    batch with ``B`` labels. For a single vector the gradient is exactly
    ``softmax(logits) - onehot(label)``.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    n_classes = z.shape[1]
    if y.shape != (z.shape[0],):
        raise ShapeError(f"cross_entropy: {y.shape[0]} labels for {z.shape[0]} rows")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"cross_entropy: label out of range for {n_classes} classes: {y.tolist()}")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad /= z.shape[0]
    return float(loss), (grad[0] if single else grad)
