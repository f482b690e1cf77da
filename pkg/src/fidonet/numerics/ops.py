"""Neural-network operations on top of the tensor engine.

Softmax, cross-entropy, 2-D convolution, and the LSTM are fused ops with
hand-written backward passes; everything else composes from primitives.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, custom_op

__all__ = [
    "softmax",
    "softmax_rows",
    "cross_entropy_logits",
    "conv2d_same",
    "layer_norm_rows",
    "lstm",
    "bilstm",
]


def layer_norm_rows(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization of each row (no affine)."""
    if a.ndim != 2:
        raise ShapeError(f"layer_norm_rows expects a 2-D tensor, got {a.shape}")
    x = a.data
    n = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def vjp(g: np.ndarray):
        g_mean = g.mean(axis=1, keepdims=True)
        go_mean = (g * out).mean(axis=1, keepdims=True)
        return (inv * (g - g_mean - out * go_mean),)

    return custom_op(out, (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: np.ndarray):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return custom_op(out, (a,), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a T x n matrix."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got shape {x.shape}")
    return softmax(x)


def cross_entropy_logits(logits: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of `label` under softmax(logits).

    Computed via log-sum-exp so the loss stays finite for extreme logits.
    """
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy_logits expects a 1-D tensor, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= label < n:
        raise ShapeError(f"label {label} out of range for {n} classes")
    z = logits.data
    m = z.max()
    shifted = z - m
    lse = np.log(np.exp(shifted).sum())
    loss = np.asarray(lse - shifted[label], dtype=z.dtype).reshape(())
    probs = np.exp(shifted - lse)

    def vjp(g: np.ndarray):
        d = probs.copy()
        d[label] -= 1.0
        return (g * d,)

    return custom_op(loss, (logits,), vjp)


def _same_pad(extent: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-extent // stride)  # ceil division
    total = max((out - 1) * stride + kernel - extent, 0)
    return out, total // 2, total - total // 2


def conv2d_same(x: Tensor, w: Tensor, b: Tensor, stride_f: int = 2) -> Tensor:
    """3x3 convolution over (channels, time, feature) input.

    Time axis keeps its extent (stride 1, same padding); the feature axis
    is strided by `stride_f` with same-style padding, so the output
    feature extent is ceil(F / stride_f).
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d_same shapes: x {x.shape}, w {w.shape}")
    c_in, t, f = x.shape
    c_out, c_in_w, kt, kf = w.shape
    if c_in_w != c_in or kt != 3 or kf != 3:
        raise ShapeError(f"weight shape {w.shape} incompatible with input {x.shape}")
    if b.shape != (c_out,):
        raise ShapeError(f"bias shape {b.shape} != ({c_out},)")

    f_out, pad_l, pad_r = _same_pad(f, 3, stride_f)
    xp = np.pad(x.data, ((0, 0), (1, 1), (pad_l, pad_r)))
    sc, st, sf = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(t, f_out, c_in, 3, 3),
        strides=(st, sf * stride_f, sc, st, sf),
        writeable=False,
    )
    cols = np.ascontiguousarray(patches).reshape(t * f_out, c_in * 9)
    wmat = w.data.reshape(c_out, c_in * 9).T
    out_flat = cols @ wmat + b.data
    out = np.ascontiguousarray(out_flat.reshape(t, f_out, c_out).transpose(2, 0, 1))

    def vjp(g: np.ndarray):
        g_flat = g.transpose(1, 2, 0).reshape(t * f_out, c_out)
        grad_b = g_flat.sum(axis=0)
        grad_w = (cols.T @ g_flat).T.reshape(c_out, c_in, 3, 3)
        g_cols = (g_flat @ wmat.T).reshape(t, f_out, c_in, 3, 3)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, i : i + t, j : j + stride_f * f_out : stride_f] += g_cols[
                    :, :, :, i, j
                ].transpose(2, 0, 1)
        grad_x = np.ascontiguousarray(gxp[:, 1 : 1 + t, pad_l : pad_l + f])
        return grad_x, grad_w, grad_b

    return custom_op(out, (x, w, b), vjp)


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Single-direction LSTM over a T x d sequence, zero initial state.

    Gate layout along the 4h axis is (input, forget, output, cell): the
    three sigmoid gates are contiguous so each timestep needs one
    sigmoid and one tanh evaluation. Returns the T x h hidden-state
    sequence; backward is hand-written backprop-through-time.
    """
    t_len, d = x.shape
    dd, hx4 = w_ih.shape
    h = hx4 // 4
    if dd != d or w_hh.shape != (h, hx4) or b.shape != (hx4,):
        raise ShapeError(
            f"lstm shapes: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b.shape}"
        )
    dt = x.data.dtype
    h3 = 3 * h

    pre = x.data @ w_ih.data + b.data  # (T, 4h)
    sig = np.empty((t_len, h3), dtype=dt)  # input/forget/output gates
    cgate = np.empty((t_len, h), dtype=dt)  # tanh cell candidate
    cells = np.empty((t_len, h), dtype=dt)
    tanh_c = np.empty((t_len, h), dtype=dt)
    hidden = np.empty((t_len, h), dtype=dt)

    h_prev = np.zeros(h, dtype=dt)
    c_prev = np.zeros(h, dtype=dt)
    whh = w_hh.data
    with np.errstate(over="ignore", under="ignore"):
        for t in range(t_len):
            z = pre[t] + h_prev @ whh
            s = 1.0 / (1.0 + np.exp(-z[:h3]))
            gg = np.tanh(z[h3:])
            gi, gf, go = s[:h], s[h : 2 * h], s[2 * h :]
            c = gf * c_prev + gi * gg
            tc = np.tanh(c)
            hidden[t] = go * tc
            sig[t] = s
            cgate[t] = gg
            cells[t] = c
            tanh_c[t] = tc
            h_prev = hidden[t]
            c_prev = c

    def vjp(g: np.ndarray):
        dpre = np.empty_like(pre)
        dh_next = np.zeros(h, dtype=dt)
        dc_next = np.zeros(h, dtype=dt)
        whh_t = np.ascontiguousarray(whh.T)
        zero_c = np.zeros(h, dtype=dt)
        dz = np.empty(hx4, dtype=dt)
        for t in range(t_len - 1, -1, -1):
            s = sig[t]
            gi, gf, go = s[:h], s[h : 2 * h], s[2 * h :]
            gg = cgate[t]
            c_before = cells[t - 1] if t > 0 else zero_c
            dh = g[t] + dh_next
            dc = dh * go * (1.0 - tanh_c[t] * tanh_c[t]) + dc_next
            dz[:h] = dc * gg
            dz[h : 2 * h] = dc * c_before
            dz[2 * h : h3] = dh * tanh_c[t]
            dz[:h3] *= s * (1.0 - s)
            dz[h3:] = dc * gi * (1.0 - gg * gg)
            dpre[t] = dz
            dh_next = dz @ whh_t
            dc_next = dc * gf
        grad_x = dpre @ w_ih.data.T
        grad_w_ih = x.data.T @ dpre
        h_before = np.vstack([np.zeros((1, h), dtype=dt), hidden[:-1]])
        grad_w_hh = h_before.T @ dpre
        grad_b = dpre.sum(axis=0)
        return grad_x, grad_w_ih, grad_w_hh, grad_b

    return custom_op(hidden, (x, w_ih, w_hh, b), vjp)


def bilstm(
    x: Tensor,
    fw_w_ih: Tensor, fw_w_hh: Tensor, fw_b: Tensor,
    bw_w_ih: Tensor, bw_w_hh: Tensor, bw_b: Tensor,
) -> Tensor:
    """Bidirectional LSTM: forward and time-reversed passes run in one
    batched recurrence; output is their (T, 2h) concatenation.

    Same gate layout and equations as `lstm`; fusing the directions
    halves the Python-level loop iterations.
    """
    t_len, d = x.shape
    hx4 = fw_w_ih.shape[1]
    h = hx4 // 4
    for w_ih, w_hh, b in ((fw_w_ih, fw_w_hh, fw_b), (bw_w_ih, bw_w_hh, bw_b)):
        if w_ih.shape != (d, hx4) or w_hh.shape != (h, hx4) or b.shape != (hx4,):
            raise ShapeError(
                f"bilstm shapes: x {x.shape}, w_ih {w_ih.shape}, "
                f"w_hh {w_hh.shape}, b {b.shape}"
            )
    dt = x.data.dtype
    h3 = 3 * h

    xs = np.stack([x.data, x.data[::-1]])  # (2, T, d)
    w_ih2 = np.stack([fw_w_ih.data, bw_w_ih.data])  # (2, d, 4h)
    w_hh2 = np.stack([fw_w_hh.data, bw_w_hh.data])  # (2, h, 4h)
    b2 = np.stack([fw_b.data, bw_b.data])[:, None, :]  # (2, 1, 4h)

    pre = xs @ w_ih2 + b2  # (2, T, 4h)
    sig = np.empty((t_len, 2, h3), dtype=dt)
    cgate = np.empty((t_len, 2, h), dtype=dt)
    cells = np.empty((t_len, 2, h), dtype=dt)
    tanh_c = np.empty((t_len, 2, h), dtype=dt)
    hidden = np.empty((t_len, 2, h), dtype=dt)

    h_prev = np.zeros((2, 1, h), dtype=dt)
    c_prev = np.zeros((2, h), dtype=dt)
    with np.errstate(over="ignore", under="ignore"):
        for t in range(t_len):
            z = pre[:, t, :] + (h_prev @ w_hh2)[:, 0, :]  # (2, 4h)
            s = 1.0 / (1.0 + np.exp(-z[:, :h3]))
            gg = np.tanh(z[:, h3:])
            c = s[:, h : 2 * h] * c_prev + s[:, :h] * gg
            tc = np.tanh(c)
            hidden[t] = s[:, 2 * h :] * tc
            sig[t] = s
            cgate[t] = gg
            cells[t] = c
            tanh_c[t] = tc
            h_prev = hidden[t][:, None, :]
            c_prev = c
    out = np.concatenate([hidden[:, 0, :], hidden[::-1, 1, :]], axis=1)  # (T, 2h)

    def vjp(g: np.ndarray):
        gh = np.empty((t_len, 2, h), dtype=dt)
        gh[:, 0, :] = g[:, :h]
        gh[:, 1, :] = g[::-1, h:]
        dpre = np.empty((2, t_len, hx4), dtype=dt)
        dh_next = np.zeros((2, h), dtype=dt)
        dc_next = np.zeros((2, h), dtype=dt)
        whh_t = np.ascontiguousarray(w_hh2.swapaxes(1, 2))  # (2, 4h, h)
        zero_c = np.zeros((2, h), dtype=dt)
        dz = np.empty((2, hx4), dtype=dt)
        for t in range(t_len - 1, -1, -1):
            s = sig[t]
            gg = cgate[t]
            c_before = cells[t - 1] if t > 0 else zero_c
            dh = gh[t] + dh_next
            dc = dh * s[:, 2 * h :] * (1.0 - tanh_c[t] * tanh_c[t]) + dc_next
            dz[:, :h] = dc * gg
            dz[:, h : 2 * h] = dc * c_before
            dz[:, 2 * h : h3] = dh * tanh_c[t]
            dz[:, :h3] *= s * (1.0 - s)
            dz[:, h3:] = dc * s[:, :h] * (1.0 - gg * gg)
            dpre[:, t, :] = dz
            dh_next = (dz[:, None, :] @ whh_t)[:, 0, :]
            dc_next = dc * s[:, h : 2 * h]
        grad_xs = dpre @ w_ih2.swapaxes(1, 2)  # (2, T, d)
        grad_x = grad_xs[0] + grad_xs[1][::-1]
        grad_w_ih = xs.swapaxes(1, 2) @ dpre  # (2, d, 4h)
        h_before = np.concatenate(
            [np.zeros((1, 2, h), dtype=dt), hidden[:-1]], axis=0
        ).swapaxes(0, 1)  # (2, T, h)
        grad_w_hh = h_before.swapaxes(1, 2) @ dpre  # (2, h, 4h)
        grad_b = dpre.sum(axis=1)  # (2, 4h)
        return (
            grad_x,
            grad_w_ih[0], grad_w_hh[0], grad_b[0],
            grad_w_ih[1], grad_w_hh[1], grad_b[1],
        )

    return custom_op(
        out, (x, fw_w_ih, fw_w_hh, fw_b, bw_w_ih, bw_w_hh, bw_b), vjp
    )
