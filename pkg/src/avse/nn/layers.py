"""Differentiable layers: 2-D convolutions, dense, LSTM cell, instance norm.

Convolutions operate on single images laid out [H, W, C] with kernels
[kh, kw, Cin, Cout]. Padding follows the TensorFlow convention: 'same'
pads so that out = ceil(in / stride), splitting the total pad with the
smaller half in front; 'valid' pads nothing. The two spatial axes may use
different padding modes (needed for the causal time axis of the streaming
audio CNN).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .tensor import Tensor


def _pad_amount(n: int, k: int, stride: int, dilation: int, mode: str) -> tuple[int, int, int]:
    """Return (out, pad_front, pad_back) for one axis."""
    span = (k - 1) * dilation + 1
    if mode == "same":
        out = -(-n // stride)
        total = max((out - 1) * stride + span - n, 0)
        return out, total // 2, total - total // 2
    if mode == "valid":
        out = (n - span) // stride + 1
        if out < 1:
            raise ShapeError(f"valid conv: input {n} smaller than kernel span {span}")
        return out, 0, 0
    raise ShapeError(f"unknown padding mode {mode!r}")


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding="same",
) -> Tensor:
    """2-D convolution with a [kh,kw,Cin,Cout] kernel.

    ``x`` is a single [H,W,Cin] image or a [B,H,W,Cin] batch. ``padding``
    is 'same', 'valid', or a (row_mode, col_mode) pair.
    """
    if x.data.ndim not in (3, 4) or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects [B?,H,W,Cin] and [kh,kw,Cin,Cout], got {x.shape} and {kernel.shape}")
    batched = x.data.ndim == 4
    h, w, cin = x.data.shape[-3:]
    kh, kw, kcin, cout = kernel.data.shape
    if cin != kcin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    if stride < 1 or dilation < 1 or kh < 1 or kw < 1:
        raise ShapeError("conv2d needs stride, dilation and kernel dims >= 1")
    pmode = (padding, padding) if isinstance(padding, str) else padding
    oh, pt, pb = _pad_amount(h, kh, stride, dilation, pmode[0])
    ow, pl, pr = _pad_amount(w, kw, stride, dilation, pmode[1])

    pads = ((pt, pb), (pl, pr), (0, 0))
    if batched:
        pads = ((0, 0),) + pads
    xp = np.pad(x.data, pads)
    kd = kernel.data
    row_span = (oh - 1) * stride + 1
    col_span = (ow - 1) * stride + 1

    def tap(arr, di, dj):
        return arr[
            ...,
            di * dilation : di * dilation + row_span : stride,
            dj * dilation : dj * dilation + col_span : stride,
            :,
        ]

    lead = x.data.shape[:-3]
    out = np.zeros(lead + (oh, ow, cout), dtype=xp.dtype)
    for di in range(kh):
        for dj in range(kw):
            out += tap(xp, di, dj) @ kd[di, dj]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv2d bias must be [{cout}], got {bias.shape}")
        out += bias.data

    def vjp(g):
        dk = np.zeros_like(kd)
        gmat = g.reshape(-1, cout)
        for di in range(kh):
            for dj in range(kw):
                patch = tap(xp, di, dj)
                dk[di, dj] = patch.reshape(-1, cin).T @ gmat
        if stride == 1:
            # dX is itself a correlation of the padded upstream gradient
            # with the flipped kernel; accumulating into the contiguous
            # output beats scattering into strided views
            span_h = (kh - 1) * dilation
            span_w = (kw - 1) * dilation
            gp = np.pad(g, ((0, 0),) * (g.ndim - 3) + ((span_h, span_h), (span_w, span_w), (0, 0)))
            dxp = np.zeros_like(xp)
            hp, wp = xp.shape[-3], xp.shape[-2]
            for di in range(kh):
                for dj in range(kw):
                    a = span_h - di * dilation
                    b = span_w - dj * dilation
                    dxp += gp[..., a : a + hp, b : b + wp, :] @ kd[di, dj].T
        else:
            dxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    tap(dxp, di, dj)[...] += g @ kd[di, dj].T
        dx = dxp[..., pt : pt + h, pl : pl + w, :]
        if bias is None:
            return dx.copy(), dk
        return dx.copy(), dk, gmat.sum(axis=0)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out, parents, vjp)


def transposed_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Strided transposed convolution; output spatial dims are exactly in*stride.

    The full scatter output of size (in-1)*stride + k is cropped to in*stride
    starting at offset (k - stride) // 2 (zero-padded at the tail when the
    kernel is shorter than the stride).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects [H,W,Cin] and [kh,kw,Cin,Cout], got {x.shape} and {kernel.shape}")
    h, w, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if cin != kcin:
        raise ShapeError(f"transposed_conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    if stride < 1:
        raise ShapeError("transposed_conv2d needs stride >= 1")

    fh, fw = (h - 1) * stride + kh, (w - 1) * stride + kw
    oh, ow = h * stride, w * stride
    offh = (kh - stride) // 2 if kh >= stride else 0
    offw = (kw - stride) // 2 if kw >= stride else 0
    kd = kernel.data

    full = np.zeros((fh, fw, cout), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            full[di : di + (h - 1) * stride + 1 : stride, dj : dj + (w - 1) * stride + 1 : stride] += x.data @ kd[di, dj]
    out = np.zeros((oh, ow, cout), dtype=x.data.dtype)
    ch = min(oh, fh - offh)
    cw = min(ow, fw - offw)
    out[:ch, :cw] = full[offh : offh + ch, offw : offw + cw]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"transposed_conv2d bias must be [{cout}], got {bias.shape}")
        out += bias.data

    def vjp(g):
        gfull = np.zeros((fh, fw, cout), dtype=g.dtype)
        gfull[offh : offh + ch, offw : offw + cw] = g[:ch, :cw]
        dx = np.zeros_like(x.data)
        dk = np.zeros_like(kd)
        for di in range(kh):
            for dj in range(kw):
                gslice = gfull[di : di + (h - 1) * stride + 1 : stride, dj : dj + (w - 1) * stride + 1 : stride]
                dx += gslice @ kd[di, dj].T
                dk[di, dj] = x.data.reshape(-1, cin).T @ gslice.reshape(-1, cout)
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(0, 1))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out, parents, vjp)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis: [..., Din] @ [Din, Dout] (+ bias).

    Applied independently for every leading index, so a [T, Din] input is
    the time-distributed form.
    """
    if weight.data.ndim != 2:
        raise ShapeError(f"dense weight must be [Din,Dout], got {weight.shape}")
    din, dout = weight.data.shape
    if x.data.shape[-1] != din:
        raise ShapeError(f"dense input trailing dim {x.data.shape[-1]} != Din {din}")
    lead = x.data.shape[:-1]
    flat = T.reshape(x, (-1, din)) if x.data.ndim != 2 else x
    out = T.matmul(flat, weight)
    if bias is not None:
        if bias.data.shape != (dout,):
            raise ShapeError(f"dense bias must be [{dout}], got {bias.shape}")
        out = T.add(out, bias)
    if x.data.ndim != 2:
        out = T.reshape(out, lead + (dout,))
    return out


def lstm_step(
    x: Tensor,
    state: tuple[Tensor, Tensor],
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """One LSTM cell step. Gate packing along the last axis is (i, f, g, o).

    ``x`` is [B, Din] (or [Din]); ``state`` is the (h, c) pair of [B, H].
    Returns (h', (h', c')).
    """
    T.assert_finite(x, "lstm_step input")
    squeeze = x.data.ndim == 1
    if squeeze:
        x = T.reshape(x, (1, -1))
    h, c = state
    if squeeze and h.data.ndim == 1:
        h = T.reshape(h, (1, -1))
        c = T.reshape(c, (1, -1))
    units = wh.data.shape[0]
    if wx.data.shape[1] != 4 * units or b.data.shape != (4 * units,):
        raise ShapeError("lstm_step parameter dims inconsistent with unit count")
    if h.data.shape[-1] != units or c.data.shape[-1] != units:
        raise ShapeError(f"lstm_step state width {h.data.shape[-1]} != units {units}")

    gates = T.add(T.add(T.matmul(x, wx), T.matmul(h, wh)), b)
    i = T.sigmoid(T.narrow(gates, 1, 0, units))
    f = T.sigmoid(T.narrow(gates, 1, units, units))
    g = T.tanh(T.narrow(gates, 1, 2 * units, units))
    o = T.sigmoid(T.narrow(gates, 1, 3 * units, units))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    if squeeze:
        h_out = T.reshape(h_new, (units,))
        c_out = T.reshape(c_new, (units,))
        return h_out, (h_out, c_out)
    return h_new, (h_new, c_new)


def lstm_sequence(
    seq: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> Tensor:
    """Run the LSTM cell over a whole [B,T,W] sequence; returns [T,B,H].

    Equivalent to folding :func:`lstm_step` from zero state, but with a
    single fused record and hand-rolled backpropagation through time,
    which is what makes batch training affordable.
    """
    if seq.data.ndim != 3:
        raise ShapeError(f"lstm_sequence expects [B,T,W], got {seq.shape}")
    bsz, steps, width = seq.data.shape
    units = wh.data.shape[0]
    if wx.data.shape != (width, 4 * units) or b.data.shape != (4 * units,):
        raise ShapeError("lstm_sequence parameter dims inconsistent")
    dtype = seq.data.dtype
    xs = seq.data
    wxd, whd, bd = wx.data, wh.data, b.data

    i_s = np.empty((steps, bsz, units), dtype=dtype)
    f_s = np.empty_like(i_s)
    g_s = np.empty_like(i_s)
    o_s = np.empty_like(i_s)
    tc_s = np.empty_like(i_s)
    h_prev = np.empty_like(i_s)
    c_prev = np.empty_like(i_s)
    h = np.zeros((bsz, units), dtype=dtype)
    c = np.zeros((bsz, units), dtype=dtype)
    out = np.empty((steps, bsz, units), dtype=dtype)
    for t in range(steps):
        h_prev[t] = h
        c_prev[t] = c
        gates = xs[:, t] @ wxd + h @ whd + bd
        e = np.exp(-np.abs(gates))
        sig = np.where(gates >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        i_s[t] = sig[:, :units]
        f_s[t] = sig[:, units : 2 * units]
        g_s[t] = np.tanh(gates[:, 2 * units : 3 * units])
        o_s[t] = sig[:, 3 * units :]
        c = f_s[t] * c + i_s[t] * g_s[t]
        tc_s[t] = np.tanh(c)
        h = o_s[t] * tc_s[t]
        out[t] = h

    def vjp(g_out):
        dwx = np.zeros_like(wxd)
        dwh = np.zeros_like(whd)
        db = np.zeros_like(bd)
        dxs = np.zeros_like(xs)
        dh_next = np.zeros((bsz, units), dtype=dtype)
        dc_next = np.zeros((bsz, units), dtype=dtype)
        dgates = np.empty((bsz, 4 * units), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            dh = g_out[t] + dh_next
            do = dh * tc_s[t]
            dc = dh * o_s[t] * (1.0 - tc_s[t] ** 2) + dc_next
            dgates[:, :units] = dc * g_s[t] * i_s[t] * (1.0 - i_s[t])
            dgates[:, units : 2 * units] = dc * c_prev[t] * f_s[t] * (1.0 - f_s[t])
            dgates[:, 2 * units : 3 * units] = dc * i_s[t] * (1.0 - g_s[t] ** 2)
            dgates[:, 3 * units :] = do * o_s[t] * (1.0 - o_s[t])
            dc_next = dc * f_s[t]
            dh_next = dgates @ whd.T
            dxs[:, t] = dgates @ wxd.T
            dwx += xs[:, t].T @ dgates
            dwh += h_prev[t].T @ dgates
            db += dgates.sum(axis=0)
        return dxs, dwx, dwh, db

    return Tensor(out, (seq, wx, wh, b), vjp)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over the spatial axes of [H,W,C]."""
    if x.data.ndim != 3 or x.data.shape[0] < 1 or x.data.shape[1] < 1:
        raise ShapeError(f"instance_norm expects [H,W,C] with spatial dims >= 1, got {x.shape}")
    mu = x.data.mean(axis=(0, 1), keepdims=True)
    var = x.data.var(axis=(0, 1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def vjp(g):
        gm = g.mean(axis=(0, 1), keepdims=True)
        gx = (g * xhat).mean(axis=(0, 1), keepdims=True)
        return ((g - gm - xhat * gx) * inv,)

    return Tensor(xhat, (x,), vjp)
