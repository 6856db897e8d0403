"""Numeric kernels: convolution, attention, normalization, resizing, warping.

All trainable kernels (conv2d, conv1d_temporal, attention, group_norm,
linear) and the linear resampling ops (bilinear_resize2d, warp_bilinear)
carry reverse-mode gradients through the tape. lowpass_gaussian is an
inference-path filter and is not differentiated.

Conventions, fixed so oracles are reproducible:
  * conv ops are cross-correlations (no kernel flip), zero padding;
  * bilinear resizing uses half-pixel centers (align-corners false);
  * warping is backward: output(p) = input(p + flow(p)), border clamped,
    with flow channel 0 = dx (width axis) and channel 1 = dy (height axis).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, ShapeError
from . import tensor as _tensor_mod
from .tensor import Tensor, _as_tensor, _record, add, div, matmul, mul
from .tensor import reshape as treshape
from .tensor import softmax, sqrt, sub, tmean, transpose

_CONV_CHUNK = 16  # inference-path batching bound for im2col memory


def _recording(*tensors: Tensor) -> bool:
    return _tensor_mod._ACTIVE_TAPE is not None and any(t.requires_grad for t in tensors)


# -- dense -------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map y = x @ weight.T + bias with weight [O, I]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", f"input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    y = matmul(x, transpose(weight, (1, 0)))
    if bias is not None:
        y = add(y, bias)
    return y


# -- 2D convolution ------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int,
            ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, i, j]
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate [N,C,H,W] with [O,C,kh,kw]; H' = (H+2p-kh)/stride + 1."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError("conv2d", f"input must be [N,C,H,W], got rank {x.ndim}")
    if weight.ndim != 4:
        raise ShapeError("conv2d", f"weight must be [O,C,kh,kw], got rank {weight.ndim}")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError("conv2d", f"input channels {c} != weight channels {cw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv2d", f"bias shape {bias.shape} != ({o},)")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")

    if n > _CONV_CHUNK and not _recording(x, weight):
        parts = [conv2d(Tensor(x.data[i:i + _CONV_CHUNK]), weight, bias,
                        stride=stride, pad=pad).data
                 for i in range(0, n, _CONV_CHUNK)]
        return Tensor(np.concatenate(parts, axis=0))

    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(n, o, ho * wo)
        dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dcols = np.matmul(wmat.T, g2)
        dx = _col2im(dcols, x.shape, kh, kw, stride, pad, ho, wo)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)

    return _record(out, parents, backward)


# -- temporal (1D) convolution --------------------------------------------------

def conv1d_temporal(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                    pad: int | None = None) -> Tensor:
    """Same-padded 1D convolution along the time axis.

    Accepts [T, C] (one spatial position) or [B, T, C] (a batch of
    positions); weight is [O, C, k] with odd k. Output keeps length T.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    squeeze = x.ndim == 2
    if squeeze:
        x = treshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError("conv1d_temporal", f"input must be [T,C] or [B,T,C], got rank {x.ndim}")
    b, t, c = x.shape
    o, cw, k = weight.shape
    if t < 1:
        raise ShapeError("conv1d_temporal", "temporal length must be >= 1")
    if k % 2 != 1:
        raise ContractError(f"temporal kernel width must be odd, got {k}")
    if cw != c:
        raise ShapeError("conv1d_temporal", f"input channels {c} != weight channels {cw}")
    if pad is None:
        pad = (k - 1) // 2

    xc = transpose(x, (0, 2, 1))  # [B, C, T]
    out = _conv1d_channels_first(xc, weight, bias, pad)
    out = transpose(out, (0, 2, 1))
    if squeeze:
        out = treshape(out, out.shape[1:])
    return out


def _conv1d_channels_first(x: Tensor, weight: Tensor, bias: Tensor | None, pad: int) -> Tensor:
    b, c, t = x.shape
    o, _, k = weight.shape

    if b > 64 * _CONV_CHUNK and not _recording(x, weight):
        step = 64 * _CONV_CHUNK
        parts = [_conv1d_channels_first(Tensor(x.data[i:i + step]), weight, bias, pad).data
                 for i in range(0, b, step)]
        return Tensor(np.concatenate(parts, axis=0))

    xd = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    win = sliding_window_view(xd, k, axis=2)            # [B, C, To, k]
    to = win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2).reshape(b, c * k, to))
    wmat = weight.data.reshape(o, c * k)
    out = np.matmul(wmat, cols)                          # [B, O, To]
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dcols = np.matmul(wmat.T, g).reshape(b, c, k, to)
        dx = np.zeros((b, c, t + 2 * pad), dtype=g.dtype)
        for i in range(k):
            dx[:, :, i:i + to] += dcols[:, :, i]
        if pad:
            dx = dx[:, :, pad:-pad]
        dx = np.ascontiguousarray(dx)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)

    return _record(out, parents, backward)


def conv1d_video(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Temporal convolution of a latent video [T,C,h,w], per spatial position."""
    t, c, h, w = x.shape
    seq = transpose(x, (2, 3, 0, 1))            # [h, w, T, C]
    seq = treshape(seq, (h * w, t, c))
    out = conv1d_temporal(seq, weight, bias)
    o = out.shape[-1]
    out = treshape(out, (h, w, t, o))
    return transpose(out, (2, 3, 0, 1))


# -- attention -----------------------------------------------------------------

def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention; leading axes are batch dims.

    q [..., Lq, D], k [..., Lk, D], v [..., Lk, Dv] -> [..., Lq, Dv].
    Every output row is a convex combination of value rows.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError("attention", f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention", f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = mul(matmul(q, _swap_last(k)), scale)
    return matmul(softmax(logits, axis=-1), v)


def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, tuple(axes))


# -- group normalization ---------------------------------------------------------

def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize [N, C, ...] to zero mean / unit variance per channel group."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("group_norm", f"input must be [N,C,...], got rank {x.ndim}")
    n, c = x.shape[0], x.shape[1]
    if c % groups != 0:
        raise ShapeError("group_norm", f"channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("group_norm", f"gamma/beta must be shape ({c},)")

    rest = x.shape[2:]
    inner = (c // groups) * int(np.prod(rest)) if rest else c // groups
    xr = treshape(x, (n, groups, inner))
    m = tmean(xr, axis=2, keepdims=True)
    d = sub(xr, m)
    var = tmean(mul(d, d), axis=2, keepdims=True)
    y = div(d, sqrt(add(var, eps)))
    y = treshape(y, x.shape)
    bshape = (1, c) + (1,) * len(rest)
    return add(mul(y, treshape(gamma, bshape)), treshape(beta, bshape))


# -- bilinear resize --------------------------------------------------------------

def _resize_axis_tables(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    return i0, i1, f


def bilinear_resize2d(x: Tensor, factor: int = 2) -> Tensor:
    """Upsample the two trailing axes by an integer factor (half-pixel centers)."""
    if factor < 1:
        raise ContractError(f"resize factor must be >= 1, got {factor}")
    return resize_bilinear(x, None, factor=factor)


def resize_bilinear(x: Tensor, out_hw: tuple[int, int] | None, factor: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("bilinear_resize2d", f"need at least 2 axes, got rank {x.ndim}")
    h, w = x.shape[-2], x.shape[-1]
    if out_hw is None:
        out_hw = (h * factor, w * factor)
    oh, ow = out_hw
    iy0, iy1, fy = _resize_axis_tables(h, oh)
    ix0, ix1, fx = _resize_axis_tables(w, ow)

    lead = x.shape[:-2]
    xf = x.data.reshape((-1, h, w))
    b = xf.shape[0]
    fyc = fy[:, None].astype(x.dtype)
    fxc = fx[None, :].astype(x.dtype)

    g00 = xf[:, iy0[:, None], ix0[None, :]]
    g01 = xf[:, iy0[:, None], ix1[None, :]]
    g10 = xf[:, iy1[:, None], ix0[None, :]]
    g11 = xf[:, iy1[:, None], ix1[None, :]]
    top = g00 * (1 - fxc) + g01 * fxc
    bot = g10 * (1 - fxc) + g11 * fxc
    out = (top * (1 - fyc) + bot * fyc).reshape(lead + (oh, ow))

    def backward(g):
        gf = g.reshape(b, oh, ow)
        dxf = np.zeros_like(xf)
        bidx = np.arange(b)[:, None, None]
        y0 = iy0[None, :, None]
        y1 = iy1[None, :, None]
        x0 = ix0[None, None, :]
        x1 = ix1[None, None, :]
        np.add.at(dxf, (bidx, y0, x0), gf * (1 - fyc) * (1 - fxc))
        np.add.at(dxf, (bidx, y0, x1), gf * (1 - fyc) * fxc)
        np.add.at(dxf, (bidx, y1, x0), gf * fyc * (1 - fxc))
        np.add.at(dxf, (bidx, y1, x1), gf * fyc * fxc)
        return (dxf.reshape(x.shape),)

    return _record(np.ascontiguousarray(out), (x,), backward)


# -- backward warping ---------------------------------------------------------------

def warp_bilinear(x: Tensor, flow: Tensor) -> Tensor:
    """Backward-warp [C,h,w] (or [N,C,h,w]) by a flow field in pixel units.

    flow[0] is horizontal (dx), flow[1] vertical (dy); samples outside the
    frame clamp to the border. Zero flow returns the input bit-exactly.
    """
    x, flow = _as_tensor(x), _as_tensor(flow)
    squeeze = x.ndim == 3
    if squeeze:
        x = treshape(x, (1,) + x.shape)
        flow = treshape(flow, (1,) + flow.shape)
    n, c, h, w = x.shape
    if flow.shape != (n, 2, h, w):
        raise ShapeError("warp_bilinear", f"flow shape {flow.shape} does not match input {(n, 2, h, w)}")

    out = _warp_batched(x, flow)
    if squeeze:
        out = treshape(out, out.shape[1:])
    return out


def _warp_batched(x: Tensor, flow: Tensor) -> Tensor:
    n, c, h, w = x.shape
    gx = np.arange(w, dtype=x.dtype)[None, None, :]
    gy = np.arange(h, dtype=x.dtype)[None, :, None]
    xs = gx + flow.data[:, 0]
    ys = gy + flow.data[:, 1]
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fxw = (xc - x0).astype(x.dtype)
    fyw = (yc - y0).astype(x.dtype)

    xf = x.data.reshape(n, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(n, 1, h * w)
        return np.take_along_axis(xf, np.broadcast_to(idx, (n, c, h * w)), axis=2).reshape(n, c, h, w)

    v00 = gather(y0, x0)
    v01 = gather(y0, x1)
    v10 = gather(y1, x0)
    v11 = gather(y1, x1)
    fxb = fxw[:, None]
    fyb = fyw[:, None]
    top = v00 * (1 - fxb) + v01 * fxb
    bot = v10 * (1 - fxb) + v11 * fxb
    out = top * (1 - fyb) + bot * fyb

    def backward(g):
        dx = np.zeros((n * c, h * w), dtype=g.dtype)
        rows = np.arange(n * c)[:, None]

        def scatter(yi, xi, wgt):
            idx = np.broadcast_to((yi * w + xi).reshape(n, 1, h * w), (n, c, h * w)).reshape(n * c, h * w)
            np.add.at(dx, (rows, idx), (g * wgt[:, None]).reshape(n * c, h * w))

        scatter(y0, x0, (1 - fyw) * (1 - fxw))
        scatter(y0, x1, (1 - fyw) * fxw)
        scatter(y1, x0, fyw * (1 - fxw))
        scatter(y1, x1, fyw * fxw)

        inx = ((xs >= 0) & (xs <= w - 1)).astype(g.dtype)
        iny = ((ys >= 0) & (ys <= h - 1)).astype(g.dtype)
        ddx = ((v01 - v00) * (1 - fyb) + (v11 - v10) * fyb) * inx[:, None]
        ddy = ((v10 - v00) * (1 - fxb) + (v11 - v01) * fxb) * iny[:, None]
        dflow = np.stack([(g * ddx).sum(axis=1), (g * ddy).sum(axis=1)], axis=1)
        return dx.reshape(n, c, h, w), dflow

    return _record(out, (x, flow), backward)


# -- Gaussian low-pass ----------------------------------------------------------------

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ContractError(f"gaussian sigma must be > 0, got {sigma}")
    r = math.ceil(3.0 * sigma)
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def lowpass_gaussian(x: Tensor, sigma: float) -> Tensor:
    """Separable Gaussian blur over the two trailing axes, edge-clamped.

    Inference-path filter: the output does not record gradients.
    """
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("lowpass_gaussian", f"need at least 2 axes, got rank {x.ndim}")
    k = gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2
    data = x.data.astype(np.float64)

    h = data.shape[-2]
    padded = np.pad(data, [(0, 0)] * (data.ndim - 2) + [(r, r), (0, 0)], mode="edge")
    acc = np.zeros_like(data)
    for i, tap in enumerate(k):
        acc += tap * padded[..., i:i + h, :]

    w = data.shape[-1]
    padded = np.pad(acc, [(0, 0)] * (data.ndim - 2) + [(0, 0), (r, r)], mode="edge")
    acc = np.zeros_like(data)
    for i, tap in enumerate(k):
        acc += tap * padded[..., :, i:i + w]

    return Tensor(acc.astype(x.dtype))
