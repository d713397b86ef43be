"""Direct-loop convolution kernels.

Every forward output element is accumulated sequentially in the order
(input channel, kernel row, kernel column), zero-padding terms included,
with no fused multiply-add. Results are therefore bit-identical to a plain
Python loop over the same terms and independent of batch size. The
innermost loops run across output columns, which keeps each element's
order fixed while letting LLVM vectorise across elements.

Inputs are expected zero-padded and split into stride phases.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def conv_forward(ph, w, b, stride, out_h, out_w):
    """``ph`` is the phase-split padded input from ``split_phases``."""
    n_batch = ph.shape[0]
    n_out, n_in, k = w.shape[0], w.shape[1], w.shape[2]
    ss = stride * stride
    out = np.empty((n_batch, n_out, out_h, out_w))
    acc = np.empty((out_h, out_w))
    for n in range(n_batch):
        for f in range(n_out):
            acc[:, :] = 0.0
            for c in range(n_in):
                for ki in range(k):
                    for kj in range(k):
                        wv = w[f, c, ki, kj]
                        plane = c * ss + (ki % stride) * stride + kj % stride
                        oi, oj = ki // stride, kj // stride
                        for i in range(out_h):
                            src = ph[n, plane, i + oi, oj : oj + out_w]
                            dst = acc[i]
                            for j in range(out_w):
                                dst[j] += wv * src[j]
            for i in range(out_h):
                for j in range(out_w):
                    out[n, f, i, j] = acc[i, j] + b[f]
    return out


@numba.njit(cache=True)
def conv_input_grad(g, w, stride, phase_h, phase_w):
    """Adjoint of ``conv_forward`` w.r.t. its input, by scatter into phases.

    Also serves as the transposed convolution; ``merge_phases`` and a crop
    turn the result back into an image.
    """
    n_batch, n_out, out_h, out_w = g.shape
    n_in, k = w.shape[1], w.shape[2]
    ss = stride * stride
    dph = np.zeros((n_batch, n_in * ss, phase_h, phase_w))
    for n in range(n_batch):
        for f in range(n_out):
            for c in range(n_in):
                for ki in range(k):
                    for kj in range(k):
                        wv = w[f, c, ki, kj]
                        plane = c * ss + (ki % stride) * stride + kj % stride
                        oi, oj = ki // stride, kj // stride
                        for i in range(out_h):
                            dst = dph[n, plane, i + oi, oj : oj + out_w]
                            src = g[n, f, i]
                            for j in range(out_w):
                                dst[j] += src[j] * wv
    return dph


@numba.njit(cache=True)
def conv_weight_grad(g, ph, stride, k):
    n_batch, n_out, out_h, out_w = g.shape
    ss = stride * stride
    n_in = ph.shape[1] // ss
    dw = np.empty((n_out, n_in, k, k))
    accv = np.empty(out_w)
    for f in range(n_out):
        for c in range(n_in):
            for ki in range(k):
                for kj in range(k):
                    plane = c * ss + (ki % stride) * stride + kj % stride
                    oi, oj = ki // stride, kj // stride
                    accv[:] = 0.0
                    for n in range(n_batch):
                        for i in range(out_h):
                            xrow = ph[n, plane, i + oi, oj : oj + out_w]
                            grow = g[n, f, i]
                            for j in range(out_w):
                                accv[j] += grow[j] * xrow[j]
                    total = 0.0
                    for j in range(out_w):
                        total += accv[j]
                    dw[f, c, ki, kj] = total
    return dw


def split_phases(xp: np.ndarray, stride: int) -> np.ndarray:
    """[N,C,H,W] -> [N,C*s*s,ceil(H/s),ceil(W/s)]; plane c*s*s + a*s + b holds x[c, a::s, b::s]."""
    if stride == 1:
        return np.ascontiguousarray(xp, dtype=np.float64)
    n, c, h, w = xp.shape
    hs, ws = -(-h // stride), -(-w // stride)
    out = np.zeros((n, c, stride * stride, hs, ws))
    for a in range(stride):
        for b in range(stride):
            part = xp[:, :, a::stride, b::stride]
            out[:, :, a * stride + b, : part.shape[2], : part.shape[3]] = part
    return out.reshape(n, c * stride * stride, hs, ws)


def merge_phases(ph: np.ndarray, stride: int, h: int, w: int) -> np.ndarray:
    if stride == 1:
        return ph[:, :, :h, :w]
    n = ph.shape[0]
    c = ph.shape[1] // (stride * stride)
    ph = ph.reshape(n, c, stride * stride, ph.shape[2], ph.shape[3])
    out = np.empty((n, c, h, w))
    for a in range(stride):
        for b in range(stride):
            rows = len(range(a, h, stride))
            cols = len(range(b, w, stride))
            out[:, :, a::stride, b::stride] = ph[:, :, a * stride + b, :rows, :cols]
    return out


@numba.njit(cache=True)
def median_filter(img, w):
    """Per-pixel median over a reflect-padded w x w window, img is [C,H,W]."""
    n_ch, h, wd = img.shape
    r = w // 2
    out = np.empty_like(img)
    buf = np.empty(w * w, dtype=img.dtype)
    for c in range(n_ch):
        for i in range(h):
            for j in range(wd):
                m = 0
                for di in range(-r, r + 1):
                    ii = _reflect(i + di, h)
                    for dj in range(-r, r + 1):
                        jj = _reflect(j + dj, wd)
                        buf[m] = img[c, ii, jj]
                        m += 1
                srt = np.sort(buf)
                out[c, i, j] = srt[m // 2]
    return out


@numba.njit(cache=True)
def _reflect(i, n):
    # numpy "reflect" convention: edge sample not repeated
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i
