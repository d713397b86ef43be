"""Slow, obviously-correct reference implementations used only by tests."""

import math

import numpy as np


def conv2d_direct(x, w, b, stride=1, padding=0):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * w[fi, ci, u, v]
                    out[ni, fi, i, j] = acc + b[fi]
    return out


def transposed_conv2d_scatter(x, w, b, stride=1, padding=0):
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    full_h, full_w = (h - 1) * stride + k, (wd - 1) * stride + k
    out = np.zeros((n, f, full_h, full_w))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    out[ni, :, i * stride : i * stride + k, j * stride : j * stride + k] += x[ni, ci, i, j] * w[ci]
    out = out[:, :, padding : full_h - padding, padding : full_w - padding]
    return out + b[None, :, None, None]


def dct2_direct(block):
    """Orthonormal 2-D DCT-II from the defining sum."""
    n = block.shape[0]
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            cu = math.sqrt(1 / n) if u == 0 else math.sqrt(2 / n)
            cv = math.sqrt(1 / n) if v == 0 else math.sqrt(2 / n)
            s = 0.0
            for x in range(n):
                for y in range(n):
                    s += block[x, y] * math.cos((2 * x + 1) * u * math.pi / (2 * n)) * math.cos(
                        (2 * y + 1) * v * math.pi / (2 * n))
            out[u, v] = cu * cv * s
    return out


def idct2_direct(coef):
    n = coef.shape[0]
    out = np.zeros((n, n))
    for x in range(n):
        for y in range(n):
            s = 0.0
            for u in range(n):
                for v in range(n):
                    cu = math.sqrt(1 / n) if u == 0 else math.sqrt(2 / n)
                    cv = math.sqrt(1 / n) if v == 0 else math.sqrt(2 / n)
                    s += cu * cv * coef[u, v] * math.cos((2 * x + 1) * u * math.pi / (2 * n)) * math.cos(
                        (2 * y + 1) * v * math.pi / (2 * n))
            out[x, y] = s
    return out


def round_away(v):
    return math.floor(abs(v) + 0.5) * (1 if v >= 0 else -1)


def jpeg_gray_direct(img, qtable):
    """Block-by-block JPEG round trip for a [H,W] image with H, W multiples of 8."""
    h, w = img.shape
    out = np.zeros((h, w))
    for bi in range(0, h, 8):
        for bj in range(0, w, 8):
            coef = dct2_direct(img[bi : bi + 8, bj : bj + 8].astype(float) - 128.0)
            q = np.array([[round_away(coef[u, v] / qtable[u, v]) * qtable[u, v] for v in range(8)]
                          for u in range(8)])
            out[bi : bi + 8, bj : bj + 8] = idct2_direct(q) + 128.0
    return np.clip(np.vectorize(round_away)(out), 0, 255).astype(np.int64)


def reflect(i, n):
    # edge-excluding mirror: -1 -> 1, n -> n-2
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def median_direct(img, w):
    c, h, wd = img.shape
    r = w // 2
    out = np.zeros_like(img)
    for ci in range(c):
        for i in range(h):
            for j in range(wd):
                vals = sorted(img[ci, reflect(i + di, h), reflect(j + dj, wd)]
                              for di in range(-r, r + 1) for dj in range(-r, r + 1))
                out[ci, i, j] = vals[len(vals) // 2]
    return out


def gaussian_taps(sigma, taps):
    r = taps // 2
    g = [math.exp(-(x * x) / (2 * sigma * sigma)) for x in range(-r, r + 1)]
    s = sum(g)
    return np.array([v / s for v in g])


def laplace_entropy_bits(values):
    """Ideal code length (bits) of integers under a fitted discrete Laplace law."""
    v = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    b = max(v.mean(), 1e-3)
    theta = math.exp(-1 / b)
    # P(k) = (1-theta)/(1+theta) * theta^|k|
    p0 = (1 - theta) / (1 + theta)
    return float(np.sum(-math.log2(p0) - v * math.log2(theta)))


def adaptive_code_length(bits):
    """Ideal sequential code length (bits) under a Laplace (+1) adaptive estimator."""
    c = [1, 1]
    total = 0.0
    for b in bits:
        total -= math.log2(c[b] / (c[0] + c[1]))
        c[b] += 1
    return total


def sample_discrete_laplace(rng, scale, size):
    """Two-sided geometric integers with P(k) proportional to exp(-|k| / scale)."""
    theta = math.exp(-1 / scale)
    g1 = rng.geometric(1 - theta, size) - 1
    g2 = rng.geometric(1 - theta, size) - 1
    return g1 - g2


def pee_reference(img, stream, T):
    """Two-pass rhombus PEE over interior pixels of an image needing no squeeze.

    Ring pixels act as predictor neighbours with their LSB cleared and are
    returned untouched. Returns (image, bits consumed).
    """
    out = np.array(img, dtype=np.int64)
    c, h, w = out.shape
    work = out.copy()
    for ring in (work[:, 0, :], work[:, -1, :], work[:, :, 0], work[:, :, -1]):
        ring &= ~1
    pos = 0
    for parity in (0, 1):
        for ch in range(c):
            for i in range(1, h - 1):
                for j in range(1, w - 1):
                    if (i + j) % 2 != parity or pos == len(stream):
                        continue
                    p = math.floor((work[ch, i - 1, j] + work[ch, i + 1, j]
                                    + work[ch, i, j - 1] + work[ch, i, j + 1]) / 4)
                    e = work[ch, i, j] - p
                    if abs(e) <= T:
                        e = 2 * e + int(stream[pos])
                        pos += 1
                    else:
                        e += (T + 1) if e > 0 else -(T + 1)
                    work[ch, i, j] = p + e
    out[:, 1:-1, 1:-1] = work[:, 1:-1, 1:-1]
    return out, pos
