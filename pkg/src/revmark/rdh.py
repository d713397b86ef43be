"""Reversible data hiding by rhombus prediction-error expansion.

Layout of an embedded image:

* interior pixels (not on the outer ring) carry data in two checkerboard
  passes: the cross set ((i + j) even) first, then the dot set;
* the outer ring carries the header by LSB substitution; its original LSBs
  travel inside the embedded stream.

Before embedding, every interior pixel is pushed away from the range ends
(values <= T move up by T + 1, values >= 255 - T move down), so expansion
or shifting by at most T + 1 can never leave [0, 255]. A flag per
ambiguous pixel, arithmetic coded, records which ones were moved. The
embedded stream is [payload | coded flags | original ring LSBs | CRC-32 of
the original image], so a restored image that differs from the original
is always reported rather than returned.

Ring pixels are read with their LSB cleared whenever they serve as
predictor neighbours, so writing the header does not disturb predictions.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numba
import numpy as np

from . import codec
from .errors import CapacityExceeded, ChecksumMismatch, MalformedHeader, ShapeMismatch

T_MAX = 63  # squeezed ranges [T+1, 2T+1] and [254-2T, 254-T] must not meet
CRC_BITS = 32


def image_crc(img: np.ndarray) -> np.ndarray:
    return codec.int_to_bits(zlib.crc32(np.ascontiguousarray(img, dtype="<i8").tobytes()), CRC_BITS)


def rhombus_predict(pixels, i: int, j: int) -> int:
    """floor of the mean of the N, S, W, E neighbours of (i, j) in a 2-D image."""
    p = np.asarray(pixels, dtype=np.int64)
    return int((p[i - 1, j] + p[i + 1, j] + p[i, j - 1] + p[i, j + 1]) // 4)


def _as_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ShapeMismatch(f"expected [C,H,W] or [H,W], got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() > 255):
        raise ShapeMismatch("pixels must lie in [0, 255]")
    return a.astype(np.int64)


def field_width(shape) -> int:
    c, h, w = shape
    return int(c * h * w).bit_length()


def header_bits(shape) -> int:
    return 2 + 8 + 3 * field_width(shape)


def ring_positions(shape) -> np.ndarray:
    """Flat indices of the outer ring: row 0, last row, first column, last column."""
    c, h, w = shape
    coords = []
    for ch in range(c):
        cells = [(0, j) for j in range(w)]
        if h > 1:
            cells += [(h - 1, j) for j in range(w)]
        cells += [(i, 0) for i in range(1, h - 1)]
        if w > 1:
            cells += [(i, w - 1) for i in range(1, h - 1)]
        coords += [ch * h * w + i * w + j for i, j in cells]
    return np.array(coords, dtype=np.int64)


# --- squeeze / flags -------------------------------------------------------


def _interior(shape) -> np.ndarray:
    c, h, w = shape
    m = np.zeros(shape, dtype=bool)
    if h > 2 and w > 2:
        m[:, 1:-1, 1:-1] = True
    return m


def _ambiguous(squeezed: np.ndarray, T: int, interior: np.ndarray) -> np.ndarray:
    low = (squeezed >= T + 1) & (squeezed <= 2 * T + 1)
    high = (squeezed >= 254 - 2 * T) & (squeezed <= 254 - T)
    return interior & (low | high)


def squeeze(img: np.ndarray, T: int):
    """Move interior pixels into [T+1, 254-T]; return (squeezed, flags)."""
    inner = _interior(img.shape)
    out = img.copy()
    up = inner & (img <= T)
    down = inner & (img >= 255 - T)
    out[up] += T + 1
    out[down] -= T + 1
    amb = _ambiguous(out, T, inner)
    flags = (up | down)[amb].astype(np.uint8)
    return out, flags


def unsqueeze(squeezed: np.ndarray, T: int, flags: np.ndarray) -> np.ndarray:
    inner = _interior(squeezed.shape)
    amb = _ambiguous(squeezed, T, inner)
    if int(amb.sum()) != len(flags):
        raise ChecksumMismatch("flag map length does not match the restored image")
    moved = np.zeros(squeezed.shape, dtype=bool)
    moved[amb] = flags.astype(bool)
    out = squeezed.copy()
    lowside = moved & (squeezed <= 2 * T + 1)
    out[lowside] -= T + 1
    out[moved & ~lowside] += T + 1
    return out


# --- passes ----------------------------------------------------------------


@numba.njit(cache=True)
def _embed_pass(work, bits, pos, T, parity):
    n_ch, h, w = work.shape
    n = len(bits)
    for c in range(n_ch):
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                if (i + j) % 2 != parity:
                    continue
                if pos == n:
                    return pos
                p = (work[c, i - 1, j] + work[c, i + 1, j] + work[c, i, j - 1] + work[c, i, j + 1]) >> 2
                e = work[c, i, j] - p
                if -T <= e <= T:
                    e = 2 * e + bits[pos]
                    pos += 1
                elif e > T:
                    e += T + 1
                else:
                    e -= T + 1
                work[c, i, j] = p + e
    return pos


@numba.njit(cache=True)
def _cross_capacity(work, T):
    n_ch, h, w = work.shape
    count = 0
    for c in range(n_ch):
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                if (i + j) % 2 != 0:
                    continue
                p = (work[c, i - 1, j] + work[c, i + 1, j] + work[c, i, j - 1] + work[c, i, j + 1]) >> 2
                e = work[c, i, j] - p
                if -T <= e <= T:
                    count += 1
    return count


@numba.njit(cache=True)
def _extract_pass(work, T, parity, n_bits, full):
    """Undo one pass; returns (bits, status). status 1 = inconsistent data."""
    n_ch, h, w = work.shape
    out = np.zeros(max(n_bits, 0), dtype=np.uint8)
    pos = 0
    for c in range(n_ch):
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                if (i + j) % 2 != parity:
                    continue
                if not full and pos == n_bits:
                    return out, 0
                p = (work[c, i - 1, j] + work[c, i + 1, j] + work[c, i, j - 1] + work[c, i, j + 1]) >> 2
                e = work[c, i, j] - p
                if -2 * T <= e <= 2 * T + 1:
                    if pos >= n_bits:
                        return out, 1
                    out[pos] = e & 1
                    pos += 1
                    e = e >> 1
                elif e > 2 * T + 1:
                    e -= T + 1
                elif e < -2 * T - 1:
                    e += T + 1
                else:
                    return out, 1
                x = p + e
                if x < T + 1 or x > 254 - T:
                    return out, 1
                work[c, i, j] = x
    if pos != n_bits:
        return out, 1
    return out, 0


# --- public API ------------------------------------------------------------


@dataclass(frozen=True)
class RdhHeader:
    channels: int
    T: int
    payload_len: int
    map_len: int
    cross_bits: int


def _header_to_bits(hd: RdhHeader, shape) -> np.ndarray:
    n = field_width(shape)
    return np.concatenate([
        codec.int_to_bits(hd.channels, 2),
        codec.int_to_bits(hd.T, 8),
        codec.int_to_bits(hd.payload_len, n),
        codec.int_to_bits(hd.map_len, n),
        codec.int_to_bits(hd.cross_bits, n),
    ])


def _bits_to_header(bits: np.ndarray, shape) -> RdhHeader:
    n = field_width(shape)
    f = [codec.bits_to_int(bits[a:b]) for a, b in
         ((0, 2), (2, 10), (10, 10 + n), (10 + n, 10 + 2 * n), (10 + 2 * n, 10 + 3 * n))]
    return RdhHeader(*f)


def _masked(img: np.ndarray) -> np.ndarray:
    work = img.copy()
    work[:, 0, :] &= ~1
    work[:, -1, :] &= ~1
    work[:, :, 0] &= ~1
    work[:, :, -1] &= ~1
    return work


def _try_embed(img: np.ndarray, payload: np.ndarray, T: int):
    """Embed at threshold T; returns the stego image or None when it does not fit."""
    shape = img.shape
    n_hdr = header_bits(shape)
    ring = ring_positions(shape)
    if len(ring) < n_hdr:
        return None
    squeezed, flags = squeeze(img, T)
    coded_flags = codec.ac_encode(flags)
    ring_lsbs = (img.ravel()[ring[:n_hdr]] & 1).astype(np.uint8)
    stream = np.concatenate([payload, coded_flags, ring_lsbs, image_crc(img)]).astype(np.int64)
    total = len(stream)
    if total >= (1 << field_width(shape)):
        return None
    work = _masked(squeezed)
    cross = _embed_pass(work, stream, 0, T, 0)
    used = _embed_pass(work, stream, cross, T, 1)
    if used != total:
        return None
    hd = RdhHeader(shape[0], T, len(payload), len(coded_flags), cross)
    flat = work.ravel()
    # ring pixels: original values, then header bits in the first n_hdr LSBs
    flat[ring] = img.ravel()[ring]
    flat[ring[:n_hdr]] = (flat[ring[:n_hdr]] & ~1) | _header_to_bits(hd, shape)
    return flat.reshape(shape)


def capacity(img, T: int) -> int:
    """Payload bits guaranteed to fit at threshold T (may be negative).

    Counts expandable cross-set positions only, so the bound is sound: the
    cross pass alone can carry this many bits plus the flag map and ring
    LSBs and the image CRC. The dot pass usually adds roughly as much again.
    """
    a = _as_image(img)
    n_hdr = header_bits(a.shape)
    if not 0 <= T <= T_MAX or len(ring_positions(a.shape)) < n_hdr:
        return -n_hdr  # nothing fits
    squeezed, flags = squeeze(a, T)
    cap = _cross_capacity(_masked(squeezed), T)
    return cap - len(codec.ac_encode(flags)) - n_hdr - CRC_BITS


def expandable_count(img, T: int) -> int:
    """Cross-set positions with |e| <= T, before any overhead is subtracted."""
    a = _as_image(img)
    squeezed, _ = squeeze(a, T)
    return int(_cross_capacity(_masked(squeezed), T))


def pee_embed(img, payload, T: int | None = None) -> np.ndarray:
    """Embed ``payload`` bits; T defaults to the smallest threshold that fits."""
    a = _as_image(img)
    bits = np.asarray(payload, dtype=np.uint8).ravel()
    if np.any(bits > 1):
        raise ValueError("payload must be a 0/1 sequence")
    candidates = range(T_MAX + 1) if T is None else [T]
    for t in candidates:
        if not 0 <= t <= T_MAX:
            raise ValueError(f"threshold must lie in [0, {T_MAX}]")
        out = _try_embed(a, bits, t)
        if out is not None:
            return out
    best = max(capacity(a, t) for t in candidates)
    raise CapacityExceeded(len(bits), max(best, 0))


def read_rdh_header(stego) -> RdhHeader:
    a = _as_image(stego)
    n_hdr = header_bits(a.shape)
    ring = ring_positions(a.shape)
    if len(ring) < n_hdr:
        raise MalformedHeader("image too small to hold a header")
    hd = _bits_to_header((a.ravel()[ring[:n_hdr]] & 1).astype(np.uint8), a.shape)
    if hd.channels != a.shape[0]:
        raise MalformedHeader(f"header says {hd.channels} channels, image has {a.shape[0]}")
    if hd.T > T_MAX:
        raise MalformedHeader(f"threshold {hd.T} out of range")
    total = hd.payload_len + hd.map_len + n_hdr + CRC_BITS
    if hd.cross_bits > total or total >= (1 << field_width(a.shape)):
        raise MalformedHeader("inconsistent length fields")
    return hd


def pee_extract_restore(stego):
    """Inverse of :func:`pee_embed`: returns (original image, payload bits)."""
    a = _as_image(stego)
    shape = a.shape
    hd = read_rdh_header(a)
    n_hdr = header_bits(shape)
    total = hd.payload_len + hd.map_len + n_hdr + CRC_BITS
    work = _masked(a)
    dot_bits, st_dot = _extract_pass(work, hd.T, 1, total - hd.cross_bits, False)
    if st_dot:
        raise ChecksumMismatch("dot pass data inconsistent")
    cross_bits, st_cross = _extract_pass(work, hd.T, 0, hd.cross_bits, hd.cross_bits < total)
    if st_cross:
        raise ChecksumMismatch("cross pass data inconsistent")
    stream = np.concatenate([cross_bits, dot_bits])
    payload = stream[: hd.payload_len]
    coded_flags = stream[hd.payload_len : hd.payload_len + hd.map_len]
    ring_lsbs = stream[hd.payload_len + hd.map_len : total - CRC_BITS]
    crc = stream[total - CRC_BITS :]

    n_flags = int(_ambiguous(work, hd.T, _interior(shape)).sum())
    flags = codec.ac_decode(coded_flags, n_flags)
    restored = unsqueeze(work, hd.T, flags)
    ring = ring_positions(shape)
    flat = restored.ravel()
    flat[ring] = a.ravel()[ring]
    flat[ring[:n_hdr]] = (flat[ring[:n_hdr]] & ~1) | ring_lsbs
    restored = flat.reshape(shape)
    if not np.array_equal(image_crc(restored), crc):
        raise ChecksumMismatch("restored image fails its CRC")
    return restored, payload.astype(np.uint8)
