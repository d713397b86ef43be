"""Adaptive binary arithmetic coding of the auxiliary payload (z, O).

The coder is the classic 32-bit integer scheme with pending-bit
(underflow) handling: each binary decision narrows [low, high] in
proportion to adaptive counts, and identical model evolution on both
sides keeps encoder and decoder in lockstep.

Bit sequences are numpy ``uint8`` arrays of 0/1, MSB first when packed.
"""

from __future__ import annotations

import binascii
from dataclasses import dataclass

import numba
import numpy as np

from .errors import (
    ChecksumMismatch,
    LengthMismatch,
    MalformedHeader,
    RangeExceeded,
    ShapeMismatch,
    TruncatedStream,
)

PRECISION = 32
TOP = (1 << PRECISION) - 1
HALF = 1 << (PRECISION - 1)
QUARTER = 1 << (PRECISION - 2)
MAX_TOTAL = 1 << 16

Z_LIMIT = 1 << 20
O_LIMIT = (1 << 31) - 1

MAGIC = (1, 0)
HEADER_BITS = 2 + 16 + 24 + 24 + 16


class BinModel:
    """Adaptive binary model; counts start at one (Laplace) and halve when large."""

    __slots__ = ("c0", "c1")

    def __init__(self, c0: int = 1, c1: int = 1):
        self.c0, self.c1 = c0, c1

    def p0(self) -> float:
        return self.c0 / (self.c0 + self.c1)

    def update(self, bit: int) -> None:
        if bit:
            self.c1 += 1
        else:
            self.c0 += 1
        if self.c0 + self.c1 > MAX_TOTAL:
            self.c0 = (self.c0 + 1) >> 1
            self.c1 = (self.c1 + 1) >> 1


# The coder itself runs under numba. Models are rows of a counts array
# [n_models, 2]; encoder state is [low, high, pending, n_out] and decoder
# state is [low, high, value, pos, n_bits, status].

_OK, _TRUNCATED, _RUNAWAY = 0, 1, 2


@numba.njit(cache=True)
def _update(counts, m, bit):
    counts[m, bit] += 1
    if counts[m, 0] + counts[m, 1] > MAX_TOTAL:
        counts[m, 0] = (counts[m, 0] + 1) >> 1
        counts[m, 1] = (counts[m, 1] + 1) >> 1


@numba.njit(cache=True)
def _emit(st, out, bit):
    out[st[3]] = bit
    st[3] += 1
    while st[2] > 0:
        out[st[3]] = 1 - bit
        st[3] += 1
        st[2] -= 1


@numba.njit(cache=True)
def _enc_bin(st, out, counts, m, bit):
    low, high = st[0], st[1]
    c0 = counts[m, 0]
    split = low + (high - low + 1) * c0 // (c0 + counts[m, 1]) - 1
    if bit:
        low = split + 1
    else:
        high = split
    _update(counts, m, bit)
    while True:
        if high < HALF:
            st[0], st[1] = low, high
            _emit(st, out, 0)
        elif low >= HALF:
            st[0], st[1] = low, high
            _emit(st, out, 1)
            low -= HALF
            high -= HALF
        elif low >= QUARTER and high < HALF + QUARTER:
            st[2] += 1
            low -= QUARTER
            high -= QUARTER
        else:
            break
        low = low << 1
        high = (high << 1) | 1
    st[0], st[1] = low, high


@numba.njit(cache=True)
def _enc_finish(st, out):
    # two more bits pin a value inside the final interval
    st[2] += 1
    _emit(st, out, 0 if st[0] < QUARTER else 1)


@numba.njit(cache=True)
def _enc_golomb(st, out, counts, pbase, sbase, k):
    n = 0
    while (k + 1) >> (n + 1):
        n += 1
    for i in range(n):
        _enc_bin(st, out, counts, pbase + i, 0)
    _enc_bin(st, out, counts, pbase + n, 1)
    rest = k + 1 - (1 << n)
    for i in range(n - 1, -1, -1):
        _enc_bin(st, out, counts, sbase + i, (rest >> i) & 1)


@numba.njit(cache=True)
def _next_bit(st, bits):
    p = st[3]
    st[3] += 1
    if p < st[4]:
        return np.int64(bits[p])
    # the decoder legitimately reads up to PRECISION - 2 bits past the end
    if p >= st[4] + PRECISION:
        st[5] = _TRUNCATED
    return np.int64(0)


@numba.njit(cache=True)
def _dec_start(bits):
    st = np.zeros(6, dtype=np.int64)
    st[1] = TOP
    st[4] = len(bits)
    for _ in range(PRECISION):
        st[2] = (st[2] << 1) | _next_bit(st, bits)
    return st


@numba.njit(cache=True)
def _dec_bin(st, bits, counts, m):
    low, high, value = st[0], st[1], st[2]
    c0 = counts[m, 0]
    split = low + (high - low + 1) * c0 // (c0 + counts[m, 1]) - 1
    if value <= split:
        bit = 0
        high = split
    else:
        bit = 1
        low = split + 1
    _update(counts, m, bit)
    while True:
        if high < HALF:
            pass
        elif low >= HALF:
            low -= HALF
            high -= HALF
            value -= HALF
        elif low >= QUARTER and high < HALF + QUARTER:
            low -= QUARTER
            high -= QUARTER
            value -= QUARTER
        else:
            break
        low = low << 1
        high = (high << 1) | 1
        value = (value << 1) | _next_bit(st, bits)
    st[0], st[1], st[2] = low, high, value
    return bit


@numba.njit(cache=True)
def _dec_golomb(st, bits, counts, pbase, sbase, max_prefix):
    n = 0
    while _dec_bin(st, bits, counts, pbase + n) == 0:
        n += 1
        if n > max_prefix or st[5] != _OK:
            if st[5] == _OK:
                st[5] = _RUNAWAY
            return -1
    rest = 0
    for i in range(n - 1, -1, -1):
        rest |= _dec_bin(st, bits, counts, sbase + i) << i
    return (1 << n) + rest - 1


def _out_buffer(n_bins: int) -> np.ndarray:
    # a single bin never costs more than log2(MAX_TOTAL + 1) < 17 bits
    return np.empty(17 * n_bins + 2 * PRECISION, dtype=np.uint8)


@numba.njit(cache=True)
def _encode_plain(symbols, counts, out):
    st = np.zeros(4, dtype=np.int64)
    st[1] = TOP
    for s in symbols:
        _enc_bin(st, out, counts, 0, s)
    _enc_finish(st, out)
    return st[3]


@numba.njit(cache=True)
def _decode_plain(bits, n, counts):
    st = _dec_start(bits)
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        out[i] = _dec_bin(st, bits, counts, 0)
    return out, st[5]


def _raise_status(status: int):
    if status == _TRUNCATED:
        raise TruncatedStream("arithmetic decoder ran past the end of the stream")
    if status == _RUNAWAY:
        raise ChecksumMismatch("Exp-Golomb prefix too long: corrupt stream")


def ac_encode(symbols, model: BinModel | None = None) -> np.ndarray:
    """Code a bit sequence under one adaptive model (updated in place)."""
    model = BinModel() if model is None else model
    sym = np.asarray(symbols, dtype=np.uint8).ravel()
    counts = np.array([[model.c0, model.c1]], dtype=np.int64)
    out = _out_buffer(len(sym))
    n = _encode_plain(sym, counts, out)
    model.c0, model.c1 = int(counts[0, 0]), int(counts[0, 1])
    return out[:n].copy()


def ac_decode(bits, n: int, model: BinModel | None = None) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    model = BinModel() if model is None else model
    counts = np.array([[model.c0, model.c1]], dtype=np.int64)
    out, status = _decode_plain(np.asarray(bits, dtype=np.uint8), n, counts)
    _raise_status(status)
    model.c0, model.c1 = int(counts[0, 0]), int(counts[0, 1])
    return out


# --- Exp-Golomb sections ---------------------------------------------------

# context layout: [significance, prefix slots..., suffix slots...]
_MAX_PREFIX = 40
_SIG, _PBASE, _SBASE = 0, 1, 2 + _MAX_PREFIX
_N_CTX = 3 + 2 * _MAX_PREFIX


def exp_golomb_bits(k: int) -> list[int]:
    """Plain order-0 Exp-Golomb binarisation of k >= 0."""
    n = (k + 1).bit_length() - 1
    return [0] * n + [1] + [((k + 1) >> i) & 1 for i in range(n - 1, -1, -1)]


def signed_to_code(v: int) -> int:
    return 2 * v - 1 if v > 0 else -2 * v


def code_to_signed(k: int) -> int:
    return (k + 1) // 2 if k & 1 else -(k // 2)


@numba.njit(cache=True)
def _encode_codes(codes, out):
    counts = np.ones((_N_CTX, 2), dtype=np.int64)
    st = np.zeros(4, dtype=np.int64)
    st[1] = TOP
    for k in codes:
        _enc_golomb(st, out, counts, _PBASE, _SBASE, k)
    _enc_finish(st, out)
    return st[3]


@numba.njit(cache=True)
def _encode_sparse(flat, out):
    counts = np.ones((_N_CTX, 2), dtype=np.int64)
    st = np.zeros(4, dtype=np.int64)
    st[1] = TOP
    for v in flat:
        _enc_bin(st, out, counts, _SIG, 1 if v != 0 else 0)
    for v in flat:
        if v != 0:
            _enc_golomb(st, out, counts, _PBASE, _SBASE, v - 1)
    _enc_finish(st, out)
    return st[3]


@numba.njit(cache=True)
def _decode_codes(bits, n, max_prefix):
    counts = np.ones((_N_CTX, 2), dtype=np.int64)
    st = _dec_start(bits)
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        out[i] = _dec_golomb(st, bits, counts, _PBASE, _SBASE, max_prefix)
        if st[5] != _OK:
            break
    return out, st[5]


@numba.njit(cache=True)
def _decode_sparse(bits, n, max_prefix):
    counts = np.ones((_N_CTX, 2), dtype=np.int64)
    st = _dec_start(bits)
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        out[i] = _dec_bin(st, bits, counts, _SIG)
    for i in range(n):
        if st[5] != _OK:
            break
        if out[i]:
            out[i] = _dec_golomb(st, bits, counts, _PBASE, _SBASE, max_prefix) + 1
    return out, st[5]


def encode_signed(values) -> np.ndarray:
    """Signed Exp-Golomb + adaptive arithmetic coding of an integer sequence."""
    v = np.asarray(values, dtype=np.int64).ravel()
    codes = np.where(v > 0, 2 * v - 1, -2 * v)
    n_bins = int(np.sum(2 * np.floor(np.log2(codes + 1)).astype(np.int64) + 1))
    out = _out_buffer(n_bins)
    return out[: _encode_codes(codes, out)].copy()


def decode_signed(bits, n: int, max_abs: int = Z_LIMIT) -> np.ndarray:
    max_prefix = (2 * max_abs + 1).bit_length()
    codes, status = _decode_codes(np.asarray(bits, dtype=np.uint8), n, max_prefix)
    _raise_status(status)
    return np.where(codes & 1, (codes + 1) // 2, -(codes // 2))


def encode_sparse(values) -> np.ndarray:
    """Significance map, then Exp-Golomb of (magnitude - 1) for nonzero entries."""
    v = np.asarray(values, dtype=np.int64).ravel()
    nz = v[v != 0]
    n_bins = v.size + int(np.sum(2 * np.floor(np.log2(nz)).astype(np.int64) + 1))
    out = _out_buffer(n_bins)
    return out[: _encode_sparse(v, out)].copy()


def decode_sparse(bits, n: int, max_value: int = O_LIMIT) -> np.ndarray:
    codes, status = _decode_sparse(np.asarray(bits, dtype=np.uint8), n, max_value.bit_length())
    _raise_status(status)
    return codes


# --- payload ---------------------------------------------------------------


@dataclass
class AuxPayload:
    z: np.ndarray  # int64 [1, L, L]
    O: np.ndarray  # int64 [C, H, W], nonnegative magnitudes

    def __eq__(self, other):
        return (
            isinstance(other, AuxPayload)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.O, other.O)
            and self.z.shape == other.z.shape
            and self.O.shape == other.O.shape
        )


@dataclass(frozen=True)
class PayloadHeader:
    m: int
    z_bits: int
    o_bits: int
    crc: int

    @property
    def total_bits(self) -> int:
        return HEADER_BITS + self.z_bits + self.o_bits


def payload_crc(z: np.ndarray, O: np.ndarray) -> int:
    """CRC-16/CCITT (init 0xFFFF) over int32-LE bytes of z then O."""
    data = np.asarray(z, dtype="<i4").tobytes() + np.asarray(O, dtype="<i4").tobytes()
    return binascii.crc_hqx(data, 0xFFFF)


def int_to_bits(value: int, width: int) -> np.ndarray:
    if value < 0 or value >= (1 << width):
        raise RangeExceeded(f"{value} does not fit in {width} bits")
    return np.array([(value >> i) & 1 for i in range(width - 1, -1, -1)], dtype=np.uint8)


def bits_to_int(bits) -> int:
    v = 0
    for b in np.asarray(bits).tolist():
        v = (v << 1) | int(b)
    return v


def encode_payload(p: AuxPayload) -> np.ndarray:
    """Header (magic, M, |z section|, |O section|, CRC-16) + z section + O section."""
    z = np.asarray(p.z, dtype=np.int64)
    O = np.asarray(p.O, dtype=np.int64)
    if z.size == 0 or z.size >= (1 << 16):
        raise RangeExceeded(f"M = {z.size} does not fit the 16-bit header field")
    if np.any(np.abs(z) > Z_LIMIT):
        raise RangeExceeded(f"|z| up to {int(np.abs(z).max())} exceeds {Z_LIMIT}")
    if np.any(O < 0) or np.any(O > O_LIMIT):
        raise RangeExceeded("overflow magnitudes must lie in [0, 2^31)")
    zs = encode_signed(z)
    os_ = encode_sparse(O)
    head = np.concatenate([
        np.array(MAGIC, dtype=np.uint8),
        int_to_bits(z.size, 16),
        int_to_bits(len(zs), 24),
        int_to_bits(len(os_), 24),
        int_to_bits(payload_crc(z, O), 16),
    ])
    return np.concatenate([head, zs, os_])


def read_header(bits) -> PayloadHeader:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) < HEADER_BITS:
        raise TruncatedStream(f"stream of {len(bits)} bits is shorter than the header")
    if tuple(bits[:2].tolist()) != MAGIC:
        raise MalformedHeader("bad payload magic")
    m = bits_to_int(bits[2:18])
    zl = bits_to_int(bits[18:42])
    ol = bits_to_int(bits[42:66])
    crc = bits_to_int(bits[66:82])
    return PayloadHeader(m, zl, ol, crc)


def decode_payload(bits, image_shape, map_side: int | None = None) -> AuxPayload:
    """Inverse of :func:`encode_payload`; trailing bits after the O section are ignored.

    ``image_shape`` is (C, H, W) of the overflow map; ``map_side`` if given
    is checked against the header's M before anything else is decoded.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    h = read_header(bits)
    side = int(round(np.sqrt(h.m)))
    if side * side != h.m or h.m == 0:
        raise MalformedHeader(f"header M = {h.m} is not a square")
    if map_side is not None and side != map_side:
        raise MalformedHeader(f"header M = {h.m} does not match map side {map_side}")
    if h.total_bits > len(bits):
        raise TruncatedStream(f"header announces {h.total_bits} bits, stream has {len(bits)}")
    zs = bits[HEADER_BITS : HEADER_BITS + h.z_bits]
    os_ = bits[HEADER_BITS + h.z_bits : h.total_bits]

    z = decode_signed(zs, h.m).reshape(1, side, side)
    O = decode_sparse(os_, int(np.prod(image_shape))).reshape(tuple(image_shape))
    if payload_crc(z, O) != h.crc:
        raise ChecksumMismatch("payload CRC mismatch")
    return AuxPayload(z, O)


def section_lengths(bits) -> tuple[int, int, int]:
    """(header, z section, O section) bit counts of an encoded payload."""
    h = read_header(bits)
    return HEADER_BITS, h.z_bits, h.o_bits


# --- byte packing ----------------------------------------------------------


def pack_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, n: int) -> np.ndarray:
    out = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if n > len(out):
        raise LengthMismatch(f"{n} bits requested from {len(out)} available")
    return out[:n]


def check_shapes(p: AuxPayload, image_shape, map_side):
    if p.O.shape != tuple(image_shape) or p.z.shape != (1, map_side, map_side):
        raise ShapeMismatch("payload shapes do not match geometry")
