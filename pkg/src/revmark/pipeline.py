"""Two-stage embedding, lossy extraction and lossless recovery.

embed:    forward map -> clip + overflow map -> code (z, O) -> PEE into the clip
extract:  inverse map on the received image with z = 0 (robust path)
recover:  PEE restore -> decode (z, O) -> un-clip -> exact inverse map

Recovery finishes by re-embedding the recovered (cover, bits) and
comparing with the received image. Embedding is deterministic and recover
inverts it, so a match proves the result; any mismatch means the image
was modified and is reported as ChecksumMismatch. Without this, a flip in
slack bits of the coded stream, or a change that survives the exact
division, could go unnoticed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import codec, rdh
from .errors import ChecksumMismatch, InconsistentMap, LengthMismatch, RevmarkError, ShapeMismatch
from .iflow import IIWNParams, bits_to_map, iiwn_forward, iiwn_inverse, map_to_bits


@dataclass
class StegoArtifacts:
    stego_final: np.ndarray
    stego_clipped: np.ndarray
    aux_bits: int
    header_bits: int
    z_bits: int
    o_bits: int
    overflow_count: int
    z_min: int
    z_max: int
    threshold: int


def build_overflow_map(stego_o):
    """(O, clipped): O holds |excursion| beyond [0, 255], zero elsewhere."""
    s = np.asarray(stego_o, dtype=np.int64)
    O = np.where(s > 255, s - 255, np.where(s < 0, -s, 0))
    return O, np.clip(s, 0, 255)


def reconstruct_overflowed(clipped, O):
    c = np.asarray(clipped, dtype=np.int64)
    O = np.asarray(O, dtype=np.int64)
    if c.shape != O.shape:
        raise ShapeMismatch(f"clipped {c.shape} vs overflow map {O.shape}")
    nz = O != 0
    if np.any(O < 0) or np.any(nz & (c != 0) & (c != 255)):
        raise InconsistentMap("nonzero overflow entry at an unsaturated pixel")
    mask255 = nz & (c == 255)
    mask0 = nz & (c == 0)
    return c + mask255 * O - mask0 * O


def _as_cover(cover, theta: IIWNParams) -> np.ndarray:
    a = np.asarray(cover)
    if a.ndim == 2:
        a = a[None]
    if a.shape != theta.geometry.image_shape:
        raise ShapeMismatch(f"image {a.shape} does not match model {theta.geometry.image_shape}")
    return a.astype(np.int64)


def embed(cover, bits, theta: IIWNParams) -> StegoArtifacts:
    geo = theta.geometry
    c = _as_cover(cover, theta)
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size != geo.n_bits:
        raise LengthMismatch(f"model carries {geo.n_bits} bits, got {b.size}")
    stego_o, z = iiwn_forward(c, bits_to_map(b), theta)
    O, clipped = build_overflow_map(stego_o)
    aux = codec.encode_payload(codec.AuxPayload(z, O))
    final = rdh.pee_embed(clipped, aux)
    hb, zb, ob = codec.section_lengths(aux)
    return StegoArtifacts(
        stego_final=final,
        stego_clipped=clipped,
        aux_bits=len(aux),
        header_bits=hb,
        z_bits=zb,
        o_bits=ob,
        overflow_count=int(np.count_nonzero(O)),
        z_min=int(z.min()),
        z_max=int(z.max()),
        threshold=rdh.read_rdh_header(final).T,
    )


def extract(noised, theta: IIWNParams):
    """Robust path: real-valued inverse with z = 0; returns (bits, logits)."""
    x = np.asarray(noised, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape != theta.geometry.image_shape:
        raise ShapeMismatch(f"image {x.shape} does not match model {theta.geometry.image_shape}")
    _, logits = iiwn_inverse(x, np.zeros(theta.geometry.map_shape), theta, exact=False)
    return map_to_bits(logits), logits


def recover(stego_final, theta: IIWNParams, verify: bool = True):
    """Lossless path; any tampering surfaces as a declared error."""
    geo = theta.geometry
    s = _as_cover(stego_final, theta)
    clipped, stream = rdh.pee_extract_restore(s)
    payload = codec.decode_payload(stream, geo.image_shape, geo.map_side)
    if len(stream) != codec.read_header(stream).total_bits:
        raise ChecksumMismatch("embedded stream length disagrees with payload header")
    stego_o = reconstruct_overflowed(clipped, payload.O)
    cover, wm = iiwn_inverse(stego_o, payload.z, theta, exact=True)
    if np.any(np.abs(wm) != 1) or np.any(cover < 0) or np.any(cover > 255):
        raise ChecksumMismatch("recovered values out of range")
    bits = map_to_bits(wm)
    if verify:
        try:
            again = embed(cover, bits, theta).stego_final
        except RevmarkError as exc:
            raise ChecksumMismatch(f"re-embedding failed: {exc.name}") from exc
        if not np.array_equal(again, s):
            raise ChecksumMismatch("re-embedding does not reproduce the received image")
    return cover, bits
