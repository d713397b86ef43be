"""Integer invertible watermark network.

A stack of integer coupling layers maps (cover image, watermark map) to
(overflowed stego, latent z). Each layer is

    s1 = r1 + round(U(r2))
    s2 = r2 * round(exp(sigmoid(S(s1)))) + round(Q(s1))

and is undone by exact integer algebra. The same code runs the training
graph (stochastic rounding, real division) and bit-exact inference.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import (
    CheckpointError,
    InexactDivision,
    LengthMismatch,
    NumericOverflow,
    ShapeMismatch,
)
from .subnets import SubnetConfig, SubnetParams, blocks_for, init_subnet, subnet_forward

# integers above this are no longer exactly representable once they pass
# through float64 arithmetic; we refuse anything close to it
SAFE_INT = float(2**50)

# S's final bias at init: round(exp(sigmoid(-2))) = round(1.126) = 1
S_INIT_BIAS = -2.0


@dataclass(frozen=True)
class Geometry:
    height: int
    width: int
    channels: int
    map_side: int
    n_layers: int = 2
    n_feat: int = 8

    def __post_init__(self):
        if self.height != self.width:
            raise ShapeMismatch("only square images are supported")
        if self.channels not in (1, 3):
            raise ShapeMismatch("channels must be 1 or 3")
        if self.n_layers < 1:
            raise ShapeMismatch("need at least one coupling layer")
        blocks_for(self.height, self.map_side)

    @property
    def n_bits(self) -> int:
        return self.map_side * self.map_side

    @property
    def n_blocks(self) -> int:
        return blocks_for(self.height, self.map_side)

    @property
    def image_shape(self) -> tuple:
        return (self.channels, self.height, self.width)

    @property
    def map_shape(self) -> tuple:
        return (1, self.map_side, self.map_side)

    def configs(self) -> dict[str, SubnetConfig]:
        nb, nf, c = self.n_blocks, self.n_feat, self.channels
        # image-branch inputs live on the pixel scale; map inputs are ~unit
        down = dict(n_feat=nf, n_blocks=nb, direction="down", in_channels=c, out_channels=1,
                    in_shift=127.5, in_scale=1.0 / 127.5)
        return {
            "U": SubnetConfig(n_feat=nf, n_blocks=nb, direction="up", in_channels=1, out_channels=c),
            "S": SubnetConfig(**down),
            "Q": SubnetConfig(**down),
        }


@dataclass
class CouplingParams:
    U: SubnetParams
    S: SubnetParams
    Q: SubnetParams


@dataclass
class IIWNParams:
    geometry: Geometry
    layers: list

    def named(self):
        for i, layer in enumerate(self.layers):
            for key in ("U", "S", "Q"):
                yield from getattr(layer, key).named(f"layer{i}.{key}.")

    def parameters(self) -> list:
        return [v for _, v in self.named()]


def init_iiwn(geo: Geometry, seed: int = 0, zero_final: bool = True) -> IIWNParams:
    """Zero final convs give the identity flow; ``zero_final=False`` is the
    training start (random finals, so U and Q are not stuck at a saddle)."""
    rng = np.random.default_rng(seed)
    cfgs = geo.configs()
    layers = []
    for _ in range(geo.n_layers):
        parts = {k: init_subnet(cfgs[k], rng, zero_final=zero_final) for k in ("U", "S", "Q")}
        parts["S"].final[1].value[:] = S_INIT_BIAS
        layers.append(CouplingParams(**parts))
    return IIWNParams(geo, layers)


# --- watermark map ---------------------------------------------------------


def bits_to_map(bits) -> np.ndarray:
    """Row-major bits -> [1, L, L] int64 map with 0 -> -1 and 1 -> +1."""
    b = np.asarray(bits).astype(np.int64).ravel()
    side = int(round(np.sqrt(b.size)))
    if side * side != b.size or side == 0:
        raise LengthMismatch(f"{b.size} bits do not fill a square map")
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    return (2 * b - 1).reshape(1, side, side)


def map_to_bits(m) -> np.ndarray:
    return (np.asarray(m, dtype=np.float64).ravel() >= 0).astype(np.uint8)


# --- coupling --------------------------------------------------------------

Rounder = Callable[[nx.Var], nx.Var]


def make_rounder(mode: str, rng: np.random.Generator | None = None) -> Rounder:
    return lambda v: nx.round_ste(v, mode, rng)


def _subnets(p: CouplingParams, geo: Geometry):
    cfgs = geo.configs()
    U = lambda x: subnet_forward(x, p.U, cfgs["U"])  # noqa: E731
    S = lambda x: subnet_forward(x, p.S, cfgs["S"])  # noqa: E731
    Q = lambda x: subnet_forward(x, p.Q, cfgs["Q"])  # noqa: E731
    return U, S, Q


def scale_factor(s_out: nx.Var, rnd: Rounder) -> nx.Var:
    return rnd(nx.exp(nx.sigmoid(s_out)))


def _envelope(*vals):
    for v in vals:
        a = v.value if isinstance(v, nx.Var) else v
        if not np.all(np.isfinite(a)) or np.any(np.abs(a) > SAFE_INT):
            raise NumericOverflow("intermediate value left the exact-integer envelope")


def coupling_forward_graph(r1, r2, p: CouplingParams, geo: Geometry, rnd: Rounder):
    """Batched forward of one layer on Vars ([N,C,H,W], [N,1,L,L])."""
    U, S, Q = _subnets(p, geo)
    s1 = r1 + rnd(U(r2))
    factor = scale_factor(S(s1), rnd)
    s2 = r2 * factor + rnd(Q(s1))
    return s1, s2


def coupling_inverse_graph(s1, s2, p: CouplingParams, geo: Geometry, rnd: Rounder):
    """Real-valued inverse of one layer (training and lossy extraction)."""
    U, S, Q = _subnets(p, geo)
    factor = scale_factor(S(s1), rnd)
    r2 = (s2 - rnd(Q(s1))) / factor
    r1 = s1 - rnd(U(r2))
    return r1, r2


def _batched(x, ndim_single: int) -> np.ndarray:
    a = np.asarray(x)
    return a[None] if a.ndim == ndim_single else a


def coupling_forward(r1, r2, p: CouplingParams, geo: Geometry, mode="deterministic", rng=None):
    """Integer forward of one layer. Arrays may be single ([C,H,W]) or batched."""
    single = np.ndim(r1) == 3
    a, b = _batched(r1, 3), _batched(r2, 3)
    with nx.no_grad():
        s1, s2 = coupling_forward_graph(nx.Var(a), nx.Var(b), p, geo, make_rounder(mode, rng))
    _envelope(s1, s2)
    out1, out2 = s1.value, s2.value
    if mode == "deterministic":
        out1, out2 = out1.astype(np.int64), out2.astype(np.int64)
    return (out1[0], out2[0]) if single else (out1, out2)


def coupling_inverse(s1, s2, p: CouplingParams, geo: Geometry, exact: bool = True):
    """Inverse of one layer.

    With ``exact`` the inputs must be integers and the division by the
    scale factor must leave no remainder, otherwise :class:`InexactDivision`.
    Without it the division is real-valued and never fails.
    """
    single = np.ndim(s1) == 3
    a, b = _batched(s1, 3), _batched(s2, 3)
    rnd = make_rounder("deterministic")
    U, S, Q = _subnets(p, geo)
    with nx.no_grad():
        sv = nx.Var(a)
        factor = scale_factor(S(sv), rnd).value
        q = rnd(Q(sv)).value
        _envelope(factor, q)
        if exact:
            num = np.asarray(b, dtype=np.int64) - q.astype(np.int64)
            f = factor.astype(np.int64)
            quo, rem = np.divmod(num, f)
            if np.any(rem != 0):
                raise InexactDivision(f"{int(np.count_nonzero(rem))} sites with nonzero remainder")
            r2 = quo.astype(np.float64)
        else:
            r2 = (np.asarray(b, dtype=np.float64) - q) / factor
        u = rnd(U(nx.Var(r2))).value
        r1 = np.asarray(a, dtype=np.float64) - u
    _envelope(r1, r2)
    if exact:
        r1, r2 = r1.astype(np.int64), r2.astype(np.int64)
    return (r1[0], r2[0]) if single else (r1, r2)


# --- full network ----------------------------------------------------------


def _check_geometry(x, shape, what):
    if tuple(np.shape(x)[-3:]) != shape:
        raise ShapeMismatch(f"{what} shape {np.shape(x)} does not match {shape}")


def iiwn_forward(cover, wm, theta: IIWNParams, mode="deterministic", rng=None):
    """(cover [C,H,W], wm map [1,L,L]) -> (overflowed stego, z), both int64."""
    geo = theta.geometry
    _check_geometry(cover, geo.image_shape, "cover")
    _check_geometry(wm, geo.map_shape, "watermark map")
    c = np.asarray(cover)
    if np.any(c < 0) or np.any(c > 255):
        raise ValueError("cover pixels must lie in [0, 255]")
    s1, s2 = np.asarray(cover, dtype=np.int64), np.asarray(wm, dtype=np.int64)
    for layer in theta.layers:
        s1, s2 = coupling_forward(s1, s2, layer, geo, mode, rng)
    return s1, s2


def iiwn_inverse(stego, z_hat, theta: IIWNParams, exact: bool = True):
    """Run the layers backwards.

    ``exact`` (lossless) expects the untouched integer stego and the true z
    and returns (cover, map) as int64. Otherwise the computation is the
    same with real division and returns (image estimate, map logits).
    """
    geo = theta.geometry
    _check_geometry(stego, geo.image_shape, "stego")
    _check_geometry(z_hat, geo.map_shape, "z")
    if exact:
        s1, s2 = np.asarray(stego), np.asarray(z_hat)
        if not (np.all(s1 == np.round(s1)) and np.all(s2 == np.round(s2))):
            raise InexactDivision("lossless inverse needs integer inputs")
        s1, s2 = s1.astype(np.int64), s2.astype(np.int64)
    else:
        s1, s2 = np.asarray(stego, dtype=np.float64), np.asarray(z_hat, dtype=np.float64)
    for layer in reversed(theta.layers):
        s1, s2 = coupling_inverse(s1, s2, layer, geo, exact=exact)
    return s1, s2


def forward_graph(cover, wm, theta: IIWNParams, rnd: Rounder):
    """Batched differentiable forward: Vars [N,C,H,W], [N,1,L,L]."""
    s1, s2 = nx.as_var(cover), nx.as_var(wm)
    for layer in theta.layers:
        s1, s2 = coupling_forward_graph(s1, s2, layer, theta.geometry, rnd)
    return s1, s2


def inverse_graph(stego, z_hat, theta: IIWNParams, rnd: Rounder):
    s1, s2 = nx.as_var(stego), nx.as_var(z_hat)
    for layer in reversed(theta.layers):
        s1, s2 = coupling_inverse_graph(s1, s2, layer, theta.geometry, rnd)
    return s1, s2


# --- checkpoint ------------------------------------------------------------

MAGIC = b"IIWN"
FORMAT_VERSION = 1
_GEO_FIELDS = ("height", "width", "channels", "map_side", "n_layers", "n_feat")


def save_checkpoint(theta: IIWNParams, path_or_file) -> None:
    """Write MAGIC, version, geometry, named float64 LE tensors, SHA-256."""
    geo = theta.geometry
    body = io.BytesIO()
    named = list(theta.named())
    body.write(struct.pack("<I", len(named)))
    for name, var in named:
        nb = name.encode()
        arr = np.ascontiguousarray(var.value, dtype="<f8")
        body.write(struct.pack("<H", len(nb)) + nb)
        body.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.write(arr.tobytes())
    payload = body.getvalue()
    head = MAGIC + struct.pack("<H", FORMAT_VERSION)
    head += struct.pack("<6I", *(getattr(geo, f) for f in _GEO_FIELDS))
    # per-subnet (N_f, N_d); identical across subnets here but kept explicit
    head += struct.pack("<II", geo.n_feat, geo.n_blocks)
    blob = head + payload
    blob += hashlib.sha256(payload).digest()
    if hasattr(path_or_file, "write"):
        path_or_file.write(blob)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(blob)


def load_checkpoint(path_or_file) -> IIWNParams:
    if hasattr(path_or_file, "read"):
        blob = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            blob = fh.read()
    head_len = 4 + 2 + 24 + 8
    if len(blob) < head_len + 32 or blob[:4] != MAGIC:
        raise CheckpointError("not an IIWN checkpoint")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    fields = struct.unpack_from("<6I", blob, 6)
    n_feat, n_blocks = struct.unpack_from("<II", blob, 30)
    payload, digest = blob[head_len:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("parameter checksum mismatch")
    try:
        geo = Geometry(**dict(zip(_GEO_FIELDS, fields)))
    except (ShapeMismatch, ValueError) as exc:
        raise CheckpointError(f"bad geometry: {exc}") from exc
    if n_feat != geo.n_feat or n_blocks != geo.n_blocks:
        raise CheckpointError("subnet geometry inconsistent with image geometry")
    theta = init_iiwn(geo, seed=0)
    slots = dict(theta.named())
    view = memoryview(payload)
    pos = 0
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    if count != len(slots):
        raise CheckpointError(f"expected {len(slots)} tensors, found {count}")
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + nl]).decode()
        pos += nl
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if name not in slots or tuple(slots[name].value.shape) != tuple(shape):
            raise CheckpointError(f"unexpected tensor {name} {shape}")
        slots[name].value[...] = np.frombuffer(view[pos : pos + size], dtype="<f8").reshape(shape)
        pos += size
    return theta
