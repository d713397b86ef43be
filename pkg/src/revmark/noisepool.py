"""Channel distortions, each in two flavours.

``eval``  acts on integer images ([C,H,W] or [N,C,H,W]) and returns a valid
          8-bit image (rounded and clipped).
``train`` acts on autodiff Vars [N,C,H,W] and stays differentiable; rounding
          goes through ``round_ste`` and nothing is clipped.

Specs have a compact text form: "jpeg:50", "blur:1.5:7", "gn:0.05",
"sp:0.1", "median:5", "dropout:0.3", "id".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import numerics as nx
from .errors import BadParams, MissingCover, ShapeMismatch

KINDS = ("jpeg", "blur", "gn", "sp", "median", "dropout", "id")

# ITU-T T.81 Annex K, table K.1 (luminance)
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        validate(self)

    def __str__(self):
        if self.kind == "id":
            return "id"
        return ":".join([self.kind] + [_fmt(p) for p in self.params])


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def default_blur_taps(sigma: float) -> int:
    return max(3, 2 * math.ceil(3 * sigma) + 1)


def validate(spec: DistortionSpec) -> None:
    k, p = spec.kind, spec.params
    if k not in KINDS:
        raise BadParams(f"unknown distortion {k!r}")
    try:
        if k == "jpeg":
            (q,) = p
            ok = float(q).is_integer() and 1 <= q <= 100
        elif k == "blur":
            sigma, taps = p
            ok = sigma > 0 and float(taps).is_integer() and taps >= 3 and taps % 2 == 1
        elif k == "gn":
            (s,) = p
            ok = s >= 0
        elif k in ("sp", "dropout"):
            (prob,) = p
            ok = 0 <= prob <= 1
        elif k == "median":
            (w,) = p
            ok = float(w).is_integer() and w >= 1 and w % 2 == 1
        else:
            ok = p == ()
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise BadParams(f"bad parameters {p!r} for {k}")


def parse_spec(text: str) -> DistortionSpec:
    parts = text.strip().split(":")
    kind = parts[0].lower()
    aliases = {"identity": "id", "gaussian_blur": "blur", "gaussian_noise": "gn",
               "salt_pepper": "sp", "median_filter": "median"}
    kind = aliases.get(kind, kind)
    try:
        nums = [float(x) for x in parts[1:]]
    except ValueError as exc:
        raise BadParams(f"cannot parse distortion {text!r}") from exc
    if kind == "jpeg" and len(nums) == 1:
        return DistortionSpec("jpeg", (int(nums[0]),))
    if kind == "blur" and len(nums) == 1:
        return DistortionSpec("blur", (nums[0], default_blur_taps(nums[0])))
    if kind == "blur" and len(nums) == 2:
        return DistortionSpec("blur", (nums[0], int(nums[1])))
    if kind == "median" and len(nums) == 1:
        return DistortionSpec("median", (int(nums[0]),))
    return DistortionSpec(kind, tuple(nums))


def parse_grid(text: str) -> list[DistortionSpec]:
    return [parse_spec(t) for t in text.split(",") if t.strip()]


# --- helpers ---------------------------------------------------------------


def _batched(img) -> tuple[np.ndarray, bool]:
    a = np.asarray(img)
    if a.ndim == 2:
        return a[None, None], True
    if a.ndim == 3:
        return a[None], True
    if a.ndim == 4:
        return a, False
    raise ShapeMismatch(f"expected an image, got shape {a.shape}")


def _unbatch(a: np.ndarray, single: bool, like) -> np.ndarray:
    out = a[0] if single else a
    return out.reshape(np.shape(like))


def to_uint8_range(x: np.ndarray) -> np.ndarray:
    return np.clip(nx.round_half_away(x), 0, 255).astype(np.int64)


# --- gaussian blur ---------------------------------------------------------


def gaussian_kernel(sigma: float, taps: int) -> np.ndarray:
    """1-D Gaussian truncated to ``taps`` samples and normalised to sum 1."""
    if sigma <= 0 or taps < 1 or taps % 2 == 0:
        raise BadParams(f"bad blur parameters sigma={sigma}, taps={taps}")
    r = taps // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _reflect_pad_np(a: np.ndarray, r: int) -> np.ndarray:
    h, w = a.shape[-2:]
    return a[..., nx.reflect_index(h, r), :][..., nx.reflect_index(w, r)]


def blur_real(img, sigma: float, taps: int) -> np.ndarray:
    """Separable blur with reflect padding, before any rounding."""
    a, single = _batched(img)
    g = gaussian_kernel(sigma, taps)
    r = taps // 2
    p = _reflect_pad_np(a.astype(np.float64), r)
    h, w = a.shape[-2:]
    rows = sum(g[t] * p[..., t : t + h, :] for t in range(taps))
    out = sum(g[t] * rows[..., :, t : t + w] for t in range(taps))
    return _unbatch(out, single, img)


def gaussian_blur(img, sigma: float, taps: int | None = None, mode: str = "eval", rnd=None):
    taps = default_blur_taps(sigma) if taps is None else int(taps)
    if taps < 3 or taps % 2 == 0:
        raise BadParams("blur kernel size must be odd and >= 3")
    if mode == "eval":
        return to_uint8_range(blur_real(img, sigma, taps))
    return _blur_train(img, sigma, taps)


def _blur_train(x, sigma: float, taps: int) -> nx.Var:
    x = nx.as_var(x)
    n, c, h, w = x.shape
    g = gaussian_kernel(sigma, taps)
    weight = np.outer(g, g)[None, None]
    flat = nx.reshape(x, (n * c, 1, h, w))
    padded = nx.pad_reflect(flat, taps // 2)
    y = nx.conv2d(padded, weight, np.zeros(1), stride=1, padding=0)
    return nx.reshape(y, (n, c, h, w))


# --- median ----------------------------------------------------------------


def median_filter(img, w: int, mode: str = "eval", rnd=None):
    if w < 1 or w % 2 == 0:
        raise BadParams("median window must be odd")
    if mode == "eval":
        a, single = _batched(img)
        out = np.stack([_kernels.median_filter(np.ascontiguousarray(im, dtype=np.int64), w) for im in a])
        return _unbatch(out, single, img)
    # non-differentiable; a blur of comparable support stands in during training
    if w == 1:
        return nx.as_var(img)
    return _blur_train(img, w / 6.0, w)


# --- pixel noise -----------------------------------------------------------


def pixel_noise(img, spec: DistortionSpec, cover=None, rng: np.random.Generator | None = None,
                mode: str = "eval"):
    rng = np.random.default_rng() if rng is None else rng
    train = mode != "eval"
    shape = nx.as_var(img).shape if train else np.shape(img)
    if spec.kind == "gn":
        noise = rng.normal(0.0, spec.params[0] * 255.0, size=shape)
        if train:
            return nx.as_var(img) + noise
        return to_uint8_range(np.asarray(img, dtype=np.float64) + noise)
    if spec.kind == "sp":
        hit = rng.random(shape) < spec.params[0]
        salt = rng.random(shape) < 0.5
        value = np.where(salt, 255.0, 0.0)
        if train:
            return nx.as_var(img) * (1.0 - hit) + hit * value
        return np.where(hit, value, np.asarray(img)).astype(np.int64)
    if spec.kind == "dropout":
        if cover is None:
            raise MissingCover("dropout needs the cover image")
        hit = rng.random(shape) < spec.params[0]
        if train:
            return nx.as_var(img) * (1.0 - hit) + nx.as_var(cover) * hit
        return np.where(hit, np.asarray(cover), np.asarray(img)).astype(np.int64)
    raise BadParams(f"{spec.kind} is not a pixel-noise distortion")


# --- JPEG ------------------------------------------------------------------


def quant_table(quality: int) -> np.ndarray:
    """Annex-K luminance table under the libjpeg quality scaling."""
    if not 1 <= quality <= 100:
        raise BadParams(f"JPEG quality {quality} outside [1, 100]")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((LUMA_TABLE * scale + 50) // 100, 1, 255)


def _pad8(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[-2:]
    pad = [(0, 0)] * (a.ndim - 2) + [(0, (-h) % 8), (0, (-w) % 8)]
    return np.pad(a, pad, mode="reflect")


def jpeg_transcode(img, quality: int, mode: str = "eval", rnd=None):
    q = quant_table(int(quality)).astype(np.float64)
    if mode == "eval":
        a, single = _batched(img)
        h, w = a.shape[-2:]
        p = _pad8(a.astype(np.float64))
        tiles = np.tile(q, (p.shape[2] // 8, p.shape[3] // 8))
        coef = nx.blockwise_dct(p - 128.0)
        deq = nx.round_half_away(coef / tiles) * tiles
        out = nx.blockwise_dct(deq, inverse=True) + 128.0
        return _unbatch(to_uint8_range(out[..., :h, :w]), single, img)
    rnd = rnd or (lambda v: nx.round_ste(v, "deterministic"))
    x = nx.as_var(img)
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ShapeMismatch("train-mode JPEG needs dimensions divisible by 8")
    tiles = np.broadcast_to(np.tile(q, (x.shape[2] // 8, x.shape[3] // 8)), x.shape).copy()
    coef = nx.block_dct(x - 128.0)
    deq = rnd(coef * (1.0 / tiles)) * tiles
    return rnd(nx.block_dct(deq, inverse=True) + 128.0)


# --- dispatch --------------------------------------------------------------


def apply(spec: DistortionSpec | str, stego, cover=None, rng: np.random.Generator | None = None,
          mode: str = "eval", rnd=None):
    """Apply one distortion. ``rnd`` is the rounding rule used in train mode."""
    if isinstance(spec, str):
        spec = parse_spec(spec)
    if mode not in ("eval", "train"):
        raise BadParams(f"unknown mode {mode!r}")
    k = spec.kind
    if k == "id":
        return np.asarray(stego).astype(np.int64) if mode == "eval" else nx.as_var(stego)
    if k == "jpeg":
        return jpeg_transcode(stego, spec.params[0], mode, rnd)
    if k == "blur":
        return gaussian_blur(stego, spec.params[0], int(spec.params[1]), mode)
    if k == "median":
        return median_filter(stego, int(spec.params[0]), mode)
    return pixel_noise(stego, spec, cover, rng, mode)


DEFAULT_POOL = ("jpeg:50", "blur:1.0", "gn:0.02", "sp:0.02", "median:3", "dropout:0.3")
