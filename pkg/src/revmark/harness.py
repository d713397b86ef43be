"""Quality metrics, image I/O and the robustness sweep.

Sweep CSV columns (one row per image x distortion, in input order):

    image, distortion, accuracy, psnr, ssim, aux_bits, z_bits, o_bits,
    recovered, error

Wall-clock timings (embed / extract / recover, seconds, monotonic clock)
go to a ``<csv>.timings.csv`` sidecar so the main file stays byte-identical
across reruns with the same seed.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import noisepool, pipeline
from .errors import LengthMismatch, RevmarkError, ShapeMismatch
from .iflow import IIWNParams

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


# --- metrics ---------------------------------------------------------------


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * math.log10(255.0**2 / mse)


def _gauss_window(sigma: float = 1.5, size: int = 11) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    h, w = img.shape
    rows = sum(g[t] * img[t : h - k + 1 + t, :] for t in range(k))
    return sum(g[t] * rows[:, t : w - k + 1 + t] for t in range(k))


def _ssim_plane(x: np.ndarray, y: np.ndarray, L: float = 255.0) -> float:
    g = _gauss_window()
    if min(x.shape) < len(g):
        raise ShapeMismatch(f"SSIM needs at least {len(g)}x{len(g)} pixels, got {x.shape}")
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        return _ssim_plane(a, b)
    if a.ndim == 3:
        return float(np.mean([_ssim_plane(x, y) for x, y in zip(a, b)]))
    raise ShapeMismatch(f"expected [H,W] or [C,H,W], got {a.shape}")


def bit_accuracy(a, b) -> float:
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} vs {b.size} bits")
    if a.size == 0:
        raise LengthMismatch("empty bit vectors")
    return float(np.mean((a != 0) == (b != 0)))


# --- image I/O -------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """8-bit gray or RGB file -> int64 [C,H,W]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        a = np.asarray(im, dtype=np.int64)
    return a[None] if a.ndim == 2 else a.transpose(2, 0, 1).copy()


def save_image(path, img) -> None:
    """[C,H,W] or [H,W] integers in [0,255] -> lossless file (format from suffix)."""
    a = np.asarray(img)
    if np.any(a < 0) or np.any(a > 255):
        raise ValueError("pixel values outside [0, 255]")
    a = a.astype(np.uint8)
    if a.ndim == 3:
        a = a[0] if a.shape[0] == 1 else a.transpose(1, 2, 0)
    Image.fromarray(a).save(path)


def list_images(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# --- sweep -----------------------------------------------------------------


@dataclass
class EvalRow:
    image: str
    distortion: str
    accuracy: float | str = ""
    psnr: float | str = ""
    ssim: float | str = ""
    aux_bits: int | str = ""
    z_bits: int | str = ""
    o_bits: int | str = ""
    recovered: bool | str = ""
    error: str = ""


ROW_FIELDS = tuple(EvalRow.__dataclass_fields__)
TIMING_FIELDS = ("image", "distortion", "embed_s", "extract_s", "recover_s")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6f}"
    return str(v)


def _row_rng(seed: int, i: int, j: int) -> np.random.Generator:
    return np.random.default_rng([seed, i, j])


def sweep_rows(theta: IIWNParams, images: list, grid: list, seed: int = 0):
    """Yield (EvalRow, timings) for each (image, distortion) pair.

    ``images`` is a list of (name, [C,H,W] array); ``grid`` a list of specs.
    """
    specs = [noisepool.parse_spec(g) if isinstance(g, str) else g for g in grid]
    for i, (name, cover) in enumerate(images):
        for j, spec in enumerate(specs):
            row = EvalRow(image=name, distortion=str(spec))
            tm = {"image": name, "distortion": str(spec), "embed_s": "", "extract_s": "",
                  "recover_s": ""}
            rng = _row_rng(seed, i, j)
            try:
                bits = rng.integers(0, 2, size=theta.geometry.n_bits).astype(np.uint8)
                t0 = time.perf_counter()
                art = pipeline.embed(cover, bits, theta)
                tm["embed_s"] = time.perf_counter() - t0
                stego = art.stego_final
                row.psnr = psnr(stego, cover)
                row.ssim = ssim(stego, cover)
                row.aux_bits, row.z_bits, row.o_bits = art.aux_bits, art.z_bits, art.o_bits
                noised = noisepool.apply(spec, stego, cover, rng, mode="eval")
                t0 = time.perf_counter()
                got, _ = pipeline.extract(noised, theta)
                tm["extract_s"] = time.perf_counter() - t0
                row.accuracy = bit_accuracy(got, bits)
                t0 = time.perf_counter()
                rec_cover, rec_bits = pipeline.recover(stego, theta)
                tm["recover_s"] = time.perf_counter() - t0
                row.recovered = bool(np.array_equal(rec_cover, np.asarray(cover).reshape(rec_cover.shape))
                                     and np.array_equal(rec_bits, bits))
            except RevmarkError as exc:
                row.error = exc.name
            yield row, tm


def run_sweep(theta: IIWNParams, images, grid, seed: int = 0, csv_path=None,
              timings: bool = True) -> list[EvalRow]:
    """Run the sweep; ``images`` is a directory or a list of (name, array)."""
    if isinstance(images, (str, Path)):
        images = [(p.name, load_image(p)) for p in list_images(images)]
    if isinstance(grid, str):
        grid = noisepool.parse_grid(grid)
    rows, times = [], []
    for row, tm in sweep_rows(theta, images, grid, seed):
        rows.append(row)
        times.append(tm)
    if csv_path is not None:
        write_rows(rows, csv_path)
        if timings:
            tpath = Path(str(csv_path) + ".timings.csv")
            with open(tpath, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=TIMING_FIELDS)
                w.writeheader()
                for tm in times:
                    w.writerow({k: _fmt(v) for k, v in tm.items()})
    return rows


def write_rows(rows: list[EvalRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_fmt(v) for v in asdict(r).values()])
