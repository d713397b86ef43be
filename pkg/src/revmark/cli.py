"""Command line: train / embed / extract / recover / eval.

Failures exit with status 1 and print ``<ErrorName>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, pipeline, training
from .data import cover_set
from .errors import BadParams, LengthMismatch, RevmarkError
from .iflow import load_checkpoint, save_checkpoint


def parse_bits(text: str, n: int) -> np.ndarray:
    """Hex string (MSB first) or a file holding '0'/'1' characters."""
    p = Path(text)
    if p.is_file():
        s = "".join(ch for ch in p.read_text() if not ch.isspace())
        if set(s) - {"0", "1"}:
            raise BadParams(f"{text}: bit file must contain only 0 and 1")
        bits = np.array([int(c) for c in s], dtype=np.uint8)
    else:
        h = text.lower().removeprefix("0x")
        try:
            val = int(h, 16)
        except ValueError as exc:
            raise BadParams(f"cannot parse bits {text!r} as hex or a file") from exc
        if len(h) * 4 != n:
            raise LengthMismatch(f"model carries {n} bits, hex gives {len(h) * 4}")
        bits = np.array([(val >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)
    if bits.size != n:
        raise LengthMismatch(f"model carries {n} bits, got {bits.size}")
    return bits


def bits_to_hex(bits) -> str:
    b = np.asarray(bits, dtype=np.uint8).ravel()
    pad = (-b.size) % 4
    b = np.concatenate([np.zeros(pad, np.uint8), b])
    return "".join(f"{int(''.join(map(str, b[i:i + 4])), 2):x}" for i in range(0, b.size, 4))


def _bitstring(bits) -> str:
    return "".join(str(int(v)) for v in np.asarray(bits).ravel())


def cmd_train(args) -> None:
    raw = {}
    with open(args.config) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                if "=" not in line:
                    raise BadParams(f"{args.config}:{n}: expected key = value")
                k, v = line.split("=", 1)
                raw[k.strip()] = training._parse_value(v)
    images = raw.pop("images", None)
    n_images = int(raw.pop("n_images", 16))
    out = raw.pop("out", "model.iiwn")
    metrics = raw.pop("metrics", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = training.config_from_dict(raw)
    geo = cfg.geometry
    if images:
        data = np.stack([harness.load_image(p) for p in harness.list_images(images)])
    else:
        data = cover_set(cfg.seed, n_images, geo.height, geo.channels)
    state = training.train(cfg, data, log=lambda r: print(
        f"epoch {r['epoch']} total {r['total']:.4g} acc {r['acc']:.4f} psnr {r['psnr']:.2f} "
        f"lambda_w {r['lambda_w']:.4g}", flush=True))
    save_checkpoint(state.theta, out)
    if metrics:
        training.write_metrics(state.history, metrics)
    print(f"saved {out}")


def cmd_embed(args) -> None:
    theta = load_checkpoint(args.model)
    cover = harness.load_image(args.inp)
    bits = parse_bits(args.bits, theta.geometry.n_bits)
    art = pipeline.embed(cover, bits, theta)
    harness.save_image(args.out, art.stego_final)
    print(f"psnr {harness.psnr(art.stego_final, cover):.4f} aux_bits {art.aux_bits} "
          f"z_bits {art.z_bits} o_bits {art.o_bits} overflow {art.overflow_count}")


def cmd_extract(args) -> None:
    theta = load_checkpoint(args.model)
    bits, _ = pipeline.extract(harness.load_image(args.inp), theta)
    print(bits_to_hex(bits))


def cmd_recover(args) -> None:
    theta = load_checkpoint(args.model)
    cover, bits = pipeline.recover(harness.load_image(args.inp), theta)
    harness.save_image(args.out_cover, cover)
    Path(args.out_bits).write_text(_bitstring(bits) + "\n")
    print(bits_to_hex(bits))


def cmd_eval(args) -> None:
    theta = load_checkpoint(args.model)
    rows = harness.run_sweep(theta, args.dir, args.noise, seed=args.seed or 0, csv_path=args.csv)
    bad = sum(1 for r in rows if r.error)
    print(f"{len(rows)} rows written to {args.csv} ({bad} with errors)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="revmark", description="Robust reversible watermarking")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn)
        return p

    p = add("train", cmd_train, help="train a model from a key = value config file")
    p.add_argument("--config", required=True)
    p = add("embed", cmd_embed, help="embed bits into an image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--bits", required=True, help="hex string or a file of 0/1 characters")
    p.add_argument("--out", required=True)
    p = add("extract", cmd_extract, help="robust extraction; prints bits as hex")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p = add("recover", cmd_recover, help="lossless recovery of cover and bits")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out-cover", required=True)
    p.add_argument("--out-bits", required=True)
    p = add("eval", cmd_eval, help="robustness sweep over a directory of images")
    p.add_argument("--model", required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--csv", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except RevmarkError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
