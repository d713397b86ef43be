"""Desk-scale ablations: overflow penalty, z regulariser, lambda_w trace.

Every run trains the toy model (32x32 gray, 8x8 map, two coupling layers,
N_f = 8) on synthetic covers and is scored on a disjoint held-out set.
Only directions of effect are checked; magnitudes are not expected to
carry over from full-scale training.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from . import codec, harness, noisepool, pipeline, training
from .data import cover_set
from .errors import RevmarkError
from .iflow import Geometry, IIWNParams, bits_to_map, iiwn_forward

TOY_GEOMETRY = Geometry(32, 32, 1, 8, 2, 8)
PENALTY_GRID = (0.0, 1e2, 1e4, 1e6)
TRAIN_SEED, VAL_SEED, TEST_SEED = 1, 2, 99


def toy_config(seed: int = 0, epochs: int = 200, pool=(), **weights) -> training.TrainConfig:
    w = training.LossWeights(**weights)
    return training.TrainConfig(geometry=TOY_GEOMETRY, epochs=epochs, batch_size=4, lr=1e-3,
                                seed=seed, pool=tuple(pool), weights=w)


def toy_covers(which: str = "train", n: int = 16) -> np.ndarray:
    seed = {"train": TRAIN_SEED, "val": VAL_SEED, "test": TEST_SEED}[which]
    return cover_set(seed, n, TOY_GEOMETRY.height)


# --- scoring ---------------------------------------------------------------


def clean_scores(theta: IIWNParams, covers, seed: int = 0) -> dict:
    """Forward-map statistics without the reversible stage (never fails on capacity)."""
    rng = np.random.default_rng(seed)
    acc, mse, over, zb, ob, zmin, zmax = [], [], 0, 0, 0, 0, 0
    for c in covers:
        bits = rng.integers(0, 2, size=theta.geometry.n_bits).astype(np.uint8)
        stego_o, z = iiwn_forward(c, bits_to_map(bits), theta)
        O, clipped = pipeline.build_overflow_map(stego_o)
        got, _ = pipeline.extract(clipped, theta)
        acc.append(harness.bit_accuracy(got, bits))
        mse.append(float(np.mean((clipped - c) ** 2)))
        over += int(np.count_nonzero(O))
        zmin, zmax = min(zmin, int(z.min())), max(zmax, int(z.max()))
        try:
            _, zs, os_ = codec.section_lengths(codec.encode_payload(codec.AuxPayload(z, O)))
        except RevmarkError:
            zs, os_ = math.nan, math.nan
        zb += zs
        ob += os_
    m = float(np.mean(mse))
    return {
        "accuracy": float(np.mean(acc)),
        "min_accuracy": float(np.min(acc)),
        "psnr": math.inf if m == 0 else 10 * math.log10(255.0**2 / m),
        "overflow": over,
        "z_min": zmin,
        "z_max": zmax,
        "z_bits": zb,
        "o_bits": ob,
    }


def robust_scores(theta: IIWNParams, covers, grid, seed: int = 0) -> dict:
    out = {}
    for spec in grid:
        rng = np.random.default_rng(seed)
        accs = []
        for c in covers:
            bits = rng.integers(0, 2, size=theta.geometry.n_bits).astype(np.uint8)
            stego_o, _ = iiwn_forward(c, bits_to_map(bits), theta)
            _, clipped = pipeline.build_overflow_map(stego_o)
            noised = noisepool.apply(spec, clipped, c, rng, mode="eval")
            got, _ = pipeline.extract(noised, theta)
            accs.append(harness.bit_accuracy(got, bits))
        out[str(spec)] = float(np.mean(accs))
    return out


# --- training drivers ------------------------------------------------------


def train_toy(cfg: training.TrainConfig, covers=None, val=None, stop_when=None,
              check_every: int = 5, log=None):
    """Train, optionally stopping early once ``stop_when(scores)`` holds on ``val``.

    Returns (state, val_scores or None).
    """
    covers = toy_covers("train") if covers is None else covers
    state = training.init_state(cfg)
    scores = None
    for e in range(cfg.epochs):
        row = training.train_epoch(covers, state, cfg)
        if log:
            log(row)
        if stop_when is not None and val is not None and (e + 1) % check_every == 0:
            scores = clean_scores(state.theta, val, seed=e)
            if stop_when(scores):
                break
    return state, scores


def clean_target(scores: dict) -> bool:
    return scores["min_accuracy"] == 1.0 and scores["psnr"] >= 35.0


def _write(rows: list[dict], path) -> None:
    if path is None or not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def ablate_penalty(seeds=(0, 1, 2), grid=PENALTY_GRID, epochs: int = 100, csv_path=None,
                   runs: dict | None = None) -> tuple[list[dict], dict]:
    """Per (seed, lambda_p): final PSNR, overflow pixels, O-section bits on held-out covers.

    ``runs`` may hold already trained states keyed by (seed, lambda_p).
    The summary reports, per seed, whether lambda_p = max(grid) beats 0.
    """
    test = toy_covers("test")
    rows = []
    for seed in seeds:
        for lp in grid:
            st = (runs or {}).get((seed, lp))
            if st is None:
                st, _ = train_toy(toy_config(seed, epochs, p=lp))
            sc = clean_scores(st.theta, test, seed=seed)
            h = st.history[-1]
            rows.append({"seed": seed, "lambda_p": lp, "epochs": st.epoch, "psnr": sc["psnr"],
                         "overflow": sc["overflow"], "o_bits": sc["o_bits"],
                         "z_bits": sc["z_bits"], "accuracy": sc["accuracy"],
                         "final_lambda_w": h["lambda_w"],
                         "finite": all(math.isfinite(h[k]) for k in ("L_s", "L_p", "L_z", "L_w"))})
    _write(rows, csv_path)
    lo, hi = min(grid), max(grid)
    summary = {}
    for seed in seeds:
        a = next(r for r in rows if r["seed"] == seed and r["lambda_p"] == lo)
        b = next(r for r in rows if r["seed"] == seed and r["lambda_p"] == hi)
        summary[seed] = {"fewer_overflow": b["overflow"] < a["overflow"],
                         "fewer_o_bits": b["o_bits"] < a["o_bits"],
                         "higher_psnr": b["psnr"] > a["psnr"]}
    return rows, summary


def ablate_z_reg(seeds=(0, 1, 2), epochs: int = 100, csv_path=None,
                 runs: dict | None = None) -> tuple[list[dict], dict]:
    """lambda_z in {0, 1e-3}: z range and z-section bits on held-out covers."""
    test = toy_covers("test")
    rows = []
    for seed in seeds:
        for lz in (0.0, 1e-3):
            st = (runs or {}).get((seed, lz))
            if st is None:
                st, _ = train_toy(toy_config(seed, epochs, z=lz))
            sc = clean_scores(st.theta, test, seed=seed)
            rows.append({"seed": seed, "lambda_z": lz, "epochs": st.epoch, "z_min": sc["z_min"],
                         "z_max": sc["z_max"], "max_abs_z": max(-sc["z_min"], sc["z_max"]),
                         "z_bits": sc["z_bits"], "psnr": sc["psnr"], "accuracy": sc["accuracy"]})
    _write(rows, csv_path)
    summary = {}
    for seed in seeds:
        a = next(r for r in rows if r["seed"] == seed and r["lambda_z"] == 0.0)
        b = next(r for r in rows if r["seed"] == seed and r["lambda_z"] == 1e-3)
        summary[seed] = {"smaller_max_z": b["max_abs_z"] < a["max_abs_z"],
                         "fewer_z_bits": b["z_bits"] < a["z_bits"]}
    return rows, summary


def check_trace(trace: list[float], start: float = 1e4, v: float = 0.75, n: int = 5) -> dict:
    """Non-increasing, every value start * v**k, and no decay in the final n epochs."""
    ks = [math.log(x / start) / math.log(v) for x in trace]
    geometric = all(abs(k - round(k)) < 1e-9 and round(k) >= 0 for k in ks)
    non_inc = all(b <= a for a, b in zip(trace, trace[1:]))
    stable = len(trace) > n and len(set(trace[-(n + 1):])) == 1
    return {"geometric": geometric, "non_increasing": non_inc, "stabilized": stable}


def trace_lambda_w(seeds=(0, 1, 2), grid=PENALTY_GRID, epochs: int = 100, csv_path=None,
                   runs: dict | None = None) -> tuple[list[dict], dict]:
    rows, summary = [], {}
    for seed in seeds:
        for lp in grid:
            st = (runs or {}).get((seed, lp))
            if st is None:
                st, _ = train_toy(toy_config(seed, epochs, p=lp))
            trace = [h["lambda_w"] for h in st.history]
            for h in st.history:
                rows.append({"seed": seed, "lambda_p": lp, "epoch": h["epoch"],
                             "lambda_w": h["lambda_w"], "acc": h["acc"]})
            sched = st.schedule
            start = sched.lambda_w / sched.v**sched.triggers
            summary[(seed, lp)] = {**check_trace(trace, start, sched.v, sched.n), "final": trace[-1]}
    _write(rows, csv_path)
    return rows, summary


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(prog="revmark-experiments")
    ap.add_argument("which", choices=("penalty", "zreg", "trace"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--csv", required=True)
    args = ap.parse_args(argv)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    fn = {"penalty": ablate_penalty, "zreg": ablate_z_reg, "trace": trace_lambda_w}[args.which]
    _, summary = fn(seeds=seeds, epochs=args.epochs, csv_path=args.csv)
    for k, v in summary.items():
        print(k, v)
    return 0

