"""Losses, adaptive watermark-loss weight, AdamW and the training loop.

One step: forward map with stochastic rounding -> one distortion from the
pool (or identity) applied to the overflowed stego -> inverse map with a
random integer z -> weighted sum of

    L_s  MSE(stego, cover)                 pixel scale
    L_p  MSE(relu(stego - 255)) + MSE(relu(-stego)), on the [0, 1] scale
    L_z  MSE(z, 0)
    L_w  MSE(recovered map, +-1 map)
    L_l  pluggable perceptual term (zero unless a hook is given)
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import noisepool
from . import numerics as nx
from .errors import BadParams, ShapeMismatch
from .iflow import Geometry, IIWNParams, forward_graph, init_iiwn, inverse_graph, make_rounder


@dataclass
class LossWeights:
    s: float = 1.0
    l: float = 5.0  # noqa: E741
    z: float = 1e-3
    p: float = 1e6
    w: float = 1e4

    def __post_init__(self):
        for k in ("s", "l", "z", "p", "w"):
            v = getattr(self, k)
            if not math.isfinite(v) or v < 0:
                raise BadParams(f"loss weight lambda_{k} must be finite and >= 0, got {v}")


@dataclass
class ScheduleState:
    lambda_w: float = 1e4
    n: int = 5
    delta: float = 0.01
    v: float = 0.75
    window: deque = field(default_factory=deque)
    triggers: int = 0

    def __post_init__(self):
        if not (0 < self.v < 1 and 0 < self.delta < 1 and self.n >= 1):
            raise BadParams("schedule needs 0 < v < 1, 0 < delta < 1, n >= 1")


def adapt_lambda_w(state: ScheduleState, epoch_acc: float) -> ScheduleState:
    """Record an epoch accuracy; decay lambda_w once a full window is accurate enough."""
    if not 0.0 <= epoch_acc <= 1.0:
        raise BadParams(f"accuracy {epoch_acc} outside [0, 1]")
    window = deque(state.window)
    window.append(float(epoch_acc))
    while len(window) > state.n:
        window.popleft()
    lam, trig = state.lambda_w, state.triggers
    if len(window) == state.n and sum(window) / state.n > 1.0 - state.delta:
        lam *= state.v
        trig += 1
        window.clear()
    return replace(state, lambda_w=lam, window=window, triggers=trig)


@dataclass
class TrainConfig:
    geometry: Geometry = field(default_factory=lambda: Geometry(32, 32, 1, 8, 2, 8))
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 0.0
    seed: int = 0
    pool: tuple = noisepool.DEFAULT_POOL
    weights: LossWeights = field(default_factory=LossWeights)
    window: int = 5
    delta: float = 0.01
    discount: float = 0.75
    rounding: str = "stochastic"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise BadParams("epochs >= 0, batch_size >= 1 and lr > 0 required")


# --- losses ----------------------------------------------------------------


def penalty_loss(stego) -> nx.Var:
    # excursions measured as a fraction of the 8-bit range
    x = nx.as_var(stego) * (1.0 / 255.0)
    return nx.mse(nx.relu(x - 1.0)) + nx.mse(nx.relu(0.0 - x))


def compute_losses(cover, wm_map, theta: IIWNParams, noise_spec, rng: np.random.Generator,
                   weights: LossWeights, rounding: str = "stochastic",
                   perceptual: Callable | None = None):
    """Returns (total Var, parts {name: Var}, extras {stego, logits})."""
    cover = np.asarray(cover, dtype=np.float64)
    wm_map = np.asarray(wm_map, dtype=np.float64)
    if cover.ndim != 4 or wm_map.ndim != 4:
        raise ShapeMismatch("compute_losses expects batched [N,C,H,W] inputs")
    if isinstance(noise_spec, str):
        noise_spec = noisepool.parse_spec(noise_spec)
    rnd = make_rounder(rounding, rng)
    stego, z = forward_graph(cover, wm_map, theta, rnd)
    noised = noisepool.apply(noise_spec, stego, cover, rng, mode="train", rnd=rnd)
    z_hat = nx.round_half_away(rng.standard_normal(z.shape))
    _, logits = inverse_graph(noised, z_hat, theta, rnd)
    parts = {
        "L_s": nx.mse(stego, cover),
        "L_p": penalty_loss(stego),
        "L_z": nx.mse(z),
        "L_w": nx.mse(logits, wm_map),
        "L_l": perceptual(stego, cover) if perceptual else nx.Var(0.0),
    }
    total = (weights.s * parts["L_s"] + weights.l * parts["L_l"] + weights.z * parts["L_z"]
             + weights.p * parts["L_p"] + weights.w * parts["L_w"])
    return total, parts, {"stego": stego, "z": z, "logits": logits}


# --- optimiser -------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def optimizer_step(params: list, grads: list, state: AdamState, lr: float, beta1: float = 0.5,
                   beta2: float = 0.999, weight_decay: float = 0.0, eps: float = 1e-8) -> AdamState:
    """AdamW with decoupled weight decay; updates ``params`` (Vars) in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.value.shape:
            raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.value.shape}")
        m = state.m.get(i, np.zeros_like(g))
        v = state.v.get(i, np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[i], state.v[i] = m, v
        step = (m / bc1) / (np.sqrt(v / bc2) + eps) + weight_decay * p.value
        p.value -= lr * step
    return state


# --- loop ------------------------------------------------------------------


@dataclass
class TrainState:
    theta: IIWNParams
    adam: AdamState
    schedule: ScheduleState
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)


METRIC_FIELDS = ("epoch", "L_s", "L_p", "L_z", "L_w", "total", "acc", "psnr", "lambda_w",
                 "overflow", "noise")


def init_state(cfg: TrainConfig, theta: IIWNParams | None = None) -> TrainState:
    theta = init_iiwn(cfg.geometry, seed=cfg.seed, zero_final=False) if theta is None else theta
    sched = ScheduleState(lambda_w=cfg.weights.w, n=cfg.window, delta=cfg.delta, v=cfg.discount)
    return TrainState(theta, AdamState(), sched, np.random.default_rng(cfg.seed + 7919))


def _psnr_from_mse(m: float) -> float:
    return float("inf") if m == 0 else 10.0 * math.log10(255.0**2 / m)


def train_epoch(dataset: np.ndarray, state: TrainState, cfg: TrainConfig,
                perceptual: Callable | None = None) -> dict:
    data = np.asarray(dataset)
    if data.ndim == 3:
        data = data[:, None]
    geo = state.theta.geometry
    if len(data) == 0:
        raise BadParams("empty dataset")
    if data.shape[1:] != geo.image_shape:
        raise ShapeMismatch(f"dataset images {data.shape[1:]} vs model {geo.image_shape}")
    rng = state.rng
    params = state.theta.parameters()
    choices = ["id"] + list(cfg.pool)
    order = rng.permutation(len(data))
    sums = {k: 0.0 for k in ("L_s", "L_p", "L_z", "L_w", "total")}
    accs, overflow, n_batches, used = [], 0, 0, []
    for start in range(0, len(data), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        cover = data[idx].astype(np.float64)
        bits = rng.integers(0, 2, size=(len(idx), geo.n_bits))
        wm = (2.0 * bits - 1.0).reshape(len(idx), 1, geo.map_side, geo.map_side)
        spec = noisepool.parse_spec(choices[rng.integers(len(choices))])
        used.append(str(spec))
        weights = replace(cfg.weights, w=state.schedule.lambda_w)
        total, parts, extra = compute_losses(cover, wm, state.theta, spec, rng, weights,
                                             cfg.rounding, perceptual)
        for p in params:
            p.grad = None
        nx.backward(total)
        optimizer_step(params, [p.grad for p in params], state.adam, cfg.lr, cfg.beta1,
                       cfg.beta2, cfg.weight_decay)
        for k in ("L_s", "L_p", "L_z", "L_w"):
            sums[k] += float(parts[k].value)
        sums["total"] += float(total.value)
        pred = extra["logits"].value.reshape(len(idx), -1) >= 0
        accs.extend(np.mean(pred == bits.astype(bool), axis=1).tolist())
        st = extra["stego"].value
        overflow += int(np.sum((st > 255.5) | (st < -0.5)))
        n_batches += 1
    acc = float(np.mean(accs))
    state.schedule = adapt_lambda_w(state.schedule, acc)
    state.epoch += 1
    row = {k: v / n_batches for k, v in sums.items()}
    row.update(epoch=state.epoch, acc=acc, psnr=_psnr_from_mse(row["L_s"]),
               lambda_w=state.schedule.lambda_w, overflow=overflow, noise="|".join(used))
    state.history.append(row)
    return row


def train(cfg: TrainConfig, dataset: np.ndarray, theta: IIWNParams | None = None,
          log: Callable[[dict], None] | None = None, perceptual: Callable | None = None) -> TrainState:
    state = init_state(cfg, theta)
    for _ in range(cfg.epochs):
        row = train_epoch(dataset, state, cfg, perceptual)
        if log:
            log(row)
    return state


def write_metrics(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in METRIC_FIELDS})


# --- config file -----------------------------------------------------------


def _parse_value(text: str):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def load_config(path) -> TrainConfig:
    """``key = value`` lines; '#' starts a comment. Unknown keys are an error."""
    raw = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise BadParams(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            raw[k.strip()] = _parse_value(v)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> TrainConfig:
    raw = dict(raw)
    geo_keys = {"height": "height", "width": "width", "channels": "channels",
                "map_side": "map_side", "layers": "n_layers", "n_feat": "n_feat"}
    geo_args = {v: int(raw.pop(k)) for k, v in geo_keys.items() if k in raw}
    if "size" in raw:
        side = int(raw.pop("size"))
        geo_args.setdefault("height", side)
        geo_args.setdefault("width", side)
    base = Geometry(32, 32, 1, 8, 2, 8)
    geo = Geometry(**{**base.__dict__, **geo_args})
    w_keys = {"lambda_s": "s", "lambda_l": "l", "lambda_z": "z", "lambda_p": "p", "lambda_w": "w"}
    weights = LossWeights(**{v: float(raw.pop(k)) for k, v in w_keys.items() if k in raw})
    pool = raw.pop("pool", None)
    kwargs = {}
    if pool is not None:
        pool = str(pool)
        kwargs["pool"] = tuple(str(s) for s in noisepool.parse_grid(pool)) if pool != "none" else ()
    known = {"epochs", "batch_size", "lr", "beta1", "beta2", "weight_decay", "seed", "window",
             "delta", "discount", "rounding"}
    extra = set(raw) - known - {"images", "n_images", "out", "metrics"}
    if extra:
        raise BadParams(f"unknown config keys: {sorted(extra)}")
    for k in known & set(raw):
        kwargs[k] = raw[k]
    return TrainConfig(geometry=geo, weights=weights, **kwargs)
