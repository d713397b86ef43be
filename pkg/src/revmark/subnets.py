"""Up/down-sampling convolutional networks used inside each coupling layer.

Both directions share one layout: an initial 3x3 conv, ``n_blocks`` sampling
blocks (3x3 conv, spatial attention, 4x4 stride-2 resampling conv) and a
final 3x3 conv. Down blocks halve the resolution and add ``n_feat``
channels; up blocks mirror that with transposed convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ShapeMismatch

LEAK = 0.01


@dataclass(frozen=True)
class SubnetConfig:
    n_feat: int
    n_blocks: int
    direction: str  # "down" | "up"
    in_channels: int
    out_channels: int
    # fixed affine input normalisation, (x - in_shift) * in_scale
    in_shift: float = 0.0
    in_scale: float = 1.0

    def __post_init__(self):
        if self.direction not in ("down", "up"):
            raise ValueError(f"direction must be 'down' or 'up', got {self.direction!r}")
        if self.n_feat < 1 or self.n_blocks < 0:
            raise ValueError("n_feat must be >= 1 and n_blocks >= 0")

    def channel_plan(self) -> list[int]:
        """Feature channels entering each block, plus the count after the last one."""
        plan = [self.n_feat * (i + 1) for i in range(self.n_blocks + 1)]
        return plan if self.direction == "down" else plan[::-1]


def blocks_for(image_side: int, map_side: int) -> int:
    """Number of halvings from image side to map side (both powers of two)."""
    if image_side % map_side or image_side < map_side:
        raise ShapeMismatch(f"image side {image_side} not a multiple of map side {map_side}")
    ratio = image_side // map_side
    n = int(round(math.log2(ratio)))
    if 2**n != ratio:
        raise ShapeMismatch(f"image/map ratio {ratio} is not a power of two")
    return n


@dataclass
class SubnetParams:
    initial: tuple
    blocks: list = field(default_factory=list)  # dicts with conv / att / resample
    final: tuple = ()

    def named(self, prefix: str = ""):
        """Yield (name, Var) pairs in a fixed order."""
        yield f"{prefix}initial.w", self.initial[0]
        yield f"{prefix}initial.b", self.initial[1]
        for i, blk in enumerate(self.blocks):
            for part in ("conv", "att", "resample"):
                yield f"{prefix}block{i}.{part}.w", blk[part][0]
                yield f"{prefix}block{i}.{part}.b", blk[part][1]
        yield f"{prefix}final.w", self.final[0]
        yield f"{prefix}final.b", self.final[1]


def _uniform_conv(rng, shape, fan_in, n_bias):
    # He-uniform weights keep activations O(1) through the leaky ReLUs
    bound = math.sqrt(6.0 / fan_in)
    b_bound = 1.0 / math.sqrt(fan_in)
    return nx.parameter(rng.uniform(-bound, bound, size=shape)), nx.parameter(
        rng.uniform(-b_bound, b_bound, size=n_bias)
    )


def init_subnet(cfg: SubnetConfig, rng: np.random.Generator, zero_final: bool = True) -> SubnetParams:
    """Fan-in scaled uniform init; the final conv starts at zero by default."""
    plan = cfg.channel_plan()

    def conv(c_out, c_in, k):
        return _uniform_conv(rng, (c_out, c_in, k, k), c_in * k * k, c_out)

    initial = conv(plan[0], cfg.in_channels, 3)
    blocks = []
    for i in range(cfg.n_blocks):
        ch, nxt = plan[i], plan[i + 1]
        blk = {"conv": conv(ch, ch, 3), "att": conv(1, 2, 7)}
        if cfg.direction == "down":
            blk["resample"] = conv(nxt, ch, 4)
        else:
            # transposed conv weight is [C_in, C_out, k, k]
            blk["resample"] = _uniform_conv(rng, (ch, nxt, 4, 4), ch * 4, nxt)
        blocks.append(blk)
    if zero_final:
        final = (
            nx.parameter(np.zeros((cfg.out_channels, plan[-1], 3, 3))),
            nx.parameter(np.zeros(cfg.out_channels)),
        )
    else:
        final = conv(cfg.out_channels, plan[-1], 3)
    return SubnetParams(initial, blocks, final)


def spatial_attention(x, att) -> nx.Var:
    """Gate features by sigmoid(conv7x7([channel mean, channel max]))."""
    x = nx.as_var(x)
    pooled = nx.concat_channels([nx.channel_mean(x), nx.channel_max(x)])
    gate = nx.sigmoid(nx.conv2d(pooled, att[0], att[1], stride=1, padding=3))
    return x * nx.expand_channels(gate, x.shape[1])


def subnet_forward(x, p: SubnetParams, cfg: SubnetConfig) -> nx.Var:
    x = nx.as_var(x)
    if x.value.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"subnet expects {cfg.in_channels} input channels, got {x.shape}")
    side = x.shape[2]
    if cfg.direction == "down" and (x.shape[3] != side or side % (2**cfg.n_blocks)):
        raise ShapeMismatch(f"input {x.shape} cannot be halved {cfg.n_blocks} times")
    if cfg.in_shift or cfg.in_scale != 1.0:
        x = (x - cfg.in_shift) * cfg.in_scale
    h = nx.leaky_relu(nx.conv2d(x, *p.initial, stride=1, padding=1), LEAK)
    for blk in p.blocks:
        h = nx.leaky_relu(nx.conv2d(h, *blk["conv"], stride=1, padding=1), LEAK)
        h = spatial_attention(h, blk["att"])
        if cfg.direction == "down":
            h = nx.conv2d(h, *blk["resample"], stride=2, padding=1)
        else:
            h = nx.transposed_conv2d(h, *blk["resample"], stride=2, padding=1)
        h = nx.leaky_relu(h, LEAK)
    return nx.conv2d(h, *p.final, stride=1, padding=1)


def downsample_forward(x, p: SubnetParams, cfg: SubnetConfig) -> nx.Var:
    if cfg.direction != "down":
        raise ValueError("downsample_forward needs a 'down' config")
    return subnet_forward(x, p, cfg)


def upsample_forward(w_map, p: SubnetParams, cfg: SubnetConfig) -> nx.Var:
    if cfg.direction != "up":
        raise ValueError("upsample_forward needs an 'up' config")
    return subnet_forward(w_map, p, cfg)
