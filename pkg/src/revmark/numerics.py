"""Tensor arithmetic and a small tape-based reverse-mode autodiff engine.

Tensors are plain numpy arrays (``int64`` or ``float64``). A :class:`Var`
wraps a float64 array together with the closure that pushes its gradient
back to its parents. Only first-order gradients are supported.

Broadcasting is deliberately restricted to scalar-vs-tensor and
equal-shape operands; anything else raises :class:`ShapeMismatch`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import DivisionByZero, NonFiniteInput, NonScalarLoss, ShapeMismatch

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Var:
    """A node of the autodiff graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def parameter(value, name=None) -> Var:
    return Var(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _make(value, parents, backward_fn) -> Var:
    """Create an op output; records the tape only when a parent needs grad."""
    if grad_enabled():
        live = [p for p in parents if p.requires_grad]
        if live:
            return Var(value, parents, backward_fn, requires_grad=True)
    return Var(value)


def _check_broadcast(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0 and a.size != 1 and b.size != 1:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if np.prod(shape, dtype=int) == 1 else g


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), back)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), back)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), back)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)
    if np.any(b.value == 0.0):
        raise DivisionByZero("divisor contains exact zero")
    out = a.value / b.value

    def back(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        )

    return _make(out, (a, b), back)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Var:
    x = as_var(x)
    s = _stable_sigmoid(x.value)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x) -> Var:
    x = as_var(x)
    e = np.exp(x.value)
    return _make(e, (x,), lambda g: (g * e,))


def relu(x) -> Var:
    x = as_var(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.01) -> Var:
    x = as_var(x)
    mask = x.value > 0
    scale = np.where(mask, 1.0, slope)
    return _make(x.value * scale, (x,), lambda g: (g * scale,))


_UNARY = {"sigmoid": sigmoid, "exp": exp, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(fn: str, *operands) -> Var:
    """Dispatch by name: sigmoid/exp/relu take one operand, add/sub/mul/div two."""
    if fn in _UNARY:
        (x,) = operands
        return _UNARY[fn](x)
    if fn in _BINARY:
        a, b = operands
        return _BINARY[fn](a, b)
    raise ValueError(f"unknown elementwise op {fn!r}")


# --- rounding --------------------------------------------------------------


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Nearest integer, ties away from zero (exact: x - trunc(x) is exact)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.trunc(x)
    frac = x - t
    return t + (frac >= 0.5) - (frac <= -0.5)


ROUND_MODES = ("deterministic", "stochastic", "identity")


def round_ste(x, mode: str = "deterministic", rng: np.random.Generator | None = None) -> Var:
    """Rounding with a straight-through (identity) backward pass.

    ``stochastic`` adds U[-0.5, 0.5) noise to the rounded value (training);
    ``identity`` skips rounding entirely and is the smooth surrogate used for
    gradient checks.
    """
    x = as_var(x)
    if not np.all(np.isfinite(x.value)):
        raise NonFiniteInput("round_ste received a non-finite value")
    if mode == "deterministic":
        out = round_half_away(x.value)
    elif mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic rounding needs an rng")
        out = round_half_away(x.value) + rng.uniform(-0.5, 0.5, size=x.value.shape)
    elif mode == "identity":
        out = x.value.copy()
    else:
        raise ValueError(f"unknown rounding mode {mode!r}")
    return _make(out, (x,), lambda g: (g,))


# --- convolutions ----------------------------------------------------------


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _zero_pad(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(a, dtype=np.float64)
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Var:
    x, w, b = as_var(x), as_var(w), as_var(b)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-D input and weight")
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if c != cw or k != k2 or b.shape != (f,):
        raise ShapeMismatch(f"conv2d input {x.shape} / weight {w.shape} / bias {b.shape}")
    if k % 2 == 0 and stride == 1:
        raise ShapeMismatch("stride-1 conv2d requires an odd kernel")
    oh, ow = _conv_out(h, k, stride, padding), _conv_out(wd, k, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeMismatch("conv2d output would be empty")
    xp = _zero_pad(x.value, padding)
    ph = _kernels.split_phases(xp, stride)
    wv = np.ascontiguousarray(w.value)
    out = _kernels.conv_forward(ph, wv, np.ascontiguousarray(b.value), stride, oh, ow)

    def back(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if x.requires_grad:
            dph = _kernels.conv_input_grad(g, wv, stride, ph.shape[2], ph.shape[3])
            gxp = _kernels.merge_phases(dph, stride, xp.shape[2], xp.shape[3])
            gx = gxp[:, :, padding : padding + h, padding : padding + wd]
        if w.requires_grad:
            gw = _kernels.conv_weight_grad(g, ph, stride, k)
        if b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out, (x, w, b), back)


def transposed_conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Var:
    """Adjoint of :func:`conv2d` w.r.t. its input; weight is [C_in, C_out, k, k]."""
    x, w, b = as_var(x), as_var(w), as_var(b)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeMismatch("transposed_conv2d expects 4-D input and weight")
    n, c, h, wd = x.shape
    cw, f, k, k2 = w.shape
    if c != cw or k != k2 or b.shape != (f,) or stride < 1:
        raise ShapeMismatch(f"transposed_conv2d input {x.shape} / weight {w.shape}")
    oh = (h - 1) * stride - 2 * padding + k
    ow = (wd - 1) * stride - 2 * padding + k
    if oh < 1 or ow < 1 or _conv_out(oh, k, stride, padding) != h:
        raise ShapeMismatch("transposed_conv2d output would be empty or inconsistent")
    xv = np.ascontiguousarray(x.value)
    wv = np.ascontiguousarray(w.value)
    ph_h = -(-(oh + 2 * padding) // stride)
    ph_w = -(-(ow + 2 * padding) // stride)
    dph = _kernels.conv_input_grad(xv, wv, stride, ph_h, ph_w)
    full = _kernels.merge_phases(dph, stride, oh + 2 * padding, ow + 2 * padding)
    out = full[:, :, padding : padding + oh, padding : padding + ow] + b.value[None, :, None, None]

    def back(g):
        gph = _kernels.split_phases(_zero_pad(g, padding), stride)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _kernels.conv_forward(gph, wv, np.zeros(c), stride, h, wd)
        if w.requires_grad:
            gw = _kernels.conv_weight_grad(xv, gph, stride, k)
        if b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out, (x, w, b), back)


# --- shape and reduction ops ----------------------------------------------


def reshape(x, shape) -> Var:
    x = as_var(x)
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_channels(xs: Sequence[Var]) -> Var:
    xs = [as_var(x) for x in xs]
    sizes = [x.shape[1] for x in xs]
    out = np.concatenate([x.value for x in xs], axis=1)
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=1))

    return _make(out, xs, back)


def expand_channels(x, n_channels: int) -> Var:
    """[N,1,H,W] -> [N,C,H,W] by repetition."""
    x = as_var(x)
    if x.shape[1] != 1:
        raise ShapeMismatch("expand_channels needs a single-channel input")
    out = np.repeat(x.value, n_channels, axis=1)
    return _make(out, (x,), lambda g: (g.sum(axis=1, keepdims=True),))


def channel_mean(x) -> Var:
    x = as_var(x)
    c = x.shape[1]
    out = x.value.sum(axis=1, keepdims=True) / c
    return _make(out, (x,), lambda g: (np.repeat(g / c, c, axis=1),))


def channel_max(x) -> Var:
    x = as_var(x)
    idx = np.argmax(x.value, axis=1)[:, None]
    out = np.take_along_axis(x.value, idx, axis=1)

    def back(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return _make(out, (x,), back)


def reflect_index(n: int, pad: int) -> np.ndarray:
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def pad_reflect(x, pad: int) -> Var:
    """Reflect-pad the two spatial axes (edge sample not repeated)."""
    x = as_var(x)
    if pad == 0:
        return x
    h, w = x.shape[-2:]
    ri, ci = reflect_index(h, pad), reflect_index(w, pad)
    out = x.value[..., ri, :][..., ci]

    def back(g):
        rows = np.zeros(g.shape[:-2] + (h, g.shape[-1]))
        np.add.at(rows, (Ellipsis, ri, slice(None)), g)
        gx = np.zeros(g.shape[:-2] + (h, w))
        np.add.at(gx, (Ellipsis, slice(None), ci), rows)
        return (gx,)

    return _make(out, (x,), back)


def sum_all(x) -> Var:
    x = as_var(x)
    shape = x.shape
    return _make(np.sum(x.value), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x) -> Var:
    x = as_var(x)
    return sum_all(x) * (1.0 / x.value.size)


def mse(a, b=0.0) -> Var:
    d = sub(a, b)
    return mean_all(d * d)


# --- 8x8 block DCT (JPEG surrogate) ---------------------------------------


def dct_matrix(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II matrix; rows are basis functions."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


_DCT8 = dct_matrix(8)


def _blocks(a: np.ndarray) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // 8, 8, w // 8, 8)


def blockwise_dct(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    d = _DCT8.T if inverse else _DCT8
    b = _blocks(a)
    t = np.einsum("ua,ncIaJb->ncIuJb", d, b)
    t = np.einsum("vb,ncIuJb->ncIuJv", d, t)
    return t.reshape(a.shape)


def block_dct(x, inverse: bool = False) -> Var:
    x = as_var(x)
    if x.value.ndim != 4 or x.shape[2] % 8 or x.shape[3] % 8:
        raise ShapeMismatch("block_dct needs [N,C,H,W] with H, W multiples of 8")
    out = blockwise_dct(x.value, inverse)
    return _make(out, (x,), lambda g: (blockwise_dct(g, not inverse),))


# --- backward / grad check -------------------------------------------------


def _topo_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every leaf that requires them; the
    returned map is keyed by ``id(var)`` for convenience.
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    order = _topo_order(loss)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return {id(n): n.grad for n in order if n.backward_fn is None}


def grad_check(
    f: Callable[[Var], Var],
    params: np.ndarray,
    eps: float = 1e-5,
    indices: Iterable[int] | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps a parameter Var to a scalar Var; rounding inside ``f`` should
    use the ``identity`` surrogate so the function is smooth.
    """
    params = np.array(params, dtype=np.float64)
    p = parameter(params)
    backward(f(p))
    analytic = p.grad.ravel()
    flat = params.ravel()
    idx = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(Var(params)).value)
            flat[i] = orig - eps
            down = float(f(Var(params)).value)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
