"""Fixtures shared by unit and acceptance tests."""

import numpy as np

from revmark import numerics as nx
from revmark.iflow import bits_to_map, init_iiwn
from revmark.subnets import subnet_forward
from revmark.training import LossWeights, compute_losses


def calibrated_theta(geo, seed, u_std=0.3):
    """Untrained random flow whose U outputs have std ``u_std`` and zero mean.

    Fully random parameters move every pixel by tens of levels, which no
    PEE payload can absorb; this keeps the flow nontrivial (scale factors
    vary, z differs from the map) while the stego stays near the cover.
    """
    theta = init_iiwn(geo, seed=seed, zero_final=False)
    cfg = geo.configs()
    rng = np.random.default_rng(seed)
    probe = bits_to_map(rng.integers(0, 2, geo.n_bits))[None].astype(float)
    for layer in theta.layers:
        w, b = layer.U.final
        b.value[:] = 0
        with nx.no_grad():
            u = subnet_forward(probe, layer.U, cfg["U"]).value
        w.value *= u_std / u.std()
        with nx.no_grad():
            u = subnet_forward(probe, layer.U, cfg["U"]).value
        b.value[:] = -u.mean()
    return theta


def randomized(geo, seed, scale=0.3):
    """Random finals scaled so U perturbs pixels by a few levels."""
    theta = init_iiwn(geo, seed=seed, zero_final=False)
    rng = np.random.default_rng(seed + 1)
    for layer in theta.layers:
        layer.U.final[0].value *= scale
        layer.S.final[1].value[...] = rng.normal()
    return theta


def total_loss_grad_error(theta, cover, wm, noise="id", per_tensor=4, directions=10, eps=1e-5, seed=1):
    """Central-difference check of d(total)/d(theta); rounding is the identity surrogate.

    Relative error is |a - n| / max(1e-8, |a| + |n|). A float64 difference
    quotient cannot resolve derivatives much below |L| * 2^-52 / eps, so
    sampled elements under 1e3 times that floor are held to an absolute
    bound of 10 floors instead of the relative one. An element whose
    +-eps stencil straddles a leaky-ReLU or max kink is retried once at
    eps / 10 (same rules, floor scaled). Random directions over the whole
    parameter vector are always checked relatively.
    """
    def loss():
        return compute_losses(cover, wm, theta, noise, np.random.default_rng(seed), LossWeights(),
                               rounding="identity")[0]

    params = theta.parameters()
    for p in params:
        p.grad = None
    total = loss()
    nx.backward(total)
    floor = abs(float(total.value)) * np.finfo(float).eps / eps
    pick = np.random.default_rng(seed)
    rel, n_small, small_ok = [], 0, True

    def diff(step, h=eps):
        with nx.no_grad():
            step(+h)
            up = float(loss().value)
            step(-h)
            down = float(loss().value)
        step(0)
        return (up - down) / (2 * h)

    def rel_err(a, n):
        return abs(a - n) / max(1e-8, abs(a) + abs(n))

    for p in params:
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1)
        for i in pick.choice(flat.size, size=min(per_tensor, flat.size), replace=False):
            orig = flat[i]

            def step(h, i=i, orig=orig, flat=flat):
                flat[i] = orig + h

            a = analytic[i]
            for h, fl in ((eps, floor), (eps / 10, floor * 10)):
                n = diff(step, h)
                resolved = abs(a) + abs(n) >= 1e3 * fl
                ok = rel_err(a, n) < 1e-3 if resolved else abs(a - n) <= 10 * fl
                if ok:
                    break
            if resolved:
                rel.append(rel_err(a, n))
            else:
                n_small += 1
                small_ok &= ok
    base = [p.value.copy() for p in params]
    g = np.concatenate([p.grad.ravel() for p in params])
    dir_rel = []
    for _ in range(directions):
        d = pick.standard_normal(g.size)
        d /= np.linalg.norm(d)

        def step(h, d=d):
            o = 0
            for p, b in zip(params, base):
                p.value[...] = b + h * d[o : o + b.size].reshape(b.shape)
                o += b.size

        dir_rel.append(rel_err(float(g @ d), diff(step)))
    return {"element_max": max(rel), "direction_max": max(dir_rel), "max": max(rel + dir_rel),
            "checked": len(rel), "below_floor": n_small, "below_floor_ok": bool(small_ok),
            "floor": floor}
