"""Finite-difference verification of every backward rule.

Each case builds a scalar loss from one operation (or a small composition),
computes analytic gradients with a single backward pass, and compares against
central differences taken through the same forward code. Non-scalar outputs
are contracted with a fixed random projection so one backward covers every
output element. All checks run in double precision.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-4
TOL_SINGLE = 1e-4
TOL_COMPOSED = 1e-3


def numerical_grad(fn, arrays, h=STEP):
    """Central-difference gradient of ``fn(arrays)`` w.r.t. every element."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = fn(arrays)
            flat[i] = keep - h
            fm = fn(arrays)
            flat[i] = keep
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """Max absolute difference over max(1, largest gradient magnitude)."""
    num = max(float(np.max(np.abs(a - n))) for a, n in zip(analytic, numeric))
    den = max(
        1.0,
        max(float(np.max(np.abs(a))) for a in analytic),
        max(float(np.max(np.abs(n))) for n in numeric),
    )
    return num / den


def check_case(forward, inputs, h=STEP):
    """Return the relative error between backward and central differences."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in inputs]
    loss = forward(tensors)
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def f(arrays):
        return float(forward([Tensor(a) for a in arrays]).data)

    numeric = numerical_grad(f, [a.copy() for a in inputs], h)
    return relative_error(analytic, numeric)


def _proj(rng, shape):
    p = Tensor(rng.standard_normal(shape))
    return lambda t: (t * p).sum()


def _away_from_kink(a, margin=0.2):
    a = a.copy()
    small = np.abs(a) < margin
    a[small] = margin * np.where(a[small] >= 0, 1.0, -1.0)
    return a


def build_cases(seed=0):
    """(name, tolerance, forward, inputs) for the whole operation set."""
    rng = np.random.default_rng(seed)
    u = lambda *s: rng.uniform(-1.0, 1.0, s)
    cases = []

    x = u(2, 8, 8)
    y = u(2, 8, 8)
    p = _proj(rng, (2, 8, 8))
    cases.append(("add", TOL_SINGLE, lambda t: p(T.add(t[0], t[1])), [x, y]))
    cases.append(("sub", TOL_SINGLE, lambda t: p(T.sub(t[0], t[1])), [x, y]))
    cases.append(("mul", TOL_SINGLE, lambda t: p(T.mul(t[0], t[1])), [x, y]))
    cases.append(
        ("mul_scalar_tensor", TOL_SINGLE, lambda t: p(T.mul(t[0], T.element(t[1], ()))), [x, np.asarray(0.7)])
    )
    cases.append(("square", TOL_SINGLE, lambda t: p(T.square(t[0])), [x]))
    cases.append(
        ("absolute", TOL_SINGLE, lambda t: p(T.absolute(t[0])), [_away_from_kink(u(2, 8, 8))])
    )
    cases.append(("sigmoid", TOL_SINGLE, lambda t: p(T.sigmoid(t[0])), [3.0 * u(2, 8, 8)]))
    cases.append(
        ("leaky_relu", TOL_SINGLE, lambda t: p(T.leaky_relu(t[0], 0.2)), [_away_from_kink(u(2, 8, 8))])
    )
    cases.append(("sum", TOL_SINGLE, lambda t: T.tsum(t[0]), [u(3, 8, 8)]))
    cases.append(("mean", TOL_SINGLE, lambda t: T.tmean(t[0]), [u(3, 8, 8)]))

    pg = _proj(rng, (1, 8, 8))
    cases.append(
        ("spatial_gradient_x", TOL_SINGLE, lambda t: pg(T.spatial_gradient(t[0], "x")), [u(1, 8, 8)])
    )
    cases.append(
        ("spatial_gradient_y", TOL_SINGLE, lambda t: pg(T.spatial_gradient(t[0], "y")), [u(1, 8, 8)])
    )

    pd = _proj(rng, (1, 4, 4))
    cases.append(("downsample2_even", TOL_SINGLE, lambda t: pd(T.downsample2(t[0])), [u(1, 8, 8)]))
    pdo = _proj(rng, (1, 3, 4))
    cases.append(("downsample2_odd", TOL_SINGLE, lambda t: pdo(T.downsample2(t[0])), [u(1, 5, 7)]))
    pu = _proj(rng, (1, 16, 16))
    cases.append(("upsample2", TOL_SINGLE, lambda t: pu(T.upsample2(t[0])), [u(1, 8, 8)]))
    puo = _proj(rng, (1, 10, 6))
    cases.append(("upsample2_odd", TOL_SINGLE, lambda t: puo(T.upsample2(t[0])), [u(1, 5, 3)]))

    pp = _proj(rng, (1, 12, 12))
    cases.append(
        ("pad2d_reflect", TOL_SINGLE, lambda t: pp(T.pad2d(t[0], (2, 2, 2, 2), "reflect")), [u(1, 8, 8)])
    )
    cases.append(
        ("pad2d_zeros", TOL_SINGLE, lambda t: pp(T.pad2d(t[0], (2, 2, 2, 2), "zeros")), [u(1, 8, 8)])
    )
    ppa = _proj(rng, (1, 11, 10))
    cases.append(
        ("pad2d_reflect_asym", TOL_SINGLE, lambda t: ppa(T.pad2d(t[0], (1, 2, 0, 2), "reflect")), [u(1, 8, 8)])
    )
    ppw = _proj(rng, (1, 14, 14))
    cases.append(
        ("pad2d_reflect_wide", TOL_SINGLE, lambda t: ppw(T.pad2d(t[0], (5, 5, 5, 5), "reflect")), [u(1, 4, 4)])
    )

    k = u(3, 2, 3, 3)
    b = u(3)
    pc = _proj(rng, (3, 8, 8))
    cases.append(
        (
            "conv2d_reflect",
            TOL_SINGLE,
            lambda t: pc(T.conv2d(t[0], t[1], bias=t[2], stride=1, padding="reflect")),
            [u(2, 8, 8), k, b],
        )
    )
    cases.append(
        (
            "conv2d_zeros",
            TOL_SINGLE,
            lambda t: pc(T.conv2d(t[0], t[1], bias=t[2], stride=1, padding="zeros")),
            [u(2, 8, 8), k, b],
        )
    )
    ps = _proj(rng, (3, 4, 4))
    cases.append(
        (
            "conv2d_stride2",
            TOL_SINGLE,
            lambda t: ps(T.conv2d(t[0], t[1], bias=t[2], stride=2, padding="reflect")),
            [u(2, 8, 8), k, b],
        )
    )
    pv = _proj(rng, (3, 6, 6))
    cases.append(
        (
            "conv2d_valid",
            TOL_SINGLE,
            lambda t: pv(T.conv2d(t[0], t[1], stride=1, padding="valid")),
            [u(2, 8, 8), k],
        )
    )
    k5 = u(1, 1, 5, 5)
    p5 = _proj(rng, (1, 8, 8))
    cases.append(
        (
            "conv2d_5x5",
            TOL_SINGLE,
            lambda t: p5(T.conv2d(t[0], t[1], stride=1, padding="reflect")),
            [u(1, 8, 8), k5],
        )
    )

    pcat = _proj(rng, (3, 8, 8))
    cases.append(
        (
            "concat_channels",
            TOL_SINGLE,
            lambda t: pcat(T.concat_channels([t[0], t[1]])),
            [u(1, 8, 8), u(2, 8, 8)],
        )
    )
    cases.append(
        ("element", TOL_SINGLE, lambda t: T.square(T.element(t[0], (1, 3, 4))), [u(2, 8, 8)])
    )
    pr = _proj(rng, (4, 16))
    cases.append(("reshape", TOL_SINGLE, lambda t: pr(T.reshape(t[0], (4, 16))), [u(1, 8, 8)]))
    pcr = _proj(rng, (1, 5, 6))
    cases.append(("crop2d", TOL_SINGLE, lambda t: pcr(T.crop2d(t[0], 5, 6)), [u(1, 8, 8)]))

    # composed network fragment: strided encoder, bilinear decoder, squashed head
    ke = u(3, 2, 5, 5)
    kd = u(1, 3, 5, 5)
    cases.append(
        (
            "composed_encoder_decoder",
            TOL_COMPOSED,
            lambda t: T.tmean(
                T.sigmoid(
                    T.conv2d(
                        T.upsample2(
                            T.leaky_relu(T.conv2d(t[0], t[1], stride=2, padding="reflect"), 0.2)
                        ),
                        t[2],
                        stride=1,
                        padding="reflect",
                    )
                )
            ),
            [u(2, 8, 8), ke, kd],
        )
    )

    # composed crosstalk blend: scalar weights from squashed picks, filtered mixing
    kf = u(1, 1, 3, 3)

    def blend(t):
        y1, y2, raw, kern = t
        a = T.sigmoid(T.element(raw, (0, 4, 4)))
        ghost = T.conv2d(y2, kern, stride=1, padding="reflect")
        mixed = T.add(T.mul(a, y1), T.mul(T.sub(1.0, a), ghost))
        return T.tmean(T.square(mixed))

    cases.append(
        ("composed_blend", TOL_COMPOSED, blend, [u(1, 8, 8), u(1, 8, 8), u(1, 8, 8), kf])
    )

    # composed multi-scale gradient-overlap penalty on 8x8 inputs
    def overlap(t):
        total = None
        for axis in ("x", "y"):
            g1 = T.absolute(T.spatial_gradient(t[0], axis))
            g2 = T.absolute(T.spatial_gradient(t[1], axis))
            lvl1, lvl2 = g1, g2
            for _ in range(3):
                term = T.tmean(T.mul(lvl1, lvl2))
                total = term if total is None else T.add(total, term)
                lvl1, lvl2 = T.downsample2(lvl1), T.downsample2(lvl2)
        return total

    cases.append(
        ("composed_gradient_overlap", TOL_COMPOSED, overlap, [u(1, 8, 8), u(1, 8, 8)])
    )

    return cases


def check_full_loss(seed=0, h=STEP):
    """Central-difference check of the whole objective through real generators.

    Three image networks at a toy channel schedule plus the trainable kernel
    pair feed the blend model and full loss on an 8x8 pair; every parameter
    of every network is perturbed.
    """
    from .model import FilterMode, alpha_from_dip3, synthesize, total_loss
    from .networks import build_deep_dip

    rng = np.random.default_rng(seed)
    size = 8
    toy = dict(depth=2, channels=(2, 3), skip_channels=2)
    g1 = build_deep_dip(size, size, seed=seed, label="g1", **toy)
    g2 = build_deep_dip(size, size, seed=seed + 1, label="g2", **toy)
    g3 = build_deep_dip(size, size, out_channels=2, seed=seed + 2, label="g3", **toy)
    filt = FilterMode.single_kernel()
    i1_obs = Tensor(rng.uniform(-1.0, 1.0, (1, size, size)))
    i2_obs = Tensor(rng.uniform(-1.0, 1.0, (1, size, size)))
    params = g1.parameters + g2.parameters + g3.parameters + filt.parameters()

    # epoch 50 keeps the weight anchor in the graph alongside the other terms
    def objective():
        y1 = g1.forward()
        y2 = g2.forward()
        alphas = alpha_from_dip3(g3.forward())
        i1, i2 = synthesize(y1, y2, alphas, filt)
        node, _ = total_loss(i1, i2, i1_obs, i2_obs, y1, y2, alphas, 0.2, epoch=50)
        return node

    objective().backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    for p in params:
        p.grad = None

    def f(arrays):
        for p, a in zip(params, arrays):
            p.data[...] = a
        return float(objective().item())

    numeric = numerical_grad(f, [p.data.copy() for p in params], h)
    return relative_error(analytic, numeric)


def run_suite(seed=0, h=STEP):
    """Run every case; returns [(name, error, tolerance, passed)]."""
    results = []
    for name, tol, forward, inputs in build_cases(seed):
        err = check_case(forward, inputs, h)
        results.append((name, err, tol, err <= tol))
    err = check_full_loss(seed, h)
    results.append(("composed_full_loss", err, TOL_COMPOSED, err <= TOL_COMPOSED))
    return results
