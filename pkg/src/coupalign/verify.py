"""Numeric verification harness: finite-difference gradient checks for
every differentiable op and for the assembled pipeline at 64-bit."""

from __future__ import annotations

import numpy as np

from coupalign import wpa
from coupalign.config import RunConfig
from coupalign.losses import aux_loss, seg_loss
from coupalign.model import CoupAlignModel
from coupalign.tensor import (
    Tensor,
    batch_norm,
    bilinear_upsample,
    concat,
    conv2d,
    exp,
    grad_check,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    narrow,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    space_to_depth2,
    take_rows,
    tanh,
    transpose,
    tsum,
)

GRAD_TOL = 1e-4
FD_H = 1e-5


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def op_grad_checks(seed: int) -> dict[str, float]:
    """Max relative FD error per registered differentiable op (shapes <= 6
    per extent, random 64-bit inputs)."""
    rng = np.random.default_rng(seed)
    out = {}

    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    c = _t(rng, 1, 4)
    out["add/sub/mul/scale"] = grad_check(lambda: tsum((a + b) * c - scale(b, 0.3)), [a, b, c], h=FD_H)

    m1, m2 = _t(rng, 4, 3), _t(rng, 3, 5)
    out["matmul"] = grad_check(lambda: tsum(matmul(m1, m2) * matmul(m1, m2)), [m1, m2], h=FD_H)

    for name, fn in (("relu", relu), ("tanh", tanh), ("sigmoid", sigmoid),
                     ("softplus", softplus), ("exp", exp)):
        x = _t(rng, 4, 5)
        out[name] = grad_check(lambda: tsum(fn(x) * fn(x)), [x], h=FD_H)

    xp = Tensor(rng.uniform(0.5, 3.0, (3, 4)), requires_grad=True, dtype=np.float64)
    out["log"] = grad_check(lambda: tsum(log(xp)), [xp], h=FD_H)

    x = _t(rng, 4, 5)
    w = Tensor(rng.standard_normal((4, 5)))
    out["softmax"] = grad_check(lambda: tsum(softmax(x, axis=-1) * w), [x], h=FD_H)
    mk = np.array([True, True, False, True, False])
    out["softmax(masked)"] = grad_check(lambda: tsum(softmax(x, axis=-1, mask=mk) * w), [x], h=FD_H)
    out["logsumexp"] = grad_check(lambda: tsum(logsumexp(x, axis=1)), [x], h=FD_H)
    out["l2_normalize"] = grad_check(lambda: tsum(l2_normalize(x) * w), [x], h=FD_H)
    out["mean"] = grad_check(lambda: mean(x * x), [x], h=FD_H)

    xs = _t(rng, 4, 4, 2)
    k1 = _t(rng, 1, 1, 2, 3)
    k3 = _t(rng, 3, 3, 2, 3)
    out["conv2d(1x1)"] = grad_check(lambda: tsum(conv2d(xs, k1) * conv2d(xs, k1)), [xs, k1], h=FD_H)
    out["conv2d(3x3)"] = grad_check(lambda: tsum(conv2d(xs, k3) * conv2d(xs, k3)), [xs, k3], h=FD_H)
    wup = Tensor(rng.standard_normal((8, 8, 2)))
    out["bilinear_upsample"] = grad_check(lambda: tsum(bilinear_upsample(xs, 2) * wup), [xs], h=FD_H)

    g, bta = _t(rng, 5), _t(rng, 5)
    wn = Tensor(rng.standard_normal((4, 5)))
    out["layer_norm"] = grad_check(lambda: tsum(layer_norm(x, g, bta) * wn), [x, g, bta], h=FD_H)
    g3, b3 = _t(rng, 5), _t(rng, 5)
    rm = Tensor(np.zeros(5), dtype=np.float64)
    rv = Tensor(np.ones(5), dtype=np.float64)
    out["batch_norm"] = grad_check(
        lambda: tsum(batch_norm(x, g3, b3, rm, rv, training=True) * wn), [x, g3, b3], h=FD_H)

    s1, s2 = _t(rng, 2, 3), _t(rng, 2, 3)
    xg = _t(rng, 4, 4, 2)
    out["shape ops"] = grad_check(
        lambda: tsum(narrow(reshape(transpose(concat([s1, s2], 0), (1, 0)), (2, 6)), 1, 1, 3))
        + mean(space_to_depth2(xg) * space_to_depth2(xg))
        + tsum(take_rows(s1, np.array([0, 0, 1]))),
        [s1, s2, xg], h=FD_H)

    return out


def _jitter(params, rng, scale: float = 0.1):
    """Move parameters to a generic point: zero-initialized biases put relu
    preactivations exactly on kinks, where finite differences are
    unreliable regardless of analytic correctness."""
    for p in params.values():
        if p.requires_grad:
            p.data = p.data + rng.normal(0.0, scale, p.data.shape)


def composite_wpa_sma_check(seed: int) -> float:
    """WPA exchange feeding a small SMA-style readout, against FD."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    wpa.init_wpa(params, rng, (3,), lang_dim=4, joint_dim=4, dtype=np.float64)
    _jitter(params, rng)
    v = _t(rng, 4, 3)       # 2x2 grid flattened
    l = _t(rng, 3, 4)
    mask = np.array([True, True, False])
    wsel = Tensor(rng.standard_normal((3, 4)))  # 3 proposal embeddings

    def build():
        v2, l2 = wpa.wpa_step(params, 1, v, l, mask, "bi")
        cos = matmul(l2_normalize(narrow(l2, 0, 0, 1)), transpose(l2_normalize(wsel), (1, 0)))
        qw = softmax(cos, axis=-1)
        yn = matmul(wsel, transpose(l2, (1, 0)))
        m = matmul(qw, yn)
        return tsum(m * m) + tsum(v2 * v2)

    wrt = [v, l] + [p for p in params.values() if p.requires_grad]
    return grad_check(build, wrt, h=FD_H)


def pipeline_grad_check(seed: int, tensor_fraction: float = 0.5,
                        coords_per_tensor: int = 2) -> float:
    """End-to-end check: 16x16 image, T = 4 tokens, N = 2 proposals, both
    losses, 64-bit. Coordinates are sampled (the full pipeline has ~1e5)."""
    cfg = RunConfig(image_size=16, patch=2, c1=4, lang_dim=8, joint_dim=8,
                    query_dim=8, seg_dim=4, num_queries=2, t_max=4, heads=2,
                    fusion_heads=2, decoder_layers=1, mlp_ratio=2, seed=seed)
    model = CoupAlignModel(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed + 101)
    _jitter(model.params, rng, scale=0.05)
    image = Tensor(rng.uniform(0.0, 1.0, (16, 16, 3)), requires_grad=True, dtype=np.float64)
    tokens = np.array([1, 2, 8, 0])  # CLS, two words, one pad
    gt = (rng.uniform(size=(16, 16)) < 0.4).astype(np.uint8)

    def build():
        m_prime, aux = model.forward(image, tokens, training=True)
        la, _ = aux_loss(aux["y1"], gt, tau=1.0)
        return seg_loss(m_prime, gt) + scale(la, 0.1)

    trainables = [p for _k, p in model.trainable()]
    pick = rng.random(len(trainables)) < tensor_fraction
    wrt = [image] + [p for p, take in zip(trainables, pick) if take]
    return grad_check(build, wrt, h=FD_H, max_coords=coords_per_tensor,
                      rng=np.random.default_rng(seed + 202))


def run_all(seeds=(0, 1, 2), log=print) -> bool:
    """Every op + composite + pipeline across seeds; prints one line per
    check; returns overall pass/fail at GRAD_TOL."""
    ok = True
    for seed in seeds:
        for name, err in op_grad_checks(seed).items():
            good = err < GRAD_TOL
            ok &= good
            log(f"{'ok  ' if good else 'FAIL'} seed {seed} {name:<20} rel err {err:.3e}")
        err = composite_wpa_sma_check(seed)
        good = err < GRAD_TOL
        ok &= good
        log(f"{'ok  ' if good else 'FAIL'} seed {seed} {'wpa+sma composite':<20} rel err {err:.3e}")
        err = pipeline_grad_check(seed)
        good = err < GRAD_TOL
        ok &= good
        log(f"{'ok  ' if good else 'FAIL'} seed {seed} {'full pipeline':<20} rel err {err:.3e}")
    return ok
