import numpy as np

from coupalign import fusion
from coupalign.tensor import Tensor, grad_check, tsum

DT = np.float64


def make_params(rng, c_o=6, d=8, hw=4, dtype=DT):
    params = {}
    fusion.init_fusion(params, rng, c_o, d, hw, dtype)
    return params


def test_zero_value_and_output_projections_give_residual_identity():
    rng = np.random.default_rng(0)
    params = make_params(rng)
    for k in ("fusion.attn.v.w", "fusion.attn.v.b", "fusion.attn.o.w", "fusion.attn.o.b",
              "fusion.out.w", "fusion.out.b"):
        params[k].data = np.zeros_like(params[k].data)
    v_o = Tensor(rng.standard_normal((2, 2, 6)), dtype=DT)
    l_o = Tensor(rng.standard_normal((3, 8)), dtype=DT)
    s_o = fusion.fuse(params, v_o, l_o, np.array([True, True, False]), heads=2)
    np.testing.assert_array_equal(s_o.data, v_o.data)


def test_shape_contract():
    rng = np.random.default_rng(1)
    params = make_params(rng)
    v_o = Tensor(rng.standard_normal((2, 2, 6)), dtype=DT)
    l_o = Tensor(rng.standard_normal((3, 8)), dtype=DT)
    s_o = fusion.fuse(params, v_o, l_o, np.ones(3, dtype=bool), heads=2)
    assert s_o.shape == (2, 2, 6)
    assert params["fusion.pos"].shape == (4, 8)  # vision tokens ahead of 3 language rows


def test_padded_token_permutation_invariance():
    rng = np.random.default_rng(2)
    params = make_params(rng)
    v_o = Tensor(rng.standard_normal((2, 2, 6)), dtype=DT)
    l = rng.standard_normal((4, 8))
    mask = np.array([True, True, False, False])
    a = fusion.fuse(params, v_o, Tensor(l, dtype=DT), mask, heads=2)
    l_perm = l.copy()
    l_perm[[2, 3]] = l_perm[[3, 2]]  # swap the two padded rows
    b = fusion.fuse(params, v_o, Tensor(l_perm, dtype=DT), mask, heads=2)
    np.testing.assert_array_equal(a.data, b.data)


def test_padded_token_content_invariance():
    rng = np.random.default_rng(3)
    params = make_params(rng)
    v_o = Tensor(rng.standard_normal((2, 2, 6)), dtype=DT)
    l = rng.standard_normal((4, 8))
    mask = np.array([True, True, True, False])
    a = fusion.fuse(params, v_o, Tensor(l, dtype=DT), mask, heads=2)
    l2 = l.copy()
    l2[3] = 99.0
    b = fusion.fuse(params, v_o, Tensor(l2, dtype=DT), mask, heads=2)
    np.testing.assert_array_equal(a.data, b.data)


def test_gradcheck_fuse():
    rng = np.random.default_rng(4)
    params = make_params(rng, c_o=4, d=4, hw=4)
    for k, p in params.items():
        if k.endswith(".b"):
            p.data = rng.normal(0, 0.1, p.data.shape)
    v_o = Tensor(rng.standard_normal((2, 2, 4)), requires_grad=True, dtype=DT)
    l_o = Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=DT)
    mask = np.array([True, True, False])

    def build():
        s = fusion.fuse(params, v_o, l_o, mask, heads=2)
        return tsum(s * s)

    wrt = [v_o, l_o] + [p for p in params.values() if p.requires_grad]
    assert grad_check(build, wrt) < 1e-4
