"""Mask-proposal decoding: query-based mask generator, multi-scale
segmentation head, and sentence-mask alignment.

The mask generator refines N learnable queries through pre-norm decoder
layers (self-attention over queries, cross-attention to the fused map,
MLP). The segmentation head climbs the feature pyramid from the fused map
back to quarter resolution, mixing in each encoder stage's visual
features. Sentence-mask alignment scores every decoded proposal against
the sentence vector by cosine similarity, forms per-proposal mask maps as
inner products with the pixel embeddings, and recombines them with the
softmax scores into the final mask logits.
"""

from __future__ import annotations

import numpy as np

from coupalign import nn
from coupalign.tensor import (
    ContractError,
    Tensor,
    add,
    batch_norm,
    bilinear_upsample,
    conv2d,
    l2_normalize,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)


# ---------------------------------------------------------------------------
# mask generator


def init_mask_generator(params: dict, rng, n_queries: int, query_dim: int, c_o: int,
                        layers: int, mlp_ratio: int, dtype):
    if n_queries < 1:
        raise ContractError(f"number of queries must be >= 1, got {n_queries}")
    params["dec.gen.queries"] = Tensor(rng.normal(0, nn.INIT_STD, (n_queries, query_dim)),
                                       requires_grad=True, dtype=dtype)
    nn.init_linear(params, rng, "dec.gen.sproj", c_o, query_dim, dtype)
    for j in range(layers):
        p = f"dec.gen.layer{j}"
        nn.init_norm(params, rng, f"{p}.ln1", query_dim, dtype)
        nn.init_attention(params, rng, f"{p}.self", query_dim, dtype)
        nn.init_norm(params, rng, f"{p}.ln2", query_dim, dtype)
        nn.init_attention(params, rng, f"{p}.cross", query_dim, dtype)
        nn.init_norm(params, rng, f"{p}.ln3", query_dim, dtype)
        nn.init_mlp(params, rng, f"{p}.mlp", query_dim, query_dim * mlp_ratio, dtype)


def mask_generator(params: dict, s_o: Tensor, layers: int, heads: int) -> Tensor:
    """Decode the learnable queries against the fused map: -> Q_o [N, d_q]."""
    h, w, c_o = s_o.shape
    mem = nn.linear(params, "dec.gen.sproj", reshape(s_o, (h * w, c_o)))
    x = params["dec.gen.queries"]
    for j in range(layers):
        p = f"dec.gen.layer{j}"
        n1 = nn.norm(params, f"{p}.ln1", x)
        x = add(x, nn.attention(params, f"{p}.self", n1, n1, heads))
        x = add(x, nn.attention(params, f"{p}.cross", nn.norm(params, f"{p}.ln2", x), mem, heads))
        x = add(x, nn.mlp(params, f"{p}.mlp", nn.norm(params, f"{p}.ln3", x)))
    return x


# ---------------------------------------------------------------------------
# segmentation head


def init_seg_head(params: dict, rng, c_o: int, stage_channels, seg_dim: int, dtype):
    """Pyramid blocks for levels 4..1; level i consumes Y_{i+1} and V_i."""
    cin = c_o
    for i in (4, 3, 2, 1):
        p = f"dec.seg.rho{i}"
        for j, (ci, co) in enumerate(((cin, seg_dim), (seg_dim, seg_dim)), start=1):
            he = np.sqrt(2.0 / (9 * ci))
            params[f"{p}.conv{j}.k"] = Tensor(rng.normal(0, he, (3, 3, ci, co)),
                                              requires_grad=True, dtype=dtype)
            params[f"{p}.conv{j}.b"] = Tensor(np.zeros(co), requires_grad=True, dtype=dtype)
            params[f"{p}.bn{j}.g"] = Tensor(np.ones(co), requires_grad=True, dtype=dtype)
            params[f"{p}.bn{j}.b"] = Tensor(np.zeros(co), requires_grad=True, dtype=dtype)
            params[f"{p}.bn{j}.mean"] = Tensor(np.zeros(co), dtype=dtype)
            params[f"{p}.bn{j}.var"] = Tensor(np.ones(co), dtype=dtype)
        ci = stage_channels[i - 1]
        params[f"dec.seg.gamma{i}.k"] = Tensor(
            rng.normal(0, np.sqrt(2.0 / ci), (1, 1, ci, seg_dim)),
            requires_grad=True, dtype=dtype)
        params[f"dec.seg.gamma{i}.b"] = Tensor(np.zeros(seg_dim), requires_grad=True, dtype=dtype)
        cin = seg_dim


def _rho(params: dict, prefix: str, y: Tensor, order: str, update_stats: bool) -> Tensor:
    """Two conv layers; default order conv -> relu -> batch-norm, optionally
    conv -> batch-norm -> relu."""
    for j in (1, 2):
        y = add(conv2d(y, params[f"{prefix}.conv{j}.k"], padding=1), params[f"{prefix}.conv{j}.b"])
        bn = lambda t: batch_norm(t, params[f"{prefix}.bn{j}.g"], params[f"{prefix}.bn{j}.b"],
                                  params[f"{prefix}.bn{j}.mean"], params[f"{prefix}.bn{j}.var"],
                                  training=True, update_stats=update_stats)
        if order == "relu_bn":
            y = bn(relu(y))
        elif order == "bn_relu":
            y = relu(bn(y))
        else:
            raise ValueError(f"unknown norm order {order!r}")
    return y


def seg_head(params: dict, s_o: Tensor, v_stages, training: bool,
             order: str = "relu_bn", update_stats: bool | None = None) -> Tensor:
    """Y_5 = S_o; Y_i = Up2(rho_i(Y_{i+1})) + gamma_i(V_i) for i = 4..1.

    S_o and V_4 share the 1/32 resolution, so the first lateral is added
    without upsampling; the remaining three levels each double.

    Norm statistics are per image in both phases: batch items are
    independent (each rides a private tape), so an image's own spatial
    statistics are the only ones its graph can see; global running
    buffers are still folded during training steps but would mis-scale
    evaluation at these tiny spatial pools.
    """
    if update_stats is None:
        update_stats = training
    y = s_o
    for i in (4, 3, 2, 1):
        y = _rho(params, f"dec.seg.rho{i}", y, order, update_stats and training)
        if i != 4:
            y = bilinear_upsample(y, 2)
        v = v_stages[i - 1]
        lat = add(conv2d(v, params[f"dec.seg.gamma{i}.k"]), params[f"dec.seg.gamma{i}.b"])
        if y.shape[:2] != lat.shape[:2]:
            raise ContractError(
                f"seg_head level {i}: pyramid {y.shape[:2]} vs lateral {lat.shape[:2]}")
        y = add(y, lat)
    return y


# ---------------------------------------------------------------------------
# sentence-mask alignment


def init_sma(params: dict, rng, query_dim: int, seg_dim: int, lang_dim: int, dtype):
    params["dec.sma.Wq"] = Tensor(rng.normal(0, nn.xavier_std(query_dim, lang_dim), (query_dim, lang_dim)),
                                  requires_grad=True, dtype=dtype)
    params["dec.sma.Wy"] = Tensor(rng.normal(0, nn.xavier_std(seg_dim, lang_dim), (seg_dim, lang_dim)),
                                  requires_grad=True, dtype=dtype)


def init_sma_off_head(params: dict, rng, seg_dim: int, dtype):
    params["dec.smaoff.k"] = Tensor(rng.normal(0, np.sqrt(2.0 / seg_dim), (1, 1, seg_dim, 1)),
                                    requires_grad=True, dtype=dtype)
    params["dec.smaoff.b"] = Tensor(np.zeros(1), requires_grad=True, dtype=dtype)


def sma(params: dict, q_o: Tensor, y_1: Tensor, l_g: Tensor):
    """Score proposals against the sentence and recombine their mask maps.

    Returns (Q_w [1,N], Y_N [N,h,w], M [h,w]); M entries are unbounded
    logits, Q_w is a probability vector.
    """
    h, w, _ = y_1.shape
    n = q_o.shape[0]
    q_hat = matmul(q_o, params["dec.sma.Wq"])                        # [N, D]
    y_hat = matmul(reshape(y_1, (h * w, y_1.shape[2])), params["dec.sma.Wy"])  # [hw, D]
    cos = matmul(l2_normalize(l_g, axis=-1), transpose(l2_normalize(q_hat, axis=-1), (1, 0)))
    q_w = softmax(cos, axis=-1)                                      # [1, N]
    y_n = matmul(q_hat, transpose(y_hat, (1, 0)))                    # [N, hw]
    m = reshape(matmul(q_w, y_n), (h, w))
    return q_w, reshape(y_n, (n, h, w)), m


def sma_off_mask(params: dict, y_1: Tensor) -> Tensor:
    """Ablation readout: learned 1x1 conv from pixel embeddings to logits."""
    h, w, _ = y_1.shape
    m = add(conv2d(y_1, params["dec.smaoff.k"]), params["dec.smaoff.b"])
    return reshape(m, (h, w))
