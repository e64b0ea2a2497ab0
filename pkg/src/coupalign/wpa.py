"""Word-Pixel Alignment: bidirectional cross-attention between stage-level
visual and word features, gated and residually injected into both encoder
streams before the next stage.

Both directions share one similarity matrix between pixels and words in a
joint embedding space; each direction attends over the other modality's
projected values and returns to its own width through a second projection.
A per-position gate (linear -> relu -> linear -> tanh, elementwise product
with its input) throttles how much fused signal enters the residual path.
"""

from __future__ import annotations

import math

import numpy as np

from coupalign import nn
from coupalign.tensor import (
    DimensionError,
    Tensor,
    add,
    matmul,
    mul,
    relu,
    scale,
    softmax,
    tanh,
    transpose,
)

MODES = ("bi", "uni", "off")


def init_wpa(params: dict, rng, stage_channels, lang_dim: int, joint_dim: int, dtype):
    """Projections and gates for stages 1..4; stage i sees C_i visual channels."""
    for i, c in enumerate(stage_channels, start=1):
        p = f"wpa.stage{i}"
        for name, (n_in, n_out) in (("Wv", (c, joint_dim)), ("Wl", (lang_dim, joint_dim)),
                                    ("Wl_hat", (joint_dim, c)), ("Wv_hat", (joint_dim, lang_dim))):
            params[f"{p}.{name}"] = Tensor(rng.normal(0, nn.xavier_std(n_in, n_out), (n_in, n_out)),
                                           requires_grad=True, dtype=dtype)
        # gate_v scales what enters the vision stream, gate_l the language stream
        nn.init_linear(params, rng, f"{p}.gate_v.fc1", c, c, dtype)
        nn.init_linear(params, rng, f"{p}.gate_v.fc2", c, c, dtype)
        nn.init_linear(params, rng, f"{p}.gate_l.fc1", lang_dim, lang_dim, dtype)
        nn.init_linear(params, rng, f"{p}.gate_l.fc2", lang_dim, lang_dim, dtype)
        # open the gates at init (tanh(0.5) ~ 0.46): a closed gate starves the
        # cross-modal path of gradient when the towers are not pretrained
        params[f"{p}.gate_v.fc2.b"].data += np.asarray(0.5, dtype=dtype)
        params[f"{p}.gate_l.fc2.b"].data += np.asarray(0.5, dtype=dtype)


def bi_attn(params: dict, stage: int, v: Tensor, l: Tensor, mask: np.ndarray,
            uni: bool = False, return_attn: bool = False):
    """Cross-modal context exchange at one stage.

    v: [P, C] flattened pixel features; l: [T, D] word features;
    mask: [T] bool, True on valid tokens.

    Returns (v_ctx [T, D], l_ctx [P, C]): v_ctx is vision context shaped
    for the language stream, l_ctx is language context shaped for the
    vision stream. In ``uni`` mode only l_ctx is computed.
    """
    p = f"wpa.stage{stage}"
    wv, wl = params[f"{p}.Wv"], params[f"{p}.Wl"]
    if v.shape[1] != wv.shape[0] or l.shape[1] != wl.shape[0]:
        raise DimensionError(
            f"bi_attn stage {stage}: got v {v.shape}, l {l.shape}, "
            f"expected channels {wv.shape[0]} and {wl.shape[0]}")
    d = wv.shape[1]
    v_hat = matmul(v, wv)                      # [P, d]
    l_hat = matmul(l, wl)                      # [T, d]
    attn = scale(matmul(v_hat, transpose(l_hat, (1, 0))), 1.0 / math.sqrt(d))  # [P, T]

    # language -> vision: pixels attend over words (masked), values are
    # the projected words, returned to visual width
    attn_pix = softmax(attn, axis=-1, mask=mask)
    l_ctx = matmul(matmul(attn_pix, l_hat), params[f"{p}.Wl_hat"])             # [P, C]
    if uni:
        if return_attn:
            return None, l_ctx, attn_pix
        return None, l_ctx

    # vision -> language: words attend over pixels; padded word rows are
    # zeroed so they inject nothing into the language stream
    attn_word = softmax(transpose(attn, (1, 0)), axis=-1)
    v_ctx = matmul(matmul(attn_word, v_hat), params[f"{p}.Wv_hat"])            # [T, D]
    v_ctx = mul(v_ctx, Tensor(mask[:, None].astype(v.data.dtype)))
    if return_attn:
        return v_ctx, l_ctx, attn_pix
    return v_ctx, l_ctx


def gate(params: dict, name: str, f: Tensor) -> Tensor:
    """Gate(F) = tanh(MLP(F)) ⊙ F, bounding the output by |F| elementwise."""
    g = tanh(nn.linear(params, f"{name}.fc2", relu(nn.linear(params, f"{name}.fc1", f))))
    return mul(g, f)


def wpa_step(params: dict, stage: int, v: Tensor, l: Tensor, mask: np.ndarray,
             mode: str, return_attn: bool = False):
    """One alignment exchange. Returns the inputs for the next encoder
    stages: bi updates both streams, uni only the vision stream, off is
    the identity."""
    if mode not in MODES:
        raise ValueError(f"wpa mode must be one of {MODES}, got {mode!r}")
    if mode == "off":
        return (v, l, None) if return_attn else (v, l)
    uni = mode == "uni"
    if uni:
        _, l_ctx, attn_pix = bi_attn(params, stage, v, l, mask, uni=True, return_attn=True)
        v_next = add(v, gate(params, f"wpa.stage{stage}.gate_v", l_ctx))
        l_next = l
    else:
        v_ctx, l_ctx, attn_pix = bi_attn(params, stage, v, l, mask, return_attn=True)
        v_next = add(v, gate(params, f"wpa.stage{stage}.gate_v", l_ctx))
        l_next = add(l, gate(params, f"wpa.stage{stage}.gate_l", v_ctx))
    if return_attn:
        return v_next, l_next, attn_pix
    return v_next, l_next
