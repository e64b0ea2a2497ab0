"""Post-encoder cross-modal fusion.

Projects the final visual map and word features into a shared width, adds
a learned positional embedding to the visual tokens, concatenates both
token sets (vision first) and runs one pre-norm multi-head attention
layer over the joint sequence. The visual rows of the result are
projected back to the visual channel width and added residually onto the
input map.
"""

from __future__ import annotations

import numpy as np

from coupalign import nn
from coupalign.tensor import Tensor, add, concat, matmul, narrow, reshape


def init_fusion(params: dict, rng, c_o: int, lang_dim: int, hw_o: int, dtype):
    nn.init_linear(params, rng, "fusion.vproj", c_o, lang_dim, dtype)
    nn.init_linear(params, rng, "fusion.lproj", lang_dim, lang_dim, dtype)
    params["fusion.pos"] = Tensor(rng.normal(0, nn.INIT_STD, (hw_o, lang_dim)),
                                  requires_grad=True, dtype=dtype)
    nn.init_norm(params, rng, "fusion.ln", lang_dim, dtype)
    nn.init_attention(params, rng, "fusion.attn", lang_dim, dtype)
    nn.init_linear(params, rng, "fusion.out", lang_dim, c_o, dtype)


def fuse(params: dict, v_o: Tensor, l_o: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    """(V_o [H,W,C_o], L_o [T,D]) -> fused map S_o [H,W,C_o]."""
    h, w, c_o = v_o.shape
    hw = h * w
    v_tok = add(nn.linear(params, "fusion.vproj", reshape(v_o, (hw, c_o))), params["fusion.pos"])
    l_tok = nn.linear(params, "fusion.lproj", l_o)
    f = concat([v_tok, l_tok], axis=0)                  # vision tokens first
    key_mask = np.concatenate([np.ones(hw, dtype=bool), mask])
    n = nn.norm(params, "fusion.ln", f)
    a = nn.attention(params, "fusion.attn", n, n, heads, key_mask=key_mask)
    s = nn.linear(params, "fusion.out", narrow(a, 0, 0, hw))
    return add(reshape(s, (h, w, c_o)), v_o)
