"""Shared neural building blocks: linear layers, pre-norm attention blocks,
and parameter initialization over a flat name -> Tensor store."""

from __future__ import annotations

import math

import numpy as np

from coupalign.tensor import (
    Tensor,
    add,
    concat,
    layer_norm,
    matmul,
    narrow,
    relu,
    scale,
    softmax,
    transpose,
)

INIT_STD = 0.02  # embeddings, positions, queries


def xavier_std(n_in: int, n_out: int) -> float:
    return math.sqrt(2.0 / (n_in + n_out))


def init_linear(params: dict, rng, name: str, n_in: int, n_out: int, dtype):
    params[f"{name}.w"] = Tensor(rng.normal(0.0, xavier_std(n_in, n_out), (n_in, n_out)),
                                 requires_grad=True, dtype=dtype)
    params[f"{name}.b"] = Tensor(np.zeros(n_out), requires_grad=True, dtype=dtype)


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    return add(matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def init_norm(params: dict, rng, name: str, dim: int, dtype):
    params[f"{name}.g"] = Tensor(np.ones(dim), requires_grad=True, dtype=dtype)
    params[f"{name}.b"] = Tensor(np.zeros(dim), requires_grad=True, dtype=dtype)


def norm(params: dict, name: str, x: Tensor) -> Tensor:
    return layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def init_attention(params: dict, rng, name: str, dim: int, dtype):
    for proj in ("q", "k", "v", "o"):
        init_linear(params, rng, f"{name}.{proj}", dim, dim, dtype)


def attention(params: dict, name: str, q_in: Tensor, kv_in: Tensor, heads: int,
              key_mask: np.ndarray | None = None, return_weights: bool = False):
    """Multi-head scaled dot-product attention, [Nq,dim] x [Nk,dim] -> [Nq,dim].

    ``key_mask`` (True = attendable) silences keys for every query row.
    """
    dim = q_in.shape[1]
    dh = dim // heads
    q = linear(params, f"{name}.q", q_in)
    k = linear(params, f"{name}.k", kv_in)
    v = linear(params, f"{name}.v", kv_in)
    outs = []
    weights = []
    for h in range(heads):
        qh = narrow(q, 1, h * dh, dh)
        kh = narrow(k, 1, h * dh, dh)
        vh = narrow(v, 1, h * dh, dh)
        scores = scale(matmul(qh, transpose(kh, (1, 0))), 1.0 / math.sqrt(dh))
        w = softmax(scores, axis=-1, mask=key_mask)
        weights.append(w)
        outs.append(matmul(w, vh))
    out = linear(params, f"{name}.o", concat(outs, axis=1))
    if return_weights:
        return out, weights
    return out


def init_mlp(params: dict, rng, name: str, dim: int, hidden: int, dtype):
    init_linear(params, rng, f"{name}.fc1", dim, hidden, dtype)
    init_linear(params, rng, f"{name}.fc2", hidden, dim, dtype)


def mlp(params: dict, name: str, x: Tensor) -> Tensor:
    return linear(params, f"{name}.fc2", relu(linear(params, f"{name}.fc1", x)))


def init_block(params: dict, rng, name: str, dim: int, mlp_ratio: int, dtype):
    """One pre-norm self-attention + MLP transformer block."""
    init_norm(params, rng, f"{name}.ln1", dim, dtype)
    init_attention(params, rng, f"{name}.attn", dim, dtype)
    init_norm(params, rng, f"{name}.ln2", dim, dtype)
    init_mlp(params, rng, f"{name}.mlp", dim, dim * mlp_ratio, dtype)


def block(params: dict, name: str, x: Tensor, heads: int,
          key_mask: np.ndarray | None = None) -> Tensor:
    n1 = norm(params, f"{name}.ln1", x)
    x = add(x, attention(params, f"{name}.attn", n1, n1, heads, key_mask))
    x = add(x, mlp(params, f"{name}.mlp", norm(params, f"{name}.ln2", x)))
    return x
