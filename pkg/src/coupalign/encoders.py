"""Toy four-stage image and language encoders.

Both streams expose the same stage interface: four visual feature maps
V_1..V_4 at 1/4 .. 1/32 of the input resolution (stages 1-3 halve the
spatial extents and double the channels; stage 4 keeps the 1/32 grid)
paired with four word-feature matrices L_1..L_4, so word-pixel alignment
can interleave with encoding at every depth. Stage transforms are a single
pre-norm self-attention + MLP block; the image side prepends a 2x2
patch-merge on the halving stages, the language side masks attention to
valid (non-padding) tokens. The global sentence vector is the final
features' leading classification-token row.
"""

from __future__ import annotations

import numpy as np

from coupalign import nn
from coupalign.tensor import (
    ContractError,
    InputError,
    Tensor,
    add,
    narrow,
    reshape,
    space_to_depth2,
    take_rows,
)

PAD_ID = 0


def init_image_encoder(params: dict, rng, patch: int, c1: int, mlp_ratio: int, dtype,
                       grid: int | None = None):
    if patch not in (1, 2, 4):
        raise ContractError(f"patch size must be 1, 2 or 4, got {patch}")
    nn.init_linear(params, rng, "enc.img.patch", 3 * patch * patch, c1, dtype)
    if grid is not None:
        # learned absolute position embedding on the patch grid; without it
        # the attention stages are permutation-equivariant over pixels and
        # spatial expressions cannot be grounded
        params["enc.img.pos"] = Tensor(rng.normal(0.0, nn.INIT_STD, (grid * grid, c1)),
                                       requires_grad=True, dtype=dtype)
    c = c1
    for i in (1, 2, 3):
        nn.init_linear(params, rng, f"enc.img.stage{i}.merge", 4 * c, 2 * c, dtype)
        nn.init_block(params, rng, f"enc.img.stage{i}.block", 2 * c, mlp_ratio, dtype)
        c *= 2
    # stage 4 keeps the H/32 resolution: attention block only, no merge
    nn.init_block(params, rng, "enc.img.stage4.block", c, mlp_ratio, dtype)


def init_language_encoder(params: dict, rng, vocab_size: int, t_max: int, d: int,
                          mlp_ratio: int, dtype):
    params["enc.lang.embed"] = Tensor(rng.normal(0.0, nn.INIT_STD, (vocab_size, d)),
                                      requires_grad=True, dtype=dtype)
    params["enc.lang.pos"] = Tensor(rng.normal(0.0, nn.INIT_STD, (t_max, d)),
                                    requires_grad=True, dtype=dtype)
    for i in range(1, 5):
        nn.init_block(params, rng, f"enc.lang.stage{i}", d, mlp_ratio, dtype)


def patchify(params: dict, image: Tensor, patch: int) -> Tensor:
    """[H,W,3] -> [H/patch, W/patch, C_1] via non-overlapping patch embedding
    plus, when present, the learned grid position embedding."""
    h, w, _ = image.shape
    if h % patch or w % patch:
        raise ContractError(f"image extents {h}x{w} not divisible by patch size {patch}")
    t = image
    p = patch
    while p > 1:
        t = space_to_depth2(t)
        p //= 2
    hp, wp, cp = t.shape
    flat = nn.linear(params, "enc.img.patch", reshape(t, (hp * wp, cp)))
    if "enc.img.pos" in params:
        flat = add(flat, params["enc.img.pos"])
    return reshape(flat, (hp, wp, flat.shape[1]))


def image_stage(params: dict, v: Tensor, i: int, heads: int) -> Tensor:
    """Stage i transform. Stages 1-3: patch-merge then one attention
    block, [H,W,C] -> [H/2, W/2, 2C]. Stage 4 runs the block at the same
    resolution, so the encoder output stays at 1/32 of the input image."""
    h, w, c = v.shape
    if i == 4:
        x = nn.block(params, "enc.img.stage4.block", reshape(v, (h * w, c)), heads)
        return reshape(x, (h, w, c))
    if h % 2 or w % 2:
        raise ContractError(
            f"image_stage{i}: odd spatial extent {h}x{w} "
            f"(input image must be divisible by patch*8, i.e. 32 at patch 4)")
    m = space_to_depth2(v)
    hm, wm, _ = m.shape
    x = nn.linear(params, f"enc.img.stage{i}.merge", reshape(m, (hm * wm, 4 * c)))
    x = nn.block(params, f"enc.img.stage{i}.block", x, heads)
    return reshape(x, (hm, wm, 2 * c))


def embed_tokens(params: dict, ids: np.ndarray):
    """Token ids -> (embeddings [T,D], validity mask). Row j is the table
    row for ids[j] plus the position-j embedding."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size == 0:
        raise InputError("empty expression")
    table = params["enc.lang.embed"]
    pos = params["enc.lang.pos"]
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise InputError(f"token id out of range (vocab size {table.shape[0]})")
    if ids.size > pos.shape[0]:
        raise InputError(f"expression longer than t_max={pos.shape[0]}")
    e = add(take_rows(table, ids), narrow(pos, 0, 0, ids.size))
    mask = ids != PAD_ID
    return e, mask


def language_stage(params: dict, l: Tensor, i: int, heads: int, mask: np.ndarray) -> Tensor:
    """Stage i transform over [T,D]; padding positions get zero attention."""
    if not mask.any():
        raise ContractError("language_stage: all tokens are padding")
    return nn.block(params, f"enc.lang.stage{i}", l, heads, key_mask=mask)


def extract_sentence(l_final: Tensor) -> Tensor:
    """Global sentence vector: row 0 (the classification token), [1,D]."""
    return narrow(l_final, 0, 0, 1)
