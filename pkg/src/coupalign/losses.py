"""Training objectives: pixel-wise binary cross-entropy on the upsampled
mask logits, plus an auxiliary pixel-contrastive term that pulls
foreground pixel embeddings toward their prototype against background
distractors (and symmetrically), InfoNCE-style with temperature tau."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from coupalign.tensor import (
    InputError,
    Tensor,
    concat,
    l2_normalize,
    logsumexp,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    softplus,
    sub,
    take_rows,
    transpose,
    tsum,
)


@dataclass
class LossReport:
    """Per-batch loss summary (plain floats, for traces and logs)."""
    total: float
    seg: float
    aux: float
    per_image: list = field(default_factory=list)
    aux_skipped: int = 0


def seg_loss(m_prime: Tensor, gt_mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of logits against a {0,1} mask.

    Uses the softplus identity BCE(x, m) = softplus(x) - m*x, which is
    exact and overflow-free for any logit.
    """
    gt = np.asarray(gt_mask)
    if gt.shape != m_prime.shape:
        raise InputError(f"mask shape {gt.shape} != logits shape {m_prime.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise InputError("ground-truth mask must be binary")
    gt = gt.astype(m_prime.data.dtype)
    return mean(sub(softplus(m_prime), mul(m_prime, Tensor(gt))))


def downsample_mask(gt_mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbor resize to (h, w); keeps the mask binary."""
    gh, gw = gt_mask.shape
    ri = np.minimum((np.floor((np.arange(h) + 0.5) * gh / h)).astype(int), gh - 1)
    ci = np.minimum((np.floor((np.arange(w) + 0.5) * gw / w)).astype(int), gw - 1)
    return gt_mask[np.ix_(ri, ci)]


def _info_nce(anchors: Tensor, proto: Tensor, distractors: Tensor, tau: float) -> Tensor:
    """-(1/|A|) sum_i log[ e^{a_i.p/tau} / (e^{a_i.p/tau} + sum_k e^{a_i.d_k/tau}) ]"""
    s_pos = scale(matmul(anchors, transpose(proto, (1, 0))), 1.0 / tau)          # [A,1]
    s_neg = scale(matmul(anchors, transpose(distractors, (1, 0))), 1.0 / tau)    # [A,K]
    lse = logsumexp(concat([s_pos, s_neg], axis=1), axis=1)                      # [A]
    return mean(sub(lse, reshape(s_pos, (s_pos.shape[0],))))


def aux_loss(y_1: Tensor, gt_mask: np.ndarray, tau: float, normalize: bool = True):
    """Contrastive pixel loss on the seg-head embeddings.

    The ground-truth mask is nearest-downsampled to the embedding grid;
    pixel vectors (and the per-set mean prototypes) are L2-normalized
    before dot products unless ``normalize`` is off. Returns
    (loss tensor, skipped flag); an image whose coarse mask has an empty
    foreground or background set is skipped with loss 0.
    """
    h, w, ds = y_1.shape
    coarse = downsample_mask(np.asarray(gt_mask), h, w)
    flat = coarse.reshape(-1)
    pos_idx = np.flatnonzero(flat == 1)
    neg_idx = np.flatnonzero(flat == 0)
    if pos_idx.size == 0 or neg_idx.size == 0:
        return Tensor(np.zeros((), dtype=y_1.data.dtype)), True
    yf = reshape(y_1, (h * w, ds))
    yp = take_rows(yf, pos_idx)
    yn = take_rows(yf, neg_idx)
    # prototypes are means of the raw vectors, normalized afterwards
    pp = scale(reshape(tsum(yp, axis=0), (1, ds)), 1.0 / pos_idx.size)
    pn = scale(reshape(tsum(yn, axis=0), (1, ds)), 1.0 / neg_idx.size)
    if normalize:
        yp, yn = l2_normalize(yp), l2_normalize(yn)
        pp, pn = l2_normalize(pp), l2_normalize(pn)
    p2n = _info_nce(yp, pp, yn, tau)
    n2p = _info_nce(yn, pn, yp, tau)
    return p2n + n2p, False


def total_loss(seg_terms, aux_terms, lam: float):
    """Batch objective: mean_j (seg_j + lambda * aux_j).

    Returns (scalar tensor, LossReport). ``aux_terms`` entries are
    (tensor, skipped) pairs from aux_loss; lambda = 0 reproduces the
    aux-off ablation exactly.
    """
    b = len(seg_terms)
    assert b == len(aux_terms) and b > 0
    per_image = []
    parts = []
    skipped = 0
    for s, (a, skip) in zip(seg_terms, aux_terms):
        parts.append(s + scale(a, lam))
        per_image.append((s.item(), a.item()))
        skipped += int(skip)
    tot = scale(parts[0], 1.0) if b == 1 else None
    if b > 1:
        acc = parts[0]
        for p in parts[1:]:
            acc = acc + p
        tot = scale(acc, 1.0 / b)
    report = LossReport(
        total=tot.item(),
        seg=float(np.mean([p[0] for p in per_image])),
        aux=float(np.mean([p[1] for p in per_image])),
        per_image=per_image,
        aux_skipped=skipped,
    )
    return tot, report
