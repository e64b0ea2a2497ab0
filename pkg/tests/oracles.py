"""Independent brute-force oracles shared by the unit and acceptance
tests. Every function here is a direct transcription of the defining
formula (explicit loops, no vectorization) and shares no code with the
implementations it checks."""

import math

import numpy as np


def naive_matmul(a, b):
    m, k = a.shape
    _k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_conv2d(x, k, stride, pad):
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            for di in range(kh):
                for dj in range(kw):
                    for ci in range(cin):
                        for co in range(cout):
                            out[i, j, co] += xp[i * stride + di, j * stride + dj, ci] * k[di, dj, ci, co]
    return out


def naive_bilinear(x, f):
    h, w, c = x.shape
    out = np.zeros((h * f, w * f, c), dtype=np.float64)
    for i in range(h * f):
        for j in range(w * f):
            si = min(max((i + 0.5) / f - 0.5, 0.0), h - 1.0)
            sj = min(max((j + 0.5) / f - 0.5, 0.0), w - 1.0)
            i0, j0 = int(np.floor(si)), int(np.floor(sj))
            i1, j1 = min(i0 + 1, h - 1), min(j0 + 1, w - 1)
            wi, wj = si - i0, sj - j0
            out[i, j] = ((1 - wi) * (1 - wj) * x[i0, j0] + (1 - wi) * wj * x[i0, j1]
                         + wi * (1 - wj) * x[i1, j0] + wi * wj * x[i1, j1])
    return out


def bce_oracle(logits, mask):
    total = 0.0
    for x, m in zip(logits.reshape(-1), mask.reshape(-1)):
        p = 1.0 / (1.0 + math.exp(-x))
        total += -(m * math.log(p) + (1 - m) * math.log(1 - p))
    return total / logits.size


def info_nce_oracle(y, coarse_mask, tau, normalize=True):
    flat = y.reshape(-1, y.shape[-1])
    m = coarse_mask.reshape(-1)
    pos = flat[m == 1]
    neg = flat[m == 0]
    if len(pos) == 0 or len(neg) == 0:
        return 0.0
    pp, pn = pos.mean(axis=0), neg.mean(axis=0)
    if normalize:
        norm = lambda v: v / max(np.linalg.norm(v), 1e-12)
        pos = np.array([norm(v) for v in pos])
        neg = np.array([norm(v) for v in neg])
        pp, pn = norm(pp), norm(pn)
    l_p2n = 0.0
    for a in pos:
        num = math.exp(a @ pp / tau)
        den = num + sum(math.exp(a @ k / tau) for k in neg)
        l_p2n += -math.log(num / den)
    l_n2p = 0.0
    for a in neg:
        num = math.exp(a @ pn / tau)
        den = num + sum(math.exp(a @ k / tau) for k in pos)
        l_n2p += -math.log(num / den)
    return l_p2n / len(pos) + l_n2p / len(neg)


def counting_oracle(pairs):
    inter_total = 0
    union_total = 0
    ious = []
    for pred, gt in pairs:
        inter = 0
        union = 0
        for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
            if p and g:
                inter += 1
            if p or g:
                union += 1
        inter_total += inter
        union_total += union
        ious.append(1.0 if union == 0 else inter / union)
    out = {
        "oIoU": 1.0 if union_total == 0 else inter_total / union_total,
        "mIoU": sum(ious) / len(ious),
    }
    for eps in (0.5, 0.7, 0.9):
        out[f"prec@{eps}"] = sum(1 for v in ious if v > eps) / len(ious)
    return out, ious
