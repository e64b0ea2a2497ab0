"""Attention-map export as 8-bit grayscale PGM images (binary P5),
min-max normalized per map: proposal weights Q_w, per-word WPA attention
at every enabled stage, and the predicted mask for reference."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from coupalign import data


def write_pgm(path, array: np.ndarray) -> None:
    """Min-max normalize a 2-D array to u8 and write binary PGM."""
    a = np.asarray(array, dtype=np.float64)
    lo, hi = a.min(), a.max()
    scaled = np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo)
    u8 = np.round(scaled * 255).astype(np.uint8)
    h, w = u8.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def export_sample_maps(model, sample, out_dir, tag: str) -> list:
    """Run prediction with attention collection and dump all maps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logits, aux = model.predict(sample.image, sample.tokens, collect_attn=True)
    written = []

    def emit(name, arr):
        p = out / f"{tag}_{name}.pgm"
        write_pgm(p, arr)
        written.append(p)

    emit("pred", logits)
    if "q_w" in aux:
        emit("qw", aux["q_w"].data.reshape(1, -1))
    words = [data.ID_TO_WORD.get(int(t), "?") for t in sample.tokens]
    for stage, (attn, (h, w)) in aux["wpa_attn"].items():
        for t, word in enumerate(words):
            if int(sample.tokens[t]) == data.VOCAB[data.PAD]:
                continue
            emit(f"stage{stage}_tok{t}_{word.strip('<>')}", attn[:, t].reshape(h, w))
    return written
