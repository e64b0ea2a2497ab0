"""Full model: two-stream encoders with interleaved word-pixel alignment,
cross-modal fusion, mask-proposal decoding and sentence-mask alignment.

Parameters live in a flat name -> Tensor store so checkpoints, the
optimizer and ablation inertness checks all see one namespace.
"""

from __future__ import annotations

import numpy as np

from coupalign import decoder, encoders, fusion, nn, wpa
from coupalign.config import RunConfig
from coupalign.tensor import Tensor, bilinear_upsample, reshape

VOCAB_SIZE = 32  # fixed table of the synthetic benchmark, see data.py


class CoupAlignModel:
    """Holds the parameter store and runs the prediction pipeline."""

    def __init__(self, cfg: RunConfig, seed: int | None = None, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed if seed is None else seed, 0xC0DE]))
        ch = cfg.stage_channels()
        c_o = ch[-1]                                   # stage 4 preserves width
        hw_o = (cfg.image_size // (cfg.patch * 8)) ** 2
        encoders.init_image_encoder(self.params, rng, cfg.patch, cfg.c1, cfg.mlp_ratio, dtype,
                                    grid=cfg.image_size // cfg.patch)
        encoders.init_language_encoder(self.params, rng, VOCAB_SIZE, cfg.t_max, cfg.lang_dim,
                                       cfg.mlp_ratio, dtype)
        wpa.init_wpa(self.params, rng, ch, cfg.lang_dim, cfg.joint_dim, dtype)
        fusion.init_fusion(self.params, rng, c_o, cfg.lang_dim, hw_o, dtype)
        decoder.init_mask_generator(self.params, rng, cfg.num_queries, cfg.query_dim, c_o,
                                    cfg.decoder_layers, cfg.mlp_ratio, dtype)
        decoder.init_seg_head(self.params, rng, c_o, ch, cfg.seg_dim, dtype)
        decoder.init_sma(self.params, rng, cfg.query_dim, cfg.seg_dim, cfg.lang_dim, dtype)
        decoder.init_sma_off_head(self.params, rng, cfg.seg_dim, dtype)

    def trainable(self):
        return [(k, v) for k, v in sorted(self.params.items()) if v.requires_grad]

    def forward(self, image: Tensor, token_ids: np.ndarray, training: bool,
                collect_attn: bool = False, update_stats: bool | None = None):
        """Run the pipeline; returns (mask logits M' [H,W], aux dict).

        ``image`` is an [H,W,3] tensor, ``token_ids`` an int sequence with
        the classification token first and id-0 padding. ``update_stats``
        controls whether train-mode norm statistics are folded into the
        running buffers (defaults to ``training``).
        """
        cfg = self.cfg
        e, mask = encoders.embed_tokens(self.params, token_ids)
        l = e
        v_grid = encoders.patchify(self.params, image, cfg.patch)
        v_stages = []
        wpa_attn = {}
        for i in range(1, 5):
            h, w, c = v_grid.shape
            v_flat = reshape(v_grid, (h * w, c))
            if cfg.wpa_mode != "off" and i in cfg.wpa_stages:
                v_flat, l, attn = wpa.wpa_step(self.params, i, v_flat, l, mask,
                                               cfg.wpa_mode, return_attn=True)
                if collect_attn:
                    wpa_attn[i] = (attn.data.copy(), (h, w))
            # the stage-i feature handed to the seg pyramid is the tensor the
            # stage actually consumes, i.e. after the alignment exchange
            v_grid = reshape(v_flat, (h, w, c))
            v_stages.append(v_grid)
            v_grid = encoders.image_stage(self.params, v_grid, i, cfg.heads)
            l = encoders.language_stage(self.params, l, i, cfg.heads, mask)
        l_g = encoders.extract_sentence(l)
        s_o = fusion.fuse(self.params, v_grid, l, mask, cfg.fusion_heads)
        y_1 = decoder.seg_head(self.params, s_o, v_stages, training, cfg.seg_norm_order,
                               update_stats=update_stats)
        aux = {"y1": y_1, "l_g": l_g, "wpa_attn": wpa_attn}
        if cfg.sma_enabled:
            q_o = decoder.mask_generator(self.params, s_o, cfg.decoder_layers, cfg.heads)
            q_w, y_n, m = decoder.sma(self.params, q_o, y_1, l_g)
            aux.update(q_o=q_o, q_w=q_w, y_n=y_n)
        else:
            m = decoder.sma_off_mask(self.params, y_1)
        aux["m_low"] = m
        hy, wy = m.shape
        factor = cfg.image_size // hy
        m3 = reshape(m, (hy, wy, 1))
        m_prime = reshape(bilinear_upsample(m3, factor), (cfg.image_size, cfg.image_size))
        return m_prime, aux

    def predict(self, image_array: np.ndarray, token_ids: np.ndarray,
                collect_attn: bool = False):
        """Eval-mode forward on raw arrays (no tape, running norm stats)."""
        img = Tensor(np.asarray(image_array, dtype=self.dtype))
        m_prime, aux = self.forward(img, token_ids, training=False, collect_attn=collect_attn)
        return m_prime.data, aux

    # -- persistence ------------------------------------------------------

    def state_arrays(self) -> dict:
        return dict(sorted(self.params.items()))

    def load_state(self, arrays: dict):
        for k, v in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint missing parameter {k!r}")
            got = np.asarray(arrays[k], dtype=v.data.dtype)
            if got.shape != v.data.shape:
                raise ValueError(f"parameter {k!r}: shape {got.shape} != {v.data.shape}")
            v.data = got.copy()


def binarize(logits: np.ndarray) -> np.ndarray:
    """Evaluation threshold: sigmoid(logit) >= 0.5, i.e. logit >= 0."""
    return (logits >= 0.0).astype(np.uint8)
