import numpy as np
import pytest

from coupalign import data
from coupalign.catn import load_tensors
from coupalign.config import RunConfig
from coupalign.model import CoupAlignModel
from coupalign.tensor import NumericError, Tensor
from coupalign.train import (
    AdamW,
    CORE_GRID,
    ablate,
    evaluate,
    load_checkpoint,
    poly_lr,
    save_checkpoint,
    train,
)

TINY = dict(image_size=16, patch=2, c1=4, lang_dim=8, joint_dim=8, query_dim=8,
            seg_dim=4, num_queries=2, t_max=16, decoder_layers=1, batch_size=8)


def tiny_cfg(**kw):
    return RunConfig(**{**TINY, **kw})


@pytest.fixture(scope="module")
def tiny_data():
    tr = data.generate(0, 16, h=16, w=16)
    va = data.generate(0, 6, h=16, w=16, index_base=data.SPLIT_BASES["val"])
    return tr, va


class TestPolyLr:
    def test_start_is_initial_rate(self):
        assert poly_lr(0, RunConfig()) == 3e-5

    def test_end_of_decay_is_end_rate(self):
        assert poly_lr(25, RunConfig()) == 1.5e-5

    def test_clamped_beyond_decay_window(self):
        assert poly_lr(40, RunConfig()) == 1.5e-5

    def test_linear_midpoint(self):
        cfg = RunConfig(poly_power=1.0)
        assert abs(poly_lr(12.5, cfg) - 2.25e-5) < 1e-12

    def test_monotone_nonincreasing(self):
        cfg = RunConfig()
        rates = [poly_lr(t, cfg) for t in range(0, 30)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestAdamW:
    def _single(self, value, grad, lr, wd):
        p = Tensor(np.array([value], dtype=np.float32), requires_grad=True)
        cfg = RunConfig(weight_decay=wd)
        opt = AdamW([("p", p)], cfg)
        p.grad = np.array([grad], dtype=np.float32)
        opt.step(lr)
        return p.data[0]

    def test_fresh_moments_reference_step(self):
        # m_hat = g, v_hat = g^2 -> step ~ lr * sign(g)
        got = self._single(1.0, 1.0, 0.1, 0.0)
        assert abs(got - (1.0 - 0.1 * 1.0 / (1.0 + 1e-8))) < 1e-6
        assert abs(got - 0.9) < 1e-6

    def test_zero_grad_zero_decay_is_identity(self):
        assert self._single(1.5, 0.0, 0.1, 0.0) == 1.5

    def test_decoupled_decay_only(self):
        got = self._single(2.0, 0.0, 0.1, 0.01)
        assert abs(got - 2.0 * (1 - 0.1 * 0.01)) < 1e-7

    def test_nonfinite_grad_aborts_with_name(self):
        p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        opt = AdamW([("enc.some.w", p)], RunConfig())
        p.grad = np.array([1.0, np.nan], dtype=np.float32)
        with pytest.raises(NumericError, match="enc.some.w"):
            opt.step(1e-3)


class TestTraining:
    def test_zero_lr_freezes_parameters(self, tiny_data, tmp_path):
        tr, va = tiny_data
        cfg = tiny_cfg(lr0=0.0, lr_end=0.0, epochs=2)
        before = {k: v.data.copy() for k, v in CoupAlignModel(cfg).params.items()}
        res = train(cfg, tr, va, tmp_path / "run")
        after = res["model"].params
        for k, v in before.items():
            if after[k].requires_grad:
                np.testing.assert_array_equal(after[k].data, v)
        lines = (tmp_path / "run" / "epochs.csv").read_text().splitlines()
        vals = {line.split(",")[3] for line in lines[1:]}
        assert len(vals) == 1  # val oIoU constant across epochs

    def test_identical_runs_identical_traces(self, tiny_data, tmp_path):
        tr, va = tiny_data
        cfg = tiny_cfg(lr0=1e-3, lr_end=5e-4, epochs=2)
        train(cfg, tr, va, tmp_path / "a")
        train(tiny_cfg(lr0=1e-3, lr_end=5e-4, epochs=2), tr, va, tmp_path / "b")
        assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

    def test_artifacts_written(self, tiny_data, tmp_path):
        tr, va = tiny_data
        res = train(tiny_cfg(lr0=1e-3, epochs=1), tr, va, tmp_path / "run")
        out = tmp_path / "run"
        for f in ("config.resolved.txt", "trace.csv", "epochs.csv", "metrics.csv",
                  "histogram.csv", "best.catn", "last.catn"):
            assert (out / f).exists(), f
        header = (out / "trace.csv").read_text().splitlines()[0]
        assert header == "step,loss_total,loss_seg,loss_aux,lr"
        mh = (out / "metrics.csv").read_text().splitlines()[0]
        assert mh == "split,oIoU,mIoU,prec50,prec70,prec90,n"
        assert res["steps"] == 2  # 16 samples / batch 8

    def test_checkpoint_roundtrip_one_step_bitwise(self, tiny_data, tmp_path):
        tr, va = tiny_data
        cfg = tiny_cfg(lr0=1e-3, epochs=1)
        res = train(cfg, tr, va, tmp_path / "run")
        model = res["model"]

        ckpt = tmp_path / "state.catn"
        opt = AdamW(model.trainable(), cfg)
        save_checkpoint(ckpt, model, opt, epoch=0, step=5, best_oiou=0.5)
        model2 = CoupAlignModel(cfg)
        opt2 = AdamW(model2.trainable(), cfg)
        meta = load_checkpoint(ckpt, model2, opt2)
        assert meta == {"epoch": 0, "step": 5, "best_oiou": 0.5}
        for k, v in model.params.items():
            np.testing.assert_array_equal(v.data, model2.params[k].data)

        from coupalign.train import _batch_step
        batch = tr[:4]
        opt.zero_grad()
        _batch_step(model, batch, cfg)
        opt.step(1e-3)
        opt2.zero_grad()
        _batch_step(model2, batch, cfg)
        opt2.step(1e-3)
        for (k1, p1), (_k2, p2) in zip(model.trainable(), model2.trainable()):
            assert np.array_equal(p1.data, p2.data), k1

    def test_resume_equals_uninterrupted(self, tiny_data, tmp_path):
        tr, va = tiny_data
        base = dict(lr0=1e-3, lr_end=5e-4)
        train(tiny_cfg(epochs=2, **base), tr, va, tmp_path / "full")
        train(tiny_cfg(epochs=1, **base), tr, va, tmp_path / "part")
        # resuming with the 2-epoch config continues from the saved epoch
        train(tiny_cfg(epochs=2, **base), tr, va, tmp_path / "part",
              resume=tmp_path / "part" / "last.catn")
        a = load_tensors(tmp_path / "full" / "last.catn")
        b = load_tensors(tmp_path / "part" / "last.catn")
        assert set(a) == set(b)
        mismatched = [k for k in a if not np.array_equal(a[k], b[k])
                      and not k.startswith("meta.config_hash")]
        assert mismatched == []

    def test_resume_trace_continues_identically(self, tiny_data, tmp_path):
        tr, va = tiny_data
        base = dict(lr0=1e-3, lr_end=5e-4)
        train(tiny_cfg(epochs=2, **base), tr, va, tmp_path / "full")
        train(tiny_cfg(epochs=1, **base), tr, va, tmp_path / "part")
        train(tiny_cfg(epochs=2, **base), tr, va, tmp_path / "part",
              resume=tmp_path / "part" / "last.catn")
        assert (tmp_path / "full" / "trace.csv").read_bytes() == \
            (tmp_path / "part" / "trace.csv").read_bytes()

    def test_nan_loss_aborts_keeping_last_checkpoint(self, tiny_data, tmp_path):
        tr, va = tiny_data
        cfg = tiny_cfg(lr0=1e-3, epochs=2)
        poisoned = [data.Sample(image=s.image, tokens=s.tokens, mask=s.mask) for s in tr]
        bad = poisoned[3].image.copy()
        bad[0, 0, 0] = np.nan
        poisoned[3] = data.Sample(image=bad, tokens=poisoned[3].tokens, mask=poisoned[3].mask)
        with pytest.raises(NumericError):
            train(cfg, poisoned, va, tmp_path / "run")

    def test_config_mismatch_on_resume(self, tiny_data, tmp_path):
        tr, va = tiny_data
        train(tiny_cfg(lr0=1e-3, epochs=1), tr, va, tmp_path / "run")
        from coupalign.config import ConfigError
        other = tiny_cfg(lr0=2e-3, epochs=1)
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "run" / "last.catn", CoupAlignModel(other))


class TestInertness:
    def _perturb_and_compare(self, cfg, prefixes, tiny_data):
        tr, _va = tiny_data
        s = tr[0]
        model = CoupAlignModel(cfg)
        before, _ = model.predict(s.image, s.tokens)
        rng = np.random.default_rng(0)
        touched = 0
        for k, p in model.params.items():
            if any(k.startswith(pref) for pref in prefixes):
                p.data = p.data + rng.standard_normal(p.data.shape).astype(p.data.dtype)
                touched += 1
        assert touched > 0
        after, _ = model.predict(s.image, s.tokens)
        np.testing.assert_array_equal(before, after)

    def test_wpa_off_makes_wpa_params_inert(self, tiny_data):
        self._perturb_and_compare(tiny_cfg(wpa_mode="off"), ["wpa."], tiny_data)

    def test_disabled_stage_params_inert(self, tiny_data):
        self._perturb_and_compare(tiny_cfg(wpa_stages=(1, 2)),
                                  ["wpa.stage3.", "wpa.stage4."], tiny_data)

    def test_uni_mode_language_gate_inert(self, tiny_data):
        prefixes = [f"wpa.stage{i}.gate_l" for i in (1, 2, 3, 4)]
        prefixes += [f"wpa.stage{i}.Wv_hat" for i in (1, 2, 3, 4)]
        self._perturb_and_compare(tiny_cfg(wpa_mode="uni"), prefixes, tiny_data)

    def test_sma_off_makes_sma_params_inert(self, tiny_data):
        self._perturb_and_compare(tiny_cfg(sma_enabled=False),
                                  ["dec.sma.", "dec.gen."], tiny_data)

    def test_sma_on_makes_off_head_inert(self, tiny_data):
        self._perturb_and_compare(tiny_cfg(sma_enabled=True), ["dec.smaoff."], tiny_data)


class TestAblate:
    def test_single_cell_grid_row_shape(self, tiny_data, tmp_path):
        tr, va = tiny_data
        import coupalign.train as T
        T.GRIDS["one"] = (("full", {}),)
        try:
            rows = ablate(tiny_cfg(lr0=1e-3, epochs=1), tr, va, tmp_path / "ab",
                          grid_name="one", n_seeds=2, log=lambda s: None)
        finally:
            del T.GRIDS["one"]
        assert len(rows) == 1
        assert len(rows[0]["mIoU"]) == 2
        assert (tmp_path / "ab" / "ablation.csv").exists()
        assert (tmp_path / "ab" / "ablation.txt").exists()

    def test_core_grid_composition(self):
        cells = [c for c, _ in CORE_GRID]
        assert cells == ["full", "uni-wpa", "no-wpa", "sma-off", "aux-off"]
