"""Training and evaluation orchestration.

AdamW with decoupled weight decay, polynomial learning-rate decay by
epoch, deterministic per-epoch shuffling, per-step loss traces, per-epoch
validation, best-checkpoint retention and bitwise-resumable checkpoints.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from coupalign import catn
from coupalign.config import ConfigError, RunConfig, config_hash, resolved_text
from coupalign.losses import aux_loss, seg_loss, total_loss
from coupalign.metrics import HIST_EDGES, EvalAccumulator
from coupalign.model import CoupAlignModel, binarize
from coupalign.tensor import NumericError, Tape, Tensor, backward


def poly_lr(t: float, cfg: RunConfig) -> float:
    """lr(t) = (lr0 - lr_end) * (1 - t/t_max)^p + lr_end, clamped to lr_end
    once t reaches the max decay epoch."""
    t_max = cfg.max_decay_epoch
    if t >= t_max:
        return cfg.lr_end
    return (cfg.lr0 - cfg.lr_end) * (1.0 - t / t_max) ** cfg.poly_power + cfg.lr_end


class AdamW:
    """Decoupled weight decay: theta <- theta - lr*wd*theta, applied
    separately from the bias-corrected Adam step."""

    def __init__(self, named_params, cfg: RunConfig):
        self.items = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.items}
        self.v = {k: np.zeros_like(p.data) for k, p in self.items}

    def step(self, lr: float):
        c = self.cfg
        self.t += 1
        b1c = 1.0 - c.beta1 ** self.t
        b2c = 1.0 - c.beta2 ** self.t
        for k, p in self.items:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {k!r}")
            m = self.m[k]
            v = self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            if c.weight_decay:
                p.data -= lr * c.weight_decay * p.data
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + c.adam_eps)

    def zero_grad(self):
        for _k, p in self.items:
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoints


RESUME_HASH_EXCLUDE = ("train.epochs",)  # resuming to train longer is fine


def _hash_to_array(hex_digest: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(hex_digest), dtype=np.uint8).astype(np.float32)


def save_checkpoint(path, model: CoupAlignModel, opt: AdamW | None, epoch: int,
                    step: int, best_oiou: float):
    tensors = {f"param.{k}": v for k, v in model.state_arrays().items()}
    if opt is not None:
        for k, _p in opt.items:
            tensors[f"opt.m.{k}"] = opt.m[k]
            tensors[f"opt.v.{k}"] = opt.v[k]
        tensors["meta.adam_t"] = np.array([opt.t], dtype=np.float64)
    tensors["meta.epoch"] = np.array([epoch], dtype=np.float64)
    tensors["meta.step"] = np.array([step], dtype=np.float64)
    tensors["meta.best_oiou"] = np.array([best_oiou], dtype=np.float64)
    tensors["meta.config_hash"] = _hash_to_array(config_hash(model.cfg, RESUME_HASH_EXCLUDE))
    catn.save_tensors(path, tensors)


def load_checkpoint(path, model: CoupAlignModel, opt: AdamW | None = None,
                    check_config: bool = True) -> dict:
    arrays = catn.load_tensors(path)
    if check_config:
        want = _hash_to_array(config_hash(model.cfg, RESUME_HASH_EXCLUDE))
        got = arrays.get("meta.config_hash")
        if got is None or not np.array_equal(got, want):
            raise ConfigError("checkpoint was produced under a different config")
    model.load_state({k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")})
    if opt is not None and "meta.adam_t" in arrays:
        for k, p in opt.items:
            opt.m[k] = arrays[f"opt.m.{k}"].astype(p.data.dtype).copy()
            opt.v[k] = arrays[f"opt.v.{k}"].astype(p.data.dtype).copy()
        opt.t = int(arrays["meta.adam_t"][0])
    return {
        "epoch": int(arrays["meta.epoch"][0]),
        "step": int(arrays["meta.step"][0]),
        "best_oiou": float(arrays["meta.best_oiou"][0]),
    }


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: CoupAlignModel, samples) -> tuple[dict, EvalAccumulator]:
    acc = EvalAccumulator()
    for s in samples:
        logits, _aux = model.predict(s.image, s.tokens)
        acc.accumulate(binarize(logits), s.mask)
    return acc.finalize(), acc


def write_metrics_csv(path, rows: dict):
    """rows: split name -> finalized metrics dict."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["split", "oIoU", "mIoU", "prec50", "prec70", "prec90", "n"])
        for split, m in rows.items():
            w.writerow([split, repr(m["oIoU"]), repr(m["mIoU"]), repr(m["prec@0.5"]),
                        repr(m["prec@0.7"]), repr(m["prec@0.9"]), m["n"]])


def write_histogram_csv(path, rows: dict):
    """rows: split name -> EvalAccumulator."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["split", "lo", "hi", "count"])
        for split, acc in rows.items():
            for k, count in enumerate(acc.iou_histogram()):
                w.writerow([split, HIST_EDGES[k], HIST_EDGES[k + 1], count])


# ---------------------------------------------------------------------------
# training loop


def _batch_step(model: CoupAlignModel, batch, cfg: RunConfig, update_stats: bool = True):
    """One optimizer-ready forward/backward over a batch; returns report."""
    seg_terms = []
    aux_terms = []
    with Tape():
        for s in batch:
            m_prime, aux = model.forward(Tensor(s.image.astype(model.dtype)), s.tokens,
                                         training=True, update_stats=update_stats)
            seg_terms.append(seg_loss(m_prime, s.mask))
            if cfg.aux_enabled:
                aux_terms.append(aux_loss(aux["y1"], s.mask, cfg.aux_temperature,
                                          cfg.aux_normalize))
            else:
                aux_terms.append((Tensor(np.zeros((), dtype=model.dtype)), False))
        lam = cfg.aux_weight if cfg.aux_enabled else 0.0
        tot, report = total_loss(seg_terms, aux_terms, lam)
        if not math.isfinite(report.total):
            raise NumericError(f"non-finite loss {report.total}")
        backward(tot)
    return report


def train(cfg: RunConfig, train_samples, val_samples, out_dir,
          resume: str | None = None, log=print) -> dict:
    """Full training run; writes config.resolved.txt, trace.csv, epochs.csv,
    best.catn and last.catn under ``out_dir``. Returns a summary dict."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(resolved_text(cfg), encoding="utf-8")

    model = CoupAlignModel(cfg)
    opt = AdamW(model.trainable(), cfg)
    start_epoch = 0
    step = 0
    best_oiou = -1.0
    if resume is not None:
        meta = load_checkpoint(resume, model, opt)
        start_epoch = meta["epoch"] + 1
        step = meta["step"]
        best_oiou = meta["best_oiou"]
        log(f"resumed from {resume} at epoch {start_epoch}")

    trace_path = out / "trace.csv"
    epochs_path = out / "epochs.csv"
    mode = "a" if resume is not None and trace_path.exists() else "w"
    trace_f = open(trace_path, mode, newline="")
    trace = csv.writer(trace_f)
    epochs_f = open(epochs_path, mode, newline="")
    epochs_csv = csv.writer(epochs_f)
    if mode == "w":
        trace.writerow(["step", "loss_total", "loss_seg", "loss_aux", "lr"])
        epochs_csv.writerow(["epoch", "lr", "mean_loss", "val_oIoU", "val_mIoU", "val_prec50"])

    n = len(train_samples)
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = poly_lr(epoch, cfg)
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 0x5F0F, epoch])).permutation(n)
            losses = []
            for lo in range(0, n, cfg.batch_size):
                batch = [train_samples[i] for i in order[lo:lo + cfg.batch_size]]
                opt.zero_grad()
                # a zero rate means the step is a no-op; keep norm buffers
                # frozen too so the run state truly does not change
                report = _batch_step(model, batch, cfg, update_stats=lr > 0)
                opt.step(lr)
                step += 1
                losses.append(report.total)
                trace.writerow([step, repr(report.total), repr(report.seg),
                                repr(report.aux), repr(lr)])
            val_metrics, _ = evaluate(model, val_samples)
            epochs_csv.writerow([epoch, repr(lr), repr(float(np.mean(losses))),
                                 repr(val_metrics["oIoU"]), repr(val_metrics["mIoU"]),
                                 repr(val_metrics["prec@0.5"])])
            trace_f.flush()
            epochs_f.flush()
            log(f"epoch {epoch:3d}  lr {lr:.3e}  loss {np.mean(losses):.4f}  "
                f"val oIoU {val_metrics['oIoU']:.4f} mIoU {val_metrics['mIoU']:.4f} "
                f"p@0.5 {val_metrics['prec@0.5']:.4f}")
            if val_metrics["oIoU"] > best_oiou:
                best_oiou = val_metrics["oIoU"]
                save_checkpoint(out / "best.catn", model, opt, epoch, step, best_oiou)
            save_checkpoint(out / "last.catn", model, opt, epoch, step, best_oiou)
    except NumericError:
        log(f"numeric failure; last good checkpoint: {out / 'last.catn'}")
        raise
    finally:
        trace_f.close()
        epochs_f.close()

    val_metrics, val_acc = evaluate(model, val_samples)
    write_metrics_csv(out / "metrics.csv", {"val": val_metrics})
    write_histogram_csv(out / "histogram.csv", {"val": val_acc})
    return {"best_oiou": best_oiou, "final_val": val_metrics, "steps": step,
            "model": model, "out_dir": str(out)}


# ---------------------------------------------------------------------------
# ablation grids


CORE_GRID = (
    ("full", {}),
    ("uni-wpa", {"wpa_mode": "uni"}),
    ("no-wpa", {"wpa_mode": "off"}),
    ("sma-off", {"sma_enabled": False}),
    ("aux-off", {"aux_enabled": False}),
)

STAGE_GRID = tuple(
    (f"stages-{''.join(map(str, sub))}", {"wpa_stages": sub})
    for sub in ((1, 2, 3, 4), (1, 2), (3, 4), (4,), (3,), (2,), (1,))
)

QUERY_GRID = tuple((f"n{n}", {"num_queries": n}) for n in (4, 16, 64))

GRIDS = {"core": CORE_GRID, "stages": STAGE_GRID, "queries": QUERY_GRID,
         "full": CORE_GRID + STAGE_GRID + QUERY_GRID}


def ablate(base_cfg: RunConfig, train_samples, val_samples, out_dir,
           grid_name: str = "core", n_seeds: int = 3, log=print) -> list:
    """Train/eval one run per (cell, seed); returns one aggregated row per
    cell with per-seed values, mean and sd of val mIoU and oIoU."""
    if grid_name not in GRIDS:
        raise ConfigError(f"unknown grid {grid_name!r}; choose from {sorted(GRIDS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell, overrides in GRIDS[grid_name]:
        per_seed = []
        for k in range(n_seeds):
            cfg = RunConfig(**{**base_cfg.__dict__, **overrides, "seed": base_cfg.seed + k})
            res = train(cfg, train_samples, val_samples, out / f"{cell}-seed{cfg.seed}",
                        log=lambda s: None)
            per_seed.append(res["final_val"])
            log(f"[{cell} seed {cfg.seed}] mIoU {res['final_val']['mIoU']:.4f} "
                f"oIoU {res['final_val']['oIoU']:.4f}")
        miou = [m["mIoU"] for m in per_seed]
        oiou = [m["oIoU"] for m in per_seed]
        rows.append({
            "cell": cell,
            "mIoU_mean": float(np.mean(miou)), "mIoU_sd": float(np.std(miou)),
            "oIoU_mean": float(np.mean(oiou)), "oIoU_sd": float(np.std(oiou)),
            "mIoU": miou, "oIoU": oiou,
        })
    with open(out / "ablation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell", "mIoU_mean", "mIoU_sd", "oIoU_mean", "oIoU_sd"])
        for r in rows:
            w.writerow([r["cell"], repr(r["mIoU_mean"]), repr(r["mIoU_sd"]),
                        repr(r["oIoU_mean"]), repr(r["oIoU_sd"])])
    table = format_ablation_table(rows)
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    log(table)
    if grid_name in ("core", "full"):
        for line in ordering_report(rows):
            log(line)
    return rows


def format_ablation_table(rows) -> str:
    lines = [f"{'cell':<14} {'mIoU':>16} {'oIoU':>16}"]
    for r in rows:
        lines.append(f"{r['cell']:<14} {r['mIoU_mean']:>8.4f}±{r['mIoU_sd']:<7.4f} "
                     f"{r['oIoU_mean']:>8.4f}±{r['oIoU_sd']:<7.4f}")
    return "\n".join(lines) + "\n"


def ordering_report(rows, tol: float = 0.01) -> list:
    """Directional expectations on mean val mIoU: full >= uni >= no-wpa and
    full >= sma-off, aux-off, each gap allowed down to -tol."""
    by = {r["cell"]: r["mIoU_mean"] for r in rows}
    checks = [
        ("full >= uni-wpa", by.get("full"), by.get("uni-wpa")),
        ("uni-wpa >= no-wpa", by.get("uni-wpa"), by.get("no-wpa")),
        ("full >= sma-off", by.get("full"), by.get("sma-off")),
        ("full >= aux-off", by.get("full"), by.get("aux-off")),
    ]
    lines = []
    for label, a, b in checks:
        if a is None or b is None:
            continue
        ok = a - b >= -tol
        lines.append(f"{'ok  ' if ok else 'VIOLATION'} {label}: {a:.4f} vs {b:.4f}")
    return lines
