"""Command-line interface.

Subcommands: gen-data | train | eval | ablate | gradcheck | export-attn.
Config comes from an optional ``key = value`` file plus repeatable
``--set key=value`` overrides (CLI beats file). Exit codes: 0 ok,
2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from coupalign import data, train as training, verify
from coupalign.catn import CatnFormatError
from coupalign.config import ConfigError, RunConfig, apply_overrides, load_config, resolved_text
from coupalign.export import export_sample_maps
from coupalign.model import CoupAlignModel
from coupalign.tensor import InputError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pairs = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    apply_overrides(cfg, pairs)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _load_split(root, split: str, cfg: RunConfig | None = None):
    samples = data.load_dataset(Path(root) / split)
    if cfg is not None and samples and samples[0].image.shape[0] != cfg.image_size:
        raise ConfigError(
            f"dataset images are {samples[0].image.shape[0]}px but dims.image = {cfg.image_size}")
    return samples


def cmd_gen_data(args) -> int:
    n_side = max(1, args.n // 5)
    for split, count in (("train", args.n), ("val", n_side), ("test", n_side)):
        samples = data.generate(args.seed, count, args.image_size, args.image_size,
                                args.t_max, index_base=data.SPLIT_BASES[split])
        data.save_dataset(samples, Path(args.out) / split)
        print(f"{split}: {count} samples -> {Path(args.out) / split}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    tr = _load_split(args.data, "train", cfg)
    va = _load_split(args.data, "val", cfg)
    res = training.train(cfg, tr, va, args.out_dir, resume=args.resume)
    print(f"done: best val oIoU {res['best_oiou']:.4f} after {res['steps']} steps")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    samples = _load_split(args.data, args.split, cfg)
    model = CoupAlignModel(cfg)
    training.load_checkpoint(args.checkpoint, model, check_config=not args.no_config_check)
    metrics, acc = training.evaluate(model, samples)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(resolved_text(cfg), encoding="utf-8")
    training.write_metrics_csv(out / "metrics.csv", {args.split: metrics})
    training.write_histogram_csv(out / "histogram.csv", {args.split: acc})
    print(f"{args.split}: oIoU {metrics['oIoU']:.4f} mIoU {metrics['mIoU']:.4f} "
          f"p@0.5 {metrics['prec@0.5']:.4f} p@0.7 {metrics['prec@0.7']:.4f} "
          f"p@0.9 {metrics['prec@0.9']:.4f} (n={metrics['n']})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    tr = _load_split(args.data, "train", cfg)
    va = _load_split(args.data, "val", cfg)
    training.ablate(cfg, tr, va, args.out_dir, grid_name=args.grid, n_seeds=args.seeds)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(","))
    ok = verify.run_all(seeds=seeds)
    if not ok:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("all gradient checks passed")
    return EXIT_OK


def cmd_export_attn(args) -> int:
    cfg = _resolve_config(args)
    samples = _load_split(args.data, args.split, cfg)[: args.count]
    model = CoupAlignModel(cfg)
    if args.checkpoint:
        training.load_checkpoint(args.checkpoint, model, check_config=not args.no_config_check)
    for i, s in enumerate(samples):
        files = export_sample_maps(model, s, args.out_dir, f"sample{i}")
        print(f"sample {i}: wrote {len(files)} maps")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coupalign",
                                description="referring segmentation on synthetic shapes")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=500, help="train size; val/test get n//5 each")
    g.add_argument("--out", required=True)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--t-max", type=int, default=16)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    _add_config_args(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(e)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--no-config-check", action="store_true")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    _add_config_args(a)
    a.add_argument("--data", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--grid", default="core", choices=sorted(training.GRIDS))
    a.add_argument("--seeds", type=int, default=3, help="seeds per cell")
    a.set_defaults(fn=cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--seeds", default="0,1,2")
    gc.set_defaults(fn=cmd_gradcheck)

    x = sub.add_parser("export-attn", help="export attention maps as PGM images")
    _add_config_args(x)
    x.add_argument("--data", required=True)
    x.add_argument("--split", default="val", choices=("train", "val", "test"))
    x.add_argument("--checkpoint")
    x.add_argument("--out-dir", required=True)
    x.add_argument("--count", type=int, default=3)
    x.add_argument("--no-config-check", action="store_true")
    x.set_defaults(fn=cmd_export_attn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CatnFormatError, InputError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
