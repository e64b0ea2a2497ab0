"""Three-seed reference training at the calibrated toy config on the
default 500/100/100 benchmark. Used once to freeze the acceptance
thresholds; re-run to reproduce the headline numbers.

Usage: python scripts/run_reference.py [out_dir]
"""

import sys
import time
import warnings

warnings.filterwarnings("ignore")

import numpy as np

from coupalign import data
from coupalign.acceptance import TRAINING_CONFIG
from coupalign.config import RunConfig
from coupalign.train import evaluate, train

out_root = sys.argv[1] if len(sys.argv) > 1 else "runs/reference"


def main():
    tr = data.generate(0, 500, index_base=data.SPLIT_BASES["train"])
    va = data.generate(0, 100, index_base=data.SPLIT_BASES["val"])
    te = data.generate(0, 100, index_base=data.SPLIT_BASES["test"])
    results = []
    for seed in (0, 1, 2):
        cfg = RunConfig(**{**TRAINING_CONFIG, "seed": seed})
        t0 = time.time()
        res = train(cfg, tr, va, f"{out_root}/seed{seed}")
        mins = (time.time() - t0) / 60
        test_metrics, _ = evaluate(res["model"], te)
        print(f"seed {seed}: {mins:.1f} min  val mIoU {res['final_val']['mIoU']:.4f} "
              f"p@0.5 {res['final_val']['prec@0.5']:.4f}  test mIoU {test_metrics['mIoU']:.4f}")
        results.append(res["final_val"])
    miou = [r["mIoU"] for r in results]
    p50 = [r["prec@0.5"] for r in results]
    print(f"val mIoU  mean {np.mean(miou):.4f} min {min(miou):.4f}")
    print(f"val p@0.5 mean {np.mean(p50):.4f} min {min(p50):.4f}")


if __name__ == "__main__":
    main()
