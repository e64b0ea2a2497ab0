"""Desk-scale mirror of the paper-style ablation grids: WPA variants,
SMA/aux switches, WPA stage subsets, and the proposal-count sweep.

Usage: python scripts/run_ablation.py [core|stages|queries|full] [out_dir]
"""

import sys
import warnings

warnings.filterwarnings("ignore")

from coupalign import data
from coupalign.acceptance import ABLATION_CONFIG
from coupalign.config import RunConfig
from coupalign.train import ablate

grid = sys.argv[1] if len(sys.argv) > 1 else "core"
out = sys.argv[2] if len(sys.argv) > 2 else f"runs/ablation-{grid}"


def main():
    cfg = RunConfig(**ABLATION_CONFIG)
    h = cfg.image_size
    tr = data.generate(0, 220, h=h, w=h, index_base=data.SPLIT_BASES["train"])
    va = data.generate(0, 60, h=h, w=h, index_base=data.SPLIT_BASES["val"])
    ablate(cfg, tr, va, out, grid_name=grid, n_seeds=3)


if __name__ == "__main__":
    main()
