"""KVC / CE / ALP ablation grid over several seeds, written as CSV.

    python3 scripts/run_ablation.py --config scripts/configs/desk_sub_class.ini \
        --seeds 0 1 2 3 4 --out runs/ablation.csv
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from siamunlearn import experiments as ex
from siamunlearn.config import ExperimentConfig, load_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="experiment config (defaults when omitted)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--out", help="CSV file for the grid")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    rows = ex.ablation_grid(cfg, args.seeds)
    text = ex.ablation_csv(rows, cfg.config_hash())
    print(text, end="")
    print("\nmedians over seeds")
    for toggles in ex.ABLATION_GRID:
        sel = [r for r in rows if (r["kvc"], r["ce"], r["alp"]) == toggles]
        flags = "".join("x" if t else "-" for t in toggles)
        print(f"  kvc/ce/alp={flags}  " + "  ".join(
            f"{k}={np.median([r[k] for r in sel]):.2f}" for k in ("acc_dr", "acc_df", "mia")))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
