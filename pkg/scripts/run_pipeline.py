"""Pretrain, unlearn with several methods and evaluate, over several seeds.

Each seed is an independent replicate (fresh data draw, initialisation and
split). Prints one table per seed plus per-method medians and writes every
report to a CSV.

    python3 scripts/run_pipeline.py --config scripts/configs/desk_full_class.ini \
        --seeds 0 1 2 3 4 --methods siamese retrain finetune --out runs/full_class.csv
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from siamunlearn import experiments as ex
from siamunlearn.config import METHODS, ExperimentConfig, load_config
from siamunlearn.evaluation import format_table, report_csv_header, report_csv_row


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="experiment config (defaults when omitted)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--methods", nargs="+", default=["siamese"], choices=METHODS)
    parser.add_argument("--out", help="CSV file for all reports")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    base = load_config(args.config) if args.config else ExperimentConfig()
    all_reports = []
    for seed in args.seeds:
        start = time.perf_counter()
        cfg = ex.replicate(base, seed)
        train, test = ex.load_datasets(cfg)
        split = ex.make_split(cfg, train)
        original, _ = ex.pretrain(cfg, train)
        reports = [ex.evaluate(cfg, original, train, test, split, "original")]
        for method in args.methods:
            run_cfg = replace(cfg, unlearn=replace(cfg.unlearn, method=method))
            net, _, runtime = ex.run_method(run_cfg, original, train, split)
            reports.append(ex.evaluate(run_cfg, net, train, test, split, method, runtime))
        print(f"seed {seed} ({time.perf_counter() - start:.0f}s)")
        print(format_table(reports), flush=True)
        all_reports += reports

    by_method = defaultdict(list)
    for r in all_reports:
        by_method[r.method].append(r)
    print("\nmedians over seeds")
    for method, reps in by_method.items():
        med = {k: float(np.median([getattr(r, k) for r in reps])) for k in ("acc_dr", "acc_df", "ta", "mia")}
        print(f"  {method:10s} " + "  ".join(f"{k}={v:.2f}" for k, v in med.items()))

    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# config_hash: {base.config_hash()}", report_csv_header()]
        lines += [report_csv_row(r) for r in all_reports]
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote {len(all_reports)} reports to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
