#!/usr/bin/env python3
"""Run the 8-way context ablation over a seed set and summarize the directional checks.

Writes one ablation.csv per seed under OUT/seed<N>/ plus OUT/summary.csv with
the scene-only and all-on comparisons for every seed.
"""

import argparse
import csv
import logging
import time
from dataclasses import replace
from pathlib import Path

from ctxreid import io
from ctxreid.cli import AblationRow, ablation_table
from ctxreid.config import DEFAULT_SEEDS, ExperimentConfig, load_config

log = logging.getLogger("run_ablation")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="experiment YAML (defaults to the built-in config)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    if args.config:
        base = load_config(args.config, args.overrides)
    elif args.overrides:
        raise SystemExit("--set needs --config")
    else:
        base = ExperimentConfig()

    summary = []
    for seed in args.seeds:
        t0 = time.perf_counter()
        cfg = replace(base.with_seed(seed), output_dir=args.out / f"seed{seed}")
        rows = ablation_table(cfg)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        io.write_rows(cfg.output_dir / "ablation.csv", rows, AblationRow)
        f = {(r.detection_context, r.memory_context, r.scene_context): r.pairwise_f for r in rows}
        singles = max(f[True, False, False], f[False, True, False], f[False, False, True])
        rec = {
            "seed": seed,
            "f_none": f[False, False, False],
            "f_scene": f[False, False, True],
            "f_best_single": singles,
            "f_all": f[True, True, True],
            "scene_beats_none": int(f[False, False, True] > f[False, False, False]),
            "all_beats_singles": int(f[True, True, True] >= singles),
        }
        summary.append(rec)
        log.info("seed %d: none %.3f scene %.3f best single %.3f all %.3f (%.0fs)", seed,
                 rec["f_none"], rec["f_scene"], singles, rec["f_all"], time.perf_counter() - t0)

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    n = len(summary)
    print(f"scene-only > baseline: {sum(r['scene_beats_none'] for r in summary)}/{n} seeds")
    print(f"all-on >= every single context: {sum(r['all_beats_singles'] for r in summary)}/{n} seeds")


if __name__ == "__main__":
    main()
