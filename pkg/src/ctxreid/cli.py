"""Command-line entry point: ``gen``, ``train``, ``ablate`` and ``eval``.

Exit codes: 0 success, 1 domain error, 2 I/O or format error, 3 divergence.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ConfigFormatError, ExperimentConfig, dump_config, load_config
from .core import ClusterSet
from .metrics import memory_retrieval, pairwise_scores
from .simulator import TrainingDiverged, WorldConfigError, generate_world, run_training

logger = logging.getLogger("ctxreid")

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


@dataclass(frozen=True)
class AblationRow:
    detection_context: bool
    memory_context: bool
    scene_context: bool
    pairwise_f: float
    nmi: float
    retrieval_map: float
    retrieval_top1: float


TOGGLES = tuple(itertools.product((False, True), repeat=3))


def ablation_table(cfg: ExperimentConfig) -> list[AblationRow]:
    """Train every toggle combination on one shared world and seed."""
    world = generate_world(cfg.world)
    rows = []
    for det, mem, scene in TOGGLES:
        sched = replace(cfg.schedule, use_detection_context=det, use_memory_context=mem,
                        use_scene_context=scene)
        final = run_training(world, sched, cfg.loss, cfg.dbscan, seed=cfg.seed).final
        logger.info("det=%d mem=%d scene=%d: F=%.4f", det, mem, scene, final.pairwise_f)
        rows.append(AblationRow(det, mem, scene, final.pairwise_f, final.nmi,
                                final.retrieval_map, final.retrieval_top1))
    return rows


def _outdir(cfg: ExperimentConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def cmd_gen(cfg: ExperimentConfig) -> int:
    world = generate_world(cfg.world)
    out = _outdir(cfg)
    io.write_dataset(out / "dataset.csv", world.instances())
    io.write_truth(out / "truth.csv", world.ids, world.truth)
    print(f"{world.count} instances, {world.scenes.scene_count} scenes, "
          f"{len(np.unique(world.truth))} identities -> {out}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig) -> int:
    world = generate_world(cfg.world)
    out = _outdir(cfg)
    (out / "config.yaml").write_text(dump_config(cfg))
    try:
        report = run_training(world, cfg.schedule, cfg.loss, cfg.dbscan, seed=cfg.seed)
    except TrainingDiverged as exc:
        snap = out / "diverged.snap"
        if exc.snapshot is not None:
            io.write_snapshot(snap, exc.snapshot)
        print(f"training diverged at epoch {exc.epoch}: {exc}; snapshot: {snap}", file=sys.stderr)
        return EXIT_DIVERGED
    io.write_rows(out / "report.csv", report.rows)
    io.write_rows(out / "trajectory.csv", report.trajectory)
    io.write_snapshot(out / "memory.snap", report.memory)
    io.write_dataset(out / "dataset.csv", world.instances())
    io.write_truth(out / "truth.csv", world.ids, world.truth)
    f = report.final
    print(f"epoch {f.epoch}: F={f.pairwise_f:.4f} NMI={f.nmi:.4f} mAP={f.retrieval_map:.4f} "
          f"top1={f.retrieval_top1:.4f} clusters={f.n_clusters} -> {out}")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig) -> int:
    rows = ablation_table(cfg)
    out = _outdir(cfg)
    io.write_rows(out / "ablation.csv", rows, AblationRow)
    for r in rows:
        print(f"det={int(r.detection_context)} mem={int(r.memory_context)} "
              f"scene={int(r.scene_context)}  F={r.pairwise_f:.4f}  NMI={r.nmi:.4f}  "
              f"mAP={r.retrieval_map:.4f}")
    return EXIT_OK


def evaluate_snapshot(snapshot, dataset, truth_path):
    memory = io.read_snapshot(snapshot)
    instances = io.read_dataset(dataset)
    if instances[0].dims != memory.dims:
        raise io.DimensionMismatch(memory.dims, instances[0].dims)
    truth_map = io.read_truth(truth_path)
    ids = [int(i) for i in memory.ids]
    if sorted(ids) != sorted(inst.instance_id for inst in instances):
        raise io.FormatError("snapshot and dataset cover different instance ids")
    missing = sorted(set(ids) - set(truth_map))
    if missing:
        raise io.FormatError(f"truth sidecar lacks instance ids {missing[:5]}")
    truth = np.array([truth_map[i] for i in ids])
    clusters = ClusterSet.from_labels(memory.assignment, memory.features)
    return (pairwise_scores(clusters.labels(memory.count), truth),
            memory_retrieval(memory.features, memory.ids, truth))


def cmd_eval(snapshot, dataset, truth_path) -> int:
    score, ret = evaluate_snapshot(snapshot, dataset, truth_path)
    print(f"pairwise_precision={score.pairwise_precision!r}")
    print(f"pairwise_recall={score.pairwise_recall!r}")
    print(f"pairwise_f={score.pairwise_f!r}")
    print(f"nmi={score.nmi!r}")
    print(f"n_clusters={score.n_clusters}")
    print(f"retrieval_map={ret.map!r}")
    print(f"retrieval_top1={ret.top1!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxreid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="experiment YAML file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. loss.tau=0.1 (repeatable)")
        sp.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        sp.add_argument("--output-dir", help="shorthand for --set output_dir=PATH")
        return sp

    with_config("gen", "write the dataset file and truth sidecar")
    tr = with_config("train", "train and write report.csv, trajectory.csv, memory.snap")
    tr.add_argument("--no-detection-ctx", action="store_true")
    tr.add_argument("--no-memory-ctx", action="store_true")
    tr.add_argument("--no-scene-ctx", action="store_true")
    with_config("ablate", "train all 8 context combinations and write ablation.csv")

    ev = sub.add_parser("eval", help="score a memory snapshot against a truth sidecar")
    ev.add_argument("snapshot")
    ev.add_argument("dataset")
    ev.add_argument("truth")
    return p


def _config_from_args(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={args.output_dir}")
    cfg = load_config(args.config, overrides)
    if args.command == "train":
        cfg = replace(cfg, schedule=replace(
            cfg.schedule,
            use_detection_context=not args.no_detection_ctx,
            use_memory_context=not args.no_memory_ctx,
            use_scene_context=not args.no_scene_ctx))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args.snapshot, args.dataset, args.truth)
        cfg = _config_from_args(args)
        return {"gen": cmd_gen, "train": cmd_train, "ablate": cmd_ablate}[args.command](cfg)
    except (io.FormatError, ConfigFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, WorldConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
