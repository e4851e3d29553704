"""Sweep the realism filter threshold and report single-step accuracy vs planning.

For each threshold the loop runs a single iteration without augmentation, so
the comparison isolates the filter. Reports mean +- std over the seeds.

Usage:
    python scripts/filtering_sweep.py [--thresholds 0 0.5 0.8 0.9] [--seeds 1 2 3]
"""

import argparse
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from retroloop import ZeroEstimator, evaluate_planning, run_self_improvement, topk_exact_match
from retroloop.cli import load_config
from retroloop.improve import pretrain_models
from retroloop.seeding import derive_seed
from retroloop.world import build_datasets, generate_world

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "reference.json"))
    parser.add_argument(
        "--thresholds", type=float, nargs="+", default=[0.0, 0.5, 0.6, 0.7, 0.8, 0.9]
    )
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = parser.parse_args()

    cfg, _doc = load_config(args.config)
    estimator = ZeroEstimator()
    prepared = []
    for seed in args.seeds:
        world = generate_world(cfg.world, derive_seed(seed, "world"))
        data = build_datasets(
            world,
            n_targets=cfg.dataset.n_targets,
            max_depth=cfg.dataset.max_depth,
            split=cfg.dataset.split,
            seed=derive_seed(seed, "dataset"),
            leaf_prob=cfg.dataset.leaf_prob,
        )
        pretrained = pretrain_models(
            world,
            data,
            replace(cfg.pretrain_backward, seed=derive_seed(seed, "pretrain-backward")),
            replace(cfg.pretrain_forward, seed=derive_seed(seed, "pretrain-forward")),
            dim=cfg.dim,
        )
        loop_cfg = replace(
            cfg.loop,
            iterations=1,
            augmentation=False,
            seed=derive_seed(seed, "loop"),
            bc=replace(cfg.loop.bc, seed=derive_seed(seed, "bc")),
        )
        prepared.append((world, data, pretrained, loop_cfg))

    print(f"{'eps':>5} {'top1':>16} {'top10':>16} {'succ@N':>16} {'kept':>8}")
    for eps in args.thresholds:
        top1s, top10s, succs, kept = [], [], [], []
        for world, data, pretrained, loop_cfg in prepared:
            model, reports = run_self_improvement(
                replace(loop_cfg, epsilon=eps), world, data, pretrained=pretrained
            )
            top1s.append(topk_exact_match(model, data.reactions_test, 1, world))
            top10s.append(topk_exact_match(model, data.reactions_test, 10, world))
            metrics = evaluate_planning(
                model,
                estimator,
                data.targets,
                cfg.loop.budget,
                pretrained[1],
                data,
                world,
                k_expand=cfg.loop.k_expand,
            )
            succs.append(metrics.success_rate)
            kept.append(reports[0].kept_after_filter)

        def fmt(values):
            mean = statistics.fmean(values)
            std = statistics.pstdev(values)
            return f"{mean:.4f}+-{std:.4f}"

        print(
            f"{eps:>5.2f} {fmt(top1s):>16} {fmt(top10s):>16} {fmt(succs):>16} "
            f"{statistics.fmean(kept):>8.1f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
