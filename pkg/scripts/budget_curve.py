"""Success rate under varying model-call limits, baseline vs self-improved.

One long-budget sweep per target is enough: the search is deterministic, so a
run at budget N is a prefix of a run at any larger budget.

Usage:
    python scripts/budget_curve.py [--budgets 10 25 50 100 250 500 5000] [--seed 1]
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from retroloop import ZeroEstimator, run_self_improvement, success_rate_curve
from retroloop.cli import load_config
from retroloop.improve import pretrain_models
from retroloop.seeding import derive_seed
from retroloop.world import build_datasets, generate_world

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "reference.json"))
    parser.add_argument(
        "--budgets", type=int, nargs="+", default=[10, 25, 50, 100, 250, 500, 5000]
    )
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()
    budgets = sorted(args.budgets)

    cfg, _doc = load_config(args.config)
    seed = args.seed
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
        seed=derive_seed(seed, "loop"),
        bc=replace(cfg.loop.bc, seed=derive_seed(seed, "bc")),
    )
    improved, _reports = run_self_improvement(loop_cfg, world, data, pretrained=pretrained)

    estimator = ZeroEstimator()
    base_curve = success_rate_curve(
        pretrained[0], estimator, data.targets, budgets, world, k_expand=cfg.loop.k_expand
    )
    ours_curve = success_rate_curve(
        improved, estimator, data.targets, budgets, world, k_expand=cfg.loop.k_expand
    )
    print(f"{'budget':>8} {'baseline':>10} {'improved':>10}")
    for (budget, base), (_, ours) in zip(base_curve, ours_curve):
        print(f"{budget:>8} {base:>10.4f} {ours:>10.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
