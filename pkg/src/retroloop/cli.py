"""Experiment driver: generation, pretraining, self-improvement, evaluation, reports.

One JSON config drives a full experiment; every stage is deterministic given
the config (all randomness flows from the config's seeds through named child
seeds, there is no global RNG). Exit codes are stable:

  2  invalid or unreadable config
  3  empty train split at pretraining
  4  missing checkpoints
  5  corrupt checkpoint
  6  missing run manifest
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import CheckpointError, EmptyDataset, InvalidConfig
from .evaluate import OracleEstimator, evaluate_over_budgets
from .improve import LoopConfig, pretrain_models, run_self_improvement
from .model import (
    DEFAULT_DIM,
    ROLE_BACKWARD,
    ROLE_REFERENCE,
    TemplateClassifier,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    topk_exact_match,
    with_role,
)
from .planner import ZeroEstimator, plan, route_cost_under
from .seeding import derive_seed
from .world import (
    Dataset,
    World,
    WorldConfig,
    build_datasets,
    generate_world,
    load_dataset,
    load_world,
    parse_molecule,
    save_dataset,
    save_world,
)

CONFIG_VERSION = 1
MANIFEST_VERSION = 1

EXIT_INVALID_CONFIG = 2
EXIT_EMPTY_SPLIT = 3
EXIT_MISSING_CHECKPOINT = 4
EXIT_CORRUPT_CHECKPOINT = 5
EXIT_MISSING_MANIFEST = 6

SUMMARY_COLUMNS = (
    "seed",
    "iteration",
    "budget",
    "success_rate",
    "avg_length",
    "avg_time",
    "avg_cost",
    "top1",
    "top10",
)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_targets: int = 500
    max_depth: int = 6
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    leaf_prob: float = 0.35


@dataclass(frozen=True)
class EvalConfig:
    budgets: tuple[int, ...] = (50,)
    estimator: str = "retro0"  # retro0 | oracle
    k_expand: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...]
    world: WorldConfig
    dataset: DatasetConfig
    pretrain_backward: TrainConfig
    pretrain_forward: TrainConfig
    loop: LoopConfig
    eval: EvalConfig
    dim: int = DEFAULT_DIM


def _section(doc: dict, key: str, where: str) -> dict:
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{where}.{key}: expected an object")
    return value


def _train_config(section: dict, where: str) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=float(section.get("learning_rate", 0.01)),
            epochs=int(section.get("epochs", 20)),
            batch_size=int(section.get("batch_size", 1024)),
            seed=int(section.get("seed", 0)),
        )
    except (InvalidConfig, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(doc: dict, where: str = "config") -> ExperimentConfig:
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"{where}.version: unsupported version {doc.get('version')!r}")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError(f"{where}.seeds: must be a non-empty list")

    w = _section(doc, "world", where)
    world_cfg = WorldConfig(
        n_atoms=int(w.get("n_atoms", 26)),
        n_operators=int(w.get("n_operators", 3)),
        n_decoys=int(w.get("n_decoys", 5)),
        bb_composites=int(w.get("bb_composites", 40)),
        bb_depth=int(w.get("bb_depth", 2)),
    )
    if world_cfg.n_atoms < 1:
        raise ConfigError(f"{where}.world.n_atoms: must be at least 1")
    if world_cfg.n_operators < 1:
        raise ConfigError(f"{where}.world.n_operators: must be at least 1")
    if world_cfg.n_decoys < 1:
        raise ConfigError(f"{where}.world.n_decoys: must be at least 1")

    d = _section(doc, "dataset", where)
    split = tuple(d.get("split", (0.8, 0.1, 0.1)))
    if len(split) != 3 or any(f <= 0 for f in split) or abs(sum(split) - 1) > 1e-9:
        raise ConfigError(f"{where}.dataset.split: three positive fractions summing to 1")
    dataset_cfg = DatasetConfig(
        n_targets=int(d.get("n_targets", 500)),
        max_depth=int(d.get("max_depth", 6)),
        split=split,  # type: ignore[arg-type]
        leaf_prob=float(d.get("leaf_prob", 0.35)),
    )
    if dataset_cfg.n_targets < 1:
        raise ConfigError(f"{where}.dataset.n_targets: must be at least 1")
    if not 0.0 <= dataset_cfg.leaf_prob < 1.0:
        raise ConfigError(f"{where}.dataset.leaf_prob: must lie in [0, 1)")

    p = _section(doc, "pretrain", where)
    pre_b = _train_config(_section(p, "backward", f"{where}.pretrain"), f"{where}.pretrain.backward")
    fwd_defaults = {"learning_rate": 0.001, "epochs": 100, "batch_size": 1024}
    pre_f = _train_config(
        {**fwd_defaults, **_section(p, "forward", f"{where}.pretrain")},
        f"{where}.pretrain.forward",
    )

    lo = _section(doc, "loop", where)
    try:
        loop_cfg = LoopConfig(
            iterations=int(lo.get("iterations", 3)),
            targets_per_iteration=int(lo.get("targets_per_iteration", 100)),
            budget=int(lo.get("budget", 50)),
            epsilon=float(lo.get("epsilon", 0.8)),
            epsilon_aug=float(lo.get("epsilon_aug", 0.8)),
            k_expand=int(lo.get("k_expand", 10)),
            bc=_train_config(_section(lo, "bc", f"{where}.loop"), f"{where}.loop.bc"),
            augmentation=bool(lo.get("augmentation", True)),
            warm_start=bool(lo.get("warm_start", True)),
            dedupe_collections=bool(lo.get("dedupe_collections", False)),
            mix_train_reactions=bool(lo.get("mix_train_reactions", False)),
            eval_targets=int(lo.get("eval_targets", 0)),
        )
    except InvalidConfig as exc:
        raise ConfigError(f"{where}.loop: {exc}") from exc

    e = _section(doc, "eval", where)
    budgets = tuple(int(b) for b in e.get("budgets", [50]))
    if not budgets or list(budgets) != sorted(budgets) or budgets[0] < 1:
        raise ConfigError(f"{where}.eval.budgets: must be ascending positive integers")
    estimator = str(e.get("estimator", "retro0"))
    if estimator not in ("retro0", "oracle"):
        raise ConfigError(f"{where}.eval.estimator: must be 'retro0' or 'oracle'")
    eval_cfg = EvalConfig(
        budgets=budgets, estimator=estimator, k_expand=int(e.get("k_expand", 10))
    )

    return ExperimentConfig(
        seeds=tuple(int(s) for s in seeds),
        world=world_cfg,
        dataset=dataset_cfg,
        pretrain_backward=pre_b,
        pretrain_forward=pre_f,
        loop=loop_cfg,
        eval=eval_cfg,
        dim=int(doc.get("dim", DEFAULT_DIM)),
    )


def load_config(path: str | Path) -> tuple[ExperimentConfig, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(doc, where=str(path)), doc


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# per-seed pipeline pieces


def _seed_dir(out: Path, seed: int) -> Path:
    return out / f"seed_{seed}"


def ensure_world_data(
    cfg: ExperimentConfig, seed: int, seed_dir: Path
) -> tuple[World, Dataset]:
    """Generate (or reload) the world and dataset artifacts for one seed."""
    world_path = seed_dir / "world.json"
    data_dir = seed_dir / "dataset"
    if world_path.exists() and (data_dir / "targets.jsonl").exists():
        return load_world(world_path), load_dataset(data_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    world = generate_world(cfg.world, derive_seed(seed, "world"))
    data = build_datasets(
        world,
        n_targets=cfg.dataset.n_targets,
        max_depth=cfg.dataset.max_depth,
        split=cfg.dataset.split,
        seed=derive_seed(seed, "dataset"),
        leaf_prob=cfg.dataset.leaf_prob,
    )
    save_world(world, world_path)
    save_dataset(data, data_dir)
    return world, data


def _checkpoint_paths(seed_dir: Path) -> dict[str, Path]:
    ck = seed_dir / "checkpoints"
    return {
        "backward": ck / "backward.json",
        "reference": ck / "reference_backward.json",
        "forward": ck / "forward.json",
        "final": ck / "backward_final.json",
    }


def run_pretrain(
    cfg: ExperimentConfig, seed: int, seed_dir: Path, world: World, data: Dataset
) -> tuple[TemplateClassifier, TemplateClassifier, TemplateClassifier]:
    backward, reference, forward = pretrain_models(
        world,
        data,
        replace(cfg.pretrain_backward, seed=derive_seed(seed, "pretrain-backward")),
        replace(cfg.pretrain_forward, seed=derive_seed(seed, "pretrain-forward")),
        dim=cfg.dim,
    )
    paths = _checkpoint_paths(seed_dir)
    paths["backward"].parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(backward, paths["backward"])
    # The reference file stores the direction role so the two checkpoints are
    # byte-identical; loaders assign the reference duty.
    save_checkpoint(with_role(reference, ROLE_BACKWARD), paths["reference"])
    save_checkpoint(forward, paths["forward"])
    if data.reactions_test:
        top1 = topk_exact_match(backward, data.reactions_test, 1, world)
        top10 = topk_exact_match(backward, data.reactions_test, 10, world)
        print(f"pretrain seed={seed} top1={top1:.6f} top10={top10:.6f}")
    return backward, reference, forward


def _load_pretrained(seed_dir: Path):
    paths = _checkpoint_paths(seed_dir)
    for name in ("backward", "reference", "forward"):
        if not paths[name].exists():
            raise FileNotFoundError(f"missing checkpoint {paths[name]}")
    backward = load_checkpoint(paths["backward"])
    reference = with_role(load_checkpoint(paths["reference"]), ROLE_REFERENCE)
    forward = load_checkpoint(paths["forward"])
    return backward, reference, forward


def run_improve(
    cfg: ExperimentConfig,
    seed: int,
    seed_dir: Path,
    world: World,
    data: Dataset,
    pretrained,
):
    loop_cfg = replace(
        cfg.loop,
        seed=derive_seed(seed, "loop"),
        bc=replace(cfg.loop.bc, seed=derive_seed(seed, "bc")),
    )
    reports_dir = seed_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    ck_dir = seed_dir / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)

    def persist(model, report):
        save_checkpoint(model, ck_dir / f"backward_iter_{report.iteration}.json")
        (reports_dir / f"iteration_{report.iteration}.json").write_text(
            json.dumps(report.to_json(), sort_keys=True) + "\n"
        )

    final, reports = run_self_improvement(
        loop_cfg, world, data, pretrained=pretrained, on_iteration=persist
    )
    save_checkpoint(final, _checkpoint_paths(seed_dir)["final"])
    return final, reports


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_target_rows(path: Path, metrics) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "outcome", "length", "time", "cost"])
        for row in metrics.rows:
            writer.writerow([row.target, row.outcome, _fmt(row.length), row.time, _fmt(row.cost)])
        writer.writerow(
            [
                "__summary__",
                _fmt(metrics.success_rate),
                _fmt(metrics.avg_length),
                _fmt(metrics.avg_time),
                _fmt(metrics.avg_cost),
            ]
        )


def run_evaluate(
    cfg: ExperimentConfig,
    seed: int,
    seed_dir: Path,
    world: World,
    data: Dataset,
    reference: TemplateClassifier,
    models_by_iteration: dict[int, TemplateClassifier],
    budgets: tuple[int, ...] | None = None,
    estimator_kind: str | None = None,
) -> list[dict]:
    budgets = budgets or cfg.eval.budgets
    estimator_kind = estimator_kind or cfg.eval.estimator
    estimator = (
        OracleEstimator(world, reference)
        if estimator_kind == "oracle"
        else ZeroEstimator()
    )
    metrics_dir = seed_dir / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    summary_rows: list[dict] = []
    per_budget: dict[int, dict[int, object]] = {}
    for iteration, model in sorted(models_by_iteration.items()):
        by_budget = evaluate_over_budgets(
            model,
            estimator,
            data.targets,
            list(budgets),
            reference,
            data,
            world,
            k_expand=cfg.eval.k_expand,
        )
        top1 = top10 = float("nan")
        if data.reactions_test:
            top1 = topk_exact_match(model, data.reactions_test, 1, world)
            top10 = topk_exact_match(model, data.reactions_test, 10, world)
        for budget, metrics in by_budget.items():
            _write_target_rows(
                metrics_dir / f"targets_budget{budget}_iter{iteration}.csv", metrics
            )
            per_budget.setdefault(budget, {})[iteration] = metrics
            summary_rows.append(
                {
                    "seed": seed,
                    "iteration": iteration,
                    "budget": budget,
                    "success_rate": metrics.success_rate,
                    "avg_length": metrics.avg_length,
                    "avg_time": metrics.avg_time,
                    "avg_cost": metrics.avg_cost,
                    "top1": top1,
                    "top10": top10,
                }
            )

    with (metrics_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in summary_rows:
            writer.writerow(
                [row["seed"], row["iteration"], row["budget"]]
                + [_fmt(row[c]) for c in SUMMARY_COLUMNS[3:]]
            )

    # Relative gains of the last iteration over iteration 0, per budget.
    iterations = sorted(models_by_iteration)
    if len(iterations) >= 2:
        base_iter, ours_iter = iterations[0], iterations[-1]
        with (metrics_dir / "gains.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["budget", "metric", "base", "ours", "relative_gain"])
            for budget in budgets:
                base = per_budget[budget][base_iter]
                ours = per_budget[budget][ours_iter]
                for metric in ("success_rate", "avg_length", "avg_time", "avg_cost"):
                    b = getattr(base, metric)
                    o = getattr(ours, metric)
                    gain = _fmt((o - b) / b) if b else ""
                    writer.writerow([budget, metric, _fmt(b), _fmt(o), gain])
    return summary_rows


def run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    """Full pipeline for one seed; returns the artifact paths."""
    seed_dir = _seed_dir(out, seed)
    world, data = ensure_world_data(cfg, seed, seed_dir)
    backward, reference, forward = run_pretrain(cfg, seed, seed_dir, world, data)
    final, _reports = run_improve(
        cfg, seed, seed_dir, world, data, (backward, reference, forward)
    )
    run_evaluate(
        cfg,
        seed,
        seed_dir,
        world,
        data,
        reference,
        {0: backward, cfg.loop.iterations: final},
    )
    paths = _checkpoint_paths(seed_dir)
    return {
        "world": str(seed_dir / "world.json"),
        "dataset": str(seed_dir / "dataset"),
        "checkpoints": {k: str(v) for k, v in paths.items()},
        "metrics": str(seed_dir / "metrics" / "summary.csv"),
        "reports": [
            str(p) for p in sorted((seed_dir / "reports").glob("iteration_*.json"))
        ],
    }


def _run_seed_job(doc_json: str, seed: int, out: str) -> tuple[int, dict]:
    cfg = parse_config(json.loads(doc_json))
    return seed, run_seed(cfg, seed, Path(out))


# ---------------------------------------------------------------------------
# aggregation


def aggregate_report(out: Path) -> Path:
    """Merge per-seed summaries into mean/stdev rows; returns the CSV path."""
    rows: list[dict] = []
    for summary in sorted(out.glob("seed_*/metrics/summary.csv")):
        with summary.open() as fh:
            for rec in csv.DictReader(fh):
                rows.append(rec)
    grouped: dict[tuple[int, int], list[dict]] = {}
    for rec in rows:
        key = (int(rec["iteration"]), int(rec["budget"]))
        grouped.setdefault(key, []).append(rec)

    aggregated = out / "aggregated.csv"
    metrics = ("success_rate", "avg_length", "avg_time", "avg_cost", "top1", "top10")
    with aggregated.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["iteration", "budget", "n_seeds"]
        for m in metrics:
            header += [f"{m}_mean", f"{m}_std"]
        writer.writerow(header)
        for (iteration, budget), recs in sorted(grouped.items()):
            row = [iteration, budget, len(recs)]
            for m in metrics:
                values = [float(r[m]) for r in recs]
                if any(math.isnan(v) for v in values):
                    row += ["nan", "nan"]
                else:
                    row += [_fmt(statistics.fmean(values)), _fmt(statistics.pstdev(values))]
            writer.writerow(row)
    return aggregated


def print_report(out: Path) -> None:
    aggregated = out / "aggregated.csv"
    if not aggregated.exists():
        return
    with aggregated.open() as fh:
        for rec in csv.DictReader(fh):
            print(
                f"iteration={rec['iteration']} budget={rec['budget']} "
                f"n={rec['n_seeds']} "
                f"success={float(rec['success_rate_mean']):.4f}"
                f"±{float(rec['success_rate_std']):.4f} "
                f"length={float(rec['avg_length_mean']):.3f}"
                f"±{float(rec['avg_length_std']):.3f} "
                f"time={float(rec['avg_time_mean']):.2f}"
                f"±{float(rec['avg_time_std']):.2f} "
                f"cost={float(rec['avg_cost_mean']):.3f}"
                f"±{float(rec['avg_cost_std']):.3f}"
            )


def write_manifest(out: Path, doc: dict, seed_artifacts: dict[int, dict], started: float) -> None:
    manifest = {
        "version": MANIFEST_VERSION,
        "config_hash": config_hash(doc),
        "started": started,
        "finished": time.time(),
        "config": str(out / "config.json"),
        "aggregated": str(out / "aggregated.csv"),
        "seeds": {str(seed): art for seed, art in sorted(seed_artifacts.items())},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def _seeds_for(args, cfg: ExperimentConfig) -> tuple[int, ...]:
    return (args.seed,) if getattr(args, "seed", None) is not None else cfg.seeds


def cmd_gen_world(args) -> int:
    cfg, _doc = load_config(args.config)
    out = Path(args.out)
    for seed in _seeds_for(args, cfg):
        ensure_world_data(cfg, seed, _seed_dir(out, seed))
        print(f"gen-world seed={seed} out={_seed_dir(out, seed)}")
    return 0


def cmd_pretrain(args) -> int:
    cfg, _doc = load_config(args.config)
    out = Path(args.out)
    for seed in _seeds_for(args, cfg):
        seed_dir = _seed_dir(out, seed)
        world, data = ensure_world_data(cfg, seed, seed_dir)
        run_pretrain(cfg, seed, seed_dir, world, data)
    return 0


def cmd_self_improve(args) -> int:
    cfg, _doc = load_config(args.config)
    out = Path(args.out)
    for seed in _seeds_for(args, cfg):
        seed_dir = _seed_dir(out, seed)
        world, data = ensure_world_data(cfg, seed, seed_dir)
        pretrained = _load_pretrained(seed_dir)
        _final, reports = run_improve(cfg, seed, seed_dir, world, data, pretrained)
        for report in reports:
            print(
                f"improve seed={seed} iteration={report.iteration} "
                f"succeeded={report.routes_succeeded}/{report.routes_attempted} "
                f"kept={report.kept_after_filter} augmented={report.augmented_accepted} "
                f"top1={report.top1:.6f}"
            )
    return 0


def cmd_evaluate(args) -> int:
    cfg, _doc = load_config(args.config)
    out = Path(args.out)
    budgets = tuple(sorted(args.budget)) if args.budget else None
    for seed in _seeds_for(args, cfg):
        seed_dir = _seed_dir(out, seed)
        world, data = ensure_world_data(cfg, seed, seed_dir)
        ref_path = _checkpoint_paths(seed_dir)["reference"]
        if not ref_path.exists():
            raise FileNotFoundError(f"missing checkpoint {ref_path}")
        reference = with_role(load_checkpoint(ref_path), ROLE_REFERENCE)
        models: dict[int, TemplateClassifier] = {}
        checkpoint = args.checkpoint or str(_checkpoint_paths(seed_dir)["final"])
        if not Path(checkpoint).exists():
            raise FileNotFoundError(f"missing checkpoint {checkpoint}")
        if args.baseline:
            models[0] = load_checkpoint(args.baseline)
            models[cfg.loop.iterations] = load_checkpoint(checkpoint)
        else:
            models[args.iteration] = load_checkpoint(checkpoint)
        rows = run_evaluate(
            cfg,
            seed,
            seed_dir,
            world,
            data,
            reference,
            models,
            budgets=budgets,
            estimator_kind=args.estimator,
        )
        for row in rows:
            print(
                f"evaluate seed={seed} iteration={row['iteration']} budget={row['budget']} "
                f"success={row['success_rate']:.4f} length={row['avg_length']:.3f} "
                f"time={row['avg_time']:.2f} cost={row['avg_cost']:.3f}"
            )
    return 0


def cmd_plan(args) -> int:
    cfg, _doc = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    seed_dir = _seed_dir(Path(args.out), seed)
    world, _data = ensure_world_data(cfg, seed, seed_dir)
    checkpoint = args.checkpoint or str(_checkpoint_paths(seed_dir)["final"])
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"missing checkpoint {checkpoint}")
    model = load_checkpoint(checkpoint)
    if args.estimator == "oracle":
        ref = with_role(load_checkpoint(_checkpoint_paths(seed_dir)["reference"]), ROLE_REFERENCE)
        estimator = OracleEstimator(world, ref)
    else:
        estimator = ZeroEstimator()
    target = parse_molecule(args.target)
    result = plan(
        target, model, estimator, args.budget, cfg.eval.k_expand, world,
        trace=bool(args.trace),
    )
    if args.trace:
        with Path(args.trace).open("w") as fh:
            for rec in result.trace or ():
                fh.write(
                    json.dumps(
                        {
                            "step": rec.step,
                            "molecule": rec.molecule,
                            "g_plus_h": rec.g_plus_h,
                            "applicable": rec.n_applicable,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    if not result.success:
        print(f"failure target={target.text} calls={result.model_calls}")
        return 0
    route = result.route
    assert route is not None
    # Dependency order: a reaction prints after the reactions feeding it.
    produced = set()
    remaining = {rx.product.text: rx for rx in route.reactions}
    while remaining:
        ready = sorted(
            text
            for text, rx in remaining.items()
            if all(r.text in produced or world.is_building_block(r) for r in rx.reactants)
        )
        for text in ready:
            rx = remaining.pop(text)
            print(f"{rx.product.text} <- {' + '.join(r.text for r in rx.reactants)}  [{rx.template_id}]")
            produced.add(text)
    cost = route_cost_under(route, model, world)
    print(
        f"success target={target.text} reactions={len(route.reactions)} "
        f"calls={result.model_calls} cost={cost:.6f}"
    )
    return 0


def cmd_report(args) -> int:
    out = Path(args.run)
    if not (out / "manifest.json").exists():
        print(f"error: no manifest.json in {out}", file=sys.stderr)
        return EXIT_MISSING_MANIFEST
    aggregate_report(out)
    print_report(out)
    return 0


def cmd_run_all(args) -> int:
    cfg, doc = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    started = time.time()
    seeds = _seeds_for(args, cfg)
    artifacts: dict[int, dict] = {}
    if args.workers > 1 and len(seeds) > 1:
        doc_json = json.dumps(doc)
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for seed, art in pool.map(
                _run_seed_job, [doc_json] * len(seeds), seeds, [str(out)] * len(seeds)
            ):
                artifacts[seed] = art
    else:
        for seed in seeds:
            artifacts[seed] = run_seed(cfg, seed, out)
    aggregate_report(out)
    write_manifest(out, doc, artifacts, started)
    print_report(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retroloop")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=out_required, default="runs/default")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen-world", help="generate world and dataset files")
    common(p)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("pretrain", help="supervised pretraining of the three models")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("self-improve", help="run the self-improvement loop")
    common(p)
    p.set_defaults(func=cmd_self_improve)

    p = sub.add_parser("evaluate", help="planning metrics for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", default=None)
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--budget", type=int, action="append", default=None)
    p.add_argument("--estimator", choices=("retro0", "oracle"), default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plan", help="plan a single target and print the route")
    common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--budget", type=int, default=500)
    p.add_argument("--estimator", choices=("retro0", "oracle"), default="retro0")
    p.add_argument("--trace", default=None, help="write one JSON line per expansion")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("report", help="aggregate metrics across seeds")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run-all", help="full pipeline for every seed")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except InvalidConfig as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except EmptyDataset as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_SPLIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_CHECKPOINT
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
