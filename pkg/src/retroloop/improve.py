"""Self-improvement loop for the backward model.

Each iteration plans a batch of sampled targets with the current backward
model, harvests the reactions of the successful routes, discards those the
frozen reference model finds unlikely (probability <= epsilon), augments the
survivors through the forward model under a double acceptance check, and
behavior-clones the backward model on the combined multiset. Failed planning
attempts contribute nothing. The reference and forward models are trained
once and never change.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .errors import EmptyCollection, EmptyDataset, InvalidConfig
from .model import (
    DEFAULT_DIM,
    ROLE_BACKWARD,
    ROLE_FORWARD,
    ROLE_REFERENCE,
    TemplateClassifier,
    TrainConfig,
    featurize_molecule,
    featurize_reactant_set,
    likelihood,
    predict_topk,
    topk_exact_match,
    train,
    with_role,
    zero_classifier,
)
from .planner import ZeroEstimator, plan
from .seeding import derive_seed
from .world import Dataset, Reaction, Route, World, validate_route


@dataclass(frozen=True)
class ReactionCollection:
    """Multiset of reactions; duplicates carry weight.

    ``provenance`` is parallel to ``entries`` and names the target whose
    success route (or augmentation thereof) produced each entry.
    """

    entries: tuple[Reaction, ...] = ()
    provenance: tuple[str, ...] = ()

    def counts(self) -> Counter:
        return Counter(rx.key for rx in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def collect_reactions(
    routes: Sequence[Route],
    ref: TemplateClassifier,
    epsilon: float,
    world: World,
) -> ReactionCollection:
    """Reactions of all routes whose reference likelihood strictly exceeds epsilon."""
    entries: list[Reaction] = []
    provenance: list[str] = []
    for route in routes:
        for rx in route.reactions:
            if likelihood(ref, rx, world) > epsilon:
                entries.append(rx)
                provenance.append(route.target.text)
    return ReactionCollection(entries=tuple(entries), provenance=tuple(provenance))


def augment(
    collection: ReactionCollection,
    fwd: TemplateClassifier,
    ref: TemplateClassifier,
    epsilon_aug: float,
    world: World,
) -> ReactionCollection:
    """Replace each product with the forward model's proposal, doubly checked.

    An augmented reaction (m', R) is kept only when the forward model is
    confident (probability > epsilon_aug) and the reference backward model's
    top applicable template on m' is the same template and reproduces R.
    Proposals identical to the original product are retained on purpose.
    """
    entries: list[Reaction] = []
    provenance: list[str] = []
    for rx, source in zip(collection.entries, collection.provenance):
        proposals = predict_topk(fwd, rx.reactants, 1, world)
        if not proposals:
            continue
        tid, prob, product = proposals[0]
        if not prob > epsilon_aug:
            continue
        backs = predict_topk(ref, product, 1, world)  # type: ignore[arg-type]
        if not backs or backs[0].template_id != tid:
            continue
        reproduced = tuple(m.text for m in backs[0].outcome)  # type: ignore[union-attr]
        if reproduced != tuple(r.text for r in rx.reactants):
            continue
        entries.append(Reaction(product=product, reactants=rx.reactants, template_id=tid))  # type: ignore[arg-type]
        provenance.append(source)
    return ReactionCollection(entries=tuple(entries), provenance=tuple(provenance))


def behavioral_clone(
    model: TemplateClassifier,
    collection: ReactionCollection,
    cfg: TrainConfig,
) -> TemplateClassifier:
    """Maximum-likelihood imitation of the collection, weights per multiplicity."""
    if not collection.entries:
        raise EmptyCollection("nothing to clone from")
    weighted: dict[tuple[str, str], list] = {}
    for rx in collection.entries:
        key = (rx.product.text, rx.template_id)
        if key in weighted:
            weighted[key][2] += 1.0
        else:
            weighted[key] = [featurize_molecule(rx.product, model.dim), rx.template_id, 1.0]
    return train(model, [tuple(s) for s in weighted.values()], cfg)


def dump_collection(collection: ReactionCollection, path: str | Path) -> None:
    """One record per distinct reaction with its multiset weight."""
    counts = collection.counts()
    seen = set()
    with Path(path).open("w") as fh:
        for rx in collection.entries:
            if rx.key in seen:
                continue
            seen.add(rx.key)
            fh.write(
                json.dumps(
                    {
                        "product": rx.product.text,
                        "reactants": [r.text for r in rx.reactants],
                        "template": rx.template_id,
                        "weight": counts[rx.key],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# the loop


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 3
    targets_per_iteration: int = 100
    budget: int = 50
    epsilon: float = 0.8
    epsilon_aug: float = 0.8
    k_expand: int = 10
    bc: TrainConfig = TrainConfig(learning_rate=1e-4, epochs=20, batch_size=1024)
    seed: int = 0
    augmentation: bool = True
    warm_start: bool = True
    dedupe_collections: bool = False
    mix_train_reactions: bool = False
    eval_targets: int = 0  # per-iteration planning snapshot size; 0 disables
    pretrain_backward: TrainConfig = TrainConfig()
    pretrain_forward: TrainConfig = TrainConfig(learning_rate=0.001, epochs=100)

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise InvalidConfig("iterations must be at least 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidConfig("epsilon must lie in [0, 1]")
        if not 0.0 <= self.epsilon_aug <= 1.0:
            raise InvalidConfig("epsilon_aug must lie in [0, 1]")
        if self.targets_per_iteration < 1:
            raise InvalidConfig("targets_per_iteration must be at least 1")
        if self.budget < 0:
            raise InvalidConfig("budget must be non-negative")


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    routes_attempted: int
    routes_succeeded: int
    reactions_harvested: int
    kept_after_filter: int
    augmented_accepted: int
    duplicates_retained: int
    top1: float
    top10: float
    snapshot_success_rate: float | None = None
    snapshot_budget: int | None = None
    # In-memory provenance for re-checking; not serialized.
    routes: tuple[Route, ...] = field(default=(), repr=False)
    collected: ReactionCollection = field(default=ReactionCollection(), repr=False)
    augmented: ReactionCollection = field(default=ReactionCollection(), repr=False)

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "routes_attempted": self.routes_attempted,
            "routes_succeeded": self.routes_succeeded,
            "reactions_harvested": self.reactions_harvested,
            "kept_after_filter": self.kept_after_filter,
            "augmented_accepted": self.augmented_accepted,
            "duplicates_retained": self.duplicates_retained,
            "top1": self.top1,
            "top10": self.top10,
            "snapshot_success_rate": self.snapshot_success_rate,
            "snapshot_budget": self.snapshot_budget,
        }


def pretrain_models(
    world: World,
    data: Dataset,
    backward_cfg: TrainConfig,
    forward_cfg: TrainConfig,
    dim: int = DEFAULT_DIM,
) -> tuple[TemplateClassifier, TemplateClassifier, TemplateClassifier]:
    """Supervised pretraining on the reaction dataset.

    Returns (backward, reference, forward); the backward model starts as an
    exact copy of the reference model.
    """
    if not data.reactions_train:
        raise EmptyDataset("pretraining needs a non-empty train split")
    backward_samples = [
        (featurize_molecule(rx.product, dim), rx.template_id)
        for rx in data.reactions_train
    ]
    forward_samples = [
        (featurize_reactant_set(rx.reactants, dim), rx.template_id)
        for rx in data.reactions_train
    ]
    reference = train(
        zero_classifier(world.template_ids, ROLE_REFERENCE, dim),
        backward_samples,
        backward_cfg,
    )
    backward = with_role(reference, ROLE_BACKWARD)
    forward = train(
        zero_classifier(world.template_ids, ROLE_FORWARD, dim),
        forward_samples,
        forward_cfg,
    )
    return backward, reference, forward


def run_self_improvement(
    cfg: LoopConfig,
    world: World,
    data: Dataset,
    pretrained: "tuple[TemplateClassifier, TemplateClassifier, TemplateClassifier] | None" = None,
    on_iteration=None,
) -> tuple[TemplateClassifier, list[IterationReport]]:
    """Run the full loop; returns the final backward model and one report per iteration.

    ``on_iteration(model, report)`` is invoked after each iteration, e.g. to
    persist intermediate checkpoints.
    """
    if not data.reactions_train:
        raise EmptyDataset("self-improvement needs a non-empty train split")
    if pretrained is None:
        backward, reference, forward = pretrain_models(
            world, data, cfg.pretrain_backward, cfg.pretrain_forward
        )
    else:
        backward, reference, forward = pretrained
        backward = with_role(backward, ROLE_BACKWARD)
        reference = with_role(reference, ROLE_REFERENCE)
        forward = with_role(forward, ROLE_FORWARD)

    estimator = ZeroEstimator()
    targets = list(data.targets)
    reports: list[IterationReport] = []

    for i in range(1, cfg.iterations + 1):
        rng = random.Random(derive_seed(cfg.seed, f"targets-{i}"))
        sampled = rng.sample(targets, min(cfg.targets_per_iteration, len(targets)))
        routes: list[Route] = []
        for target in sampled:
            result = plan(target, backward, estimator, cfg.budget, cfg.k_expand, world)
            if result.success:
                assert result.route is not None
                problems = validate_route(world, result.route)
                assert not problems, problems
                routes.append(result.route)

        harvested = sum(len(r.reactions) for r in routes)
        collected = collect_reactions(routes, reference, cfg.epsilon, world)
        if cfg.augmentation:
            augmented = augment(collected, forward, reference, cfg.epsilon_aug, world)
        else:
            augmented = ReactionCollection()
        collected_keys = collected.counts()
        duplicates = sum(1 for rx in augmented.entries if rx.key in collected_keys)

        union = ReactionCollection(
            entries=collected.entries + augmented.entries,
            provenance=collected.provenance + augmented.provenance,
        )
        if cfg.dedupe_collections:
            seen: set[tuple] = set()
            kept_entries, kept_prov = [], []
            for rx, src in zip(union.entries, union.provenance):
                if rx.key in seen:
                    continue
                seen.add(rx.key)
                kept_entries.append(rx)
                kept_prov.append(src)
            union = ReactionCollection(tuple(kept_entries), tuple(kept_prov))
        if cfg.mix_train_reactions:
            union = ReactionCollection(
                entries=union.entries + data.reactions_train,
                provenance=union.provenance + ("dataset",) * len(data.reactions_train),
            )

        if union.entries:
            base = (
                backward
                if cfg.warm_start
                else zero_classifier(backward.template_index, ROLE_BACKWARD, backward.dim)
            )
            bc_cfg = replace(cfg.bc, seed=derive_seed(cfg.bc.seed, f"bc-{i}"))
            backward = behavioral_clone(base, union, bc_cfg)

        top1 = top10 = float("nan")
        if data.reactions_test:
            top1 = topk_exact_match(backward, data.reactions_test, 1, world)
            top10 = topk_exact_match(backward, data.reactions_test, 10, world)

        snapshot_rate: float | None = None
        snapshot_budget: int | None = None
        if cfg.eval_targets > 0:
            srng = random.Random(derive_seed(cfg.seed, f"snapshot-{i}"))
            sample = srng.sample(targets, min(cfg.eval_targets, len(targets)))
            wins = sum(
                1
                for t in sample
                if plan(t, backward, estimator, cfg.budget, cfg.k_expand, world).success
            )
            snapshot_rate = wins / len(sample)
            snapshot_budget = cfg.budget

        report = IterationReport(
            iteration=i,
            routes_attempted=len(sampled),
            routes_succeeded=len(routes),
            reactions_harvested=harvested,
            kept_after_filter=len(collected),
            augmented_accepted=len(augmented),
            duplicates_retained=duplicates,
            top1=top1,
            top10=top10,
            snapshot_success_rate=snapshot_rate,
            snapshot_budget=snapshot_budget,
            routes=tuple(routes),
            collected=collected,
            augmented=augmented,
        )
        reports.append(report)
        if on_iteration is not None:
            on_iteration(backward, report)
    return backward, reports
