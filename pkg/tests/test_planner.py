import math
import random

import numpy as np
import pytest

from retroloop import (
    InvalidInput,
    NotSolved,
    Template,
    TrainConfig,
    World,
    WorldConfig,
    ZeroEstimator,
    build_datasets,
    extract_route,
    featurize_molecule,
    generate_world,
    likelihood,
    make_reaction,
    mol,
    parse_molecule,
    plan,
    route_cost_under,
    train,
    unfolded_route_cost,
    validate_route,
    zero_classifier,
)
from retroloop.model import ROLE_BACKWARD
from retroloop.planner import (
    EXPANDED,
    SOLVED_LEAF,
    MolNode,
    ReactionNode,
    SearchTree,
    recompute_all_values,
)
from retroloop.world import KIND_IDENTITY, KIND_SPLIT


def single_split_world():
    return World(
        atoms=("a", "b"),
        operators=("+",),
        templates=(Template(id="split:+", kind=KIND_SPLIT, op="+"),),
        building_blocks=(mol("a"), mol("b")),
    )


class TestPlanBasics:
    def test_stock_target_succeeds_without_calls(self, small_world, small_models):
        backward, _, _ = small_models
        result = plan(mol("a"), backward, ZeroEstimator(), 10, 5, small_world)
        assert result.success
        assert result.route.reactions == ()
        assert result.model_calls == 0

    def test_zero_budget_fails_without_calls(self, small_world, small_models):
        backward, _, _ = small_models
        result = plan(mol("(a+b)"), backward, ZeroEstimator(), 0, 5, small_world)
        assert not result.success
        assert result.model_calls == 0

    def test_single_expansion_trace(self):
        world = single_split_world()
        clf = zero_classifier(world.template_ids, ROLE_BACKWARD)
        result = plan(mol("(a+b)"), clf, ZeroEstimator(), 10, 5, world, trace=True)
        assert result.success
        assert result.model_calls == 1
        route = result.route
        assert len(route.reactions) == 1
        rx = route.reactions[0]
        assert rx.product == mol("(a+b)")
        assert rx.reactants == (mol("a"), mol("b"))
        assert rx.template_id == "split:+"
        # with a single template the softmax is exactly 1, so the cost is 0
        expected = -math.log(likelihood(clf, rx, world))
        assert route_cost_under(route, clf, world) == pytest.approx(expected)
        assert len(result.trace) == 1
        assert result.trace[0].molecule == "(a+b)"

    def test_cost_matches_negative_log_probability(self, small_world, small_models):
        backward, _, _ = small_models
        result = plan(mol("(a+b)"), backward, ZeroEstimator(), 10, 5, small_world)
        assert result.success
        rx = result.route.reactions[0]
        expected = -math.log(likelihood(backward, rx, small_world))
        assert route_cost_under(result.route, backward, small_world) == pytest.approx(expected)

    def test_malformed_target_dies_after_one_call(self, small_world, small_models):
        backward, _, _ = small_models
        result = plan(parse_molecule("(a+"), backward, ZeroEstimator(), 10, 5, small_world)
        assert not result.success
        assert result.model_calls == 1

    def test_invalid_arguments(self, small_world, small_models):
        backward, _, _ = small_models
        with pytest.raises(InvalidInput):
            plan(mol("a"), backward, ZeroEstimator(), -1, 5, small_world)
        with pytest.raises(InvalidInput):
            plan(mol("a"), backward, ZeroEstimator(), 5, 0, small_world)

    def test_identity_candidates_are_rejected_as_cycles(self):
        world = World(
            atoms=("a", "b"),
            operators=("+",),
            templates=(
                Template(id="split:+", kind=KIND_SPLIT, op="+"),
                Template(id="identity", kind=KIND_IDENTITY),
            ),
            building_blocks=(mol("a"), mol("b")),
        )
        clf = zero_classifier(world.template_ids, ROLE_BACKWARD)
        tree = SearchTree(mol("(a+b)"), clf, ZeroEstimator(), 5, world)
        tree.expand(tree.root)
        assert [r.template_id for r in tree.root.children] == ["split:+"]


class TestExtractRoute:
    def test_solved_leaf_root_gives_empty_route(self, small_world, small_models):
        backward, _, _ = small_models
        tree = SearchTree(mol("a"), backward, ZeroEstimator(), 5, small_world)
        route = extract_route(tree)
        assert route.reactions == ()

    def test_unsolved_root_raises(self, small_world, small_models):
        backward, _, _ = small_models
        tree = SearchTree(mol("(a+b)"), backward, ZeroEstimator(), 5, small_world)
        with pytest.raises(NotSolved):
            extract_route(tree)

    def test_min_cost_reaction_wins(self, small_world):
        # Hand-built tree: two solved alternatives under the root at costs
        # 0.3 and 0.7; extraction must take the 0.3 reaction.
        root = MolNode(mol("(a+b)"), None, 0, EXPANDED, 0.0)
        for i, (cost, tid) in enumerate([(0.7, "split:+"), (0.3, "identity")]):
            r = ReactionNode(tid, cost, (mol("a"), mol("b")), root)
            r.children = [
                MolNode(mol("a"), r, 2 * i + 1, SOLVED_LEAF, 0.0),
                MolNode(mol("b"), r, 2 * i + 2, SOLVED_LEAF, 0.0),
            ]
            r.value = cost
            root.children.append(r)
        root.value = 0.3
        tree = SearchTree.__new__(SearchTree)
        tree.root = root
        route = extract_route(tree)
        assert len(route.reactions) == 1
        assert route.reactions[0].template_id == "identity"


class TestRouteCost:
    def test_empty_route_costs_nothing(self, small_models, small_world):
        backward, _, _ = small_models
        from retroloop import Route

        assert route_cost_under(Route(target=mol("a")), backward, small_world) == 0.0

    def test_probability_one_costs_nothing(self):
        world = single_split_world()
        clf = zero_classifier(world.template_ids, ROLE_BACKWARD)
        from retroloop import Route

        route = Route(
            target=mol("(a+b)"),
            reactions=(make_reaction(mol("(a+b)"), (mol("a"), mol("b")), "split:+"),),
        )
        assert route_cost_under(route, clf, world) == 0.0

    def test_probability_half_costs_ln_two(self):
        world = World(
            atoms=("a", "b"),
            operators=("+",),
            templates=(
                Template(id="split:+", kind=KIND_SPLIT, op="+"),
                Template(id="identity", kind=KIND_IDENTITY),
            ),
            building_blocks=(mol("a"), mol("b")),
        )
        clf = zero_classifier(world.template_ids, ROLE_BACKWARD)
        from retroloop import Route

        route = Route(
            target=mol("(a+b)"),
            reactions=(make_reaction(mol("(a+b)"), (mol("a"), mol("b")), "split:+"),),
        )
        assert route_cost_under(route, clf, world) == pytest.approx(math.log(2.0))


class TestSearchProperties:
    def _random_setup(self, seed):
        rng = random.Random(seed)
        cfg = WorldConfig(
            n_atoms=rng.randint(2, 5),
            n_operators=rng.randint(1, 2),
            n_decoys=rng.randint(1, 3),
            bb_composites=rng.randint(0, 3),
            bb_depth=1,
        )
        world = generate_world(cfg, rng.randrange(2**32))
        data = build_datasets(world, 15, 3, (0.8, 0.1, 0.1), rng.randrange(2**32))
        clf = zero_classifier(world.template_ids, ROLE_BACKWARD)
        if data.reactions_train:
            samples = [
                (featurize_molecule(rx.product), rx.template_id)
                for rx in data.reactions_train
            ]
            clf = train(clf, samples, TrainConfig(learning_rate=0.1, epochs=4, seed=seed))
        return world, data, clf

    @pytest.mark.parametrize("seed", range(8))
    def test_budget_honesty_and_soundness(self, seed):
        world, data, clf = self._random_setup(seed)
        for i, target in enumerate(data.targets):
            budget = (7 * i + seed) % 30
            result = plan(target, clf, ZeroEstimator(), budget, 10, world)
            assert result.model_calls <= budget
            if result.success:
                assert not validate_route(world, result.route)

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_success_in_budget(self, seed):
        world, data, clf = self._random_setup(seed)
        for target in data.targets[:8]:
            small = plan(target, clf, ZeroEstimator(), 12, 10, world)
            big = plan(target, clf, ZeroEstimator(), 60, 10, world)
            if small.success:
                assert big.success
                assert big.model_calls == small.model_calls
                assert big.route == small.route

    @pytest.mark.parametrize("seed", range(4))
    def test_incremental_values_match_recomputation(self, seed):
        world, data, clf = self._random_setup(seed)
        target = max(data.targets, key=lambda t: len(t.text))
        tree = SearchTree(target, clf, ZeroEstimator(), 10, world)
        for _ in range(25):
            open_nodes = tree.best_partial_route()
            if not open_nodes:
                break
            node, g = min(open_nodes, key=lambda it: (it[1] + it[0].value, it[0].order))
            tree.expand(node)
            fresh = recompute_all_values(tree)

            def check(m):
                assert abs(fresh[id(m)] - m.value) < 1e-9 or (
                    math.isinf(fresh[id(m)]) and math.isinf(m.value)
                )
                for r in m.children:
                    assert abs(fresh[id(r)] - r.value) < 1e-9 or (
                        math.isinf(fresh[id(r)]) and math.isinf(r.value)
                    )
                    for c in r.children:
                        check(c)

            check(tree.root)

    @pytest.mark.parametrize("seed", range(5))
    def test_exhaustive_search_matches_oracle(self, seed):
        from retroloop import brute_force_oracle

        world, data, clf = self._random_setup(seed)
        table = brute_force_oracle(world, clf, list(data.targets), cap=300)
        for target in data.targets:
            optimal = table.costs[target.text]
            result = plan(target, clf, ZeroEstimator(), 50_000, 10, world)
            if math.isinf(optimal):
                assert not result.success
                continue
            assert result.success
            achieved = unfolded_route_cost(result.route, clf, world)
            assert achieved == pytest.approx(optimal, abs=1e-6)
            witness = table.witnesses[target.text]
            assert route_cost_under(result.route, clf, world) == pytest.approx(
                route_cost_under(witness, clf, world), abs=1e-6
            )


class TestDeterminism:
    def test_identical_plans(self, small_world, small_models, small_data):
        backward, _, _ = small_models
        for target in small_data.targets[:10]:
            a = plan(target, backward, ZeroEstimator(), 40, 10, small_world, trace=True)
            b = plan(target, backward, ZeroEstimator(), 40, 10, small_world, trace=True)
            assert a.outcome == b.outcome
            assert a.model_calls == b.model_calls
            assert a.trace == b.trace
            assert a.route == b.route
