"""Feature hashing and the probabilistic template classifier.

One classifier family serves three roles: the backward model (product ->
template distribution), the frozen reference backward model used as a realism
judge and cost scorer, and the forward model (reactant set -> template
distribution, where a template stands for the product it joins into).

The model is multinomial logistic regression over hashed structural features.
Weights start at zero, so an untrained model predicts the exact uniform
distribution; training is seeded mini-batch gradient ascent on the weighted
log-likelihood, bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    CheckpointError,
    EmptyDataset,
    InvalidConfig,
    InvalidInput,
    InvalidReaction,
    UnknownTemplate,
)
from .world import Molecule, Reaction, World, parse_ast, subterm_nodes

DEFAULT_DIM = 2048
CHECKPOINT_VERSION = 1

ROLE_BACKWARD = "backward"
ROLE_REFERENCE = "reference_backward"
ROLE_FORWARD = "forward"
ROLES = (ROLE_BACKWARD, ROLE_REFERENCE, ROLE_FORWARD)

# Feature subterms are capped at height 2, the term analogue of a
# radius-2 fingerprint.
_FEATURE_HEIGHT = 2


def _feature_hash(feature: str, dim: int) -> int:
    digest = hashlib.blake2b(feature.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length binary vector stored as its sorted on-bit indices."""

    dim: int
    indices: tuple[int, ...]

    def toarray(self) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=np.uint8)
        dense[list(self.indices)] = 1
        return dense


def featurize_molecule(m: Molecule, dim: int = DEFAULT_DIM) -> FeatureVector:
    """Hash all subterms of height <= 2 plus the root operator symbol.

    Malformed molecules fall back to character 3-grams of their text.
    """
    features: set[str] = set()
    ast = None if m.malformed else parse_ast(m.text)
    if ast is None:
        text = m.text
        if len(text) < 3:
            features.add("#" + text)
        else:
            for i in range(len(text) - 2):
                features.add("#" + text[i : i + 3])
    else:
        for node in subterm_nodes(ast):
            if node.height <= _FEATURE_HEIGHT:
                features.add(node.text)
        if ast.op is not None:
            features.add("op:" + ast.op)
    bits = sorted({_feature_hash(f, dim) for f in features})
    return FeatureVector(dim=dim, indices=tuple(bits))


def featurize_reactant_set(
    reactants: Sequence[Molecule], dim: int = DEFAULT_DIM
) -> FeatureVector:
    """Bitwise OR of member featurizations; order-invariant."""
    if not reactants:
        raise InvalidInput("reactant set must be non-empty")
    bits: set[int] = set()
    for m in reactants:
        bits.update(featurize_molecule(m, dim).indices)
    return FeatureVector(dim=dim, indices=tuple(sorted(bits)))


# ---------------------------------------------------------------------------
# classifier


@dataclass(frozen=True, eq=False)
class TemplateClassifier:
    weights: np.ndarray  # (T, D)
    bias: np.ndarray  # (T,)
    template_index: tuple[str, ...]
    role: str
    version: int = 1

    @property
    def n_templates(self) -> int:
        return len(self.template_index)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    @cached_property
    def _row_of(self) -> dict[str, int]:
        return {tid: i for i, tid in enumerate(self.template_index)}


def zero_classifier(
    template_ids: Sequence[str], role: str, dim: int = DEFAULT_DIM
) -> TemplateClassifier:
    """Zero weights, i.e. exactly uniform predictions."""
    if role not in ROLES:
        raise InvalidInput(f"unknown role {role!r}")
    t = len(template_ids)
    if t < 1:
        raise InvalidInput("need at least one template")
    return TemplateClassifier(
        weights=np.zeros((t, dim), dtype=np.float64),
        bias=np.zeros(t, dtype=np.float64),
        template_index=tuple(template_ids),
        role=role,
    )


def with_role(model: TemplateClassifier, role: str) -> TemplateClassifier:
    if role not in ROLES:
        raise InvalidInput(f"unknown role {role!r}")
    return replace(model, role=role)


def _scores(model: TemplateClassifier, fv: FeatureVector) -> np.ndarray:
    if fv.dim != model.dim:
        raise InvalidInput(f"feature dim {fv.dim} != model dim {model.dim}")
    if fv.indices:
        s = model.weights[:, list(fv.indices)].sum(axis=1) + model.bias
    else:
        s = model.bias.copy()
    return s


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def predict_proba(model: TemplateClassifier, fv: FeatureVector) -> np.ndarray:
    """Probability over the full template list; sums to 1."""
    return _softmax(_scores(model, fv))


class Prediction(NamedTuple):
    template_id: str
    probability: float
    outcome: "tuple[Molecule, ...] | Molecule"


def _featurize_input(
    model: TemplateClassifier, inp: "Molecule | Sequence[Molecule]"
) -> FeatureVector:
    if model.role == ROLE_FORWARD:
        if isinstance(inp, Molecule):
            raise InvalidInput("forward models take a reactant sequence")
        return featurize_reactant_set(inp, model.dim)
    if not isinstance(inp, Molecule):
        raise InvalidInput("backward models take a single product molecule")
    return featurize_molecule(inp, model.dim)


def predict_topk(
    model: TemplateClassifier,
    inp: "Molecule | Sequence[Molecule]",
    k: int,
    world: World,
) -> list[Prediction]:
    """Top-k applicable templates with outcomes, by descending probability.

    Inapplicable templates are skipped without renormalizing, so the reported
    probabilities are comparable with filtering thresholds. Ties break by
    template index order.
    """
    if k < 1:
        raise InvalidInput("k must be at least 1")
    probs = predict_proba(model, _featurize_input(model, inp))
    order = sorted(range(model.n_templates), key=lambda i: (-probs[i], i))
    results: list[Prediction] = []
    for i in order:
        if len(results) >= k:
            break
        tid = model.template_index[i]
        template = world.template_by_id.get(tid)
        if template is None:
            raise UnknownTemplate(tid)
        if model.role == ROLE_FORWARD:
            product = template.forward(inp)  # type: ignore[arg-type]
            if product is None:
                continue
            results.append(Prediction(tid, float(probs[i]), product))
        else:
            reactants = template.backward(inp)  # type: ignore[arg-type]
            if reactants is None:
                continue
            ordered = tuple(sorted(reactants, key=lambda m: m.text))
            results.append(Prediction(tid, float(probs[i]), ordered))
    return results


def likelihood(model: TemplateClassifier, reaction: Reaction, world: World) -> float:
    """Probability of the reaction's template given its featurized input."""
    row = model._row_of.get(reaction.template_id)
    if row is None:
        raise UnknownTemplate(reaction.template_id)
    if model.role == ROLE_FORWARD:
        fv = featurize_reactant_set(reaction.reactants, model.dim)
    else:
        template = world.template_by_id.get(reaction.template_id)
        if template is None:
            raise UnknownTemplate(reaction.template_id)
        produced = template.backward(reaction.product)
        if produced is None or tuple(sorted(m.text for m in produced)) != tuple(
            r.text for r in reaction.reactants
        ):
            raise InvalidReaction(
                f"template {reaction.template_id} does not yield the stated "
                f"reactants for {reaction.product.text}"
            )
        fv = featurize_molecule(reaction.product, model.dim)
    return float(predict_proba(model, fv)[row])


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be at least 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be at least 1")


# A sample is (features, template_id) with an optional multiset weight.
Sample = "tuple[FeatureVector, str] | tuple[FeatureVector, str, float]"


def _as_arrays(
    model: TemplateClassifier, data: Iterable
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, ys, ws = [], [], []
    for sample in data:
        fv, tid = sample[0], sample[1]
        weight = float(sample[2]) if len(sample) > 2 else 1.0
        row = model._row_of.get(tid)
        if row is None:
            raise UnknownTemplate(tid)
        xs.append(fv)
        ys.append(row)
        ws.append(weight)
    if not xs:
        raise EmptyDataset("training data is empty")
    x = np.zeros((len(xs), model.dim), dtype=np.float64)
    for i, fv in enumerate(xs):
        if fv.indices:
            x[i, list(fv.indices)] = 1.0
    return x, np.asarray(ys, dtype=np.int64), np.asarray(ws, dtype=np.float64)


def nll_and_grad(
    model: TemplateClassifier, data: Iterable
) -> tuple[float, np.ndarray, np.ndarray]:
    """Total weighted negative log-likelihood and its exact gradient.

    The objective is a weighted sum, so doubling a sample's weight doubles its
    gradient contribution exactly.
    """
    x, y, w = _as_arrays(model, data)
    logits = x @ model.weights.T + model.bias
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    logp = logits[np.arange(len(y)), y] - logz
    p = np.exp(logits - logz[:, None])
    resid = p
    resid[np.arange(len(y)), y] -= 1.0
    resid *= w[:, None]
    grad_w = resid.T @ x
    grad_b = resid.sum(axis=0)
    return float(-(w * logp).sum()), grad_w, grad_b


def mean_nll(model: TemplateClassifier, data: Iterable) -> float:
    samples = list(data)
    total, _, _ = nll_and_grad(model, samples)
    weight = sum(float(s[2]) if len(s) > 2 else 1.0 for s in samples)
    return total / weight


def train(
    model: TemplateClassifier, data: Iterable, cfg: TrainConfig
) -> TemplateClassifier:
    """Seeded mini-batch gradient ascent on the weighted log-likelihood.

    Returns a new classifier; the input model is untouched. Identical
    (model, data, cfg) produce bit-identical weights.
    """
    x, y, w = _as_arrays(model, data)
    n = len(y)
    weights = model.weights.copy()
    bias = model.bias.copy()
    rng = np.random.default_rng(cfg.seed)
    eye = np.eye(model.n_templates, dtype=np.float64)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb, wb = x[idx], y[idx], w[idx]
            logits = xb @ weights.T + bias
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            p = e / e.sum(axis=1, keepdims=True)
            resid = (p - eye[yb]) * wb[:, None]
            scale = cfg.learning_rate / len(idx)
            weights -= scale * (resid.T @ xb)
            bias -= scale * resid.sum(axis=0)
    return replace(model, weights=weights, bias=bias)


def topk_exact_match(
    model: TemplateClassifier, test: Sequence[Reaction], k: int, world: World
) -> float:
    """Fraction of reactions whose true reactant set appears in the top-k."""
    if not test:
        raise EmptyDataset("test set is empty")
    if model.role == ROLE_FORWARD:
        raise InvalidInput("exact match accuracy is defined for backward models")
    hits = 0
    for rx in test:
        truth = tuple(r.text for r in rx.reactants)
        for pred in predict_topk(model, rx.product, k, world):
            if tuple(m.text for m in pred.outcome) == truth:  # type: ignore[union-attr]
                hits += 1
                break
    return hits / len(test)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: TemplateClassifier, path: str | Path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "role": model.role,
        "dim": model.dim,
        "template_index": list(model.template_index),
        "weights": model.weights.reshape(-1).tolist(),
        "bias": model.bias.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> TemplateClassifier:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    for field in ("version", "role", "dim", "template_index", "weights", "bias"):
        if field not in doc:
            raise CheckpointError(f"checkpoint {path} missing field {field!r}")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc['version']!r}")
    if doc["role"] not in ROLES:
        raise CheckpointError(f"unknown role {doc['role']!r}")
    t, d = len(doc["template_index"]), int(doc["dim"])
    if len(doc["weights"]) != t * d or len(doc["bias"]) != t:
        raise CheckpointError(f"checkpoint {path} has inconsistent dimensions")
    return TemplateClassifier(
        weights=np.asarray(doc["weights"], dtype=np.float64).reshape(t, d),
        bias=np.asarray(doc["bias"], dtype=np.float64),
        template_index=tuple(doc["template_index"]),
        role=doc["role"],
        version=doc["version"],
    )
