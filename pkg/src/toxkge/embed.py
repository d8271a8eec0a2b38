"""ComplEx knowledge-graph embeddings trained with a pointwise logistic loss.

Scoring uses the four-term real expansion of the trilinear product. By
default all four terms are added; ``variant="conjugate"`` flips the sign of
the last term, which recovers the usual ``Re(<s, p, conj(o)>)`` and makes
the score asymmetric in subject and object.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, LookupFailure, TrainingError
from .kg import KnowledgeGraph, Literal, Triple

logger = logging.getLogger(__name__)

VARIANTS = {"additive": 1.0, "conjugate": -1.0}


@dataclass
class ComplexEmbeddingTable:
    """Entity and relation embeddings as separate real/imaginary matrices."""

    entity_real: np.ndarray
    entity_imag: np.ndarray
    relation_real: np.ndarray
    relation_imag: np.ndarray
    entities: list[str]
    relations: list[str]
    variant: str = "additive"

    def __post_init__(self):
        n, k = self.entity_real.shape
        if self.entity_imag.shape != (n, k) or self.relation_real.shape[1] != k or self.relation_imag.shape != self.relation_real.shape:
            raise ValueError("embedding matrix shapes disagree")
        if n != len(self.entities) or self.relation_real.shape[0] != len(self.relations):
            raise ValueError("row counts do not match dictionaries")
        self._entity_ids = {e: i for i, e in enumerate(self.entities)}

    @property
    def k(self) -> int:
        return self.entity_real.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_real.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_real.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {
            "entity_real": self.entity_real,
            "entity_imag": self.entity_imag,
            "relation_real": self.relation_real,
            "relation_imag": self.relation_imag,
        }

    def entity_id(self, entity) -> int:
        if isinstance(entity, Literal):
            entity = literal_key(entity)
        if isinstance(entity, str):
            try:
                return self._entity_ids[entity]
            except KeyError:
                raise LookupFailure(f"no embedding for {entity!r}") from None
        idx = int(entity)
        if not 0 <= idx < self.n_entities:
            raise LookupFailure(f"entity id {idx} out of range")
        return idx

    def entity_vector(self, entity) -> np.ndarray:
        """``[real || imag]`` row for one entity."""
        i = self.entity_id(entity)
        return np.concatenate([self.entity_real[i], self.entity_imag[i]])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(m)) for m in self.params().values())


class LabeledTriple(NamedTuple):
    subject: int
    predicate: int
    object: int
    label: int


def literal_key(lit: Literal) -> str:
    return lit.n3()


def build_vocabulary(kg: KnowledgeGraph) -> tuple[list[str], list[str], np.ndarray]:
    """Entity and relation names plus an ``(n, 3)`` id array of all triples.

    IRI entities keep their graph ids; each distinct literal becomes an extra
    entity appended after them.
    """
    entities = list(kg.entities)
    ids = {e: i for i, e in enumerate(entities)}
    relations = list(kg.relations)
    rel_ids = {r: i for i, r in enumerate(relations)}
    rows = []
    for s, p, o in kg.triples:
        if isinstance(o, Literal):
            key = literal_key(o)
            if key not in ids:
                ids[key] = len(entities)
                entities.append(key)
            oi = ids[key]
        else:
            oi = ids[o]
        rows.append((ids[s], rel_ids[p], oi))
    return entities, relations, np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def _check_ids(table: ComplexEmbeddingTable, s, p, o):
    s, p, o = np.asarray(s), np.asarray(p), np.asarray(o)
    if np.any((s < 0) | (s >= table.n_entities)) or np.any((o < 0) | (o >= table.n_entities)):
        raise LookupFailure("entity id out of range")
    if np.any((p < 0) | (p >= table.n_relations)):
        raise LookupFailure("relation id out of range")
    return s, p, o


def score_complex(table: ComplexEmbeddingTable, s, p, o):
    """Trilinear ComplEx score; ``s``, ``p``, ``o`` may be scalars or id arrays."""
    s, p, o = _check_ids(table, s, p, o)
    sign = VARIANTS[table.variant]
    ar, ai = table.entity_real[s], table.entity_imag[s]
    br, bi = table.relation_real[p], table.relation_imag[p]
    cr, ci = table.entity_real[o], table.entity_imag[o]
    out = np.sum(ar * br * cr + ai * br * ci + ar * bi * ci + sign * ai * bi * cr, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def logistic_loss(score, label):
    """``log(1 + exp(-label * score))`` computed as a softplus."""
    label = np.asarray(label)
    if not np.all(np.isin(label, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    out = np.logaddexp(0.0, -label * np.asarray(score, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def loss_and_gradients(table: ComplexEmbeddingTable, triples: np.ndarray, labels: np.ndarray, scale: float = 1.0):
    """Summed logistic loss over ``triples`` and dense gradients for every parameter matrix.

    ``triples`` is an ``(m, 3)`` id array; the loss and gradients are multiplied by ``scale``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=float)
    s, p, o = triples[:, 0], triples[:, 1], triples[:, 2]
    sign = VARIANTS[table.variant]
    ar, ai = table.entity_real[s], table.entity_imag[s]
    br, bi = table.relation_real[p], table.relation_imag[p]
    cr, ci = table.entity_real[o], table.entity_imag[o]
    scores = np.sum(ar * br * cr + ai * br * ci + ar * bi * ci + sign * ai * bi * cr, axis=1)
    loss = scale * float(np.sum(np.logaddexp(0.0, -labels * scores)))
    # d loss / d score
    g = (scale * -labels * _sigmoid(-labels * scores))[:, None]

    grads = {name: np.zeros_like(m) for name, m in table.params().items()}
    np.add.at(grads["entity_real"], s, g * (br * cr + bi * ci))
    np.add.at(grads["entity_imag"], s, g * (br * ci + sign * bi * cr))
    np.add.at(grads["relation_real"], p, g * (ar * cr + ai * ci))
    np.add.at(grads["relation_imag"], p, g * (ar * ci + sign * ai * cr))
    np.add.at(grads["entity_real"], o, g * (ar * br + sign * ai * bi))
    np.add.at(grads["entity_imag"], o, g * (ai * br + ar * bi))
    return loss, grads


def corrupt(triple, rng: np.random.Generator, n_entities: int, mode: str | None = None) -> LabeledTriple:
    """Replace subject, object or both with a different uniformly drawn entity."""
    if n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    s, p, o = (int(x) for x in triple[:3])
    if mode is None:
        mode = ("subject", "object", "both")[int(rng.integers(3))]
    if mode not in ("subject", "object", "both"):
        raise ValueError(f"unknown corruption mode {mode!r}")

    def other(x):
        r = int(rng.integers(n_entities - 1))
        return r + 1 if r >= x else r

    if mode in ("subject", "both"):
        s = other(s)
    if mode in ("object", "both"):
        o = other(o)
    return LabeledTriple(s, p, o, -1)


def corrupt_batch(triples: np.ndarray, rng: np.random.Generator, n_entities: int, offset: int = 0) -> np.ndarray:
    """One negative per positive; even global positions corrupt the subject, odd ones the object."""
    if n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    neg = np.array(triples, dtype=np.int64, copy=True)
    m = len(neg)
    col = np.where((np.arange(m) + offset) % 2 == 0, 0, 2)
    orig = neg[np.arange(m), col]
    r = rng.integers(n_entities - 1, size=m)
    neg[np.arange(m), col] = np.where(r >= orig, r + 1, r)
    return neg


@dataclass
class TrainingConfig:
    k: int = 50
    negatives: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    n_inits: int = 4
    init_scale: float = 0.1
    variant: str = "additive"

    def validate(self) -> None:
        if self.k <= 0:
            raise ConfigError("embedding dimension k must be positive")
        if self.negatives < 1 or self.epochs < 1 or self.batch_size < 1 or self.n_inits < 1:
            raise ConfigError("negatives, epochs, batch_size and n_inits must be positive")
        if self.learning_rate <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.epsilon <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {sorted(VARIANTS)}")

    @property
    def feature_dim(self) -> int:
        return self.n_inits * 2 * self.k


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(x) for k, x in params.items()}, {k: np.zeros_like(x) for k, x in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, config: TrainingConfig) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {state.t + 1}", step=state.t + 1)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    return state


def init_table(entities: list[str], relations: list[str], config: TrainingConfig, rng: np.random.Generator) -> ComplexEmbeddingTable:
    k = config.k
    return ComplexEmbeddingTable(
        entity_real=rng.normal(0.0, config.init_scale, (len(entities), k)),
        entity_imag=rng.normal(0.0, config.init_scale, (len(entities), k)),
        relation_real=rng.normal(0.0, config.init_scale, (len(relations), k)),
        relation_imag=rng.normal(0.0, config.init_scale, (len(relations), k)),
        entities=list(entities),
        relations=list(relations),
        variant=config.variant,
    )


def train(kg: KnowledgeGraph, config: TrainingConfig, seed=None) -> tuple[ComplexEmbeddingTable, list[float]]:
    """Fit one ComplEx table; returns it with the per-epoch mean loss."""
    config.validate()
    if len(kg) == 0:
        raise ConfigError("cannot train on an empty graph")
    entities, relations, pos = build_vocabulary(kg)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    table = init_table(entities, relations, config, rng)
    params = table.params()
    state = AdamState.zeros_like(params)
    n = len(pos)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        count = 0
        for start in range(0, n, config.batch_size):
            batch = pos[order[start : start + config.batch_size]]
            negs = [corrupt_batch(batch, rng, len(entities), offset=start + j) for j in range(config.negatives)]
            trip = np.concatenate([batch] + negs)
            labels = np.concatenate([np.ones(len(batch))] + [-np.ones(len(batch))] * config.negatives)
            loss, grads = loss_and_gradients(table, trip, labels, scale=1.0 / len(trip))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}", step=state.t)
            adam_step(params, grads, state, config)
            total += loss * len(trip)
            count += len(trip)
        curve.append(total / count)
        logger.debug("epoch %d mean loss %.6f", epoch + 1, curve[-1])
    return table, curve


def init_seeds(seed: int, n_inits: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_inits)]


class ComplExEmbedding(TransformerMixin, BaseEstimator):
    """Ensemble of independently initialised ComplEx tables.

    ``fit`` takes a :class:`~toxkge.kg.KnowledgeGraph`; ``transform`` maps a
    sequence of entity IRIs (or ids) to concatenated ``[real || imag]``
    rows, one block per initialisation, giving ``n_inits * 2 * k`` features.
    """

    def __init__(
        self,
        k=50,
        n_inits=4,
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        epochs=100,
        batch_size=256,
        negatives=1,
        init_scale=0.1,
        variant="additive",
        seed=0,
    ):
        self.k = k
        self.n_inits = n_inits
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.epochs = epochs
        self.batch_size = batch_size
        self.negatives = negatives
        self.init_scale = init_scale
        self.variant = variant
        self.seed = seed

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            k=self.k,
            negatives=self.negatives,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            n_inits=self.n_inits,
            init_scale=self.init_scale,
            variant=self.variant,
        )

    def fit(self, kg: KnowledgeGraph, y=None):
        config = self.training_config()
        config.validate()
        self.tables_ = []
        self.loss_curves_ = []
        for s in init_seeds(self.seed, self.n_inits):
            table, curve = train(kg, config, seed=s)
            self.tables_.append(table)
            self.loss_curves_.append(curve)
        self.entities_ = list(self.tables_[0].entities)
        return self

    def transform(self, X: Iterable) -> np.ndarray:
        check_is_fitted(self, "tables_")
        return np.vstack([entity_features(self.tables_, e) for e in X])


def entity_features(tables: Sequence[ComplexEmbeddingTable], e) -> np.ndarray:
    """Concatenate ``[real || imag]`` rows of ``e`` across tables, in order."""
    if not tables:
        raise ValueError("no embedding tables")
    k = tables[0].k
    names = tables[0].entities
    for t in tables[1:]:
        if t.k != k:
            raise ValueError(f"dimension mismatch between tables: {t.k} != {k}")
        if t.entities != names:
            raise ValueError("tables were trained with different entity dictionaries")
    return np.concatenate([t.entity_vector(e) for t in tables])


def _entity_seed(entity, seed: int) -> list[int]:
    key = str(entity).encode("utf-8") if not isinstance(entity, (int, np.integer)) else f"#{int(entity)}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")]


def random_features(entity, dim: int = 400, seed: int = 0) -> np.ndarray:
    """Standard-normal vector fixed by ``(entity, seed)``."""
    return np.random.default_rng(_entity_seed(entity, seed)).standard_normal(dim)


class RandomProjection(TransformerMixin, BaseEstimator):
    """Baseline featuriser: a fixed random Gaussian vector per entity."""

    def __init__(self, dim=400, seed=0):
        self.dim = dim
        self.seed = seed

    def fit(self, X=None, y=None):
        self.n_features_out_ = self.dim
        return self

    def transform(self, X: Iterable) -> np.ndarray:
        return np.vstack([random_features(e, self.dim, self.seed) for e in X])


def link_prediction_auc(table: ComplexEmbeddingTable, positives: np.ndarray, rng: np.random.Generator) -> float:
    """AUC of true triples against one random corruption each (ties count half)."""
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    negatives = corrupt_batch(positives, rng, table.n_entities)
    pos = score_complex(table, positives[:, 0], positives[:, 1], positives[:, 2])
    neg = score_complex(table, negatives[:, 0], negatives[:, 1], negatives[:, 2])
    ranks = rankdata(np.concatenate([pos, neg]))
    n_pos, n_neg = len(pos), len(neg)
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def holdout_split(kg: KnowledgeGraph, fraction: float, rng) -> tuple[KnowledgeGraph, list[Triple]]:
    """Split off ``fraction`` of the triples for link-prediction evaluation.

    Held-out triples whose subject, predicate or object no longer occurs in
    the training part are dropped, since they would have no embedding.
    """
    if not 0 < fraction < 1:
        raise ConfigError("fraction must be in (0, 1)")
    triples = list(kg.triples)
    perm = np.random.default_rng(rng).permutation(len(triples))
    n_hold = int(round(fraction * len(triples)))
    held = [triples[i] for i in sorted(perm[:n_hold])]
    train_kg = KnowledgeGraph([triples[i] for i in sorted(perm[n_hold:])], kg.hierarchy_predicates)
    seen = set(train_kg.entities) | {literal_key(t.object) for t in train_kg.triples if isinstance(t.object, Literal)}
    keep = [
        t for t in held
        if t.subject in seen and t.predicate in train_kg.relations
        and (literal_key(t.object) if isinstance(t.object, Literal) else t.object) in seen
    ]
    return train_kg, keep


def triple_ids(table: ComplexEmbeddingTable, triples: Iterable[Triple]) -> np.ndarray:
    """``(n, 3)`` id array of named triples under ``table``'s dictionaries."""
    rel = {r: i for i, r in enumerate(table.relations)}
    rows = []
    for s, p, o in triples:
        if p not in rel:
            raise LookupFailure(f"no embedding for relation {p!r}")
        rows.append((table.entity_id(s), rel[p], table.entity_id(o)))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def write_table_csv(table: ComplexEmbeddingTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        k = table.k
        w.writerow(["entity"] + [f"re{i}" for i in range(k)] + [f"im{i}" for i in range(k)])
        for i, e in enumerate(table.entities):
            w.writerow([e] + [repr(float(x)) for x in table.entity_real[i]] + [repr(float(x)) for x in table.entity_imag[i]])


def write_manifest(path, config: TrainingConfig, seed: int, curve: Sequence[float], table: ComplexEmbeddingTable) -> None:
    manifest = {
        "k": table.k,
        "seed": int(seed),
        "epochs": config.epochs,
        "n_entities": table.n_entities,
        "n_relations": table.n_relations,
        "variant": table.variant,
        "config": asdict(config),
        "loss_curve": [float(x) for x in curve],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_loss_curve_csv(curve: Sequence[float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, x in enumerate(curve, start=1):
            w.writerow([i, repr(float(x))])


def write_features_csv(names: Sequence[str], features: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity"] + [f"f{i}" for i in range(features.shape[1])])
        for name, row in zip(names, features):
            w.writerow([name] + [repr(float(x)) for x in row])


def read_features_csv(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out[row[0]] = np.asarray(row[1:], dtype=float)
    return out
