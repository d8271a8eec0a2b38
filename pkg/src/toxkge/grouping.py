"""Species divisions, fingerprint clustering and group-respecting fold plans."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.model_selection import BaseCrossValidator

from .errors import ConfigError, GroupingError
from .kg import KnowledgeGraph, descendants, hierarchy_ancestors


@dataclass
class GroupAssignment:
    labels: dict[str, str]
    kind: str

    def __post_init__(self):
        if self.kind not in ("species_division", "chemical_cluster"):
            raise ValueError(f"unknown group kind {self.kind!r}")

    @property
    def groups(self) -> list[str]:
        return sorted(set(self.labels.values()))

    def __getitem__(self, entity: str) -> str:
        return self.labels[entity]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("entity,label\n")
            for e in sorted(self.labels):
                fh.write(f"{e},{self.labels[e]}\n")


def species_divisions(kg: KnowledgeGraph, division_roots: Sequence[str], species: Iterable[str] | None = None) -> GroupAssignment:
    """Label each species with the division root it descends from.

    ``species`` defaults to every hierarchy leaf under one of the roots.
    """
    root_ids = {kg.entities.id(r): r for r in division_roots}
    if species is None:
        leaves = set()
        for rid in root_ids:
            leaves.update(d for d in descendants(kg, rid) if kg.is_leaf(d))
        species = sorted(kg.entities.item(i) for i in leaves)
    labels = {}
    offenders = []
    for sp in species:
        if sp not in kg.entities:
            offenders.append((sp, []))
            continue
        anc = hierarchy_ancestors(kg, kg.entities.id(sp), len(kg.entities))
        roots = sorted({root_ids[a] for a, _ in anc if a in root_ids})
        if len(roots) != 1:
            offenders.append((sp, roots))
        else:
            labels[sp] = roots[0]
    if offenders:
        desc = "; ".join(f"{sp} -> {roots or 'no division'}" for sp, roots in offenders[:10])
        raise GroupingError(f"{len(offenders)} species without exactly one division root: {desc}", offenders)
    return GroupAssignment(labels, "species_division")


def parse_bits(bits: str | Sequence[int]) -> np.ndarray:
    if isinstance(bits, str):
        return np.frombuffer(bits.encode("ascii"), dtype=np.uint8) == ord("1")
    return np.asarray(bits, dtype=bool)


def tanimoto_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise ``1 - |a & b| / |a | b|``; two empty vectors are at distance 0."""
    X = np.asarray(X, dtype=bool).astype(np.float64)
    inter = X @ X.T
    counts = X.sum(axis=1)
    union = counts[:, None] + counts[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / union, 1.0)
    D = 1.0 - sim
    np.fill_diagonal(D, 0.0)
    return D


def average_linkage(D: np.ndarray) -> np.ndarray:
    """Average-linkage merge history over a distance matrix.

    Returns rows ``(a, b, distance, size)`` in merge order where ``a < b`` are
    the smallest original indices of the two merged clusters. Equal distances
    merge the lexicographically smallest ``(a, b)`` first.
    """
    F = np.array(D, dtype=float, copy=True)
    n = F.shape[0]
    if F.shape != (n, n):
        raise ValueError("distance matrix must be square")
    np.fill_diagonal(F, np.inf)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    size = np.ones(n)
    merges = []
    for _ in range(n - 1):
        # row-major argmin over the upper triangle gives the smallest (a, b) on ties
        a, b = divmod(int(np.argmin(np.where(upper, F, np.inf))), n)
        d = F[a, b]
        na, nb = size[a], size[b]
        new = (na * F[a] + nb * F[b]) / (na + nb)
        new[a] = new[b] = np.inf
        F[a, :] = new
        F[:, a] = new
        F[b, :] = np.inf
        F[:, b] = np.inf
        size[a] = na + nb
        merges.append((a, b, d, na + nb))
    return np.asarray(merges, dtype=float).reshape(-1, 4)


def cut_merges(merges: np.ndarray, n: int, k: int) -> np.ndarray:
    """Flat labels after applying the first ``n - k`` merges.

    Labels are numbered by first appearance in input order.
    """
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b, _, _ in merges[: n - k]:
        ra, rb = find(int(a)), find(int(b))
        parent[rb] = ra
    roots = [find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    return np.asarray([relabel.setdefault(r, len(relabel)) for r in roots])


class TanimotoAgglomerativeClustering(ClusterMixin, BaseEstimator):
    """Average-linkage hierarchical clustering of binary fingerprints under Tanimoto distance."""

    def __init__(self, n_clusters=5):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        X = np.asarray(X)
        n = X.shape[0]
        if n < self.n_clusters:
            raise GroupingError(f"need at least {self.n_clusters} fingerprints, got {n}")
        self.distances_ = tanimoto_distances(X)
        self.merges_ = average_linkage(self.distances_)
        self.labels_ = cut_merges(self.merges_, n, self.n_clusters)
        return self


def cluster_chemicals(fingerprints: Mapping[str, str | Sequence[int]], k: int = 5, length: int | None = 881) -> GroupAssignment:
    """Cluster chemicals (in mapping order) into ``k`` groups labelled ``cluster0..``."""
    names = list(fingerprints)
    if len(names) < k:
        raise GroupingError(f"need at least {k} chemicals to form {k} clusters, got {len(names)}")
    X = np.vstack([parse_bits(fingerprints[c]) for c in names])
    if length is not None and X.shape[1] != length:
        raise ValueError(f"fingerprints must have {length} bits, got {X.shape[1]}")
    labels = TanimotoAgglomerativeClustering(k).fit(X).labels_
    return GroupAssignment({c: f"cluster{int(l)}" for c, l in zip(names, labels)}, "chemical_cluster")


def write_distance_csv(names: Sequence[str], D: np.ndarray, path) -> None:
    """Square distance matrix with entity names as header row and first column."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["entity", *names]) + "\n")
        for name, row in zip(names, D):
            fh.write(",".join([name, *(f"{x:.6f}" for x in row)]) + "\n")


@dataclass
class GroupedFoldPlan:
    n_folds: int
    group_fold: dict[str, int]
    fold_sizes: list[int] = field(default_factory=list)

    def fold_of(self, label: str) -> int:
        return self.group_fold[label]

    def sample_folds(self, sample_labels: Sequence[str]) -> np.ndarray:
        return np.asarray([self.group_fold[g] for g in sample_labels], dtype=int)

    def to_json(self) -> str:
        return json.dumps({"n_folds": self.n_folds, "group_fold": self.group_fold, "fold_sizes": self.fold_sizes}, indent=2, sort_keys=True) + "\n"


def make_fold_plan(group_sizes: Mapping[str, int] | GroupAssignment, n_folds: int = 5, rng=None) -> GroupedFoldPlan:
    """Randomly assign whole groups to folds.

    ``group_sizes`` maps each group label to its number of samples (a
    :class:`GroupAssignment` counts its entities instead). Groups are taken in
    a random order; the first ``n_folds`` seed one fold each, the rest go to
    the currently lightest fold.
    """
    if n_folds < 2:
        raise ConfigError("n_folds must be at least 2")
    if isinstance(group_sizes, GroupAssignment):
        sizes: dict[str, int] = {}
        for g in group_sizes.labels.values():
            sizes[g] = sizes.get(g, 0) + 1
    else:
        sizes = dict(group_sizes)
    if not sizes:
        raise ConfigError("no groups to assign")
    rng = np.random.default_rng(rng)
    labels = sorted(sizes)
    order = [labels[i] for i in rng.permutation(len(labels))]
    load = [0] * n_folds
    assign = {}
    fold_perm = rng.permutation(n_folds)
    for idx, g in enumerate(order):
        if idx < n_folds:
            f = int(fold_perm[idx])
        else:
            f = int(np.argmin(load))
        assign[g] = f
        load[f] += sizes[g]
    return GroupedFoldPlan(n_folds, assign, load)


class GroupFoldSplitter(BaseCrossValidator):
    """Cross-validator yielding one train/test split per fold of a random group plan."""

    def __init__(self, n_folds=5, random_state=None):
        self.n_folds = n_folds
        self.random_state = random_state

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_folds

    def plan(self, groups) -> GroupedFoldPlan:
        groups = [str(g) for g in groups]
        sizes: dict[str, int] = {}
        for g in groups:
            sizes[g] = sizes.get(g, 0) + 1
        return make_fold_plan(sizes, self.n_folds, self.random_state)

    def _iter_test_indices(self, X=None, y=None, groups=None):
        if groups is None:
            raise ValueError("groups are required")
        groups = [str(g) for g in groups]
        folds = self.plan(groups).sample_folds(groups)
        for f in range(self.n_folds):
            yield np.flatnonzero(folds == f)
