"""Embedding-neighbourhood analyses of prediction quality.

Covers neighbour densities (by embedding radius or hierarchy depth), a
random-forest model of absolute error from distance vectors, facts shared
by an entity and its nearest neighbours, and the correlation between
shared-fact counts and error.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betainc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.ensemble import RandomForestRegressor
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, DomainError
from .kg import KnowledgeGraph, Literal, leaves_with_data_within_depth


class SimilarityIndex:
    """Pairwise distances between entity feature vectors.

    ``metric`` is ``"euclidean"`` or ``"cosine"`` (one minus cosine similarity).
    The full matrix is computed on first use and cached.
    """

    def __init__(self, names: Sequence[str], features: np.ndarray, metric: str = "euclidean"):
        if metric not in ("euclidean", "cosine"):
            raise ConfigError(f"unknown metric {metric!r}")
        self.names = list(names)
        self.features = np.asarray(features, dtype=float)
        if self.features.shape[0] != len(self.names):
            raise ValueError("one feature row per name is required")
        self.metric = metric
        self._pos = {n: i for i, n in enumerate(self.names)}
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name) -> bool:
        return name in self._pos

    def index(self, name: str) -> int:
        return self._pos[name]

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            F = self.features
            if self.metric == "euclidean":
                sq = np.einsum("ij,ij->i", F, F)
                D2 = sq[:, None] + sq[None, :] - 2.0 * F @ F.T
                D = np.sqrt(np.maximum(D2, 0.0))
            else:
                norm = np.linalg.norm(F, axis=1)
                norm[norm == 0] = 1.0
                U = F / norm[:, None]
                D = np.clip(1.0 - U @ U.T, 0.0, 2.0)
            D = 0.5 * (D + D.T)
            np.fill_diagonal(D, 0.0)
            self._matrix = D
        return self._matrix

    def distance(self, a: str, b: str) -> float:
        return float(self.matrix[self._pos[a], self._pos[b]])

    def row(self, name: str, among: Sequence[str] | None = None) -> np.ndarray:
        r = self.matrix[self._pos[name]]
        if among is None:
            return r.copy()
        return r[[self._pos[m] for m in among]]

    def nearest(self, name: str, n: int, among: Sequence[str]) -> list[str]:
        """``n`` closest members of ``among`` (excluding ``name``); distance ties keep ``among`` order."""
        cands = [m for m in among if m != name]
        d = self.row(name, cands)
        order = np.argsort(d, kind="stable")
        return [cands[i] for i in order[:n]]


@dataclass
class DensityCell:
    chemical: str
    species: str
    chemical_count: int
    species_count: int
    categorical_error: int | None = None
    radius_or_depth: tuple = ()


def radius_density(
    index: SimilarityIndex,
    chemical: str,
    species: str,
    r_chem: float,
    r_species: float,
    chemicals: Sequence[str],
    species_pool: Sequence[str],
) -> DensityCell:
    """Count chemicals within ``r_chem`` of ``chemical`` and species within ``r_species`` of ``species``."""
    if r_chem <= 0 or r_species <= 0:
        raise ConfigError("radii must be positive")
    cpool = [c for c in chemicals if c != chemical]
    spool = [s for s in species_pool if s != species]
    nc = int(np.sum(index.row(chemical, cpool) < r_chem)) if cpool else 0
    ns = int(np.sum(index.row(species, spool) < r_species)) if spool else 0
    return DensityCell(chemical, species, nc, ns, None, (r_chem, r_species))


def depth_density(kg: KnowledgeGraph, chemical: str, species: str, depth: int, has_data: Callable[[int], bool]) -> DensityCell:
    """Data-bearing hierarchy leaves near the chemical and the species."""
    if depth < 0:
        raise ConfigError("depth must be non-negative")
    c = leaves_with_data_within_depth(kg, kg.entities.id(chemical), depth, has_data)
    s = leaves_with_data_within_depth(kg, kg.entities.id(species), depth, has_data)
    return DensityCell(chemical, species, c, s, None, (depth,))


@dataclass
class DensityMap:
    histograms: dict[int, dict[tuple[int, int], int]]
    counts: dict[int, int]

    def rows(self) -> list[tuple[int, int, int, int]]:
        out = []
        for err in sorted(self.histograms):
            for (c, s), freq in sorted(self.histograms[err].items()):
                out.append((err, c, s, freq))
        return out

    def write_csv(self, path, error_class: int | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["error_class", "chem_count", "species_count", "frequency"])
            for row in self.rows():
                if error_class is None or row[0] == error_class:
                    w.writerow(row)


def density_map(categorical_errors: Sequence[int], cells: Sequence[DensityCell]) -> DensityMap:
    """Per-error-class 2-D histograms of (chemical count, species count)."""
    if len(categorical_errors) != len(cells):
        raise ValueError("one density cell per prediction is required")
    hist: dict[int, dict[tuple[int, int], int]] = {e: defaultdict(int) for e in range(4)}
    for err, cell in zip(categorical_errors, cells):
        err = int(err)
        if not 0 <= err <= 3:
            raise DomainError(f"categorical error {err} outside 0..3")
        hist[err][(cell.chemical_count, cell.species_count)] += 1
    counts = {e: sum(h.values()) for e, h in hist.items()}
    return DensityMap({e: dict(h) for e, h in hist.items()}, counts)


def error_features(
    chem_index: SimilarityIndex,
    species_index: SimilarityIndex,
    pairs: Sequence[tuple[str, str]],
    chemicals: Sequence[str],
    species: Sequence[str],
) -> np.ndarray:
    """Distance from each pair's chemical to every chemical, concatenated with the species' distances to every species."""
    return np.vstack([np.concatenate([chem_index.row(c, chemicals), species_index.row(s, species)]) for c, s in pairs])


class ErrorForest(RegressorMixin, BaseEstimator):
    """Random forest regressing absolute prediction error on distance vectors."""

    def __init__(self, n_estimators=100, max_features="sqrt", random_state=None):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y):
        self.forest_ = RandomForestRegressor(
            n_estimators=self.n_estimators,
            max_features=self.max_features,
            max_depth=None,
            bootstrap=True,
            random_state=self.random_state,
        ).fit(X, y)
        return self

    def predict(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict(X)


@dataclass
class ErrorModelResult:
    model: ErrorForest
    test_errors: list[float]
    baseline_errors: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.test_errors))

    @property
    def std(self) -> float:
        return float(np.std(self.test_errors))

    @property
    def baseline_mean(self) -> float:
        return float(np.mean(self.baseline_errors))

    def to_dict(self) -> dict:
        return {
            "n_runs": len(self.test_errors),
            "test_mae_mean": self.mean,
            "test_mae_std": self.std,
            "baseline_mae_mean": self.baseline_mean,
            "baseline_mae_std": float(np.std(self.baseline_errors)),
            "per_run": [float(x) for x in self.test_errors],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def fit_error_model(X: np.ndarray, abs_errors, n_runs: int = 100, test_fraction: float = 0.2, seed: int = 0, n_estimators: int = 100) -> ErrorModelResult:
    """Repeated random train/test evaluation of :class:`ErrorForest`.

    Each run reports the test mean absolute deviation between predicted and
    actual error; the constant-mean baseline (training mean) is scored on the
    same split. The returned model is refit on all rows.
    """
    X = np.asarray(X, dtype=float)
    e = np.asarray(abs_errors, dtype=float)
    n = len(e)
    if n < 10:
        raise ValueError("need at least 10 predictions")
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must be in (0, 1)")
    n_test = max(1, int(round(test_fraction * n)))
    rng = np.random.default_rng(seed)
    errs, base = [], []
    for _ in range(n_runs):
        perm = rng.permutation(n)
        te, tr = perm[:n_test], perm[n_test:]
        model = ErrorForest(n_estimators, random_state=int(rng.integers(2**31 - 1))).fit(X[tr], e[tr])
        errs.append(float(np.mean(np.abs(model.predict(X[te]) - e[te]))))
        base.append(float(np.mean(np.abs(e[tr].mean() - e[te]))))
    final = ErrorForest(n_estimators, random_state=seed).fit(X, e)
    return ErrorModelResult(final, errs, base)


def entity_facts(kg: KnowledgeGraph, entity: str) -> set[tuple[str, object]]:
    return {(t.predicate, t.object) for t in kg.facts(entity)}


@dataclass
class CommonFactsReport:
    entity: str
    n: int
    members: list[str]
    shared: dict[str, list]
    truncated: bool = False
    abs_error: float | None = None
    ca: float | None = None
    prediction_id: int | None = None

    @property
    def n_facts(self) -> int:
        return sum(len(v) for v in self.shared.values())

    def pairs(self) -> set[tuple[str, object]]:
        return {(p, o) for p, objs in self.shared.items() for o in objs}


def _term_sort_key(o):
    return (1, o.lexical, o.datatype or "") if isinstance(o, Literal) else (0, o, "")


def common_facts(kg: KnowledgeGraph, index: SimilarityIndex, entity: str, n: int, candidates: Sequence[str]) -> CommonFactsReport:
    """Predicate-object pairs asserted by ``entity`` and all of its ``n`` nearest ``candidates``.

    If fewer than ``n`` candidates exist, all are used and the report is
    flagged ``truncated``.
    """
    if n < 0:
        raise ConfigError("n must be non-negative")
    neigh = index.nearest(entity, n, candidates) if n > 0 else []
    truncated = len(neigh) < n
    members = [entity] + neigh
    shared = entity_facts(kg, entity)
    for m in neigh:
        shared &= entity_facts(kg, m)
        if not shared:
            break
    grouped: dict[str, list] = defaultdict(list)
    for p, o in shared:
        grouped[p].append(o)
    ordered = {p: sorted(grouped[p], key=_term_sort_key) for p in sorted(grouped)}
    return CommonFactsReport(entity, n, members, ordered, truncated)


def write_common_facts_csv(rows: Iterable[tuple[CommonFactsReport, str]], path) -> None:
    """Rows mirror the published table: error, entity, predicate, object list."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prediction", "side", "abs_error", "ca", "entity", "n", "predicate", "objects"])
        for rep, side in rows:
            preds = rep.shared or {"": []}
            for p, objs in preds.items():
                w.writerow(
                    [
                        rep.prediction_id,
                        side,
                        "" if rep.abs_error is None else f"{rep.abs_error:.6g}",
                        "" if rep.ca is None else f"{rep.ca:.6g}",
                        rep.entity,
                        rep.n,
                        p,
                        "|".join(o.n3() if isinstance(o, Literal) else o for o in objs),
                    ]
                )


def pearson(x, y) -> tuple[float, float]:
    """Pearson r with its two-sided p-value from the t distribution with n-2 dof."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n != len(y):
        raise ValueError("x and y differ in length")
    if n < 3:
        raise ValueError("need at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise DomainError("correlation undefined for constant input")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * df / (1.0 - r * r)
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(betainc(df / 2.0, 0.5, df / (df + t2)))
    return r, p


@dataclass
class CorrelationRow:
    side: str
    n: int
    correlation: float
    p_value: float
    defined: bool = True


def fact_error_correlation(fact_counts: Mapping[tuple[str, int], Sequence[int]], abs_errors: Sequence[float]) -> list[CorrelationRow]:
    """Pearson correlation of shared-fact counts with absolute error, per (side, n).

    ``fact_counts`` maps ``(side, n)`` to one count per prediction. Constant
    counts give a row with ``defined=False`` and NaN statistics.
    """
    rows = []
    for side, n in sorted(fact_counts, key=lambda k: (k[0], k[1])):
        counts = fact_counts[(side, n)]
        try:
            r, p = pearson(counts, abs_errors)
            rows.append(CorrelationRow(side, n, r, p))
        except DomainError:
            rows.append(CorrelationRow(side, n, float("nan"), float("nan"), defined=False))
    return rows


def write_correlation_csv(rows: Sequence[CorrelationRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["side", "n", "correlation", "p_value", "defined"])
        for r in rows:
            w.writerow([r.side, r.n, f"{r.correlation:.10g}", f"{r.p_value:.10g}", int(r.defined)])
