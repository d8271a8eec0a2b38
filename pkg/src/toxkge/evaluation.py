"""Metrics, SVR model selection and the repeated grouped cross-validation protocol."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .effects import AggregatedSample, categorize_target
from .errors import ConfigError, ConvergenceError, CoverageError
from .grouping import make_fold_plan
from .svr import solve_svr, squared_distances
from .validation import check_same_length

logger = logging.getLogger(__name__)

DEFAULT_EXPONENTS = tuple(range(-4, 5))


def r_squared(y, y_pred) -> float:
    """Coefficient of determination ``1 - SSE / SST``."""
    y = np.asarray(y, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    check_same_length(y, y_pred)
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        raise ValueError("R^2 is undefined for constant targets")
    return float(1.0 - np.sum((y - y_pred) ** 2) / sst)


def categorical_accuracy(true_cats, pred_cats) -> float:
    """Mean of ``1 / (1 + |c - c_hat|)`` over toxicity categories 0..3."""
    c = np.asarray(true_cats)
    ch = np.asarray(pred_cats)
    check_same_length(c, ch)
    for arr in (c, ch):
        if np.any((arr < 0) | (arr > 3)) or np.any(arr != np.round(arr)):
            raise ValueError("categories must be integers in 0..3")
    return float(np.mean(1.0 / (1.0 + np.abs(c - ch))))


@dataclass
class GridResult:
    C: float
    gamma: float
    score: float
    table: dict[tuple[float, float], float] = field(default_factory=dict)


def kfold_indices(n: int, n_splits: int, rng) -> list[np.ndarray]:
    perm = np.random.default_rng(rng).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_splits)]


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    folds: Sequence[np.ndarray] | int = 3,
    C_grid: Sequence[float] | None = None,
    gamma_grid: Sequence[float] | None = None,
    epsilon: float = 0.1,
    tol: float = 1e-3,
    max_iter: int | None = None,
    rng=None,
) -> GridResult:
    """Pick ``(C, gamma)`` maximising mean validation R^2 over ``folds``.

    ``folds`` is a list of validation index arrays or a number of random
    splits. Ties go to the smaller C, then the smaller gamma; candidates
    that fail to converge are skipped.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    C_grid = sorted(C_grid if C_grid is not None else [10.0**k for k in DEFAULT_EXPONENTS])
    gamma_grid = sorted(gamma_grid if gamma_grid is not None else [10.0**k for k in DEFAULT_EXPONENTS])
    if isinstance(folds, int):
        folds = kfold_indices(n, folds, rng)
    if len(folds) < 2:
        raise ConfigError("grid search needs at least 2 inner folds")
    D = squared_distances(X, X)
    splits = []
    for val in folds:
        mask = np.ones(n, dtype=bool)
        mask[val] = False
        tr = np.flatnonzero(mask)
        splits.append((tr, np.asarray(val)))
    scores = {(C, g): [] for C in C_grid for g in gamma_grid}
    failed = set()
    for g in gamma_grid:
        K = np.exp(-g * D)
        for tr, val in splits:
            Ktr = K[np.ix_(tr, tr)]
            Kval = K[np.ix_(val, tr)]
            yval = y[val]
            for C in C_grid:
                if (C, g) in failed:
                    continue
                try:
                    coef, b, _, _ = solve_svr(Ktr, y[tr], C, epsilon, tol, max_iter)
                except ConvergenceError as exc:
                    logger.info("grid candidate C=%g gamma=%g skipped: %s", C, g, exc)
                    failed.add((C, g))
                    continue
                pred = Kval @ coef + b
                sst = np.sum((yval - yval.mean()) ** 2)
                scores[(C, g)].append(1.0 - np.sum((yval - pred) ** 2) / sst if sst > 0 else -np.inf)
    table = {key: float(np.mean(v)) for key, v in scores.items() if key not in failed and v}
    if not table:
        raise ConvergenceError("no grid candidate converged")
    best = None
    for C in C_grid:
        for g in gamma_grid:
            s = table.get((C, g))
            if s is not None and (best is None or s > best[2]):
                best = (C, g, s)
    return GridResult(best[0], best[1], best[2], table)


def fit_predict_svr(X_train, y_train, X_test, C, gamma, epsilon, tol=1e-3, max_iter=None):
    D_tr = squared_distances(X_train, X_train)
    coef, b, _, _ = solve_svr(np.exp(-gamma * D_tr), y_train, C, epsilon, tol, max_iter)
    K_te = np.exp(-gamma * squared_distances(X_test, X_train))
    return K_te @ coef + b


@dataclass
class ProtocolConfig:
    n_repeats: int = 100
    n_folds: int = 5
    inner_folds: int = 3
    epsilon: float = 0.1
    C_exponents: tuple = DEFAULT_EXPONENTS
    gamma_exponents: tuple = DEFAULT_EXPONENTS
    tol: float = 1e-3
    max_iter: int | None = None
    standardize: bool = True
    seed: int = 0
    max_redraws: int = 10

    def validate(self):
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be positive")
        if self.n_folds < 2 or self.inner_folds < 2:
            raise ConfigError("n_folds and inner_folds must be at least 2")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")


@dataclass
class EvaluationReport:
    r2: list[float]
    ca: list[float]
    y_true: np.ndarray
    mean_prediction: np.ndarray
    chemicals: list[str] = field(default_factory=list)
    species: list[str] = field(default_factory=list)
    chosen_params: list[list[tuple[float, float]]] = field(default_factory=list)
    feature_source: str = "embedding"

    @property
    def r2_mean(self) -> float:
        return float(np.mean(self.r2))

    @property
    def r2_std(self) -> float:
        return float(np.std(self.r2))

    @property
    def ca_mean(self) -> float:
        return float(np.mean(self.ca))

    @property
    def ca_std(self) -> float:
        return float(np.std(self.ca))

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.mean_prediction - self.y_true)

    @property
    def categorical_error(self) -> np.ndarray:
        return np.abs(categorize_target(self.y_true) - categorize_target(self.mean_prediction))

    def to_dict(self) -> dict:
        return {
            "feature_source": self.feature_source,
            "n_samples": int(len(self.y_true)),
            "n_repeats": len(self.r2),
            "r2": {"mean": self.r2_mean, "std": self.r2_std, "per_repeat": [float(x) for x in self.r2]},
            "ca": {"mean": self.ca_mean, "std": self.ca_std, "per_repeat": [float(x) for x in self.ca]},
            "chosen_params": [[[float(c), float(g)] for c, g in rep] for rep in self.chosen_params],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_samples_csv(self, path) -> None:
        ae, ce = self.abs_error, self.categorical_error
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chemical", "species", "true_target", "mean_prediction", "abs_error", "categorical_error"])
            for i in range(len(self.y_true)):
                w.writerow([self.chemicals[i], self.species[i], repr(float(self.y_true[i])), repr(float(self.mean_prediction[i])), repr(float(ae[i])), int(ce[i])])

    @classmethod
    def read(cls, json_path, csv_path) -> "EvaluationReport":
        with open(json_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        chems, sps, y, pred = [], [], [], []
        with open(csv_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                chems.append(row["chemical"])
                sps.append(row["species"])
                y.append(float(row["true_target"]))
                pred.append(float(row["mean_prediction"]))
        return cls(
            r2=meta["r2"]["per_repeat"],
            ca=meta["ca"]["per_repeat"],
            y_true=np.asarray(y),
            mean_prediction=np.asarray(pred),
            chemicals=chems,
            species=sps,
            chosen_params=[[tuple(p) for p in rep] for rep in meta.get("chosen_params", [])],
            feature_source=meta.get("feature_source", "embedding"),
        )


def pair_features(samples: Sequence[AggregatedSample], featurize: Callable[[str], np.ndarray] | Mapping[str, np.ndarray]) -> np.ndarray:
    """Rows of ``chemical features || species features`` for each sample."""
    if isinstance(featurize, Mapping):
        table = featurize
        missing = sorted({e for s in samples for e in (s.chemical, s.species) if e not in table})
        if missing:
            raise CoverageError(f"{len(missing)} entities have no features: {missing[:10]}", missing)
        featurize = table.__getitem__
    X = np.vstack([np.concatenate([featurize(s.chemical), featurize(s.species)]) for s in samples])
    if not np.all(np.isfinite(X)):
        raise ValueError("pair features contain non-finite values")
    return X


def _standardize(X_train, X_test):
    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    sd[sd == 0] = 1.0
    return (X_train - mu) / sd, (X_test - mu) / sd


def run_protocol(
    X: np.ndarray,
    y: np.ndarray,
    groups: Sequence[str],
    config: ProtocolConfig | None = None,
    samples: Sequence[AggregatedSample] | None = None,
    feature_source: str = "embedding",
    on_fold: Callable | None = None,
) -> EvaluationReport:
    """Repeated grouped k-fold evaluation with inner grid search.

    Each repeat draws a fresh group-to-fold plan; every held-out fold is
    predicted by a model trained on the remaining folds. Per-repeat R^2 and
    CA are computed on the pooled out-of-fold predictions, and per-sample
    predictions are averaged over repeats.
    """
    config = config or ProtocolConfig()
    config.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = [str(g) for g in groups]
    n = check_same_length(X, y, groups)
    sizes: dict[str, int] = {}
    for g in groups:
        sizes[g] = sizes.get(g, 0) + 1
    C_grid = [10.0**k for k in config.C_exponents]
    g_grid = [10.0**k for k in config.gamma_exponents]
    cats = categorize_target(y)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_repeats)
    r2s, cas, chosen = [], [], []
    pred_sum = np.zeros(n)
    for rep, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        for attempt in range(config.max_redraws + 1):
            plan = make_fold_plan(sizes, config.n_folds, rng)
            folds = plan.sample_folds(groups)
            if all(np.any(folds == f) for f in range(config.n_folds)):
                break
            logger.warning("repeat %d: fold plan with an empty test fold, redrawing", rep)
        else:
            raise ConfigError(f"could not draw a fold plan with non-empty folds after {config.max_redraws} redraws")
        oof = np.full(n, np.nan)
        rep_params = []
        for f in range(config.n_folds):
            te = np.flatnonzero(folds == f)
            tr = np.flatnonzero(folds != f)
            Xtr, Xte = (X[tr], X[te])
            if config.standardize:
                Xtr, Xte = _standardize(Xtr, Xte)
            gr = grid_search(Xtr, y[tr], config.inner_folds, C_grid, g_grid, config.epsilon, config.tol, config.max_iter, rng)
            oof[te] = fit_predict_svr(Xtr, y[tr], Xte, gr.C, gr.gamma, config.epsilon, config.tol, config.max_iter)
            rep_params.append((gr.C, gr.gamma))
            if on_fold is not None:
                on_fold(rep, f, tr, te)
        r2s.append(r_squared(y, oof))
        cas.append(categorical_accuracy(cats, categorize_target(oof)))
        chosen.append(rep_params)
        pred_sum += oof
        logger.info("repeat %d/%d: R2=%.4f CA=%.4f", rep + 1, config.n_repeats, r2s[-1], cas[-1])
    return EvaluationReport(
        r2=r2s,
        ca=cas,
        y_true=y,
        mean_prediction=pred_sum / config.n_repeats,
        chemicals=[s.chemical for s in samples] if samples is not None else [],
        species=[s.species for s in samples] if samples is not None else [],
        chosen_params=chosen,
        feature_source=feature_source,
    )
