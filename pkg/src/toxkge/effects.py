"""Effect-record filtering, unit normalisation and per-pair aggregation."""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, UnsupportedUnitError

ACCEPTED_ENDPOINTS = frozenset({"LC50", "LD50", "EC50"})
ACCEPTED_UNITS = frozenset({"mg_per_L", "ug_per_L"})
MIN_DURATION_H = 24.0
MAX_DURATION_H = 96.0
MIN_REPLICATES = 3

EFFECT_COLUMNS = ["chemical", "species", "endpoint", "effect", "concentration", "unit", "duration_hours"]


class ToxicityCategory(enum.IntEnum):
    VERY_TOXIC = 0
    TOXIC = 1
    HARMFUL = 2
    MAYBE_HARMFUL = 3


@dataclass(frozen=True)
class EffectRecord:
    chemical: str
    species: str
    endpoint: str
    effect: str
    concentration: float
    unit: str
    duration_hours: float

    def __post_init__(self):
        if not self.concentration > 0:
            raise DomainError(f"concentration must be positive, got {self.concentration}")
        if not self.duration_hours > 0:
            raise DomainError(f"duration must be positive, got {self.duration_hours}")


@dataclass(frozen=True)
class AggregatedSample:
    chemical: str
    species: str
    median_mg_per_L: float
    target: float
    n_replicates: int
    replicate_std: float


def filter_records(records: Iterable[EffectRecord]) -> list[EffectRecord]:
    """Keep acute mortality records (LC50/LD50/EC50, MOR, mass per litre, 24-96 h)."""
    return [
        r
        for r in records
        if r.endpoint in ACCEPTED_ENDPOINTS
        and r.effect == "MOR"
        and r.unit in ACCEPTED_UNITS
        and MIN_DURATION_H <= r.duration_hours <= MAX_DURATION_H
    ]


def normalize_unit(value: float, unit: str) -> float:
    if unit == "mg_per_L":
        return float(value)
    if unit == "ug_per_L":
        return float(value) / 1000.0
    raise UnsupportedUnitError(f"unsupported concentration unit {unit!r}")


def aggregate(records: Iterable[EffectRecord], min_replicates: int = MIN_REPLICATES) -> list[AggregatedSample]:
    """One sample per (chemical, species) pair with at least ``min_replicates`` results.

    The median is taken over mg/L concentrations (mean of the middle two for
    even counts); ``replicate_std`` is the population std of log10 values.
    Output is sorted by (chemical, species) so it does not depend on input order.
    """
    groups: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in records:
        groups[(r.chemical, r.species)].append(normalize_unit(r.concentration, r.unit))
    out = []
    for (chem, sp) in sorted(groups):
        conc = sorted(groups[(chem, sp)])
        if len(conc) < min_replicates:
            continue
        med = float(np.median(conc))
        # shifting first keeps identical replicates at exactly zero spread
        logs = np.log10(conc)
        out.append(
            AggregatedSample(
                chemical=chem,
                species=sp,
                median_mg_per_L=med,
                target=-math.log10(med),
                n_replicates=len(conc),
                replicate_std=float(np.std(logs - logs[0])),
            )
        )
    return out


def categorize(concentration_mg_per_L: float) -> ToxicityCategory:
    c = concentration_mg_per_L
    if not c > 0:
        raise DomainError(f"concentration must be positive, got {c}")
    if c <= 1.0:
        return ToxicityCategory.VERY_TOXIC
    if c <= 10.0:
        return ToxicityCategory.TOXIC
    if c <= 100.0:
        return ToxicityCategory.HARMFUL
    return ToxicityCategory.MAYBE_HARMFUL


def categorize_target(target):
    """Category codes for ``-log10(mg/L)`` targets; works elementwise on arrays."""
    t = np.asarray(target, dtype=float)
    # thresholds on -log10(c): c<=1 <=> t>=0, c<=10 <=> t>=-1, c<=100 <=> t>=-2
    cats = np.where(t >= 0, 0, np.where(t >= -1, 1, np.where(t >= -2, 2, 3)))
    return cats if cats.ndim else int(cats)


def replicate_std_distribution(samples: Sequence[AggregatedSample], bin_width: float = 0.1) -> list[tuple[float, float, int]]:
    """Histogram of replicate stds as (bin_low, bin_high, count) rows, empty bins omitted."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    counts: dict[int, int] = defaultdict(int)
    for s in samples:
        # small epsilon keeps values sitting exactly on an edge in the upper bin
        counts[int(math.floor(s.replicate_std / bin_width + 1e-9))] += 1
    return [(k * bin_width, (k + 1) * bin_width, counts[k]) for k in sorted(counts)]


def read_effects_tsv(path) -> list[EffectRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(EFFECT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [
            EffectRecord(
                chemical=row["chemical"],
                species=row["species"],
                endpoint=row["endpoint"],
                effect=row["effect"],
                concentration=float(row["concentration"]),
                unit=row["unit"],
                duration_hours=float(row["duration_hours"]),
            )
            for row in reader
        ]


def write_effects_tsv(records: Iterable[EffectRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(EFFECT_COLUMNS)
        for r in records:
            w.writerow([r.chemical, r.species, r.endpoint, r.effect, repr(r.concentration), r.unit, repr(r.duration_hours)])


def write_samples_csv(samples: Iterable[AggregatedSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chemical", "species", "median_mg_per_L", "target", "n", "std"])
        for s in samples:
            w.writerow([s.chemical, s.species, repr(s.median_mg_per_L), repr(s.target), s.n_replicates, repr(s.replicate_std)])


def read_samples_csv(path) -> list[AggregatedSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            AggregatedSample(
                chemical=row["chemical"],
                species=row["species"],
                median_mg_per_L=float(row["median_mg_per_L"]),
                target=float(row["target"]),
                n_replicates=int(row["n"]),
                replicate_std=float(row["std"]),
            )
            for row in csv.DictReader(fh)
        ]


def write_histogram_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in rows:
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", n])
