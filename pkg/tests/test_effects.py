import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from toxkge.effects import (
    AggregatedSample,
    EffectRecord,
    ToxicityCategory,
    aggregate,
    categorize,
    categorize_target,
    filter_records,
    normalize_unit,
    read_effects_tsv,
    read_samples_csv,
    replicate_std_distribution,
    write_effects_tsv,
    write_samples_csv,
)
from toxkge.errors import DomainError, UnsupportedUnitError
from toxkge.synth import SynthConfig, generate


def rec(conc=1.0, endpoint="LC50", effect="MOR", unit="mg_per_L", hours=48.0, chem="c", sp="s"):
    return EffectRecord(chem, sp, endpoint, effect, conc, unit, hours)


def test_filter_cases():
    keep = rec()
    assert filter_records([keep]) == [keep]
    assert filter_records([rec(endpoint="EC50", effect="GRO")]) == []
    assert filter_records([rec(hours=12)]) == []
    assert filter_records([rec(hours=120)]) == []
    assert filter_records([rec(endpoint="LD50"), rec(endpoint="EC50")]) == [rec(endpoint="LD50"), rec(endpoint="EC50")]
    # both bounds inclusive
    assert len(filter_records([rec(hours=24), rec(hours=96)])) == 2
    assert filter_records([rec(unit="other")]) == []


def test_record_domain():
    with pytest.raises(DomainError):
        rec(conc=0.0)
    with pytest.raises(DomainError):
        rec(hours=-1)


def test_normalize_unit():
    assert normalize_unit(5.0, "mg_per_L") == 5.0
    assert normalize_unit(1000.0, "ug_per_L") == 1.0
    assert normalize_unit(0.5, "ug_per_L") == pytest.approx(0.0005, rel=1e-15)
    with pytest.raises(UnsupportedUnitError):
        normalize_unit(1.0, "mol_per_L")


def test_aggregate_odd_median():
    (s,) = aggregate([rec(1), rec(10), rec(100)])
    assert s.median_mg_per_L == 10
    assert s.target == -1.0
    assert s.n_replicates == 3
    # population std of log10 values {0, 1, 2}
    assert s.replicate_std == pytest.approx(math.sqrt(2 / 3), abs=1e-15)


def test_aggregate_even_median_and_units():
    (s,) = aggregate([rec(1), rec(2), rec(4000, unit="ug_per_L"), rec(8)])
    assert s.median_mg_per_L == 3.0


def test_aggregate_excludes_small_pairs():
    assert aggregate([rec(1), rec(2)]) == []


def test_constant_replicates_zero_std():
    (s,) = aggregate([rec(1), rec(1), rec(1)])
    assert s.replicate_std == 0.0


def test_categorize_cases():
    assert categorize(0.5) is ToxicityCategory.VERY_TOXIC
    assert categorize(1.0) is ToxicityCategory.VERY_TOXIC
    assert categorize(10.0) is ToxicityCategory.TOXIC
    assert categorize(100.0) is ToxicityCategory.HARMFUL
    assert categorize(500) is ToxicityCategory.MAYBE_HARMFUL
    assert len(ToxicityCategory) == 4
    with pytest.raises(DomainError):
        categorize(0)


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_categorize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert categorize(lo) <= categorize(hi)


@given(st.floats(1e-6, 1e6))
def test_categorize_target_agrees(c):
    # boundary values are exact powers of ten, where -log10 is exact
    assert categorize_target(-math.log10(c)) == int(categorize(c)) or abs(math.log10(c) - round(math.log10(c))) < 1e-12


def test_categorize_target_boundaries():
    assert list(categorize_target(np.array([0.0, -1.0, -2.0, -2.0001]))) == [0, 1, 2, 3]


@given(st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=8), st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(concs, r):
    records = [rec(c, chem=f"c{i % 2}") for i, c in enumerate(concs)] + [rec(c) for c in concs]
    shuffled = list(records)
    r.shuffle(shuffled)
    assert aggregate(records) == aggregate(shuffled)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_target_strictly_decreasing(a, b):
    if a == b:
        return
    (sa,) = aggregate([rec(a)] * 3)
    (sb,) = aggregate([rec(b)] * 3)
    assert (sa.target > sb.target) == (a < b)
    assert sa.target == -math.log10(sa.median_mg_per_L)


def test_refilter_is_noop():
    data = generate(SynthConfig(n_species=20, n_chemicals=10, fingerprint_length=32))
    kept = filter_records(data.records)
    assert filter_records(kept) == kept
    assert len(kept) < len(data.records)


def _s(std):
    return AggregatedSample("c", "s", 1.0, 0.0, 3, std)


def test_histogram_degenerate():
    assert replicate_std_distribution([_s(0.0)] * 4) == [(0.0, 0.1, 4)]


def test_histogram_binning():
    got = replicate_std_distribution([_s(0.2), _s(0.2), _s(1.5)], bin_width=0.5)
    assert got == [(0.0, 0.5, 2), (1.5, 2.0, 1)]


def test_histogram_synthetic_mass_below_one():
    data = generate(SynthConfig(noise_std=0.5))
    samples = aggregate(filter_records(data.records))
    hist = replicate_std_distribution(samples)
    below = sum(n for lo, hi, n in hist if hi <= 1.0 + 1e-12)
    assert sum(n for *_, n in hist) == len(samples)
    assert below / len(samples) > 0.95


def test_tsv_and_csv_roundtrip(tmp_path):
    records = [rec(0.25, unit="ug_per_L"), rec(3.0, hours=24.0)]
    write_effects_tsv(records, tmp_path / "e.tsv")
    assert read_effects_tsv(tmp_path / "e.tsv") == records
    samples = aggregate([rec(1), rec(10), rec(100)])
    write_samples_csv(samples, tmp_path / "s.csv")
    assert read_samples_csv(tmp_path / "s.csv") == samples
