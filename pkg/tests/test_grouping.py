import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from toxkge.errors import ConfigError, GroupingError
from toxkge.grouping import (
    GroupAssignment,
    GroupFoldSplitter,
    TanimotoAgglomerativeClustering,
    average_linkage,
    cluster_chemicals,
    cut_merges,
    make_fold_plan,
    species_divisions,
    tanimoto_distances,
)
from toxkge.synth import SynthConfig, generate

from conftest import iri, tree_graph


def planted(n_blocks=5, per=10, bits=128, flip=0.02, seed=0):
    g = np.random.default_rng(seed)
    protos = g.random((n_blocks, bits)) < 0.3
    X, truth = [], []
    for b in range(n_blocks):
        for _ in range(per):
            X.append(protos[b] ^ (g.random(bits) < flip))
            truth.append(b)
    return np.array(X), np.array(truth)


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])


def test_tanimoto_hand():
    X = np.array([[1, 1, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=bool)
    D = tanimoto_distances(X)
    assert D[0, 1] == pytest.approx(1 - 1 / 3)
    assert D[2, 3] == 0.0 and D[0, 2] == 1.0
    assert np.array_equal(D, D.T)


def test_average_linkage_matches_scipy():
    X, _ = planted(4, 6, 64, 0.1, seed=3)
    D = tanimoto_distances(X)
    ours = average_linkage(D)
    ref = linkage(squareform(D, checks=False), method="average")
    assert np.allclose(np.sort(ours[:, 2]), np.sort(ref[:, 2]), atol=1e-12)
    for k in (2, 3, 4, 6):
        assert same_partition(cut_merges(ours, len(X), k), fcluster(ref, k, "maxclust"))


def test_identical_groups_recovered():
    protos = ["1100", "0011", "1010", "0101", "1111"]
    fps = {f"c{b}_{i}": protos[b] for b in range(5) for i in range(3)}
    ga = cluster_chemicals(fps, 5, 4)
    truth = [int(name[1]) for name in fps]
    assert same_partition([ga[n] for n in fps], truth)
    assert ga.groups == [f"cluster{i}" for i in range(5)]


def test_all_identical_forced_split_is_stable():
    fps = {f"c{i}": "1010" for i in range(8)}
    a = cluster_chemicals(fps, 5, 4)
    b = cluster_chemicals(fps, 5, 4)
    assert a.labels == b.labels
    assert len(a.groups) == 5
    # smallest index pairs merge first, so the last four stay singletons
    assert [a[f"c{i}"] for i in range(8)] == ["cluster0"] * 4 + ["cluster1", "cluster2", "cluster3", "cluster4"]


def test_planted_blocks_recovered():
    X, truth = planted()
    labels = TanimotoAgglomerativeClustering(5).fit(X).labels_
    assert same_partition(labels, truth)


@given(st.randoms(use_true_random=False))
def test_clustering_permutation_invariant(r):
    X, _ = planted(5, 6, 96, 0.05, seed=9)
    perm = list(range(len(X)))
    r.shuffle(perm)
    base = TanimotoAgglomerativeClustering(5).fit(X).labels_
    shuffled = TanimotoAgglomerativeClustering(5).fit(X[perm]).labels_
    assert same_partition(base[perm], shuffled)


@given(st.integers(2, 20))
def test_adjacent_cuts_differ_by_one_merge(k):
    X, _ = planted(5, 4, 64, 0.1, seed=2)
    merges = average_linkage(tanimoto_distances(X))
    fine, coarse = cut_merges(merges, len(X), k), cut_merges(merges, len(X), k - 1)
    assert len(set(fine)) == k and len(set(coarse)) == k - 1
    # every coarse cluster is a union of fine clusters, and exactly one is a union of two
    pieces = [len(set(fine[coarse == c])) for c in set(coarse)]
    assert sorted(pieces) == [1] * (k - 2) + [2]


def test_too_few_chemicals():
    with pytest.raises(GroupingError):
        cluster_chemicals({"a": "10", "b": "01"}, 5, 2)


def _taxonomy():
    return tree_graph([("Fish", "Animal"), ("trout", "Fish"), ("carp", "Fish"), ("daphnia", "Crustaceans"), ("orphan", "Nowhere")])


def test_species_under_fish():
    ga = species_divisions(_taxonomy(), [iri("Fish"), iri("Crustaceans")], [iri("trout"), iri("carp"), iri("daphnia")])
    assert ga[iri("trout")] == iri("Fish") == ga[iri("carp")]
    assert ga[iri("daphnia")] == iri("Crustaceans")
    assert ga.kind == "species_division"


def test_orphan_species_named():
    with pytest.raises(GroupingError) as exc:
        species_divisions(_taxonomy(), [iri("Fish")], [iri("trout"), iri("orphan")])
    assert iri("orphan") in str(exc.value)
    assert exc.value.offenders[0][0] == iri("orphan")


def test_synthetic_seven_divisions():
    data = generate(SynthConfig())
    ga = species_divisions(data.kg, data.division_roots, data.species)
    assert len(ga.groups) == 7
    assert len(ga.labels) == 200


def test_five_clusters_bijection():
    plan = make_fold_plan({f"cluster{i}": 10 + i for i in range(5)}, 5, 0)
    assert sorted(plan.group_fold.values()) == list(range(5))


def test_seven_divisions_pigeonhole():
    for seed in range(50):
        plan = make_fold_plan({f"d{i}": 30 for i in range(7)}, 5, seed)
        per_fold = np.bincount(list(plan.group_fold.values()), minlength=5)
        assert sorted(per_fold) == [1, 1, 1, 2, 2]
        assert sum(plan.fold_sizes) == 210


def test_plan_deterministic_and_serialisable():
    sizes = {f"g{i}": i + 1 for i in range(9)}
    assert make_fold_plan(sizes, 5, 3).group_fold == make_fold_plan(sizes, 5, 3).group_fold
    assert '"n_folds": 5' in make_fold_plan(sizes, 5, 3).to_json()


def test_plan_from_assignment_and_config_errors():
    ga = GroupAssignment({"a": "x", "b": "y", "c": "y"}, "chemical_cluster")
    plan = make_fold_plan(ga, 2, 0)
    assert set(plan.group_fold) == {"x", "y"}
    with pytest.raises(ConfigError):
        make_fold_plan(ga, 1, 0)
    with pytest.raises(ConfigError):
        make_fold_plan({}, 5, 0)


@given(st.lists(st.sampled_from("ABCDEFGHIJ"), min_size=10, max_size=80), st.integers(0, 2**32 - 1))
def test_splitter_never_leaks_groups(labels, seed):
    groups = np.array(labels)
    splitter = GroupFoldSplitter(5, seed)
    seen = np.zeros(len(groups), dtype=int)
    for tr, te in splitter.split(np.zeros((len(groups), 1)), groups=groups):
        assert not set(groups[tr]) & set(groups[te])
        seen[te] += 1
    assert np.all(seen == 1)
