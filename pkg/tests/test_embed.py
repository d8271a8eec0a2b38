import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from toxkge.embed import (
    AdamState,
    ComplExEmbedding,
    ComplexEmbeddingTable,
    RandomProjection,
    TrainingConfig,
    adam_step,
    build_vocabulary,
    corrupt,
    corrupt_batch,
    entity_features,
    holdout_split,
    link_prediction_auc,
    logistic_loss,
    loss_and_gradients,
    random_features,
    read_features_csv,
    score_complex,
    train,
    triple_ids,
    write_features_csv,
)
from toxkge.errors import ConfigError, LookupFailure, TrainingError
from toxkge.kg import KnowledgeGraph, Literal, Triple
from toxkge.synth import SynthConfig, generate


def make_table(n=3, m=2, k=1, variant="additive", seed=None, values=None):
    if values is not None:
        er, ei, rr, ri = (np.asarray(v, dtype=float) for v in values)
    else:
        g = np.random.default_rng(seed)
        er, ei = g.normal(size=(n, k)), g.normal(size=(n, k))
        rr, ri = g.normal(size=(m, k)), g.normal(size=(m, k))
    return ComplexEmbeddingTable(er, ei, rr, ri, [f"e{i}" for i in range(er.shape[0])], [f"r{i}" for i in range(rr.shape[0])], variant)


def test_score_zero():
    t = make_table(values=[np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((1, 3))])
    assert score_complex(t, 0, 0, 1) == 0.0


def test_score_hand_case():
    # e_s = 1+2i, e_p = 0.5-1i, e_o = -1+1i
    t = make_table(values=[[[1.0], [-1.0]], [[2.0], [1.0]], [[0.5]], [[-1.0]]])
    assert score_complex(t, 0, 0, 1) == pytest.approx(1.5, abs=1e-15)
    # the conjugate form flips the last term: -0.5 + 1 - 1 - 2
    t.variant = "conjugate"
    assert score_complex(t, 0, 0, 1) == pytest.approx(-2.5, abs=1e-15)


@pytest.mark.parametrize("variant", ["additive", "conjugate"])
def test_real_only_is_symmetric(variant):
    t = make_table(5, 2, 4, variant, seed=1)
    t.entity_imag[:] = 0
    t.relation_imag[:] = 0
    assert score_complex(t, 0, 1, 3) == pytest.approx(score_complex(t, 3, 1, 0), abs=1e-14)


def test_conjugate_variant_is_asymmetric():
    t = make_table(5, 2, 4, "conjugate", seed=2)
    assert abs(score_complex(t, 0, 1, 3) - score_complex(t, 3, 1, 0)) > 1e-3


@given(st.floats(-3, 3), st.sampled_from(["s", "p", "o"]), st.sampled_from(["additive", "conjugate"]))
def test_score_linear_in_each_row(alpha, which, variant):
    t = make_table(4, 2, 3, variant, seed=3)
    base = score_complex(t, 0, 1, 2)
    if which == "p":
        t.relation_real[1] *= alpha
        t.relation_imag[1] *= alpha
    else:
        row = 0 if which == "s" else 2
        t.entity_real[row] *= alpha
        t.entity_imag[row] *= alpha
    assert score_complex(t, 0, 1, 2) == pytest.approx(alpha * base, abs=1e-12)


def test_score_bad_id():
    t = make_table(seed=0)
    with pytest.raises(LookupFailure):
        score_complex(t, 0, 0, 99)


def test_logistic_loss_values():
    assert logistic_loss(0.0, 1) == pytest.approx(np.log(2), abs=1e-15)
    assert logistic_loss(2.0, -1) == pytest.approx(2.126928, abs=1e-6)
    vals = [logistic_loss(s, 1) for s in (1, 5, 20, 50, 800)]
    assert all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] >= 0
    with pytest.raises(ValueError):
        logistic_loss(0.0, 0)


@given(st.floats(-50, 50), st.sampled_from([-1, 1]))
def test_logistic_loss_nonnegative(score, label):
    assert logistic_loss(score, label) >= 0


def _fd_check(variant):
    t = make_table(6, 2, 4, variant, seed=5)
    trip = np.array([[0, 0, 1], [1, 1, 2], [2, 0, 3], [3, 1, 4], [4, 0, 5]])
    labels = np.array([1, -1, 1, -1, 1.0])
    _, grads = loss_and_gradients(t, trip, labels)
    params = t.params()
    h = 1e-6
    worst = 0.0
    for name, P in params.items():
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + h
            up = np.sum(logistic_loss(score_complex(t, trip[:, 0], trip[:, 1], trip[:, 2]), labels))
            P[idx] = old - h
            dn = np.sum(logistic_loss(score_complex(t, trip[:, 0], trip[:, 1], trip[:, 2]), labels))
            P[idx] = old
            fd = (up - dn) / (2 * h)
            an = grads[name][idx]
            worst = max(worst, abs(an - fd) / max(abs(fd), abs(an), 1e-8))
    return worst


@pytest.mark.parametrize("variant", ["additive", "conjugate"])
def test_gradients_match_finite_differences(variant):
    assert _fd_check(variant) < 1e-4


def test_corrupt_never_identity(rng):
    for mode in ("subject", "object", "both", None):
        for _ in range(200):
            out = corrupt((3, 1, 5), rng, 10, mode)
            assert (out.subject, out.object) != (3, 5)
            assert out.predicate == 1 and out.label == -1
            if mode == "subject":
                assert out.object == 5
            if mode == "object":
                assert out.subject == 3


def test_corrupt_uniform_chi_square():
    rng = np.random.default_rng(0)
    draws = np.array([corrupt((4, 0, 7), rng, 10, "object").object for _ in range(10_000)])
    counts = np.bincount(draws, minlength=10)
    assert counts[7] == 0
    others = np.delete(counts, 7)
    # per-cell 3-sigma band around 1/9
    p = 1 / 9
    sigma = np.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(others - 10_000 * p) < 3 * sigma)
    assert stats.chisquare(others).pvalue > 1e-3


def test_corrupt_batch_alternates(rng):
    trip = np.array([[0, 0, 1]] * 6)
    neg = corrupt_batch(trip, rng, 5, offset=1)
    # odd global positions corrupt the object, even ones the subject
    assert np.all(neg[0::2, 0] == 0) and np.all(neg[0::2, 2] != 1)
    assert np.all(neg[1::2, 0] != 0) and np.all(neg[1::2, 2] == 1)
    assert np.all(neg[:, 1] == 0)


def test_adam_zero_gradient():
    cfg = TrainingConfig()
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState.zeros_like(p)
    st_.m["w"][:] = 0.5
    st_.v["w"][:] = 0.25
    adam_step(p, {"w": np.zeros(2)}, st_, cfg)
    assert np.allclose(st_.m["w"], 0.45) and np.allclose(st_.v["w"], 0.25 * 0.999)
    # with the decayed moments the update is not zero; with fresh ones it is
    p2 = {"w": np.array([1.0, -2.0])}
    adam_step(p2, {"w": np.zeros(2)}, AdamState.zeros_like(p2), cfg)
    assert np.array_equal(p2["w"], [1.0, -2.0])


@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_first_step_is_learning_rate(g, sign):
    cfg = TrainingConfig(learning_rate=1e-3)
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": np.full(3, sign * g)}, AdamState.zeros_like(p), cfg)
    assert np.allclose(np.abs(p["w"]), 1e-3, rtol=1e-4)
    assert np.all(np.sign(p["w"]) == -sign)


def test_adam_rejects_nan():
    p = {"w": np.zeros(2)}
    with pytest.raises(TrainingError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState.zeros_like(p), TrainingConfig())


def _small_kg():
    return generate(SynthConfig(n_species=40, n_chemicals=15, fingerprint_length=32)).kg


def test_training_reduces_loss_and_is_reproducible():
    kg = _small_kg()
    cfg = TrainingConfig(k=8, epochs=10, learning_rate=1e-2, seed=4)
    t1, c1 = train(kg, cfg)
    t2, c2 = train(kg, cfg)
    assert c1[9] < c1[0]
    assert c1 == c2
    for name in t1.params():
        assert np.array_equal(t1.params()[name], t2.params()[name])


def test_training_config_validation():
    with pytest.raises(ConfigError):
        train(_small_kg(), TrainingConfig(k=0))
    with pytest.raises(ConfigError):
        TrainingConfig(variant="distmult").validate()


def test_held_out_auc_above_chance():
    kg = _small_kg()
    train_kg, held = holdout_split(kg, 0.1, 0)
    assert held and not set(held) & set(train_kg.triples)
    table, _ = train(train_kg, TrainingConfig(k=8, epochs=30, learning_rate=1e-2))
    assert link_prediction_auc(table, triple_ids(table, held), np.random.default_rng(0)) > 0.5


def test_holdout_split_keeps_vocabulary():
    kg = _small_kg()
    train_kg, held = holdout_split(kg, 0.3, 1)
    for t in held:
        assert t.subject in train_kg.entities and t.predicate in train_kg.relations
    with pytest.raises(ConfigError):
        holdout_split(kg, 1.5, 0)


def test_literals_are_interned():
    kg = KnowledgeGraph([Triple("http://e/a", "http://e/p", Literal("1", None)), Triple("http://e/b", "http://e/p", Literal("1", None))])
    ents, rels, ids = build_vocabulary(kg)
    assert len(ents) == 3 and ids[0, 2] == ids[1, 2] == 2


def test_feature_length_and_block_order():
    tables = [make_table(3, 1, 50, seed=s) for s in range(4)]
    f = entity_features(tables, 1)
    assert f.shape == (400,)
    g = entity_features(tables[::-1], 1)
    blocks = f.reshape(4, 100)
    assert np.array_equal(g.reshape(4, 100), blocks[::-1])


def test_identical_rows_identical_features():
    tables = [make_table(3, 1, 5, seed=s) for s in range(2)]
    for t in tables:
        t.entity_real[2] = t.entity_real[0]
        t.entity_imag[2] = t.entity_imag[0]
    assert np.array_equal(entity_features(tables, 0), entity_features(tables, 2))


def test_random_features():
    a = random_features("http://e/x", 400, 3)
    assert np.array_equal(a, random_features("http://e/x", 400, 3))
    assert not np.array_equal(a, random_features("http://e/y", 400, 3))
    assert not np.array_equal(a, random_features("http://e/x", 400, 4))
    M = RandomProjection(dim=20, seed=0).transform([f"e{i}" for i in range(10_000)])
    se = 1 / np.sqrt(10_000)
    assert np.all(np.abs(M.mean(axis=0)) < 3 * se * 1.5)
    assert np.all(np.abs(M.std(axis=0) - 1) < 0.05)


def test_estimator_api(tmp_path):
    kg = _small_kg()
    est = ComplExEmbedding(k=4, epochs=2, n_inits=2, seed=1)
    assert est.get_params()["k"] == 4
    est.fit(kg)
    names = sorted(kg.entities)[:3]
    F = est.transform(names)
    assert F.shape == (3, 16)
    write_features_csv(names, F, tmp_path / "f.csv")
    back = read_features_csv(tmp_path / "f.csv")
    assert all(np.array_equal(back[n], F[i]) for i, n in enumerate(names))
