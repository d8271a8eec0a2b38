import io

import numpy as np
import pytest

from toxkge.effects import aggregate, filter_records, write_effects_tsv
from toxkge.errors import ConfigError
from toxkge.kg import RDF_TYPE, dump_ntriples, hierarchy_ancestors, load_ntriples
from toxkge.synth import (
    SPECIES_CLASS,
    LatentModel,
    SynthConfig,
    generate,
    read_fingerprints_tsv,
    write_fingerprints_tsv,
)


def _serialise(data, tmp_path, tag):
    kg_path = tmp_path / f"{tag}.nt"
    dump_ntriples(data.kg, kg_path)
    write_effects_tsv(data.records, tmp_path / f"{tag}.tsv")
    write_fingerprints_tsv(data.fingerprints, tmp_path / f"{tag}.fp")
    return b"".join((tmp_path / f"{tag}{ext}").read_bytes() for ext in (".nt", ".tsv", ".fp")) + data.latent.to_json().encode()


def test_same_seed_identical(tmp_path):
    cfg = SynthConfig(seed=7, n_species=30, n_chemicals=12, fingerprint_length=64)
    assert _serialise(generate(cfg), tmp_path, "a") == _serialise(generate(cfg), tmp_path, "b")
    other = SynthConfig(seed=8, n_species=30, n_chemicals=12, fingerprint_length=64)
    assert _serialise(generate(other), tmp_path, "c") != _serialise(generate(cfg), tmp_path, "a")


def test_zero_noise_zero_std():
    data = generate(SynthConfig(noise_std=0.0, n_species=40, n_chemicals=15, fingerprint_length=64))
    samples = aggregate(filter_records(data.records))
    assert samples and all(s.replicate_std == 0.0 for s in samples)
    # the noiseless target is the latent function itself
    for s in samples[:20]:
        assert s.target == pytest.approx(data.latent.target(s.chemical, s.species), abs=1e-12)


def test_every_species_under_one_root():
    cfg = SynthConfig(species_divisions=7, chemical_clusters=5, n_species=200, n_chemicals=100)
    data = generate(cfg)
    kg = data.kg
    roots = {kg.entities.id(r) for r in data.division_roots}
    assert len(roots) == 7
    species = kg.subjects(RDF_TYPE, SPECIES_CLASS)
    assert len(species) == 200
    for sp in species:
        anc = {a for a, _ in hierarchy_ancestors(kg, kg.entities.id(sp), len(kg.entities))}
        assert len(anc & roots) == 1
        assert data.latent.species_division[sp] == kg.entities.item(next(iter(anc & roots))).rsplit("/", 1)[-1]


def test_default_fingerprints_881_bits():
    data = generate(SynthConfig(n_species=10, n_chemicals=10))
    assert {len(v) for v in data.fingerprints.values()} == {881}
    assert len(data.fingerprints) == 10


@pytest.mark.parametrize(
    "field,value",
    [("n_species", 0), ("n_chemicals", 0), ("noise_std", -1.0), ("fingerprint_length", 0), ("distractor_rate", 2.0)],
)
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        generate(SynthConfig(**{field: value}))


def test_latent_json_roundtrip():
    data = generate(SynthConfig(n_species=20, n_chemicals=10, fingerprint_length=32))
    again = LatentModel.from_json(data.latent.to_json())
    assert again == data.latent


def test_files_reload(tmp_path):
    data = generate(SynthConfig(n_species=20, n_chemicals=10, fingerprint_length=32))
    buf = io.StringIO()
    dump_ntriples(data.kg, buf)
    assert set(load_ntriples(io.BytesIO(buf.getvalue().encode())).triples) == set(data.kg.triples)
    write_fingerprints_tsv(data.fingerprints, tmp_path / "fp.tsv")
    assert read_fingerprints_tsv(tmp_path / "fp.tsv", 32) == data.fingerprints


def test_latent_design_separates_divisions():
    # interaction structure: divisions sharing a habitat profile have correlated responses
    data = generate(SynthConfig())
    lat = data.latent
    chems = sorted(lat.chemical_cluster)
    divs = sorted(lat.division_offsets)
    div_species = {d: next(s for s, dd in lat.species_division.items() if dd == d) for d in divs}
    resp = np.array([[lat.log10_concentration(c, div_species[d]) for c in chems] for d in divs])
    assert np.all(np.isfinite(resp))
    assert len(set(lat.division_profile.values())) == SynthConfig().n_profiles
