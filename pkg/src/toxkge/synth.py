"""Seeded generator for small TERA-like graphs with a known toxicity function.

The graph has three parts: a species taxonomy (division roots, family and
genus ranks, leaf species) with habitat/presence traits, a chemical class
hierarchy, and substructure triples derived from 881-bit fingerprints.

Log10 effect concentration for a (chemical, species) pair is

    mu + division_offset[d] + cluster_offset[c] + U[profile(d)] . V[c] + noise

where each division has a habitat profile shared with other divisions. The
main effects are kept small so the variance sits in the interaction term,
which only knowledge of habitat and chemical structure can recover.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .effects import EffectRecord
from .errors import ConfigError
from .kg import RDF_TYPE, RDFS_SUBCLASS, KnowledgeGraph, Triple

NS = "http://example.org/tera/"
TAX = NS + "taxon/"
CHEM = NS + "chemical/"
FP = NS + "fingerprint/bit"
HABITAT = NS + "habitat"
PRESENCE = NS + "presence"
HAS_SUBSTRUCTURE = NS + "hasSubstructure"
SPECIES_CLASS = NS + "Species"
CHEMICAL_CLASS = NS + "Chemical"

DIVISION_NAMES = ("Fish", "Crustaceans", "InsectsSpiders", "Amphibians", "Worms", "Invertebrates", "Molluscs")
ENDPOINTS = ("LC50", "LD50", "EC50")
DURATIONS = (24.0, 48.0, 72.0, 96.0)
# records the effect filter must reject: (endpoint, effect, unit, hours)
DISTRACTORS = (
    ("LC50", "MOR", "mg_per_L", 12.0),
    ("LC50", "MOR", "mg_per_L", 168.0),
    ("EC50", "GRO", "mg_per_L", 48.0),
    ("NOEC", "MOR", "mg_per_L", 48.0),
    ("LC50", "MOR", "ppm", 48.0),
)


@dataclass
class SynthConfig:
    seed: int = 0
    n_species: int = 200
    n_chemicals: int = 100
    species_divisions: int = 7
    chemical_clusters: int = 5
    taxonomy_branching: int = 3
    trait_vocabulary_size: int = 12
    fingerprint_length: int = 881
    noise_std: float = 0.5
    n_profiles: int = 3
    interaction_rank: int = 2
    pairs_per_species: int = 3
    min_replicates: int = 3
    max_replicates: int = 5
    fingerprint_density: float = 0.08
    fingerprint_flip: float = 0.01
    interaction_scale: float = 1.0
    main_effect_scale: float = 0.15
    base_log10_mg_per_L: float = 1.0
    distractor_rate: float = 0.1

    def validate(self) -> None:
        counts = {
            "n_species": self.n_species,
            "n_chemicals": self.n_chemicals,
            "species_divisions": self.species_divisions,
            "chemical_clusters": self.chemical_clusters,
            "taxonomy_branching": self.taxonomy_branching,
            "trait_vocabulary_size": self.trait_vocabulary_size,
            "fingerprint_length": self.fingerprint_length,
            "n_profiles": self.n_profiles,
            "interaction_rank": self.interaction_rank,
            "pairs_per_species": self.pairs_per_species,
            "min_replicates": self.min_replicates,
        }
        bad = [k for k, v in counts.items() if int(v) <= 0]
        if bad:
            raise ConfigError(f"counts must be positive: {bad}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.max_replicates < self.min_replicates:
            raise ConfigError("max_replicates < min_replicates")
        if self.n_species < self.species_divisions:
            raise ConfigError("need at least one species per division")
        if self.n_chemicals < self.chemical_clusters:
            raise ConfigError("need at least one chemical per cluster")
        if self.pairs_per_species > self.n_chemicals:
            raise ConfigError("pairs_per_species exceeds n_chemicals")
        if not 0 < self.fingerprint_density < 1 or not 0 <= self.fingerprint_flip < 1:
            raise ConfigError("fingerprint_density must be in (0, 1) and fingerprint_flip in [0, 1)")
        if not 0 <= self.distractor_rate <= 1:
            raise ConfigError("distractor_rate must be in [0, 1]")


@dataclass
class LatentModel:
    mu: float
    division_offsets: dict[str, float]
    cluster_offsets: dict[str, float]
    profile_factors: dict[str, list[float]]
    cluster_factors: dict[str, list[float]]
    division_profile: dict[str, str]
    species_division: dict[str, str]
    chemical_cluster: dict[str, str]
    noise_std: float

    def log10_concentration(self, chemical: str, species: str) -> float:
        d = self.species_division[species]
        c = self.chemical_cluster[chemical]
        u = np.asarray(self.profile_factors[self.division_profile[d]])
        v = np.asarray(self.cluster_factors[c])
        return float(self.mu + self.division_offsets[d] + self.cluster_offsets[c] + u @ v)

    def target(self, chemical: str, species: str) -> float:
        """Noise-free ``-log10(mg/L)``."""
        return -self.log10_concentration(chemical, species)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LatentModel":
        return cls(**json.loads(text))


@dataclass
class SynthData:
    kg: KnowledgeGraph
    records: list[EffectRecord]
    latent: LatentModel
    fingerprints: dict[str, str] = field(default_factory=dict)
    division_roots: list[str] = field(default_factory=list)
    species: list[str] = field(default_factory=list)
    chemicals: list[str] = field(default_factory=list)

    def __iter__(self):
        # allows ``kg, records, latent = generate(cfg)``
        return iter((self.kg, self.records, self.latent))


def _division_names(n: int) -> list[str]:
    if n == len(DIVISION_NAMES):
        return list(DIVISION_NAMES)
    return [f"Division{i}" for i in range(n)]


def _centred(rng, n, scale, weights=None):
    x = rng.normal(0.0, 1.0, size=n)
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    x -= np.average(x, weights=w)
    sd = np.sqrt(np.average(x**2, weights=w))
    return x * (scale / sd) if sd > 0 else x


def generate(config: SynthConfig) -> SynthData:
    """Build the graph, effect records and latent model for ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    triples: list[Triple] = []

    # species taxonomy
    div_names = _division_names(config.species_divisions)
    division_iris = [TAX + name for name in div_names]
    profiles = [f"profile{i}" for i in range(config.n_profiles)]
    prof_order = rng.permutation(config.species_divisions)
    division_profile = {div_names[d]: profiles[i % config.n_profiles] for i, d in enumerate(prof_order)}

    species_div = rng.permutation(np.arange(config.n_species) % config.species_divisions)
    species_iris = [TAX + f"species{i}" for i in range(config.n_species)]
    b = config.taxonomy_branching
    for d, droot in enumerate(division_iris):
        members = [i for i in range(config.n_species) if species_div[i] == d]
        genera = []
        for f in range(b):
            fam = f"{droot}/family{f}"
            triples.append(Triple(fam, RDFS_SUBCLASS, droot))
            for g in range(b):
                gen = f"{fam}/genus{g}"
                triples.append(Triple(gen, RDFS_SUBCLASS, fam))
                genera.append(gen)
        for j, i in enumerate(members):
            triples.append(Triple(species_iris[i], RDFS_SUBCLASS, genera[j % len(genera)]))
            triples.append(Triple(species_iris[i], RDF_TYPE, SPECIES_CLASS))

    # traits: two habitat terms per profile plus presence regions as noise
    habitats = {p: [NS + f"habitat/{p}_{h}" for h in range(2)] for p in profiles}
    regions = [NS + f"region/r{i}" for i in range(config.trait_vocabulary_size)]
    for i, sp in enumerate(species_iris):
        prof = division_profile[div_names[species_div[i]]]
        n_hab = 1 + int(rng.random() < 0.5)
        for h in rng.choice(2, size=n_hab, replace=False):
            triples.append(Triple(sp, HABITAT, habitats[prof][h]))
        for r in rng.choice(config.trait_vocabulary_size, size=min(2, config.trait_vocabulary_size), replace=False):
            triples.append(Triple(sp, PRESENCE, regions[r]))

    # chemical hierarchy and fingerprints
    n_clusters = config.chemical_clusters
    cluster_names = [f"cluster{c}" for c in range(n_clusters)]
    chem_cluster = rng.permutation(np.arange(config.n_chemicals) % n_clusters)
    chem_iris = [CHEM + f"compound{i}" for i in range(config.n_chemicals)]
    chem_root = CHEM + "ChemicalCompound"
    n_super = max(1, (n_clusters + 1) // 2)
    super_iris = [CHEM + f"superclass{s}" for s in range(n_super)]
    for s in super_iris:
        triples.append(Triple(s, RDFS_SUBCLASS, chem_root))
    class_iris = {}
    for c in range(n_clusters):
        for k in range(2):
            ci = CHEM + f"class{c}_{k}"
            class_iris[(c, k)] = ci
            triples.append(Triple(ci, RDFS_SUBCLASS, super_iris[c % n_super]))
    L = config.fingerprint_length
    prototypes = rng.random((n_clusters, L)) < config.fingerprint_density
    fingerprints = {}
    for i, ch in enumerate(chem_iris):
        c = int(chem_cluster[i])
        flips = rng.random(L) < config.fingerprint_flip
        bits = prototypes[c] ^ flips
        fingerprints[ch] = "".join("1" if x else "0" for x in bits)
        triples.append(Triple(ch, RDFS_SUBCLASS, class_iris[(c, int(rng.random() < 0.5))]))
        triples.append(Triple(ch, RDF_TYPE, CHEMICAL_CLASS))
        for k in np.flatnonzero(bits):
            triples.append(Triple(ch, HAS_SUBSTRUCTURE, f"{FP}{k}"))

    # latent toxicity
    div_weights = [np.sum(species_div == d) for d in range(config.species_divisions)]
    prof_weights = [
        sum(div_weights[d] for d in range(config.species_divisions) if division_profile[div_names[d]] == p)
        for p in profiles
    ]
    r = config.interaction_rank
    U = np.column_stack([_centred(rng, config.n_profiles, 1.0, prof_weights) for _ in range(r)])
    clu_weights = [np.sum(chem_cluster == c) for c in range(n_clusters)]
    V = np.column_stack([_centred(rng, n_clusters, 1.0, clu_weights) for _ in range(r)])
    inter = U @ V.T
    pw = np.asarray(prof_weights, float) / sum(prof_weights)
    cw = np.asarray(clu_weights, float) / sum(clu_weights)
    inter_sd = np.sqrt(pw @ (inter**2) @ cw)
    scale = np.sqrt(config.interaction_scale / inter_sd) if inter_sd > 0 else 1.0
    U, V = U * scale, V * scale
    latent = LatentModel(
        mu=config.base_log10_mg_per_L,
        division_offsets=dict(zip(div_names, _centred(rng, config.species_divisions, config.main_effect_scale, div_weights).tolist())),
        cluster_offsets=dict(zip(cluster_names, _centred(rng, n_clusters, config.main_effect_scale, clu_weights).tolist())),
        profile_factors={p: U[i].tolist() for i, p in enumerate(profiles)},
        cluster_factors={c: V[i].tolist() for i, c in enumerate(cluster_names)},
        division_profile=division_profile,
        species_division={sp: div_names[species_div[i]] for i, sp in enumerate(species_iris)},
        chemical_cluster={ch: cluster_names[chem_cluster[i]] for i, ch in enumerate(chem_iris)},
        noise_std=float(config.noise_std),
    )

    # effect records
    records = []
    for i, sp in enumerate(species_iris):
        for j in sorted(rng.choice(config.n_chemicals, size=config.pairs_per_species, replace=False)):
            ch = chem_iris[j]
            base = latent.log10_concentration(ch, sp)
            n_rep = int(rng.integers(config.min_replicates, config.max_replicates + 1))
            # one unit per pair so noiseless replicates are bitwise identical
            unit = "ug_per_L" if rng.random() < 0.3 else "mg_per_L"
            for _ in range(n_rep):
                log_c = base + (rng.normal(0.0, config.noise_std) if config.noise_std > 0 else 0.0)
                conc = 10.0**log_c * (1000.0 if unit == "ug_per_L" else 1.0)
                records.append(
                    EffectRecord(
                        chemical=ch,
                        species=sp,
                        endpoint=ENDPOINTS[int(rng.integers(len(ENDPOINTS)))],
                        effect="MOR",
                        concentration=float(conc),
                        unit=unit,
                        duration_hours=DURATIONS[int(rng.integers(len(DURATIONS)))],
                    )
                )

    # distractors use their own stream so the clean records do not depend on the rate
    drng = np.random.default_rng([config.seed, 1])
    pairs = sorted({(r.chemical, r.species) for r in records})
    for ch, sp in pairs:
        if drng.random() < config.distractor_rate:
            endpoint, effect, unit, hours = DISTRACTORS[int(drng.integers(len(DISTRACTORS)))]
            records.append(EffectRecord(ch, sp, endpoint, effect, float(10.0 ** drng.normal(1.0, 1.0)), unit, hours))

    return SynthData(
        kg=KnowledgeGraph(triples, (RDFS_SUBCLASS,)),
        records=records,
        latent=latent,
        fingerprints=fingerprints,
        division_roots=division_iris,
        species=species_iris,
        chemicals=chem_iris,
    )


def write_fingerprints_tsv(fingerprints: dict[str, str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("chemical\tfingerprint\n")
        for chem in sorted(fingerprints):
            fh.write(f"{chem}\t{fingerprints[chem]}\n")


def read_fingerprints_tsv(path, length: int | None = 881) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("chemical"):
            raise ValueError(f"{path}: expected header 'chemical<TAB>fingerprint'")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            chem, bits = line.rstrip("\n").split("\t")
            if set(bits) - {"0", "1"} or (length is not None and len(bits) != length):
                raise ValueError(f"{path}:{lineno}: invalid fingerprint for {chem}")
            out[chem] = bits
    return out
