"""Run configuration read from an INI file plus command-line overrides."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .embed import TrainingConfig
from .errors import ConfigError
from .evaluation import ProtocolConfig
from .synth import CHEMICAL_CLASS, SPECIES_CLASS, SynthConfig

MODES = ("species", "chemical")


@dataclass
class PathsConfig:
    out: str = "run"
    kg: str = ""
    effects: str = ""
    fingerprints: str = ""


@dataclass
class GroupingConfig:
    mode: str = "species"
    n_clusters: int = 5
    fingerprint_length: int = 881
    division_roots: list[str] = field(default_factory=list)
    hierarchy_predicates: list[str] = field(default_factory=lambda: ["http://www.w3.org/2000/01/rdf-schema#subClassOf"])
    species_class: str = SPECIES_CLASS
    chemical_class: str = CHEMICAL_CLASS


@dataclass
class ExplainConfig:
    radius_quantiles: list[float] = field(default_factory=lambda: [0.1, 0.25])
    radii: list[float] = field(default_factory=list)
    depths: list[int] = field(default_factory=lambda: [1, 2, 3])
    n_values: list[int] = field(default_factory=lambda: [2, 3, 5, 7, 9, 11])
    common_facts_n: int = 3
    error_runs: int = 100
    error_trees: int = 100
    metric: str = "euclidean"
    std_bin_width: float = 0.1


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    embedding: TrainingConfig = field(default_factory=TrainingConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def apply_seed(self, seed: int) -> None:
        self.seed = int(seed)
        self.synth.seed = self.seed
        self.embedding.seed = self.seed
        self.protocol.seed = self.seed

    def validate(self) -> None:
        self.synth.validate()
        self.embedding.validate()
        self.protocol.validate()
        if self.grouping.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.grouping.mode!r}")
        if self.grouping.n_clusters < 2:
            raise ConfigError("n_clusters must be at least 2")
        if self.explain.metric not in ("euclidean", "cosine"):
            raise ConfigError("explain metric must be euclidean or cosine")
        if any(r <= 0 for r in self.explain.radii) or any(not 0 < q < 1 for q in self.explain.radius_quantiles):
            raise ConfigError("radii must be positive and radius quantiles in (0, 1)")
        if any(n < 1 for n in self.explain.n_values) or self.explain.common_facts_n < 1:
            raise ConfigError("neighbourhood sizes must be positive")
        if self.explain.error_runs < 1 or self.explain.error_trees < 1:
            raise ConfigError("error_runs and error_trees must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"]["C_exponents"] = list(self.protocol.C_exponents)
        d["protocol"]["gamma_exponents"] = list(self.protocol.gamma_exponents)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _convert(raw: str, current, name: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int) and not isinstance(current, bool):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, (list, tuple)):
            items = [x.strip() for x in raw.replace("\n", ",").split(",") if x.strip()]
            if ".." in raw and len(items) == 1:
                lo, hi = items[0].split("..")
                items = [str(k) for k in range(int(lo), int(hi) + 1)]
            sample = current[0] if current else None
            if isinstance(sample, int) or name.endswith("exponents") or name in ("depths", "n_values"):
                vals = [int(x) for x in items]
            elif isinstance(sample, float) or name in ("radii", "radius_quantiles"):
                vals = [float(x) for x in items]
            else:
                vals = items
            return tuple(vals) if isinstance(current, tuple) else vals
        if current is None:
            return None if raw.lower() in ("", "none") else int(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None
    return raw


def _apply_section(target, section: configparser.SectionProxy, section_name: str) -> None:
    names = {f.name.lower(): f.name for f in fields(target)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"unknown key [{section_name}] {key}")
        attr = names[key]
        setattr(target, attr, _convert(raw, getattr(target, attr), attr))


def load_config(path: str | Path | None = None, seed: int | None = None, mode: str | None = None, out: str | None = None) -> RunConfig:
    """Read ``path`` (if given) and apply flag overrides; the top-level seed feeds every stage."""
    cfg = RunConfig()
    base_seed = None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        parser = configparser.ConfigParser()
        parser.optionxform = str.lower
        parser.read(p, encoding="utf-8")
        for name in parser.sections():
            section = parser[name]
            if name == "run":
                for key, raw in section.items():
                    if key != "seed":
                        raise ConfigError(f"unknown key [run] {key}")
                    base_seed = _convert(raw, 0, "seed")
                continue
            target = getattr(cfg, name, None)
            if target is None or name == "seed":
                raise ConfigError(f"unknown config section [{name}]")
            _apply_section(target, section, name)
    if base_seed is not None:
        cfg.apply_seed(base_seed)
    if seed is not None:
        cfg.apply_seed(seed)
    if mode is not None:
        cfg.grouping.mode = mode
    if out is not None:
        cfg.paths.out = out
    cfg.validate()
    return cfg
