"""Command-line workflow: generate -> embed -> evaluate -> explain."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import effects as fx
from . import embed, explain, grouping, kg as kgmod, synth
from .config import RunConfig, load_config
from .errors import ConfigError, CoverageError, ToxKGEError
from .evaluation import EvaluationReport, pair_features, run_protocol

logger = logging.getLogger("toxkge")

STAGES = ("data", "embedding", "evaluation", "explain")
ARMS = ("embedding", "random")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def staged_dir(out: Path, stage: str):
    """Yield a scratch directory that replaces ``out/stage`` only if the block succeeds."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    final = out / stage
    if final.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{stage}-old-", dir=out))
        os.replace(final, old / stage)
        shutil.rmtree(old, ignore_errors=True)
    os.replace(tmp, final)


def _manifest_config(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    d["paths"].pop("out", None)
    return d


def update_manifest(cfg: RunConfig, stage: str) -> Path:
    out = Path(cfg.paths.out)
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    conf = _manifest_config(cfg)
    manifest["config"] = conf
    manifest["config_sha256"] = hashlib.sha256(json.dumps(conf, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    manifest["seeds"] = {
        "run": cfg.seed,
        "synth": cfg.synth.seed,
        "embedding": cfg.embedding.seed,
        "embedding_inits": embed.init_seeds(cfg.embedding.seed, cfg.embedding.n_inits),
        "protocol": cfg.protocol.seed,
    }
    stage_dir = out / stage
    manifest.setdefault("stages", {})[stage] = {
        p.name: _sha256(p) for p in sorted(stage_dir.iterdir()) if p.is_file()
    }
    manifest["stages"] = {k: manifest["stages"][k] for k in STAGES if k in manifest["stages"]}
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _input(cfg: RunConfig, explicit: str, default: str) -> Path:
    return Path(explicit) if explicit else Path(cfg.paths.out) / "data" / default


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def cmd_generate(cfg: RunConfig) -> list[Path]:
    cfg.synth.validate()
    data = synth.generate(cfg.synth)
    out = Path(cfg.paths.out)
    with staged_dir(out, "data") as tmp:
        kgmod.dump_ntriples(data.kg, tmp / "kg.nt")
        fx.write_effects_tsv(data.records, tmp / "effects.tsv")
        synth.write_fingerprints_tsv(data.fingerprints, tmp / "fingerprints.tsv")
        (tmp / "latent.json").write_text(data.latent.to_json(), encoding="utf-8")
        kgmod.dump_stats(data.kg, tmp / "kg_stats.json")
    update_manifest(cfg, "data")
    return sorted((out / "data").iterdir())


def load_graph(cfg: RunConfig) -> kgmod.KnowledgeGraph:
    path = _require(_input(cfg, cfg.paths.kg, "kg.nt"), "knowledge graph file")
    return kgmod.load_ntriples(path, cfg.grouping.hierarchy_predicates)


def cmd_embed(cfg: RunConfig) -> list[Path]:
    cfg.embedding.validate()
    graph = load_graph(cfg)
    tc = cfg.embedding
    out = Path(cfg.paths.out)
    with staged_dir(out, "embedding") as tmp:
        tables = []
        for i, s in enumerate(embed.init_seeds(tc.seed, tc.n_inits)):
            table, curve = embed.train(graph, tc, seed=s)
            logger.info("init %d: final mean loss %.4f", i, curve[-1])
            embed.write_table_csv(table, tmp / f"table_init{i}.csv")
            embed.write_manifest(tmp / f"manifest_init{i}.json", tc, s, curve, table)
            embed.write_loss_curve_csv(curve, tmp / f"loss_init{i}.csv")
            tables.append(table)
        names = tables[0].entities
        feats = np.vstack([embed.entity_features(tables, e) for e in range(len(names))])
        embed.write_features_csv(names, feats, tmp / "features.csv")
    update_manifest(cfg, "embedding")
    return sorted((out / "embedding").iterdir())


def typed_members(graph: kgmod.KnowledgeGraph, cls: str) -> list[str]:
    return sorted(graph.subjects(kgmod.RDF_TYPE, cls))


def infer_division_roots(graph: kgmod.KnowledgeGraph, species: list[str]) -> list[str]:
    roots = set()
    for sp in species:
        if sp not in graph.entities:
            continue
        for a, _ in kgmod.hierarchy_ancestors(graph, graph.entities.id(sp), len(graph.entities)):
            if not graph.parents(a) and a != graph.entities.id(sp):
                roots.add(graph.entities.item(a))
    return sorted(roots)


def load_samples(cfg: RunConfig) -> list[fx.AggregatedSample]:
    path = _require(_input(cfg, cfg.paths.effects, "effects.tsv"), "effects file")
    return fx.aggregate(fx.filter_records(fx.read_effects_tsv(path)))


def build_groups(cfg: RunConfig, graph: kgmod.KnowledgeGraph, samples, distances_out: Path | None = None) -> grouping.GroupAssignment:
    if cfg.grouping.mode == "species":
        species = sorted({s.species for s in samples})
        roots = cfg.grouping.division_roots or infer_division_roots(graph, species)
        if not roots:
            raise ConfigError("no division roots configured or found in the hierarchy")
        return grouping.species_divisions(graph, roots, species)
    fp_path = _input(cfg, cfg.paths.fingerprints, "fingerprints.tsv")
    if not fp_path.is_file():
        raise ConfigError(f"chemical mode needs a fingerprint file; not found: {fp_path}")
    fps = synth.read_fingerprints_tsv(fp_path, cfg.grouping.fingerprint_length)
    chems = sorted({s.chemical for s in samples})
    missing = [c for c in chems if c not in fps]
    if missing:
        raise CoverageError(f"{len(missing)} chemicals have no fingerprint: {missing[:10]}", missing)
    used = {c: fps[c] for c in chems}
    if distances_out is not None:
        D = grouping.tanimoto_distances(np.vstack([grouping.parse_bits(b) for b in used.values()]))
        grouping.write_distance_csv(chems, D, distances_out)
    return grouping.cluster_chemicals(used, cfg.grouping.n_clusters, cfg.grouping.fingerprint_length)


def load_features(cfg: RunConfig) -> dict[str, np.ndarray]:
    path = _require(Path(cfg.paths.out) / "embedding" / "features.csv", "embedding feature file")
    return embed.read_features_csv(path)


def cmd_evaluate(cfg: RunConfig) -> list[Path]:
    cfg.protocol.validate()
    graph = load_graph(cfg)
    samples = load_samples(cfg)
    if not samples:
        raise ConfigError("no effect samples survive filtering and aggregation")
    feats = load_features(cfg)
    X_emb = pair_features(samples, feats)
    dim = next(iter(feats.values())).shape[0]
    X_rand = pair_features(samples, lambda e: embed.random_features(e, dim, cfg.seed))
    key = (lambda s: s.species) if cfg.grouping.mode == "species" else (lambda s: s.chemical)
    y = np.array([s.target for s in samples])
    out = Path(cfg.paths.out)
    with staged_dir(out, "evaluation") as tmp:
        dist_path = tmp / "chemical_distances.csv" if cfg.grouping.mode == "chemical" else None
        groups = build_groups(cfg, graph, samples, dist_path)
        sample_groups = [groups[key(s)] for s in samples]
        fx.write_samples_csv(samples, tmp / "samples.csv")
        fx.write_histogram_csv(fx.replicate_std_distribution(samples, cfg.explain.std_bin_width), tmp / "std_histogram.csv")
        groups.write_csv(tmp / "groups.csv")
        sizes: dict[str, int] = {}
        for g in sample_groups:
            sizes[g] = sizes.get(g, 0) + 1
        plan = grouping.make_fold_plan(sizes, cfg.protocol.n_folds, np.random.default_rng(cfg.protocol.seed))
        (tmp / "fold_plan.json").write_text(plan.to_json(), encoding="utf-8")
        summary = {"mode": cfg.grouping.mode, "n_samples": len(samples), "arms": {}}
        for arm, X in (("embedding", X_emb), ("random", X_rand)):
            report = run_protocol(X, y, sample_groups, cfg.protocol, samples, feature_source=arm)
            report.write_json(tmp / f"report_{arm}.json")
            report.write_samples_csv(tmp / f"predictions_{arm}.csv")
            summary["arms"][arm] = {"r2_mean": report.r2_mean, "r2_std": report.r2_std, "ca_mean": report.ca_mean, "ca_std": report.ca_std}
            logger.info("%s arm: R2 %.3f +/- %.3f, CA %.3f +/- %.3f", arm, report.r2_mean, report.r2_std, report.ca_mean, report.ca_std)
        with open(tmp / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    update_manifest(cfg, "evaluation")
    return sorted((out / "evaluation").iterdir())


def cmd_explain(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.paths.out)
    ev = out / "evaluation"
    rep_json, rep_csv = ev / "report_embedding.json", ev / "predictions_embedding.csv"
    for p in (rep_json, rep_csv, ev / "samples.csv"):
        if not p.is_file():
            raise ConfigError(f"evaluation output missing: {p} (run 'evaluate' first)")
    report = EvaluationReport.read(rep_json, rep_csv)
    graph = load_graph(cfg)
    feats = load_features(cfg)
    ex = cfg.explain

    chemicals = sorted(set(typed_members(graph, cfg.grouping.chemical_class)) | set(report.chemicals))
    species = sorted(set(typed_members(graph, cfg.grouping.species_class)) | set(report.species))
    chemicals = [c for c in chemicals if c in feats]
    species = [s for s in species if s in feats]
    names = chemicals + species
    index = explain.SimilarityIndex(names, np.vstack([feats[n] for n in names]), ex.metric)
    pairs = list(zip(report.chemicals, report.species))
    cat_err = report.categorical_error
    abs_err = report.abs_error

    with staged_dir(out, "explain") as tmp:
        # radius densities
        ci = [index.index(c) for c in chemicals]
        si = [index.index(s) for s in species]
        D = index.matrix
        settings = []
        if ex.radii:
            settings = [(r, r) for r in ex.radii]
        else:
            cd = D[np.ix_(ci, ci)][np.triu_indices(len(ci), 1)]
            sd = D[np.ix_(si, si)][np.triu_indices(len(si), 1)]
            settings = [(float(np.quantile(cd, q)), float(np.quantile(sd, q))) for q in ex.radius_quantiles]
        radius_meta = []
        for j, (rc, rs) in enumerate(settings):
            cells = [explain.radius_density(index, c, s, rc, rs, chemicals, species) for c, s in pairs]
            dm = explain.density_map(cat_err, cells)
            for e in range(4):
                dm.write_csv(tmp / f"density_radius{j}_err{e}.csv", error_class=e)
            radius_meta.append({"r_chem": rc, "r_species": rs, "counts": {str(k): v for k, v in dm.counts.items()}})

        # depth densities over data-bearing leaves
        with_data = {graph.entities.id(e) for e in set(report.chemicals) | set(report.species) if e in graph.entities}
        depth_meta = []
        for depth in ex.depths:
            cells = [explain.depth_density(graph, c, s, depth, with_data.__contains__) for c, s in pairs]
            dm = explain.density_map(cat_err, cells)
            for e in range(4):
                dm.write_csv(tmp / f"density_depth{depth}_err{e}.csv", error_class=e)
            depth_meta.append({"depth": depth, "counts": {str(k): v for k, v in dm.counts.items()}})
        with open(tmp / "density_settings.json", "w", encoding="utf-8") as fh:
            json.dump({"radius": radius_meta, "depth": depth_meta}, fh, indent=2, sort_keys=True)
            fh.write("\n")

        # error model
        Xe = explain.error_features(index, index, pairs, chemicals, species)
        em = explain.fit_error_model(Xe, abs_err, ex.error_runs, 0.2, cfg.seed, ex.error_trees)
        em.write_json(tmp / "error_model.json")

        # common facts and their correlation with error
        cache: dict[tuple[str, str, int], explain.CommonFactsReport] = {}

        def facts_for(entity, side, n):
            key = (entity, side, n)
            if key not in cache:
                pool = chemicals if side == "chemical" else species
                cache[key] = explain.common_facts(graph, index, entity, n, pool)
            return cache[key]

        ca_each = 1.0 / (1.0 + cat_err)
        rows = []
        for i, (c, s) in enumerate(pairs):
            for side, ent in (("chemical", c), ("species", s)):
                base = facts_for(ent, side, ex.common_facts_n)
                rep = explain.CommonFactsReport(base.entity, base.n, base.members, base.shared, base.truncated, float(abs_err[i]), float(ca_each[i]), i)
                rows.append((rep, side))
        explain.write_common_facts_csv(rows, tmp / "common_facts.csv")
        counts = {
            (side, n): [facts_for(c if side == "chemical" else s, side, n).n_facts for c, s in pairs]
            for side in ("chemical", "species")
            for n in ex.n_values
        }
        explain.write_correlation_csv(explain.fact_error_correlation(counts, abs_err), tmp / "correlation.csv")
    update_manifest(cfg, "explain")
    return sorted((out / "explain").iterdir())


def cmd_all(cfg: RunConfig) -> list[Path]:
    files = []
    for step in (cmd_generate, cmd_embed, cmd_evaluate, cmd_explain):
        files.extend(step(cfg))
    return files


COMMANDS = {
    "generate": cmd_generate,
    "embed": cmd_embed,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "all": cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toxkge", description="KG-embedding effect prediction workflow")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="seed for every stage")
        p.add_argument("--mode", choices=("species", "chemical"), help="gap-filling mode")
        p.add_argument("--out", help="run directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, mode=args.mode, out=args.out)
        COMMANDS[args.command](cfg)
    except ToxKGEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
