"""Operator entry point.

Subcommands: fetch, build-dataset, train, ablate, report, embed-check.
Exit codes are a stable contract: 0 success, 2 user/config error,
3 environment/network error. Commands are idempotent given a warm cache
and fixed manifest inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__, datasets, qm9, report as report_mod, training
from .checkpoint import save_checkpoint
from .encoder import EncoderConfig
from .graphs import RbfConfig
from .manifest import RunManifest, file_sha256
from .pubchem import (
    DEFAULT_RATE_LIMIT,
    NetworkError,
    PubChemClient,
    RateLimitExhausted,
)
from .qm9 import TargetId
from .textfeat import EmbeddingFormatError, load_embeddings, text_sha256
from .training import ConfigError, ReportSchemaError, TrainConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENVIRONMENT = 3

PROFILES = {
    "smoke": {"encoder": {"n_hidden": 16, "n_rbf": 16, "n_iterations": 1},
              "rbf": {"cutoff": 5.0, "n_centers": 16, "gamma": 10.0},
              "epochs": 30},
    "desk": {"encoder": {"n_hidden": 64, "n_rbf": 50, "n_iterations": 2},
             "rbf": {"cutoff": 5.0, "n_centers": 50, "gamma": 10.0},
             "epochs": 300},
    "full": {"encoder": {"n_hidden": 128, "n_rbf": 50, "n_iterations": 3},
             "rbf": {"cutoff": 5.0, "n_centers": 50, "gamma": 10.0},
             "epochs": 300},
}

_CONFIG_KEYS = {
    "dataset": str,
    "target": str,
    "targets": list,
    "modality": str,
    "profile": str,
    "epochs": int,
    "batch_size": int,
    "learning_rate": (int, float),
    "folds": int,
    "seed": int,
    "n_runs": int,
    "embedding_source": str,
    "embeddings": str,
    "encoder": dict,
    "rbf": dict,
    "text_dim": int,
    "out": str,
}

# Swappable for offline tests; production path builds the requests client.
def client_factory(cache_dir, rate: float) -> PubChemClient:
    return PubChemClient(cache_dir, rate_limit=rate)


def _load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"config {path}: unknown key {key!r}")
        if not isinstance(value, _CONFIG_KEYS[key]):
            raise ConfigError(
                f"config {path}: key {key!r} must be {_CONFIG_KEYS[key]}, got {type(value).__name__}"
            )
    return raw


def _parse_target(name: str) -> TargetId:
    try:
        target = TargetId(name)
    except ValueError:
        raise ConfigError(f"unknown target {name!r}; choose from "
                          f"{[t.value for t in qm9.BENCHMARK_TARGETS]}") from None
    if target in qm9.ROTATIONAL_CONSTANTS:
        raise ConfigError(f"target {name!r} is a rotational constant, not a benchmark target")
    return target


def _resolve_train_config(raw: dict, args, need_modality: bool) -> tuple:
    """Merge config file, profile defaults and CLI overrides into a
    TrainConfig plus the resolved raw dict (for the manifest snapshot)."""
    merged = dict(raw)
    if args.profile:
        merged["profile"] = args.profile
    if args.seed is not None:
        merged["seed"] = args.seed
    if args.embeddings:
        merged["embeddings"] = str(args.embeddings)
        merged["embedding_source"] = "file"
    if args.out:
        merged["out"] = str(args.out)

    profile = merged.get("profile", "smoke")
    if profile not in PROFILES:
        raise ConfigError(f"config key 'profile' must be one of {sorted(PROFILES)}, got {profile!r}")
    defaults = PROFILES[profile]
    encoder_cfg = {**defaults["encoder"], **merged.get("encoder", {})}
    rbf_cfg = {**defaults["rbf"], **merged.get("rbf", {})}

    if "dataset" not in merged:
        raise ConfigError("config key 'dataset' is required")
    if need_modality and "modality" not in merged:
        raise ConfigError("config key 'modality' is required for train")

    try:
        encoder = EncoderConfig(**encoder_cfg)
        rbf = RbfConfig(**rbf_cfg)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config keys 'encoder'/'rbf': {err}") from None

    target_name = merged.get("target") or (merged.get("targets") or ["homo"])[0]
    cfg = TrainConfig(
        target=_parse_target(target_name),
        modality=merged.get("modality", "geometry_only"),
        epochs=merged.get("epochs", defaults["epochs"]),
        batch_size=merged.get("batch_size", 64),
        learning_rate=float(merged.get("learning_rate", 1e-3)),
        folds=merged.get("folds", 3),
        seed=merged.get("seed", 0),
        n_runs=merged.get("n_runs", 3),
        embedding_source=merged.get("embedding_source", "featurizer"),
        encoder=encoder,
        rbf=rbf,
        text_dim=merged.get("text_dim", 16),
    )
    merged["profile"] = profile
    merged["encoder"] = encoder_cfg
    merged["rbf"] = rbf_cfg
    return cfg, merged


def _prepare_samples(cfg: TrainConfig, merged: dict):
    """Load the dataset artifact and attach text vectors from the exclusive
    embedding source. Returns (samples, embedding file hash or "").

    Featurizer standardization constants come from the included-molecule
    set and are frozen into the manifest config snapshot, so training and
    serving agree."""
    dataset_path = merged["dataset"]
    if not Path(dataset_path).exists():
        raise ConfigError(f"dataset file not found: {dataset_path}")
    entries = datasets.load_dataset(dataset_path)
    if not entries:
        raise ConfigError(f"dataset {dataset_path} is empty")
    embeddings = None
    embedding_hash = ""
    stats = None
    if cfg.embedding_source == "file":
        emb_path = merged.get("embeddings")
        if not emb_path:
            raise ConfigError("embedding_source=file requires config key 'embeddings'")
        if not Path(emb_path).exists():
            raise ConfigError(f"embedding file not found: {emb_path}")
        embeddings = load_embeddings(emb_path)
        embedding_hash = file_sha256(emb_path)
    else:
        stats = datasets.featurizer_stats(entries)
        merged["featurizer_stats"] = stats.to_dict()
    samples = datasets.make_samples(entries, cfg.rbf, cfg.embedding_source, embeddings, stats)
    return samples, embedding_hash


# ------------------------------------------------------------------ fetch

def cmd_fetch(args) -> int:
    xyz_dir = Path(args.xyz_dir)
    if not xyz_dir.is_dir():
        print(f"error: xyz directory not readable: {xyz_dir}", file=sys.stderr)
        return EXIT_CONFIG
    exclusions = qm9.load_exclusions(args.exclusions) if args.exclusions else None
    molecules, failures = qm9.load_directory(xyz_dir, exclusions)
    client = client_factory(args.cache_dir, args.rate)
    included, excluded = datasets.build_entries(molecules, client)

    reasons = Counter(e.reason for e in excluded)
    for name, _err in failures:
        reasons["parse-error"] += 1
    total_excluded = len(excluded) + len(failures)
    print(f"{len(included)} included, {total_excluded} excluded")
    for reason in sorted(reasons):
        print(f"  {reason}: {reasons[reason]}")
    print(f"cache: {client.cache.dir} ({client.request_count} network calls)")
    if reasons.get("network-exhausted"):
        print(
            "network/rate-limit budget exhausted; the cache kept every completed "
            "record, so rerunning the same command resumes incrementally.",
            file=sys.stderr,
        )
        return EXIT_ENVIRONMENT
    return EXIT_OK


# ------------------------------------------------------------------ build-dataset

def cmd_build_dataset(args) -> int:
    xyz_dir = Path(args.xyz_dir)
    if not xyz_dir.is_dir():
        print(f"error: xyz directory not readable: {xyz_dir}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    exclusions = qm9.load_exclusions(args.exclusions) if args.exclusions else None
    molecules, failures = qm9.load_directory(xyz_dir, exclusions)
    client = client_factory(args.cache_dir, args.rate)
    entries, excluded = datasets.build_entries(molecules, client)

    dataset_path = out_dir / "dataset.jsonl"
    datasets.save_dataset(dataset_path, entries)
    datasets.write_description_manifest(out_dir / "descriptions.jsonl", entries)
    qm9.write_manifest(out_dir / "molecules.jsonl", molecules)

    manifest = RunManifest.build(
        config={"command": "build-dataset", "xyz_dir": str(xyz_dir), "rate": args.rate},
        dataset_hash=datasets.dataset_content_hash(dataset_path),
        cache_snapshot_id=client.cache.snapshot_id(),
    )
    manifest.add_artifact("dataset.jsonl", dataset_path)
    manifest.add_artifact("descriptions.jsonl", out_dir / "descriptions.jsonl")
    manifest.write(out_dir / "manifest.json")

    reasons = Counter(e.reason for e in excluded)
    for name, _err in failures:
        reasons["parse-error"] += 1
    print(f"{len(entries)} included, {len(excluded) + len(failures)} excluded -> {dataset_path}")
    for reason in sorted(reasons):
        print(f"  {reason}: {reasons[reason]}")
    if reasons.get("network-exhausted"):
        print("network budget exhausted; rerun to resume from cache.", file=sys.stderr)
        return EXIT_ENVIRONMENT
    return EXIT_OK


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    raw = _load_config(args.config)
    cfg, merged = _resolve_train_config(raw, args, need_modality=True)
    out_dir = Path(merged.get("out", "runs/train"))
    out_dir.mkdir(parents=True, exist_ok=True)
    samples, embedding_hash = _prepare_samples(cfg, merged)

    folds = training.split_folds(len(samples), cfg.folds, cfg.seed)
    outcomes = training.cross_validate(cfg, samples, run_seed=cfg.seed, folds=folds,
                                       keep_models=True)
    rows = [training.AblationRow(cfg.target.value, cfg.modality, cfg.seed, o.fold, o.mae)
            for o in outcomes]

    csv_path = out_dir / "results.csv"
    training.write_rows_csv(csv_path, rows)

    arrays = {}
    for o in outcomes:
        for name, data in o.model.export_arrays().items():
            arrays[f"fold{o.fold}/{name}"] = data
    manifest = RunManifest.build(
        config=merged,
        dataset_hash=datasets.dataset_content_hash(merged["dataset"]),
        embedding_source=cfg.embedding_source,
        embedding_file_hash=embedding_hash,
    )
    checkpoint_path = out_dir / "checkpoint.bin"
    save_checkpoint(checkpoint_path, arrays, config={
        "n": cfg.encoder.n_hidden, "K": cfg.encoder.n_rbf, "T": cfg.encoder.n_iterations,
        "cutoff": cfg.rbf.cutoff, "text_dim": cfg.text_dim, "modality": cfg.modality,
        "target": cfg.target.value, "manifest_id": manifest.manifest_id,
    })
    manifest.add_artifact("results.csv", csv_path)
    manifest.add_artifact("checkpoint.bin", checkpoint_path)
    manifest.write(out_dir / "manifest.json")

    mean_mae = float(np.mean([o.mae for o in outcomes]))
    print(f"target={cfg.target.value} modality={cfg.modality} "
          f"fold MAEs={[round(o.mae, 6) for o in outcomes]} mean={mean_mae:.6g}")
    print(f"artifacts: {csv_path}, {checkpoint_path}, {out_dir / 'manifest.json'}")
    return EXIT_OK


# ------------------------------------------------------------------ ablate

def cmd_ablate(args) -> int:
    raw = _load_config(args.config)
    cfg, merged = _resolve_train_config(raw, args, need_modality=False)
    target_names = merged.get("targets") or [merged.get("target", "homo")]
    targets = [_parse_target(name) for name in target_names]
    out_dir = Path(merged.get("out", "runs/ablate"))
    out_dir.mkdir(parents=True, exist_ok=True)
    samples, embedding_hash = _prepare_samples(cfg, merged)

    result = training.run_ablation(samples, targets, cfg)

    csv_path = out_dir / "report.csv"
    training.write_rows_csv(csv_path, result.rows)
    problems = report_mod.verify_summaries(result.rows, result.summaries)
    if problems:
        for p in problems:
            print(f"error: report verification failed: {p}", file=sys.stderr)
        return EXIT_CONFIG

    summary_text = report_mod.render_summary_table(
        result.summaries, result.parameter_counts, result.runs_note, result.fold_hash)
    (out_dir / "summary.txt").write_text(summary_text, encoding="utf-8")
    (out_dir / "report.json").write_text(result.to_json() + "\n", encoding="utf-8")
    for target_name, gates in result.gates.items():
        np.savetxt(out_dir / f"gates_{target_name}.csv", gates, fmt="%.17g", header="gate", comments="# ")

    arrays = {}
    for (target_name, modality), model in result.models.items():
        if model is None:
            continue
        for name, data in model.export_arrays().items():
            arrays[f"{target_name}/{modality}/{name}"] = data
    manifest = RunManifest.build(
        config=merged,
        dataset_hash=datasets.dataset_content_hash(merged["dataset"]),
        embedding_source=cfg.embedding_source,
        embedding_file_hash=embedding_hash,
    )
    checkpoint_path = out_dir / "checkpoint.bin"
    save_checkpoint(checkpoint_path, arrays, config={
        "n": cfg.encoder.n_hidden, "K": cfg.encoder.n_rbf, "T": cfg.encoder.n_iterations,
        "cutoff": cfg.rbf.cutoff, "text_dim": cfg.text_dim,
        "targets": [t.value for t in targets], "manifest_id": manifest.manifest_id,
    })
    manifest.add_artifact("report.csv", csv_path)
    manifest.add_artifact("summary.txt", out_dir / "summary.txt")
    manifest.add_artifact("checkpoint.bin", checkpoint_path)
    manifest.write(out_dir / "manifest.json")

    print(summary_text)
    print(f"artifacts in {out_dir}")
    return EXIT_OK


# ------------------------------------------------------------------ report

def cmd_report(args) -> int:
    rows = []
    gate_files = []
    for csv_path in args.csv:
        rows.extend(training.read_rows_csv(csv_path))
        gate_files.extend(sorted(Path(csv_path).parent.glob("gates_*.csv")))
    summaries = report_mod.summaries_from_rows(rows)
    problems = report_mod.verify_summaries(rows, summaries)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    text = report_mod.render_summary_table(summaries)
    print(text)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.txt").write_text(text, encoding="utf-8")
        report_mod.plot_mae_bars(summaries, out_dir / "mae_bars.png")
        for gate_file in gate_files:
            target = gate_file.stem.replace("gates_", "")
            gates = np.loadtxt(gate_file)
            report_mod.plot_gate_histogram(gates, out_dir / f"gate_hist_{target}.png", target)
        print(f"plots in {out_dir}")
    return EXIT_OK


# ------------------------------------------------------------------ embed-check

def cmd_embed_check(args) -> int:
    if not Path(args.embeddings).exists():
        print(f"error: embedding file not found: {args.embeddings}", file=sys.stderr)
        return EXIT_CONFIG
    if not Path(args.dataset).exists():
        print(f"error: dataset file not found: {args.dataset}", file=sys.stderr)
        return EXIT_CONFIG
    records = load_embeddings(args.embeddings)
    entries = datasets.load_dataset(args.dataset)
    missing, mismatched = [], []
    for e in entries:
        record = records.get(e.cid)
        if record is None:
            missing.append(e.cid)
            continue
        if record.text_sha256 != text_sha256(e.description):
            mismatched.append(e.cid)
    print(f"{len(records)} embedding records, {len(entries)} dataset entries: "
          f"{len(missing)} missing, {len(mismatched)} checksum mismatches")
    if missing or mismatched:
        if missing:
            print(f"  missing cids: {missing[:10]}{' ...' if len(missing) > 10 else ''}", file=sys.stderr)
        if mismatched:
            print(f"  mismatched cids: {mismatched[:10]}{' ...' if len(mismatched) > 10 else ''}",
                  file=sys.stderr)
        return EXIT_CONFIG
    print("embedding file is consistent with the dataset descriptions")
    return EXIT_OK


# ------------------------------------------------------------------ wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molfuse",
                                     description="Multimodal molecular property prediction pipeline")
    parser.add_argument("--version", action="version", version=f"molfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fetch = sub.add_parser("fetch", help="warm the PubChem descriptor cache for an XYZ directory")
    fetch.add_argument("--xyz-dir", required=True)
    fetch.add_argument("--cache-dir", required=True)
    fetch.add_argument("--rate", type=float, default=DEFAULT_RATE_LIMIT,
                       help="request ceiling per second")
    fetch.add_argument("--exclusions", default=None,
                       help="file of molecule ids to skip (unconverged list)")
    fetch.set_defaults(func=cmd_fetch)

    build = sub.add_parser("build-dataset", help="parse XYZ files and join cached descriptors")
    build.add_argument("--xyz-dir", required=True)
    build.add_argument("--cache-dir", required=True)
    build.add_argument("--rate", type=float, default=DEFAULT_RATE_LIMIT)
    build.add_argument("--exclusions", default=None)
    build.add_argument("--out", required=True, help="output directory")
    build.set_defaults(func=cmd_build_dataset)

    def add_run_flags(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--profile", choices=sorted(PROFILES), default=None)
        p.add_argument("--embeddings", default=None)
        p.add_argument("--out", default=None)

    trn = sub.add_parser("train", help="cross-validate one target/modality")
    add_run_flags(trn)
    trn.set_defaults(func=cmd_train)

    abl = sub.add_parser("ablate", help="paired geometry-only vs multimodal report")
    add_run_flags(abl)
    abl.set_defaults(func=cmd_ablate)

    rep = sub.add_parser("report", help="aggregate result CSVs into a summary table and plots")
    rep.add_argument("csv", nargs="+")
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)

    chk = sub.add_parser("embed-check", help="validate an embedding file against dataset descriptions")
    chk.add_argument("--embeddings", required=True)
    chk.add_argument("--dataset", required=True)
    chk.set_defaults(func=cmd_embed_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReportSchemaError, EmbeddingFormatError, qm9.ParseError,
            qm9.UnsupportedTargetError, qm9.DegenerateTargetError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (RateLimitExhausted, NetworkError) as err:
        print(f"network error: {err}", file=sys.stderr)
        print("the cache kept completed records; rerun the same command to resume.", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
