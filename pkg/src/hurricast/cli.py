"""Command-line entry points.

Commands: synth | ingest | train | extract | predict | ensemble | evaluate |
decompose. Every run is reproducible under a fixed seed; output CSVs carry
provenance comment lines; an output directory accepts one writer at a time
(lock file).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, pipeline
from .casestore import filter_split, load_case_store, save_case_store
from .config import RunConfig
from .errors import ConfigError, HurricastError
from .forecasts import (iso_utc, read_forecast_csv, read_operational_csv,
                        write_forecast_csv)
from .storm_data import build_cases, interpolate_to_3h, parse_track_csv, \
    select_storms, split_by_year
from .synthetic import generate_synthetic
from .tensor_ops import DirectoryCubeStore, read_hcub, tucker, reconstruct


@contextlib.contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if stale)")
    try:
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.set("run.seed", args.seed)
    return config


def _provenance(config: RunConfig, command: str) -> list[str]:
    return [f"generated-by: hurricast {command}",
            f"seed: {config.get('run.seed')}",
            f"config-hash: {config.digest()}"]


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = _load_config(args)
    for key, flag in (("synth.storms", args.storms), ("synth.steps", args.steps),
                      ("synth.signal", args.signal), ("synth.noise_sd", args.noise_sd)):
        if flag is not None:
            config.set(key, flag)
    out = Path(args.out)
    with output_lock(out):
        summary = generate_synthetic(config.synthetic_spec(), out)
        config.write_effective(out / "config.effective")
    print(f"synth: {summary['storms']} storms, {summary['cases']} case points, "
          f"intensity floor {summary['floors']['intensity_mae_kt']:.2f} kt")
    return 0


def cmd_ingest(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    store = DirectoryCubeStore(args.cubes) if args.cubes else None
    with output_lock(out):
        parsed = parse_track_csv(args.tracks)
        for rejection in parsed.rejected:
            print(f"ingest: rejected {rejection}", file=sys.stderr)
        tracks = [interpolate_to_3h(t) for t in parsed]
        selected = select_storms(tracks)
        cases = []
        skipped_cube = 0
        skipped_values = 0
        for track in selected:
            built = build_cases(track, store)
            cases.extend(built.cases)
            skipped_cube += built.skipped_missing_cube
            skipped_values += built.skipped_missing_values
        split = split_by_year(cases, **config.split_years())
        save_case_store(out / "cases.npz", cases)
        config.write_effective(out / "config.effective")
    print(f"ingest: {len(parsed)} storms parsed, {len(selected)} selected, "
          f"{len(cases)} cases (skipped: {skipped_cube} missing cube, "
          f"{skipped_values} missing values); split "
          f"train={len(split.train)} val={len(split.val)} test={len(split.test)} "
          f"excluded={len(split.excluded)}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    cases = load_case_store(args.store)
    train_cases = filter_split(cases, "train")
    val_cases = filter_split(cases, "val")
    store = DirectoryCubeStore(args.cubes) if args.cubes else None
    pconfig = config.pipeline_config(variant=args.variant)
    with output_lock(out):
        bundle = pipeline.train_variant(train_cases, val_cases, pconfig, store,
                                        cache_dir=args.cache)
        bundle_path = out / f"huml{pconfig.variant}.bundle"
        pipeline.save_bundle(bundle, bundle_path)
        with open(out / f"huml{pconfig.variant}_train.json", "w", encoding="utf-8") as fh:
            json.dump(bundle.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        config.write_effective(out / "config.effective")
    scores = bundle.meta["validation_mae"]
    print(f"train: {bundle.name} -> {bundle_path} "
          f"(val MAE: intensity {scores['intensity']:.3f} kt, "
          f"dlat {scores['dlat']:.4f}, dlon {scores['dlon']:.4f})")
    return 0


def _require_bundle(path) -> pipeline.ModelBundle:
    if not Path(path).exists():
        raise ConfigError(f"no trained bundle at {path}; run `hurricast train` first")
    return pipeline.load_bundle(path)


def cmd_extract(args) -> int:
    config = _load_config(args)
    bundle = _require_bundle(args.bundle)
    cases = filter_split(load_case_store(args.store), args.split)
    store = DirectoryCubeStore(args.cubes) if args.cubes else None
    embeddings = pipeline.compute_embeddings(bundle, cases, store, args.cache)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        for line in _provenance(config, "extract"):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["sid", "iso_t0"] + [f"e{i}" for i in range(embeddings.shape[1])])
        for case, row in zip(cases, embeddings):
            writer.writerow([case.storm_id, iso_utc(case.t0)]
                            + [f"{v:.8g}" for v in row])
    print(f"extract: {len(cases)} embeddings of length {embeddings.shape[1]} -> {out}")
    return 0


def cmd_predict(args) -> int:
    config = _load_config(args)
    bundle = _require_bundle(args.bundle)
    cases = filter_split(load_case_store(args.store), args.split)
    if not cases:
        raise ConfigError(f"no cases in split {args.split!r}")
    store = DirectoryCubeStore(args.cubes) if args.cubes else None
    records = pipeline.predict_cases(bundle, cases, store, args.cache)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_forecast_csv(out, records, _provenance(config, "predict"))
    print(f"predict: {len(records)} forecasts from {bundle.name} -> {out}")
    return 0


def cmd_ensemble(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    cases = load_case_store(args.store)
    with output_lock(out):
        if args.mode == "elastic":
            if not args.bundles:
                raise ConfigError("--bundles required for elastic mode")
            store = DirectoryCubeStore(args.cubes) if args.cubes else None
            val_cases = filter_split(cases, "val")
            test_cases = filter_split(cases, "test")
            bundles = [_require_bundle(p) for p in args.bundles]
            val_forecasts = {}
            test_forecasts = {}
            for bundle in bundles:
                val_forecasts[bundle.name] = pipeline.predict_cases(
                    bundle, val_cases, store, args.cache)
                test_forecasts[bundle.name] = pipeline.predict_cases(
                    bundle, test_cases, store, args.cache)
                write_forecast_csv(
                    out / f"base_huml{bundle.variant}_test.csv",
                    test_forecasts[bundle.name], _provenance(config, "ensemble"))
            ensemble = pipeline.train_huml_ensemble(
                val_forecasts, val_cases, seed=config.get("run.seed"),
                grid_search=not args.no_grid_search)
            records = ensemble.predict_records(test_forecasts, test_cases)
            write_forecast_csv(out / "huml5_test.csv", records,
                               _provenance(config, "ensemble"))
            weights = {
                target: {"members": ensemble.members,
                         "coefficients": ensemble.models[target].coefficients.tolist(),
                         "intercept": ensemble.models[target].intercept,
                         "alpha": ensemble.configs[target].alpha,
                         "l1_ratio": ensemble.configs[target].l1_ratio}
                for target in ensemble.models}
            with open(out / "ensemble_weights.json", "w", encoding="utf-8") as fh:
                json.dump(weights, fh, indent=2, sort_keys=True)
                fh.write("\n")
            print(f"ensemble: fitted on {len(val_cases)} val cases, "
                  f"{len(records)} test forecasts -> {out / 'huml5_test.csv'}")
        else:
            if not (args.forecasts and args.ops):
                raise ConfigError("--forecasts and --ops required for average mode")
            split_cases = filter_split(cases, args.split)
            huml = read_forecast_csv(args.forecasts, model="HUML")
            ops = read_operational_csv(args.ops)
            keys = {c.key for c in split_cases}
            huml_keys = {f.key for f in huml}
            averaged = pipeline.huml_op_average(
                huml, ops, [c for c in split_cases if c.key in huml_keys & keys])
            write_forecast_csv(out / "huml6.csv", averaged,
                               _provenance(config, "ensemble"))
            print(f"ensemble: {len(averaged)} averaged forecasts -> {out / 'huml6.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    if args.fixtures:
        rows = evaluation.load_fixture_rows(
            None if args.fixtures == "builtin" else args.fixtures)
        checks = evaluation.verify_fixture_skills(rows)
        bad = [c for c in checks if not c.ok]
        for c in checks:
            status = "ok " if c.ok else "FAIL"
            print(f"{status} {c.row.table:>21} {c.row.basin} {c.row.model:<34} "
                  f"mae={c.row.mae:<7g} skill={c.row.skill:<6g} "
                  f"computed={c.computed:.2f} (tol {c.tolerance})")
        print(f"evaluate: {len(checks) - len(bad)}/{len(checks)} skill entries reproduced")
        return 1 if bad else 0

    if not (args.store and args.forecasts):
        raise ConfigError("evaluate needs --store and --forecasts (or --fixtures)")
    cases = filter_split(load_case_store(args.store), args.split)
    by_model = {}
    for item in args.forecasts:
        name, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--forecasts takes name=path, got {item!r}")
        by_model[name] = read_forecast_csv(path, model=name)
    baseline_records = by_model.get(args.baseline) if args.baseline else None
    reports = {"intensity": [], "track": []}
    for name, records in by_model.items():
        base = baseline_records if name != args.baseline else None
        reports["intensity"].append(evaluation.evaluate_intensity(
            records, cases, model=name, basin=args.basin,
            baseline_forecasts=base, baseline=args.baseline))
        reports["track"].append(evaluation.evaluate_track(
            records, cases, model=name, basin=args.basin,
            baseline_forecasts=base, baseline=args.baseline))
    out = Path(args.out) if args.out else None
    for task in ("intensity", "track"):
        if args.task not in (task, "both"):
            continue
        table = evaluation.build_comparison_table(reports[task], args.baseline or "")
        print(f"[{task}]")
        print(table.to_text())
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            with open(out / f"comparison_{task}.csv", "w", encoding="utf-8") as fh:
                for line in _provenance(config, "evaluate"):
                    fh.write(f"# {line}\n")
                fh.write(table.to_csv_text())
    return 0


def cmd_decompose(args) -> int:
    tensor = read_hcub(args.cube)
    ranks = tuple(min(r, d) for r, d in zip(
        tuple(int(x) for x in args.ranks.split(",")), tensor.shape))
    decomposition = tucker(tensor, ranks)
    approx = reconstruct(decomposition)
    tensor_norm = float(np.linalg.norm(tensor))
    rel_err = (float(np.linalg.norm(tensor - approx)) / tensor_norm
               if tensor_norm else 0.0)
    print(f"dims: {tensor.shape}, ranks: {ranks}")
    print(f"tensor norm: {tensor_norm:.6g}, core norm: "
          f"{float(np.linalg.norm(decomposition.core)):.6g}")
    print(f"reconstruction relative error: {rel_err:.3e}")
    for n, u in enumerate(decomposition.factors, start=1):
        resid = float(np.abs(u.T @ u - np.eye(u.shape[1])).max())
        print(f"mode {n}: factor {u.shape}, orthonormality residual {resid:.2e}")
    flat = decomposition.core.reshape(-1)
    top = np.argsort(-np.abs(flat))[:5]
    entries = ", ".join(f"[{i}]={flat[i]:.4g}" for i in top)
    print(f"top core entries: {entries}")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hurricast",
        description="Multimodal tropical-cyclone forecasting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="key=value configuration file")
        if seed:
            p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--storms", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--signal", choices=["statistical", "vision", "both"])
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse tracks and build the case store")
    common(p)
    p.add_argument("--tracks", required=True)
    p.add_argument("--cubes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one pipeline variant")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--cubes")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", type=int, required=True)
    p.add_argument("--cache", help="embedding cache directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="dump embeddings for cases")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--cubes")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("predict", help="emit forecast CSV from a bundle")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--cubes")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="meta-ensemble or consensus average")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["elastic", "average"], default="elastic")
    p.add_argument("--bundles", nargs="*")
    p.add_argument("--cubes")
    p.add_argument("--cache")
    p.add_argument("--no-grid-search", action="store_true")
    p.add_argument("--forecasts", help="HUML forecast CSV (average mode)")
    p.add_argument("--ops", help="operational members CSV (average mode)")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evaluate", help="comparison tables / fixture skills")
    common(p)
    p.add_argument("--fixtures", help="fixture CSV path, or 'builtin'")
    p.add_argument("--store")
    p.add_argument("--forecasts", nargs="*", help="name=path pairs")
    p.add_argument("--baseline")
    p.add_argument("--basin", default="ALL")
    p.add_argument("--task", choices=["intensity", "track", "both"], default="both")
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decompose", help="run the tensor decomposition on one cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--ranks", default="3,5,3,3")
    p.set_defaults(func=cmd_decompose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (HurricastError, FileNotFoundError, ValueError) as exc:
        print(f"hurricast {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
