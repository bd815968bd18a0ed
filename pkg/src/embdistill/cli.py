"""Command-line entry point.

Subcommands: ingest, tile, distill, eval-knn, cka, robustness. Settings
resolve as flags > --config JSON file > built-in defaults. Every run
writes its JSON report/outputs atomically plus a run.json manifest
(resolved config, input/output checksums, tool version, duration).

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""

import argparse
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from ._parallel import map_ordered
from .augment import AugmentConfig, augment_pipeline, tile_image
from .distill.persist import save_head, save_student
from .distill.trainer import DistillConfig, run_distillation
from .errors import DataValidationError, NumericalError
from .evalbench import BenchConfig, run_benchmark
from .fileio import atomic_write_bytes, atomic_write_text, checksum_file
from .rng import make_rng
from .robustness import RobustnessConfig, robustness_cv
from .similarity import cka_report_sets
from .store import EmbeddingSet, align_pairs, ingest_csv, read_embedding_set, write_embedding_set


class UsageError(Exception):
    """Bad flags or config values; maps to exit code 1."""


# ---------------------------------------------------------------------------
# JSON helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
    return obj


def _dump_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    # a previous run's report or manifest works as a config file
    if isinstance(doc.get("config"), dict):
        doc = doc["config"]
    return doc


def _merge_config(defaults: dict, args: argparse.Namespace) -> dict:
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            if key not in merged:
                raise UsageError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(merged))}")
            merged[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require(merged: dict, *names):
    for name in names:
        if merged[name] is None:
            raise UsageError(f"missing required setting --{name.replace('_', '-')}")


# ---------------------------------------------------------------------------
# checksums and the run manifest


def _input_checksum(path) -> str:
    if os.path.isdir(path):
        return checksum_file(os.path.join(path, "emb.bin"))
    return checksum_file(path)


def _write_manifest(manifest_dir, subcommand, config: dict, inputs, outputs, started: float):
    manifest = {
        "tool": "embdistill",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "seed": config.get("seed"),
        "input_checksums": {str(p): _input_checksum(p) for p in inputs},
        "output_checksums": {str(p): checksum_file(p) for p in outputs},
        "outputs": [str(p) for p in outputs],
        "duration_seconds": time.time() - started,
    }
    atomic_write_text(os.path.join(manifest_dir, "run.json"), _dump_json(manifest))


def _write_report(path, doc):
    atomic_write_text(path, _dump_json(doc))


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args):
    started = time.time()
    defaults = {"csv": None, "out": None, "class_names": "", "provenance": "", "seed": 0}
    cfg = _merge_config(defaults, args)
    _require(cfg, "csv", "out")
    class_names = [c for c in str(cfg["class_names"]).split(",") if c] if cfg["class_names"] else []
    es = ingest_csv(cfg["csv"], class_names=class_names, provenance=str(cfg["provenance"]))
    write_embedding_set(es, cfg["out"])
    outputs = [os.path.join(cfg["out"], f) for f in ("emb.bin", "meta.jsonl", "manifest.json")]
    _write_manifest(cfg["out"], "ingest", cfg, [cfg["csv"]], outputs, started)
    print(f"ingest: wrote {es.n} rows x {es.d} dims -> {cfg['out']}")


def _augment_defaults() -> dict:
    d = asdict(AugmentConfig())
    d["blur_sigma_min"], d["blur_sigma_max"] = d.pop("blur_sigma")
    return d


def cmd_tile(args):
    started = time.time()
    defaults = {"image": None, "out": None, "augment": False, "threads": 1}
    defaults.update(_augment_defaults())
    cfg = _merge_config(defaults, args)
    _require(cfg, "image", "out")
    from PIL import Image

    aug_cfg = AugmentConfig(
        tile=int(cfg["tile"]),
        crop=int(cfg["crop"]),
        p_hflip=cfg["p_hflip"],
        p_vflip=cfg["p_vflip"],
        p_jitter=cfg["p_jitter"],
        brightness=cfg["brightness"],
        contrast=cfg["contrast"],
        saturation=cfg["saturation"],
        hue=cfg["hue"],
        p_blur=cfg["p_blur"],
        blur_kernel=int(cfg["blur_kernel"]),
        blur_sigma=(cfg["blur_sigma_min"], cfg["blur_sigma_max"]),
        fg_saturation_threshold=cfg["fg_saturation_threshold"],
        fg_min_fraction=cfg["fg_min_fraction"],
        seed=int(cfg["seed"]),
    ).validate()

    image_paths = cfg["image"] if isinstance(cfg["image"], list) else [cfg["image"]]
    os.makedirs(cfg["out"], exist_ok=True)
    patches = []  # (file name, source image, x, y, pixels)
    index = 0
    for i, image_path in enumerate(image_paths):
        img = np.asarray(Image.open(image_path).convert("RGB"))
        stem = os.path.splitext(os.path.basename(image_path))[0]
        for pixels, (x, y) in tile_image(
            img, aug_cfg.tile, aug_cfg.fg_saturation_threshold, aug_cfg.fg_min_fraction
        ):
            patches.append([f"{i:03d}_{stem}_x{x}_y{y}.png", image_path, x, y, pixels, index])
            index += 1

    def render(patch):
        name, _, _, _, pixels, idx = patch
        if cfg["augment"]:
            pixels = augment_pipeline(pixels, aug_cfg, make_rng(aug_cfg.seed, idx))
        buf = io.BytesIO()
        Image.fromarray(pixels).save(buf, format="PNG")
        return name, buf.getvalue()

    rendered = map_ordered(render, patches, threads=int(cfg["threads"]))
    outputs = []
    for name, payload in rendered:
        path = os.path.join(cfg["out"], name)
        atomic_write_bytes(path, payload)
        outputs.append(path)

    coords = {
        "tile": aug_cfg.tile,
        "augmented": bool(cfg["augment"]),
        "patches": [
            {"file": name, "image": str(src), "x": x, "y": y}
            for name, src, x, y, _, _ in patches
        ],
    }
    coords_path = os.path.join(cfg["out"], "coords.json")
    _write_report(coords_path, coords)
    outputs.append(coords_path)
    _write_manifest(cfg["out"], "tile", cfg, image_paths, outputs, started)
    print(f"tile: kept {len(patches)} patches from {len(image_paths)} image(s) -> {cfg['out']}")


def cmd_distill(args):
    started = time.time()
    defaults = {"student": None, "teacher": None, "out": None, "emit_projected": None, "threads": 1}
    dc = asdict(DistillConfig())
    dc["student_hidden"] = ",".join(str(h) for h in dc["student_hidden"])
    defaults.update(dc)
    cfg = _merge_config(defaults, args)
    _require(cfg, "student", "teacher", "out")

    hidden_raw = cfg["student_hidden"]
    if isinstance(hidden_raw, str):
        hidden = tuple(int(h) for h in hidden_raw.split(",") if h)
    else:
        hidden = tuple(int(h) for h in hidden_raw)
    config = DistillConfig(
        alpha=int(cfg["alpha"]),
        eps_loss=float(cfg["eps_loss"]),
        batch_size=int(cfg["batch_size"]),
        lr_start=float(cfg["lr_start"]),
        lr_end=float(cfg["lr_end"]),
        wd_start=float(cfg["wd_start"]),
        wd_end=float(cfg["wd_end"]),
        total_steps=None if cfg["total_steps"] is None else int(cfg["total_steps"]),
        beta1=float(cfg["beta1"]),
        beta2=float(cfg["beta2"]),
        eps_adam=float(cfg["eps_adam"]),
        window=int(cfg["window"]),
        max_violations=int(cfg["max_violations"]),
        violation_mode=str(cfg["violation_mode"]),
        bn_momentum=float(cfg["bn_momentum"]),
        bn_eps=float(cfg["bn_eps"]),
        seed=int(cfg["seed"]),
        student_arch=str(cfg["student_arch"]),
        student_hidden=hidden,
    ).validate()

    student_set = read_embedding_set(cfg["student"])
    teacher_set = read_embedding_set(cfg["teacher"])
    aligned = align_pairs(student_set, teacher_set)
    Zs = np.asarray(student_set.data, dtype=np.float64)[aligned.first_rows()]
    Zt = np.asarray(teacher_set.data, dtype=np.float64)[aligned.second_rows()]
    result = run_distillation(Zs, Zt, config)

    os.makedirs(cfg["out"], exist_ok=True)
    save_head(result.head, cfg["out"])
    save_student(result.student, cfg["out"])
    trace_path = os.path.join(cfg["out"], "trace.jsonl")
    atomic_write_text(
        trace_path, "".join(json.dumps(_jsonable(rec)) + "\n" for rec in result.trace_records())
    )
    report = {
        "steps": result.steps,
        "stopped_early": result.stopped_early,
        "initial_loss": result.losses[0] if result.losses else None,
        "final_loss": result.losses[-1] if result.losses else None,
        "n_pairs": len(aligned.pairs),
        "n_student_unmatched": aligned.n_first_unmatched,
        "n_teacher_unmatched": aligned.n_second_unmatched,
        "config": cfg,
    }
    report_path = os.path.join(cfg["out"], "report.json")
    _write_report(report_path, report)

    outputs = [
        os.path.join(cfg["out"], name)
        for name in sorted(f for f in os.listdir(cfg["out"]) if f != "run.json")
    ]
    inputs = [cfg["student"], cfg["teacher"]]

    if cfg["emit_projected"]:
        features = result.student(Zs)
        projected = result.head(features, train=False)
        meta = [student_set.meta[i] for i in aligned.first_rows()]
        projected_set = EmbeddingSet(
            data=projected,
            meta=meta,
            class_names=student_set.class_names,
            provenance=f"projection of {cfg['student']} onto {cfg['teacher']} (seed {config.seed})",
        )
        write_embedding_set(projected_set, cfg["emit_projected"])
        outputs += [
            os.path.join(cfg["emit_projected"], f) for f in ("emb.bin", "meta.jsonl", "manifest.json")
        ]

    _write_manifest(cfg["out"], "distill", cfg, inputs, outputs, started)
    final = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
    print(f"distill: steps={result.steps} stopped_early={result.stopped_early} final_loss={final}")


def cmd_eval_knn(args):
    started = time.time()
    defaults = {"set": None, "out": None, "threads": 1}
    defaults.update(asdict(BenchConfig()))
    cfg = _merge_config(defaults, args)
    _require(cfg, "set", "out")
    config = BenchConfig(
        n_components=int(cfg["n_components"]),
        k=int(cfg["k"]),
        n_repeats=int(cfg["n_repeats"]),
        train_fraction=float(cfg["train_fraction"]),
        level=str(cfg["level"]),
        seed=int(cfg["seed"]),
    ).validate()
    es = read_embedding_set(cfg["set"])
    result = run_benchmark(es, config, threads=int(cfg["threads"]))
    report = result.to_json_obj()
    report["config"] = cfg
    _write_report(cfg["out"], report)
    _write_manifest(os.path.dirname(os.path.abspath(cfg["out"])), "eval-knn", cfg, [cfg["set"]], [cfg["out"]], started)
    print(f"eval-knn: mean={result.mean:.4f} std={result.std:.4f} -> {cfg['out']}")


def cmd_cka(args):
    started = time.time()
    defaults = {
        "first": None,
        "second": None,
        "out": None,
        "n_subsamples": 10,
        "subsample_size": None,
        "seed": 0,
        "threads": 1,
    }
    cfg = _merge_config(defaults, args)
    _require(cfg, "first", "second", "out")
    first = read_embedding_set(cfg["first"])
    second = read_embedding_set(cfg["second"])
    report_obj = cka_report_sets(
        first,
        second,
        n_subsamples=int(cfg["n_subsamples"]),
        subsample_size=None if cfg["subsample_size"] is None else int(cfg["subsample_size"]),
        seed=int(cfg["seed"]),
        threads=int(cfg["threads"]),
    )
    report = report_obj.to_json_obj()
    report["config"] = cfg
    _write_report(cfg["out"], report)
    _write_manifest(
        os.path.dirname(os.path.abspath(cfg["out"])), "cka", cfg, [cfg["first"], cfg["second"]], [cfg["out"]], started
    )
    print(f"cka: mean={report_obj.mean:.4f} std={report_obj.std:.4f} -> {cfg['out']}")


def cmd_robustness(args):
    started = time.time()
    defaults = {"set": None, "out": None, "threads": 1}
    defaults.update(asdict(RobustnessConfig()))
    cfg = _merge_config(defaults, args)
    _require(cfg, "set", "out")
    config = RobustnessConfig(
        per_class=int(cfg["per_class"]),
        k_neighbors=int(cfg["k_neighbors"]),
        n_folds=int(cfg["n_folds"]),
        seed=int(cfg["seed"]),
    ).validate()
    es = read_embedding_set(cfg["set"])
    result = robustness_cv(es, config, threads=int(cfg["threads"]))
    report = result.to_json_obj()
    report["config"] = cfg
    _write_report(cfg["out"], report)
    _write_manifest(os.path.dirname(os.path.abspath(cfg["out"])), "robustness", cfg, [cfg["set"]], [cfg["out"]], started)
    print(f"robustness: mean={result.mean:.4f} std={result.std:.4f} -> {cfg['out']}")


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--config", help="JSON file of settings (flags take precedence)")
    p.add_argument("--seed", type=int, help="64-bit seed for all randomness")
    p.add_argument("--threads", type=int, help="parallel workers for independent units")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embdistill",
        description="Embedding distillation and evaluation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"embdistill {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="build an embedding set from a CSV file")
    p.add_argument("--csv", help="input CSV: sample_id,bag_id,label,center_id,tissue_class,v0..vD")
    p.add_argument("--out", help="output embedding-set directory")
    p.add_argument("--class-names", dest="class_names", help="comma-separated label vocabulary")
    p.add_argument("--provenance", help="free-text origin note stored in the manifest")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tile", help="cut foreground patches out of RGB images")
    p.add_argument("--image", nargs="+", help="input image path(s)")
    p.add_argument("--out", help="output directory for patches + coords.json")
    p.add_argument("--tile", type=int, help="tile side in pixels")
    p.add_argument("--fg-saturation-threshold", dest="fg_saturation_threshold", type=float)
    p.add_argument("--fg-min-fraction", dest="fg_min_fraction", type=float)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, help="apply the augmentation pipeline per patch")
    p.add_argument("--crop", type=int, help="crop side used when augmenting")
    p.add_argument("--p-hflip", dest="p_hflip", type=float)
    p.add_argument("--p-vflip", dest="p_vflip", type=float)
    p.add_argument("--p-jitter", dest="p_jitter", type=float)
    p.add_argument("--brightness", type=float)
    p.add_argument("--contrast", type=float)
    p.add_argument("--saturation", type=float)
    p.add_argument("--hue", type=float)
    p.add_argument("--p-blur", dest="p_blur", type=float)
    p.add_argument("--blur-kernel", dest="blur_kernel", type=int)
    p.add_argument("--blur-sigma-min", dest="blur_sigma_min", type=float)
    p.add_argument("--blur-sigma-max", dest="blur_sigma_max", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("distill", help="fit a projection head aligning one set onto another")
    p.add_argument("--student", help="source embedding-set directory")
    p.add_argument("--teacher", help="target embedding-set directory")
    p.add_argument("--out", help="output directory for the trained head + trace")
    p.add_argument("--emit-projected", dest="emit_projected", help="also write head(student) as a new set here")
    p.add_argument("--alpha", type=int)
    p.add_argument("--eps-loss", dest="eps_loss", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-start", dest="lr_start", type=float)
    p.add_argument("--lr-end", dest="lr_end", type=float)
    p.add_argument("--wd-start", dest="wd_start", type=float)
    p.add_argument("--wd-end", dest="wd_end", type=float)
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps-adam", dest="eps_adam", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--max-violations", dest="max_violations", type=int)
    p.add_argument("--violation-mode", dest="violation_mode", choices=["cumulative", "consecutive"])
    p.add_argument("--bn-momentum", dest="bn_momentum", type=float)
    p.add_argument("--bn-eps", dest="bn_eps", type=float)
    p.add_argument("--student-arch", dest="student_arch", choices=["identity", "mlp"])
    p.add_argument("--student-hidden", dest="student_hidden", help="comma-separated hidden widths for the mlp student")
    _add_common(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval-knn", help="PCA + kNN accuracy benchmark over repeated splits")
    p.add_argument("--set", help="embedding-set directory")
    p.add_argument("--out", help="output JSON report path")
    p.add_argument("--level", choices=["patch", "bag"])
    p.add_argument("--n-components", dest="n_components", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n-repeats", dest="n_repeats", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_eval_knn)

    p = sub.add_parser("cka", help="linear CKA similarity between two sets")
    p.add_argument("--first", help="first embedding-set directory")
    p.add_argument("--second", help="second embedding-set directory")
    p.add_argument("--out", help="output JSON report path")
    p.add_argument("--n-subsamples", dest="n_subsamples", type=int)
    p.add_argument("--subsample-size", dest="subsample_size", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_cka)

    p = sub.add_parser("robustness", help="tissue-over-center neighbor consistency index")
    p.add_argument("--set", help="embedding-set directory")
    p.add_argument("--out", help="output JSON report path")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--n-folds", dest="n_folds", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_robustness)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        args.func(args)
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    # DataValidationError and JSONDecodeError subclass ValueError, so the
    # data-error branch must come before the generic usage-error branch
    except (DataValidationError, OSError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
