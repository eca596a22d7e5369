"""Command-line interface.

Subcommands: train, classify, eval, bench, synth, cv. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure. Every command is
deterministic given its inputs and --seed; wall-clock timings appear only
under a clearly marked trailing section so reports can be compared
byte-for-byte with that section stripped.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import bench as bench_mod
from . import classifier, data, manifest, model_io, trainer
from .exceptions import (
    AlsfError,
    ConfigError,
    DegenerateLabels,
    ManifestError,
    NonFiniteInput,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TIMING_HEADER = "# timings (wall clock; excluded from determinism comparisons)"

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


def _atomic_write_bytes(path, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(os.fspath(path)))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".alsf-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _emit(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        _atomic_write_text(path, text)


def _g(x: float) -> str:
    """Deterministic float rendering for reports."""
    return format(float(x), ".12g")


def _grid_for_image(img: data.ImageBuffer, patch_size: int, model,
                    mode: str) -> classifier.PatchGrid:
    patches, rows, cols = data.extract_grid_patches(img, patch_size)
    return classifier.classify_grid(patches, rows, cols, model, mode)


def _score_split(man: manifest.Manifest, model, split: str,
                 mode: str = "shared-subtracted"):
    """(scores, is_positive, class_index) per image of a manifest split."""
    pos = man.positive_index
    out = []
    for c, cls in enumerate(man.classes):
        entries = cls.images if split == "train" else cls.eval_images
        for entry in entries:
            img = manifest.load_manifest_image(man, entry)
            grid = _grid_for_image(img, man.patch_size, model, mode)
            if man.rule == "ratio":
                s = classifier.score_ratio(grid, pos)
            else:
                s = classifier.score_largest_region(grid, pos)
            out.append((s, c == pos, c))
    return out


def _learn_rule(man: manifest.Manifest, model,
                mode: str = "shared-subtracted") -> classifier.DecisionRule:
    scored = _score_split(man, model, "train", mode)
    if not scored:
        raise DegenerateLabels(
            "threshold learning needs at least one image per label; "
            "the manifest has no image entries")
    scores = np.array([s for s, _, _ in scored])
    is_pos = np.array([p for _, p, _ in scored])
    t = classifier.learn_threshold(scores, is_pos)
    return classifier.DecisionRule(kind=man.rule, positive_class=man.positive_index,
                                   threshold=t)


def _rule_payload(man: manifest.Manifest, rule: classifier.DecisionRule) -> dict:
    return {
        "kind": rule.kind,
        "positive_class": rule.positive_class,
        "positive_label": man.positive_class,
        "threshold": rule.threshold,
        "patch_size": man.patch_size,
        "channels": man.channels,
        "downsample": list(man.downsample) if man.downsample else None,
        "mode": "shared-subtracted",
    }


def _load_rule(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid rule file: {e}") from e
    required = {"kind", "positive_class", "threshold", "patch_size", "channels"}
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"{path}: rule file missing keys {sorted(missing)}")
    cfg.setdefault("downsample", None)
    cfg.setdefault("mode", "shared-subtracted")
    try:
        cfg["rule"] = classifier.DecisionRule(
            kind=cfg["kind"], positive_class=int(cfg["positive_class"]),
            threshold=float(cfg["threshold"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: invalid rule: {e}") from e
    if cfg["channels"] not in manifest.CHANNEL_MODES:
        raise ConfigError(f"{path}: bad channels {cfg['channels']!r}")
    return cfg


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    man = manifest.parse_manifest(args.manifest)
    overrides = {} if args.seed is None else {"seed": args.seed}
    hp = manifest.parse_hyperparams(args.config, **overrides)
    if args.seed is not None:
        man.seed = args.seed

    t0 = time.perf_counter()
    training = manifest.assemble_training_set(man)
    t_extract = time.perf_counter() - t0

    t0 = time.perf_counter()
    model, report = trainer.train(training, hp, labels=man.class_names)
    t_train = time.perf_counter() - t0

    if report.stop_reason == "degenerate":
        print(f"error: training diverged: {report.diagnostic}", file=sys.stderr)
        return EXIT_NUMERIC

    model_io.save_model(args.model, model)

    rule = None
    has_images = any(cls.images for cls in man.classes)
    if has_images:
        rule = _learn_rule(man, model)
        rule_path = args.rule or args.model + ".rule.json"
        _atomic_write_text(rule_path, json.dumps(
            _rule_payload(man, rule), sort_keys=True, indent=2) + "\n")

    lines = [
        "# training report",
        f"classes = {', '.join(man.class_names)}",
        f"d = {model.d}",
        f"k_per_class = {', '.join(str(k) for k in model.k_per_class)}",
        f"k_shared = {model.k_shared}",
        f"samples_per_class = {', '.join(str(n) for n in training.class_counts)}",
        f"iterations_run = {report.iterations_run}",
        f"stop_reason = {report.stop_reason}",
        f"objective_initial = {_g(report.objective_trace[0])}",
        f"objective_final = {_g(report.objective_trace[-1])}",
        "objective_trace = " + " ".join(_g(v) for v in report.objective_trace),
    ]
    if rule is not None:
        lines += [
            f"rule_kind = {rule.kind}",
            f"rule_positive_class = {man.positive_class}",
            f"rule_threshold = {_g(rule.threshold)}",
        ]
    lines += [
        TIMING_HEADER,
        f"extract_seconds = {t_extract:.3f}",
        f"train_seconds = {t_train:.3f}",
        "",
    ]
    report_path = args.report or args.model + ".report.txt"
    _atomic_write_text(report_path, "\n".join(lines))
    print(f"model written to {args.model}; report to {report_path}")
    return EXIT_OK


# ---------------------------------------------------------------- classify

def _classify_rows(model, cfg, paths: list[tuple[str, str]]):
    """CSV rows for (display_path, full_path) pairs; errors become rows."""
    rule: classifier.DecisionRule = cfg["rule"]
    downsample = tuple(cfg["downsample"]) if cfg["downsample"] else None
    rows, ok = [], 0
    for display, full in paths:
        try:
            img = manifest.prepare_image(full, cfg["channels"], downsample)
            grid = _grid_for_image(img, cfg["patch_size"], model, cfg["mode"])
            ratio = classifier.score_ratio(grid, rule.positive_class)
            region = classifier.score_largest_region(grid, rule.positive_class)
            decision = classifier.decide_image(grid, rule)
            rows.append((display, str(grid.rows), str(grid.cols),
                         f"{ratio:.9f}", f"{region:.9f}",
                         f"{decision.score:.9f}",
                         "positive" if decision.positive else "negative"))
            ok += 1
        except (AlsfError, OSError) as e:
            print(f"error: {display}: {e}", file=sys.stderr)
            rows.append((display, "", "", "", "", "", "error"))
    return rows, ok


def cmd_classify(args) -> int:
    model = model_io.load_model(args.model)
    cfg = _load_rule(args.rule)
    if cfg["rule"].positive_class >= model.num_classes:
        raise ConfigError("rule positive_class is out of range for the model")

    if os.path.isdir(args.input):
        names = sorted(n for n in os.listdir(args.input)
                       if n.lower().endswith(IMAGE_SUFFIXES))
        paths = [(n, os.path.join(args.input, n)) for n in names]
        if not paths:
            print(f"error: no images found under {args.input}", file=sys.stderr)
            return EXIT_DATA
    else:
        paths = [(args.input, args.input)]

    rows, ok = _classify_rows(model, cfg, paths)
    header = ("path", "grid_rows", "grid_cols", "positive_ratio",
              "largest_region", "rule_score", "decision")
    text = "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"
    _emit(args.out, text)
    return EXIT_OK if ok else EXIT_DATA


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    model = model_io.load_model(args.model)
    man = manifest.parse_manifest(args.manifest)
    if model.labels != man.class_names:
        print(f"error: model classes {model.labels} do not match manifest "
              f"classes {man.class_names}", file=sys.stderr)
        return EXIT_DATA
    if len(man.classes) != 2:
        print("error: image-level evaluation is binary; the manifest must "
              "declare exactly 2 classes", file=sys.stderr)
        return EXIT_DATA
    missing = [cls.name for cls in man.classes if not cls.eval_images]
    if missing:
        print(f"error: classes without eval-image entries: {missing}",
              file=sys.stderr)
        return EXIT_DATA

    rule = _learn_rule(man, model)
    pos = man.positive_index
    neg = 1 - pos
    counts = np.zeros((2, 2), dtype=np.int64)
    for score, _, c in _score_split(man, model, "eval"):
        pred = pos if score > rule.threshold else neg
        counts[c, pred] += 1

    lines = [
        "# confusion matrix (rows = true class, columns = predicted, row-normalized)",
        "class," + ",".join(man.class_names),
    ]
    for c, cls in enumerate(man.classes):
        frac = counts[c] / counts[c].sum()
        lines.append(cls.name + "," + ",".join(f"{v:.9f}" for v in frac))
    lines += [
        "# decision rule",
        f"rule_kind = {rule.kind}",
        f"rule_positive_class = {man.positive_class}",
        f"rule_threshold = {_g(rule.threshold)}",
        "",
    ]
    _emit(args.out, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    if args.n_patches < 1:
        raise ConfigError("--n-patches must be >= 1")
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    model = None
    if args.model:
        model = model_io.load_model(args.model)
    elif min(args.d, args.classes, args.k_per_class) < 1 or args.k_shared < 0:
        raise ConfigError("bench dims must be positive (k-shared may be 0)")

    result = bench_mod.run_bench(
        args.d, args.classes, args.k_per_class, args.k_shared,
        args.n_patches, args.reps, seed=args.seed or 0, model=model,
        sweeps=args.sweeps)

    lines = [
        "# benchmark",
        f"d = {result.d}",
        f"classes = {result.num_classes}",
        f"k_per_class = {result.k_per_class}",
        f"k_shared = {result.k_shared}",
        f"n_patches = {result.n_patches}",
        f"repetitions = {result.repetitions}",
        f"baseline_sweeps = {args.sweeps}",
        f"solver_calls_closed_form = {result.solver_calls_closed_form}",
        f"solver_calls_baseline = {result.solver_calls_baseline}",
        TIMING_HEADER,
        f"closed_form_seconds = {result.closed_form_seconds:.6f}",
        f"baseline_seconds = {result.baseline_seconds:.6f}",
        f"per_patch_seconds = {result.per_patch_seconds:.9f}",
        f"speedup = {result.speedup:.2f}",
        "",
    ]
    _emit(args.out, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- synth

def _synth_pixels(block: np.ndarray) -> np.ndarray:
    """Map coefficient-space patches (rows) into [0, 1] pixel space."""
    return np.clip(0.5 + 0.2 * block, 0.0, 1.0)


def cmd_synth(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    cfg = manifest.parse_synth_config(args.config, **overrides)
    s = cfg["patch_size"]
    d = s * s
    rows, cols = cfg["grid_rows"], cfg["grid_cols"]
    n_grid = rows * cols
    per_class = (cfg["train_patches"]
                 + (cfg["train_images"] + cfg["eval_images"]) * n_grid)
    try:
        spec = data.SynthSpec(
            dim=d, num_classes=cfg["classes"], class_dim=cfg["class_dim"],
            shared_dim=cfg["shared_dim"], per_class=per_class,
            noise_sigma=cfg["noise_sigma"], seed=cfg["seed"])
    except (AlsfError, ValueError) as e:
        raise ConfigError(f"invalid synth settings: {e}") from e
    synth = data.synth_generate(spec)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    man_lines = [
        "# synthetic dataset",
        f"patch_size = {s}",
        "channels = gray",
        f"rule = {cfg['rule']}",
        "positive_class = class_0",
        f"seed = {cfg['seed']}",
    ]
    for c in range(cfg["classes"]):
        pix = _synth_pixels(synth.data.per_class[c].T)  # (N, d)
        name = f"class_{c}"
        man_lines += ["", f"[class {name}]"]

        train_file = f"{name}_train.npy"
        buf = io.BytesIO()
        np.save(buf, pix[:cfg["train_patches"]])
        _atomic_write_bytes(os.path.join(out_dir, train_file), buf.getvalue())
        man_lines.append(f"patches = {train_file}")

        offset = cfg["train_patches"]
        for split, count, key in (("train", cfg["train_images"], "image"),
                                  ("eval", cfg["eval_images"], "eval-image")):
            for i in range(count):
                block = pix[offset:offset + n_grid]
                offset += n_grid
                img = data.tile_patches(block, rows, cols, s)
                png = io.BytesIO()
                fname = f"{name}_{split}_{i}.png"
                data.save_image(png, img)
                _atomic_write_bytes(os.path.join(out_dir, fname), png.getvalue())
                man_lines.append(f"{key} = {fname}")

    _atomic_write_text(args.out, "\n".join(man_lines) + "\n")
    print(f"dataset manifest written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- cv

def cmd_cv(args) -> int:
    if args.config is None:
        raise ConfigError("cv requires --config with the hyperparameter grid")
    man = manifest.parse_manifest(args.manifest)
    if args.seed is not None:
        man.seed = args.seed
    grid = manifest.parse_hyperparams_grid(args.config)
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    training = manifest.assemble_training_set(man)
    seed = args.seed if args.seed is not None else man.seed
    best, table = trainer.cross_validate(
        training, grid, folds=args.folds, seed=seed,
        n_workers=max(1, args.threads))

    best_idx = grid.index(best)
    lines = [
        "# cross-validation report",
        f"folds = {args.folds}",
        f"grid_points = {len(grid)}",
        f"best_index = {best_idx}",
        "best = " + " ".join(
            f"{k}={v}" for k, v in sorted(vars(best).items())),
        "# mean accuracy per grid point",
    ]
    for i, scores in enumerate(table):
        mean = sum(scores) / len(scores)
        lines.append(f"point_{i} = {_g(mean)} | folds: "
                     + " ".join(_g(v) for v in scores))
    lines.append("")
    _emit(args.out, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override every seed in configs and manifests")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads (used by cv fold runs; other "
                             "commands are sequential by contract)")
    common.add_argument("--config", default=None,
                        help="key-value config file (hyperparameters for "
                             "train, generator settings for synth, grid for cv)")

    p = argparse.ArgumentParser(
        prog="alsf",
        description="Dictionary-pair patch classification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common],
                       help="train a model from a dataset manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--model", required=True, help="output model path")
    t.add_argument("--report", default=None, help="report path "
                   "(default: MODEL.report.txt)")
    t.add_argument("--rule", default=None, help="decision-rule output path "
                   "(default: MODEL.rule.json)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("classify", parents=[common],
                       help="classify an image or a directory of images")
    c.add_argument("--model", required=True)
    c.add_argument("--input", required=True, help="image file or directory")
    c.add_argument("--rule", required=True, help="rule file from train")
    c.add_argument("--out", default=None, help="CSV path (default: stdout)")
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("eval", parents=[common],
                       help="confusion matrix on a labeled manifest")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", default=None, help="report path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common],
                       help="time closed-form classification vs an iterative coder")
    b.add_argument("--model", default=None, help="model file (default: random)")
    b.add_argument("--d", type=int, default=400)
    b.add_argument("--classes", type=int, default=2)
    b.add_argument("--k-per-class", type=int, default=400)
    b.add_argument("--k-shared", type=int, default=100)
    b.add_argument("--n-patches", type=int, default=130)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--sweeps", type=int, default=50,
                   help="baseline coordinate-descent sweeps")
    b.add_argument("--out", default=None, help="report path (default: stdout)")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic dataset + manifest")
    s.add_argument("--out", required=True, help="output manifest path; data "
                   "files are written next to it")
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("cv", parents=[common],
                       help="cross-validate a hyperparameter grid")
    v.add_argument("--manifest", required=True)
    v.add_argument("--folds", type=int, default=3)
    v.add_argument("--out", default=None, help="report path (default: stdout)")
    v.set_defaults(func=cmd_cv)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteInput, np.linalg.LinAlgError) as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AlsfError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
