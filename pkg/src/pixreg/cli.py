"""Command-line interface: ``pixreg {train,eval,ec,synth,bench}``.

Settings resolve as built-in defaults < ``--config`` file < flags. Config files
are flat ``key=value`` lines whose keys are the long flag names without the
leading dashes. Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import segnet
from .data import DataError, DatasetLayout, load_grayscale, synthetic_split, write_dataset
from .grid_graph import Connectivity
from .labeling import count_components
from .metrics import write_roc_csv
from .regularizers import EcDirection, Normalize, ObjectiveKind, RegularizerConfig, euler_characteristic_hard
from .trainer import NumericError, TrainConfig, evaluate, train_on_samples

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(Exception):
    pass


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _shape(text: str) -> tuple[int, int]:
    h, _, w = str(text).lower().partition("x")
    return int(h), int(w)


# key -> (parser, default); keys double as long flag names
SETTINGS = {
    "objective": (str, "baseline"),
    "lambda": (float, 0.1),
    "epochs": (int, 100),
    "seed": (int, 0),
    "synthetic": (int, 0),
    "data": (str, ""),
    "out": (str, "out"),
    "threads": (int, 1),
    "fov-only": (_bool, True),
    "threshold": (float, 0.5),
    "patches-per-image": (int, 4750),
    "patch-size": (int, 48),
    "batch-size": (int, 32),
    "lr": (float, 1e-3),
    "lr-decay-every": (int, 25),
    "lr-decay-factor": (float, 10.0),
    "depth": (int, 2),
    "base-channels": (int, 8),
    "normalize": (str, "per_edge"),
    "connectivity": (str, "auto"),
    "shape": (str, "64x64"),
}


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep or key not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unrecognised line {line!r}")
        values[key] = value.strip()
    return values


def resolve(args) -> dict:
    raw: dict = {}
    if getattr(args, "config", None):
        raw.update(read_config_file(args.config))
    for key in SETTINGS:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            raw[key] = flag
    resolved = {}
    for key, (parse, default) in SETTINGS.items():
        try:
            resolved[key] = parse(raw[key]) if key in raw else default
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return resolved


def write_config(conf: dict, path):
    lines = []
    for key, value in conf.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def build_configs(conf: dict) -> tuple[TrainConfig, segnet.NetworkSpec]:
    try:
        kind = ObjectiveKind(conf["objective"].lower())
        connectivity = None if conf["connectivity"] == "auto" else Connectivity[conf["connectivity"].upper()]
        reg = RegularizerConfig(lam=conf["lambda"], connectivity=connectivity,
                                normalize=Normalize(conf["normalize"].lower()))
        cfg = TrainConfig(
            epochs=conf["epochs"], base_lr=conf["lr"], lr_decay_every=conf["lr-decay-every"],
            lr_decay_factor=conf["lr-decay-factor"], batch_size=conf["batch-size"], objective=kind,
            reg=reg, seed=conf["seed"], patches_per_image=conf["patches-per-image"],
            patch_size=conf["patch-size"], threads=conf["threads"],
        )
        spec = segnet.NetworkSpec(depth=conf["depth"], base_channels=conf["base-channels"])
        _shape(conf["shape"])
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.patch_size % spec.multiple:
        raise ConfigError(f"patch-size {cfg.patch_size} not divisible by 2**depth = {spec.multiple}")
    return cfg, spec


def load_splits(conf: dict):
    if conf["synthetic"] > 0:
        try:
            return synthetic_split(conf["synthetic"], conf["seed"], _shape(conf["shape"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if not conf["data"]:
        raise ConfigError("no dataset: pass --data DIR or --synthetic N")
    layout = DatasetLayout.open(conf["data"])
    return layout.load_split("train"), layout.load_split("test")


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    conf = resolve(args)
    cfg, spec = build_configs(conf)
    train_set, test_set = load_splits(conf)
    if not train_set:
        raise DataError("training split is empty")
    out = Path(conf["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_config(conf, out / "config.txt")
    params, history = train_on_samples(train_set, spec, cfg, validation=test_set or None)
    meta = {"objective": cfg.objective.value, "lambda": cfg.reg.lam}
    segnet.save_checkpoint(out / "checkpoint.bin", params, spec, meta)
    history.to_csv(out / "train_log.csv")
    return 0


def cmd_eval(args) -> int:
    conf = resolve(args)
    build_configs(conf)
    out = Path(conf["out"])
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    if not ckpt.is_file():
        raise DataError(f"checkpoint {ckpt} not found")
    try:
        params, spec, meta = segnet.load_checkpoint(ckpt)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    train_set, test_set = load_splits(conf)
    samples = test_set or train_set
    if not samples:
        raise DataError("no evaluation images")
    report = evaluate(params, spec, samples, conf["threshold"], conf["fov-only"])
    out.mkdir(parents=True, exist_ok=True)
    write_config(conf, out / "eval_config.txt")
    write_roc_csv(report.roc, out / "roc.csv")
    print(report.row(args.name or meta.get("objective", "model")))
    return 0


def cmd_ec(args) -> int:
    y = load_grayscale(args.image)
    b = y >= args.threshold
    e1 = euler_characteristic_hard(b, EcDirection.DIR1)
    e2 = euler_characteristic_hard(b, EcDirection.DIR2)
    print(f"{e1} {e2} {(e1 + e2) / 2} {count_components(b, 8)}")
    return 0


def cmd_synth(args) -> int:
    try:
        shape = _shape(args.shape)
        train, test = synthetic_split(args.count, args.seed, shape)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        write_dataset(args.out_dir, train, test)
    except OSError as exc:
        raise DataError(f"cannot write {args.out_dir}: {exc}") from None
    return 0


def cmd_bench(args) -> int:
    from .benchmark import BenchmarkSetup, median_auc, run_benchmark, write_results

    setup = BenchmarkSetup(seeds=tuple(range(args.seeds)))
    results = run_benchmark(setup, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(results, out / "benchmark.csv")
    for (objective, lam), value in sorted(median_auc(results).items()):
        print(f"{objective},{lam},{value:.6f}")
    return 0


# ---------------------------------------------------------------- parser


def _add_settings(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--objective", choices=[k.value for k in ObjectiveKind])
    p.add_argument("--lambda", dest="lambda", type=float)
    for key in ("epochs", "seed", "synthetic", "threads", "patches-per-image", "patch-size",
                "batch-size", "lr-decay-every", "depth", "base-channels"):
        p.add_argument(f"--{key}", type=int)
    for key in ("threshold", "lr", "lr-decay-factor"):
        p.add_argument(f"--{key}", type=float)
    p.add_argument("--data", help="dataset root with images/, masks/, manifest.txt")
    p.add_argument("--out", help="output directory")
    p.add_argument("--fov-only", help="true/false")
    p.add_argument("--normalize", choices=[n.value for n in Normalize])
    p.add_argument("--connectivity", choices=["auto", "n4", "n8"])
    p.add_argument("--shape", help="synthetic image shape HxW")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write checkpoint, log and config")
    _add_settings(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; print name,sn,sp,acc,auc")
    _add_settings(p)
    p.add_argument("--checkpoint", help="defaults to OUT/checkpoint.bin")
    p.add_argument("--name", help="row label (default: objective stored in the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ec", help="Euler characteristic of a thresholded image")
    p.add_argument("image")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_ec)

    p = sub.add_parser("bench", help="desk-scale benchmark; prints objective,lambda,median_auc")
    p.add_argument("--out", default="bench")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--workers", type=int, help="process count (default: all CPUs)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic vessel dataset")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", default="64x64")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except DataError as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    except NumericError as exc:
        code, msg = EXIT_NUMERIC, f"numeric failure: {exc}"
    print(f"pixreg: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
