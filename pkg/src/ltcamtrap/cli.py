"""Command-line entry point: ``ltcamtrap {gen,train,eval,viz}``.

Each command reads an optional JSON config (``--config``), applies
``--set dotted.key=value`` overrides (values parsed as JSON when possible)
and writes its outputs under ``--out``. Exit codes: 0 ok, 2 config error,
3 input mismatch, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, InputMismatchError

log = logging.getLogger("ltcamtrap")

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULTS = {
    "gen": {
        "synth": {
            "num_classes": 6, "height": 64, "width": 64, "head_count": 60, "decay": 0.3,
            "domain_ratio": None, "counts": None, "sprite_size": 16, "max_velocity": 3,
            "day_brightness": [0.8, 1.1], "night_brightness": [0.35, 0.7],
            "background_noise": 6.0, "num_locations": 8, "class_names": None,
        },
        "train_fraction": 0.6,
    },
    "train": {
        "manifest": None,
        "train": {
            "lr_full": 0.01, "epochs": 100, "batch_size": 16, "momentum": 0.9,
            "weight_decay": 0.0, "image_size": 64, "hflip_prob": 0.5,
            "domain_experts": True, "flow_consistency": True, "model": "desk",
            "loss": {"gamma": 5.0, "alpha": 0.85, "beta": 0.02, "ssim_window": 3,
                     "c1": 0.0001, "c2": 0.0009},
        },
    },
    "eval": {
        "manifest": None,
        "checkpoint": None,
        "per_frame": False,
        "domain_tolerance": 0,
    },
    "viz": {
        "manifest": None,
        "checkpoint": None,
        "sequences": [],
        "expert": "full",
    },
}


# ---------------------------------------------------------------------------
# config handling


def merge(defaults, override, path=""):
    """Recursive merge that rejects keys absent from ``defaults``."""
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = merge(defaults[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_set(items):
    """``["a.b=1", "c=x"]`` -> nested override dict."""
    override = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = override
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return override


def load_config(command, config_path=None, sets=(), extra=None):
    cfg = DEFAULTS[command]
    if config_path is not None:
        try:
            with open(config_path) as f:
                cfg = merge(cfg, json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from e
    cfg = merge(cfg, parse_set(sets))
    if extra:
        cfg = merge(cfg, extra)
    return cfg


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg, out, seed):
    from .data_model import build_benchmark, check_manifest
    from .synthgen import SynthSpec, generate_dataset

    synth = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg["synth"].items()}
    if synth.get("counts") is not None:
        synth["counts"] = tuple(tuple(r) for r in cfg["synth"]["counts"])
    try:
        spec = SynthSpec(seed=seed, **synth)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    raw = generate_dataset(spec, out)
    report = []
    manifest = build_benchmark(raw, cfg["train_fraction"], seed, report=report)
    check_manifest(manifest)
    path = manifest.save(Path(out) / "manifest.json")
    print(f"wrote {path} ({len(manifest.samples)} sequences, {manifest.num_classes} classes, "
          f"sha256 {file_sha256(path)[:16]})")
    return path


def _load_manifest(path):
    from .data_model import DatasetManifest

    if not path:
        raise ConfigError("config needs a manifest path")
    if not Path(path).exists():
        raise ConfigError(f"manifest not found: {path}")
    return DatasetManifest.load(path)


def cmd_train(cfg, out, seed):
    from .trainer import TrainConfig, fit

    manifest = _load_manifest(cfg["manifest"])
    try:
        tc = TrainConfig(**{**cfg["train"], "seed": seed})
    except TypeError as e:
        raise ConfigError(str(e)) from e
    result = fit(manifest, tc, out)
    last = result.history[-1]
    print(f"trained {tc.epochs} epochs; final L_full={last['L_full']:.4f}; "
          f"checkpoint {result.final_checkpoint}")
    return result


def _load_checkpoint(path):
    from .network import load_checkpoint

    if not path or not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_eval(cfg, out, seed):
    from .inference import predict_manifest, write_predictions
    from .metrics import evaluate

    manifest = _load_manifest(cfg["manifest"])
    model, extra = _load_checkpoint(cfg["checkpoint"])
    if model.num_classes != manifest.num_classes:
        raise InputMismatchError(
            f"checkpoint has {model.num_classes} classes, manifest has {manifest.num_classes}")
    train_cfg = extra.get("train_config", {})
    records = predict_manifest(
        model, manifest, per_frame=cfg["per_frame"], tolerance=cfg["domain_tolerance"],
        image_size=train_cfg.get("image_size"),
        domain_experts=train_cfg.get("domain_experts", True))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.jsonl", records)
    report = evaluate(records, manifest)
    report.meta["per_frame"] = bool(cfg["per_frame"])
    (out / "report.json").write_text(report.dumps())
    name = "DE" if train_cfg.get("domain_experts", True) else "single"
    if train_cfg.get("flow_consistency", True):
        name += "+FC"
    text = report.table(name)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return report


def cmd_viz(cfg, out, seed):
    from .viz import render_sequence

    manifest = _load_manifest(cfg["manifest"])
    model, extra = _load_checkpoint(cfg["checkpoint"])
    if model.num_classes != manifest.num_classes:
        raise InputMismatchError("checkpoint and manifest disagree on the number of classes")
    image_size = extra.get("train_config", {}).get("image_size")
    samples = manifest.by_id()
    written, unknown = [], []
    for sid in cfg["sequences"]:
        if sid not in samples:
            unknown.append(sid)
            continue
        written += render_sequence(model, manifest, samples[sid], out, cfg["expert"], image_size)
    if unknown:
        print(f"skipped unknown sequence ids: {', '.join(unknown)}", file=sys.stderr)
    print(f"wrote {len(written)} images to {out}")
    return written, unknown


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "viz": cmd_viz}


def build_parser():
    parser = argparse.ArgumentParser(prog="ltcamtrap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted keys, JSON values)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--manifest")
            p.add_argument("--no-domain-experts", action="store_true")
            p.add_argument("--no-flow-consistency", action="store_true")
        if name in ("eval", "viz"):
            p.add_argument("--manifest")
            p.add_argument("--checkpoint")
        if name == "eval":
            p.add_argument("--per-frame", action="store_true")
        if name == "viz":
            p.add_argument("--sequence", action="append", default=[], dest="sequences")
    return parser


def _flag_overrides(args):
    extra = {}
    if getattr(args, "manifest", None):
        extra["manifest"] = args.manifest
    if getattr(args, "checkpoint", None):
        extra["checkpoint"] = args.checkpoint
    if getattr(args, "no_domain_experts", False):
        extra.setdefault("train", {})["domain_experts"] = False
    if getattr(args, "no_flow_consistency", False):
        extra.setdefault("train", {})["flow_consistency"] = False
    if getattr(args, "per_frame", False):
        extra["per_frame"] = True
    if getattr(args, "sequences", None):
        extra["sequences"] = args.sequences
    return extra


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.set, _flag_overrides(args))
        COMMANDS[args.command](cfg, args.out, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InputMismatchError as e:
        print(f"input mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
