"""Experiment runner.

    advlab train --config cfg.json [--out-dir DIR] [--seed N] [--epochs N] [--serial] [--data-dir DIR]
    advlab eval CHECKPOINT [--config cfg.json] [--averaged]
    advlab bvdecomp --config cfg.json [--out-dir DIR]
    advlab corrupt-eval CHECKPOINT [--config cfg.json] [--out-dir DIR]
    advlab plot METRICS_CSV OUT_SVG

Exit codes: 0 success, 2 bad input or config, 3 unreadable or incompatible
artifact, 1 training diverged. Only ``eval`` writes to stdout (one JSON
document); logs go to stderr.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import analysis
from . import attacks as atk
from . import data as D
from .losses import KINDS, loss_from_dict
from .optim import SCHEDULES, SgdConfig, schedule_from_dict, schedule_to_dict
from .train import (CheckpointError, TrainConfig, TrainingDiverged, WaConfig, EVAL_ATTACKS,
                    ACC_COLUMNS, load_checkpoint, metrics_csv, parse_metrics_csv,
                    checkpoint_bytes, train)

log = logging.getLogger("advlab")

EXIT_OK, EXIT_DIVERGED, EXIT_INPUT, EXIT_ARTIFACT = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- config schema ----------------------------------------------------------------
# Every key is optional. Defaults follow the reference protocol: SGD momentum 0.9,
# weight decay 5e-4, one-cycle max lr 0.2, 200 epochs, PGD-10 with alpha 2/255 at 8/255.

DATASET_DEFAULTS = {
    "synthetic": {"name": "synthetic", "classes": 3, "per_class": 200, "test_per_class": 100, "size": [8, 8],
                  "channels": 3, "template_noise": 0.05, "template_scale": 1.0, "label_noise": 0.0,
                  "seed": None},
    "cifar10": {"name": "cifar10", "train_limit": None, "test_limit": None},
    "mnist": {"name": "mnist", "train_limit": None, "test_limit": None},
    # any data stored in the CIFAR binary layout, e.g. a converted SVHN
    "cifar_binary": {"name": "cifar_binary", "train_files": ["train.bin"], "test_files": ["test.bin"],
                     "classes": 10, "train_limit": None, "test_limit": None},
}

EVAL_DEFAULTS = {"attacks": list(EVAL_ATTACKS), "per_epoch": ["pgd"], "epsilon": 8 / 255, "seed": 1234,
                 "restarts": 2, "select_metric": "pgd", "corruptions": None, "severities": [1, 2, 3, 4, 5],
                 "corruption_seed": 0}

BV_DEFAULTS = {"eps_list": [e / 255 for e in (1, 4, 8, 12, 16, 20)], "space": "softmax", "degenerate": False,
               "split_seed": 0, "parts": 2, "eval_epsilon": 8 / 255, "eval_seed": 1234}

TOP_DEFAULTS = {"dataset": None, "paradigm": "pgd_at", "loss": {"kind": "cel"}, "attack": None,
                "optimizer": {"base_lr": 0.1, "momentum": 0.9, "weight_decay": 5e-4}, "schedule": None,
                "epochs": 200, "batch_size": 128, "augment": None, "wa": None, "seed": 0, "arch": "mlp",
                "hidden": 64, "dtype": "float32", "eval": None, "bv": None, "out_dir": None}

AUGMENT_PRESETS = {"none": (), "cifar": D.cifar_pipeline(), "svhn": D.svhn_pipeline()}


def _fill(obj, defaults, path):
    """Merge ``obj`` over ``defaults`` rejecting unknown keys and type mismatches."""
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    out = {}
    for k, dv in defaults.items():
        v = obj.get(k, dv)
        out[k] = _coerce(v, dv, f"{path}.{k}")
    return out


def _coerce(v, dv, path):
    if dv is None or v is None:
        return copy.deepcopy(v)
    if isinstance(dv, bool):
        if not isinstance(v, bool):
            raise ConfigError(path, "expected true or false")
        return v
    if isinstance(dv, int):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, "expected an integer")
        return v
    if isinstance(dv, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(v)
    if isinstance(dv, str):
        if not isinstance(v, str):
            raise ConfigError(path, "expected a string")
        return v
    if isinstance(dv, list):
        if not isinstance(v, list):
            raise ConfigError(path, "expected a list")
        return copy.deepcopy(v)
    return copy.deepcopy(v)


def _number_list(v, path, kind=float):
    if not isinstance(v, list):
        raise ConfigError(path, "expected a list")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or (kind is int and not isinstance(x, int)):
            raise ConfigError(f"{path}[{i}]", f"expected {'an integer' if kind is int else 'a number'}")
        out.append(kind(x))
    return out


def _build(fn, d, path):
    try:
        return fn(d)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(path, str(e)) from e


def _check_keys(d, registry, path):
    """Reject keys that the ``kind``'s dataclass does not have, naming their JSON path."""
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    kind = d.get("kind")
    if kind not in registry:
        raise ConfigError(f"{path}.kind", f"must be one of {sorted(registry)}")
    fields = set(registry[kind].__dataclass_fields__) | {"kind"}
    unknown = sorted(set(d) - fields)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    if isinstance(d.get("base"), dict):
        _check_keys(d["base"], registry, f"{path}.base")


def _loss(d, path):
    _check_keys(d, KINDS, path)
    return _build(loss_from_dict, d, path)


def _attack_dict(cfg):
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d["target_loss"] = cfg.target_loss.to_dict()
    return d


def _attack_from_dict(d, base, path):
    d = dict(d)
    unknown = sorted(set(d) - set(atk.AttackConfig.__dataclass_fields__))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    if "target_loss" in d:
        d["target_loss"] = _loss(d["target_loss"], f"{path}.target_loss")
    return _build(lambda x: atk.AttackConfig(**{**_attack_dict(base), "target_loss": base.target_loss, **x}), d, path)


def canonical_config(raw):
    """Validate a config object and return it with every default filled in.

    The result is a fixed point: ``canonical_config(canonical_config(x)) == canonical_config(x)``.
    """
    cfg = _fill(raw, TOP_DEFAULTS, "$")
    ds = cfg["dataset"] or {"name": "synthetic"}
    if not isinstance(ds, dict) or ds.get("name", "synthetic") not in DATASET_DEFAULTS:
        raise ConfigError("$.dataset.name", f"must be one of {sorted(DATASET_DEFAULTS)}")
    cfg["dataset"] = _fill(ds, DATASET_DEFAULTS[ds.get("name", "synthetic")], "$.dataset")
    if cfg["dataset"]["name"] == "synthetic":
        cfg["dataset"]["size"] = _number_list(cfg["dataset"]["size"], "$.dataset.size", int)

    loss = _loss(cfg["loss"], "$.loss")
    cfg["loss"] = loss.to_dict()
    cfg["optimizer"] = _fill(cfg["optimizer"], TOP_DEFAULTS["optimizer"], "$.optimizer")
    _build(lambda d: SgdConfig(**d), cfg["optimizer"], "$.optimizer")

    sched = cfg["schedule"] or {"kind": "onecycle"}
    if not isinstance(sched, dict):
        raise ConfigError("$.schedule", "expected an object")
    sched = {"total_epochs": cfg["epochs"], **sched}
    _check_keys(sched, SCHEDULES, "$.schedule")
    cfg["schedule"] = schedule_to_dict(_build(schedule_from_dict, sched, "$.schedule"))

    if cfg["paradigm"] not in ("pgd_at", "nfgsm_at", "natural"):
        raise ConfigError("$.paradigm", "must be pgd_at, nfgsm_at or natural")
    if cfg["attack"] is not None:
        if not isinstance(cfg["attack"], dict):
            raise ConfigError("$.attack", "expected an object or null")
        tc = TrainConfig(paradigm=cfg["paradigm"], loss=loss, seed=cfg["seed"])
        base = tc.training_attack() or atk.pgd_config(target_loss=loss, seed=cfg["seed"])
        cfg["attack"] = _attack_dict(_attack_from_dict(cfg["attack"], base, "$.attack"))

    aug = [] if cfg["augment"] is None else cfg["augment"]
    if isinstance(aug, str):
        if aug not in AUGMENT_PRESETS:
            raise ConfigError("$.augment", f"preset must be one of {sorted(AUGMENT_PRESETS)}")
        aug = [D.augment_to_dict(op) for op in AUGMENT_PRESETS[aug]]
    if not isinstance(aug, list):
        raise ConfigError("$.augment", "expected a list or a preset name")
    for i, op in enumerate(aug):
        _check_keys(op, D.AUGMENTS, f"$.augment[{i}]")
    cfg["augment"] = [D.augment_to_dict(_build(D.augment_from_dict, op, f"$.augment[{i}]"))
                      for i, op in enumerate(aug)]

    if cfg["wa"] is not None:
        cfg["wa"] = _fill(cfg["wa"], {"decay": 0.995, "start_fraction": 0.5}, "$.wa")

    ev = _fill(cfg["eval"] or {}, EVAL_DEFAULTS, "$.eval")
    for key in ("attacks", "per_epoch"):
        bad = [a for a in ev[key] if a not in EVAL_ATTACKS]
        if bad:
            raise ConfigError(f"$.eval.{key}", f"unknown attack {bad[0]!r}")
    if ev["corruptions"] is not None:
        ev["corruptions"] = [_corruption_dict(c, f"$.eval.corruptions[{i}]") for i, c in enumerate(ev["corruptions"])]
    ev["severities"] = _number_list(ev["severities"], "$.eval.severities", int)
    cfg["eval"] = ev

    if cfg["bv"] is not None:
        bv = _fill(cfg["bv"], BV_DEFAULTS, "$.bv")
        bv["eps_list"] = _number_list(bv["eps_list"], "$.bv.eps_list")
        if bv["space"] not in ("softmax", "logits"):
            raise ConfigError("$.bv.space", "must be softmax or logits")
        cfg["bv"] = bv

    if cfg["dtype"] not in ("float32", "float64"):
        raise ConfigError("$.dtype", "must be float32 or float64")
    _build(train_config, cfg, "$")
    return cfg


def _corruption_dict(c, path):
    c = _fill(c, {"kind": "identity", "param": 0.0}, path)
    if c["kind"] not in D.CORRUPTION_KINDS:
        raise ConfigError(f"{path}.kind", f"must be one of {list(D.CORRUPTION_KINDS)}")
    return c


def dumps_config(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def load_config(path):
    """Read and canonicalize a config file; ``None`` gives the defaults."""
    if path is None:
        return canonical_config({})
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError("$", f"cannot read {path}: {e.strerror}") from e
    return canonical_config(raw)


def apply_overrides(cfg, seed=None, epochs=None):
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = seed
        if cfg["attack"] is not None:
            cfg["attack"]["seed"] = seed
    if epochs is not None:
        old = cfg["epochs"]
        cfg["epochs"] = epochs
        sched = cfg["schedule"]
        sched["total_epochs"] = epochs
        if "drop_epochs" in sched and old:
            sched["drop_epochs"] = [int(round(e * epochs / old)) for e in sched["drop_epochs"]]
    return canonical_config(cfg)


def train_config(cfg):
    loss = loss_from_dict(cfg["loss"])
    attack = None
    if cfg["attack"] is not None:
        a = dict(cfg["attack"])
        a["target_loss"] = loss_from_dict(a["target_loss"])
        attack = atk.AttackConfig(**a)
    ev = cfg["eval"]
    return TrainConfig(
        paradigm=cfg["paradigm"], loss=loss, attack=attack, optimizer=SgdConfig(**cfg["optimizer"]),
        schedule=schedule_from_dict(cfg["schedule"]), epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        augment=tuple(D.augment_from_dict(op) for op in cfg["augment"]),
        wa=WaConfig(**cfg["wa"]) if cfg["wa"] else None, seed=cfg["seed"], arch=cfg["arch"],
        hidden=cfg["hidden"], dtype=cfg["dtype"], eval_attacks=tuple(ev["per_epoch"]),
        eval_epsilon=ev["epsilon"], eval_seed=ev["seed"], eval_restarts=ev["restarts"],
        select_metric=ev["select_metric"])


def eval_attack_suite(cfg):
    ev = cfg["eval"]
    full = analysis.eval_suite(ev["epsilon"], ev["seed"], ev["restarts"])
    return {k: full[k] for k in ev["attacks"]}


def corruption_list(cfg):
    cs = cfg["eval"]["corruptions"]
    if cs is None:
        return D.DEFAULT_CORRUPTIONS
    return tuple(D.Corruption(c["kind"], c["param"]) for c in cs)


# -- datasets -----------------------------------------------------------------------

def _limit(ds, n):
    return ds if n is None else ds.subset(np.arange(min(n, len(ds))))


def load_datasets(cfg, data_dir=None):
    ds = cfg["dataset"]
    name = ds["name"]
    if name == "synthetic":
        seed = cfg["seed"] if ds["seed"] is None else ds["seed"]
        common = dict(classes=ds["classes"], size=tuple(ds["size"]), channels=ds["channels"],
                      template_noise=ds["template_noise"], seed=seed, template_scale=ds["template_scale"])
        tr = D.make_synthetic(per_class=ds["per_class"], sample_seed=1, label_noise=ds["label_noise"], **common)
        te = D.make_synthetic(per_class=ds["test_per_class"], sample_seed=2, **common)
        return tr, te
    root = D.resolve_data_dir(data_dir)
    if name == "cifar10":
        tr, te = D.load_cifar10(root)
    elif name == "mnist":
        tr, te = D.load_mnist(root)
    else:
        def cat(files):
            parts = [D.load_cifar_binary(root / f, ds["classes"]) for f in files]
            return D.Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]),
                             ds["classes"])
        tr, te = cat(ds["train_files"]), cat(ds["test_files"])
    return _limit(tr, ds["train_limit"]), _limit(te, ds["test_limit"])


# -- atomic output -------------------------------------------------------------------

def write_atomic(path, content):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(content.encode() if isinstance(content, str) else content)
    os.replace(tmp, path)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- SVG ------------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def _fmt(v):
    return f"{v:.2f}"


def _tick_label(v):
    return format(round(v, 6), "g")


def line_chart(series, xlim, ylim, xlabel, ylabel, title="", width=640, height=400):
    """Standalone SVG 1.1 line chart. ``series`` is an ordered list of (name, [(x, y), ...]).

    Output depends only on the arguments, so identical input gives identical bytes.
    """
    left, right, top, bottom = 60, 160, 30, 50
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = xlim
    y0, y1 = ylim
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left + pw / 2:.2f}" y="18" text-anchor="middle" font-size="14">{title}</text>')
    out.append(f'<g stroke="black" stroke-width="1"><line x1="{left}" y1="{top + ph}" x2="{left + pw}" '
               f'y2="{top + ph}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>')
    out.append('<g font-size="11" fill="black">')
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{_fmt(sx(t))}" y1="{top + ph}" x2="{_fmt(sx(t))}" y2="{top + ph + 4}" stroke="black"/>'
                   f'<text x="{_fmt(sx(t))}" y="{top + ph + 16}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{left - 4}" y1="{_fmt(sy(t))}" x2="{left}" y2="{_fmt(sy(t))}" stroke="black"/>'
                   f'<text x="{left - 6}" y="{_fmt(sy(t) + 4)}" text-anchor="end">{_tick_label(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 12}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.2f})">{ylabel}</text>')
    out.append('</g>')
    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 12 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="1.5"/><text x="{left + pw + 38}" y="{ly + 4}" font-size="11">{name}</text>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def metrics_svg(rows, title=""):
    epochs = [r["epoch"] for r in rows]
    series = []
    for col in ACC_COLUMNS:
        series.append((col, [(r["epoch"], r[col]) for r in rows if r[col] is not None]))
    return line_chart(series, (0, max(epochs, default=1)), (0, 1), "epoch", "accuracy", title)


def bv_svg(report):
    xs = [r.sweep_eps * 255 for r in report.rows]
    series = []
    for side in ("natural", "adversarial"):
        for term in ("bias", "variance", "risk"):
            series.append((f"{side[:3]} {term}", [(x, getattr(getattr(r, side), term))
                                                   for x, r in zip(xs, report.rows)]))
    ymax = max([y for _, pts in series for _, y in pts], default=1.0)
    return line_chart(series, (min(xs, default=0), max(xs, default=1)), (0, ymax), "training eps (x/255)",
                      "squared error", "bias-variance")


# -- commands --------------------------------------------------------------------------

def _out_dir(args, cfg, default):
    return Path(args.out_dir or cfg["out_dir"] or default)


def _load(args):
    cfg = load_config(getattr(args, "config", None))
    return apply_overrides(cfg, getattr(args, "seed", None), getattr(args, "epochs", None))


def _summary(result, cfg):
    gap = analysis.overfit_gap(result.metrics) if result.metrics else {}
    last = result.metrics[-1] if result.metrics else None
    return {"overfit_gap": gap, "epochs": cfg["epochs"], "best_epoch": result.best.epoch,
            "final": None if last is None else {"nat": last.natural_acc, **last.adv_acc},
            "averaged_final": None if last is None else last.wa_acc}


def cmd_train(args):
    cfg = _load(args)
    tr, te = load_datasets(cfg, args.data_dir)
    out = _out_dir(args, cfg, "runs/train")
    tc = train_config(cfg)
    try:
        result = train(tc, tr, te, record_time=not args.serial)
    except TrainingDiverged as e:
        log.error("%s", e)
        write_atomic(out / "last_good.ckpt", checkpoint_bytes(e.last_good))
        return EXIT_DIVERGED
    write_atomic(out / "config.json", dumps_config(cfg))
    write_atomic(out / "metrics.csv", metrics_csv(result.metrics))
    write_atomic(out / "best.ckpt", checkpoint_bytes(result.best))
    write_atomic(out / "final.ckpt", checkpoint_bytes(result.final))
    write_atomic(out / "summary.json", _json(_summary(result, cfg)))
    log.info("wrote %s", out)
    return EXIT_OK


def _checkpoint_model(path, test_set, averaged=False):
    try:
        ckpt = load_checkpoint(path)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    if tuple(ckpt.input_shape) != test_set.image_shape or ckpt.classes != test_set.classes:
        raise CheckpointError(f"checkpoint expects input {tuple(ckpt.input_shape)} with {ckpt.classes} classes, "
                              f"dataset has {test_set.image_shape} with {test_set.classes}")
    return ckpt.to_model(averaged)


def cmd_eval(args):
    cfg = _load(args)
    _, te = load_datasets(cfg, args.data_dir)
    model = _checkpoint_model(args.checkpoint, te, args.averaged)
    report = analysis.evaluate(model, te, eval_attack_suite(cfg))
    sys.stdout.write(_json(report.to_dict()))
    return EXIT_OK


def cmd_corrupt_eval(args):
    cfg = _load(args)
    _, te = load_datasets(cfg, args.data_dir)
    model = _checkpoint_model(args.checkpoint, te, args.averaged)
    res = analysis.corruption_eval(model, te, corruption_list(cfg), cfg["eval"]["severities"],
                                   cfg["eval"]["corruption_seed"])
    res["natural_acc"] = analysis.accuracy(model, te.images, te.labels)
    out = _out_dir(args, cfg, "runs/corrupt")
    write_atomic(out / "corruption.json", _json(res))
    log.info("mean corruption accuracy %.4f, wrote %s", res["mean"], out / "corruption.json")
    return EXIT_OK


def cmd_bvdecomp(args):
    cfg = _load(args)
    if cfg["bv"] is None:
        raise ConfigError("$.bv", "bvdecomp needs a bv section with eps_list")
    bv = cfg["bv"]
    tr, te = load_datasets(cfg, args.data_dir)
    attack_cfg = atk.pgd_config(epsilon=bv["eval_epsilon"], seed=bv["eval_seed"])
    report = analysis.bias_variance(tr, te, train_config(cfg), attack_cfg, bv["eps_list"], bv["split_seed"],
                                    bv["degenerate"], bv["space"], bv["parts"])
    out = _out_dir(args, cfg, "runs/bv")
    write_atomic(out / "bv.csv", report.to_csv())
    write_atomic(out / "bv.json", report.to_json() + "\n")
    write_atomic(out / "bv.svg", bv_svg(report))
    log.info("wrote %s", out)
    return EXIT_OK


class ColumnError(ValueError):
    pass


def cmd_plot(args):
    try:
        text = Path(args.metrics_csv).read_text()
    except OSError as e:
        raise ConfigError("metrics_csv", f"cannot read {args.metrics_csv}: {e.strerror}") from e
    try:
        rows = parse_metrics_csv(text)
    except KeyError as e:
        raise ColumnError(f"metrics CSV is missing column {e.args[0]!r}") from e
    except ValueError as e:
        raise ColumnError(f"metrics CSV has a non-numeric cell: {e}") from e
    write_atomic(args.out_svg, metrics_svg(rows, Path(args.metrics_csv).name))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="advlab", description="adversarial training experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data-dir")
        if out:
            sp.add_argument("--out-dir")

    sp = sub.add_parser("train", help="train a model and write metrics, checkpoints and a summary")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--serial", action="store_true", help="bitwise-reproducible mode (wall_s recorded as 0)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="print the evaluation report of a checkpoint as JSON")
    sp.add_argument("checkpoint")
    common(sp, out=False)
    sp.add_argument("--averaged", action="store_true", help="evaluate the averaged weights")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bvdecomp", help="bias-variance decomposition over a training-eps sweep")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_bvdecomp)

    sp = sub.add_parser("corrupt-eval", help="accuracy under parametric corruptions")
    sp.add_argument("checkpoint")
    common(sp)
    sp.add_argument("--averaged", action="store_true")
    sp.set_defaults(func=cmd_corrupt_eval)

    sp = sub.add_parser("plot", help="render a metrics CSV as an SVG")
    sp.add_argument("metrics_csv")
    sp.add_argument("out_svg")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ColumnError, D.FormatError) as e:
        print(f"advlab: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"advlab: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except CheckpointError as e:
        print(f"advlab: error: {e}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
