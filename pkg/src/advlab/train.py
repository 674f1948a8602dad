"""Adversarial training loops, per-epoch metrics and the checkpoint format."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
import io
import json
import logging
import os
from pathlib import Path
import struct
import time

import numpy as np

from . import attacks as atk
from .data import augment_batch
from .diffcore import ARCHITECTURES, Model, NonFiniteError, backward, init_model, param_shapes, predict
from .losses import CEL, RSL, Loss
from .optim import OneCycle, Piecewise, SgdConfig, WeightAverager, sgd_step

log = logging.getLogger(__name__)

PARADIGMS = ("pgd_at", "nfgsm_at", "natural")
EVAL_ATTACKS = ("fgsm", "pgd", "cw", "strong")
RSL_PIECEWISE_LR = 0.001


@dataclass(frozen=True)
class WaConfig:
    decay: float = 0.995
    start_fraction: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    paradigm: str = "pgd_at"
    loss: Loss = field(default_factory=CEL)
    attack: atk.AttackConfig | None = None  # None: the paradigm's default, targeting ``loss``
    optimizer: SgdConfig = field(default_factory=SgdConfig)
    schedule: object = field(default_factory=OneCycle)
    epochs: int = 200
    batch_size: int = 128
    augment: tuple = ()
    wa: WaConfig | None = None
    seed: int = 0
    arch: str = "mlp"
    hidden: int = 64
    dtype: str = "float32"
    eval_attacks: tuple = ("pgd",)
    eval_epsilon: float = 8 / 255
    eval_seed: int = 1234
    eval_restarts: int = 2
    select_metric: str = "pgd"

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ValueError(f"paradigm must be one of {PARADIGMS}")
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        unknown = set(self.eval_attacks) - set(EVAL_ATTACKS)
        if unknown:
            raise ValueError(f"unknown evaluation attacks {sorted(unknown)}")
        if self.select_metric not in ("nat",) + EVAL_ATTACKS:
            raise ValueError(f"unknown select_metric {self.select_metric!r}")

    def training_attack(self):
        if self.paradigm == "natural":
            return None
        if self.attack is not None:
            return self.attack
        if self.paradigm == "nfgsm_at":
            return atk.nfgsm_config(target_loss=self.loss, seed=self.seed)
        return atk.pgd_config(target_loss=self.loss, seed=self.seed)

    def resolved_schedule(self):
        s = self.schedule
        if isinstance(s, Piecewise) and s.base_lr is None:
            base = RSL_PIECEWISE_LR if isinstance(self.loss, RSL) else self.optimizer.base_lr
            s = replace(s, base_lr=base)
        return s


def eval_suite(epsilon=8 / 255, seed=1234, restarts=2):
    """The evaluation attacks: FGSM (alpha 10/255), PGD-10 and CW-10 (alpha 2/255)."""
    return {
        "fgsm": atk.fgsm_config(epsilon=epsilon, seed=seed),
        "pgd": atk.pgd_config(epsilon=epsilon, seed=seed),
        "cw": atk.cw_config(epsilon=epsilon, seed=seed),
        "strong": atk.pgd_config(epsilon=epsilon, seed=seed, restarts=restarts),
    }


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    natural_acc: float
    adv_acc: dict
    wall_time: float = 0.0
    wa_acc: dict | None = None


@dataclass
class Checkpoint:
    arch: str
    input_shape: tuple
    classes: int
    params: "OrderedDict[str, np.ndarray]"
    hidden: int = 64
    epoch: int = 0
    opt_state: "OrderedDict[str, np.ndarray] | None" = None
    rng_state: dict | None = None
    averaged: "OrderedDict[str, np.ndarray] | None" = None
    meta: dict = field(default_factory=dict)

    def to_model(self, averaged=False):
        src = self.averaged if averaged else self.params
        if src is None:
            raise ValueError("checkpoint has no averaged weights")
        params = OrderedDict((k, v.copy()) for k, v in src.items())
        return Model(self.arch, tuple(self.input_shape), self.classes, params, self.hidden)


@dataclass
class TrainResult:
    model: Model
    metrics: list
    best: Checkpoint
    final: Checkpoint
    averager: WeightAverager | None = None

    def averaged_model(self):
        if self.averager is None or self.averager.averaged_params is None:
            return None
        m = self.model.copy()
        for k, v in self.averager.averaged_params.items():
            m.params[k] = v.copy()
        return m


class TrainingDiverged(RuntimeError):
    def __init__(self, message, epoch, batch, last_good):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.last_good = last_good


def _copy_params(params):
    return OrderedDict((k, v.copy()) for k, v in params.items())


def _snapshot(model, epoch, state, rng, averager, best_score):
    meta = {"best_score": None if best_score == -np.inf else float(best_score)}
    return Checkpoint(model.arch, tuple(model.input_shape), model.classes, _copy_params(model.params),
                      model.hidden, epoch, _copy_params(state) if state else None,
                      rng.bit_generator.state if rng is not None else None,
                      _copy_params(averager.averaged_params) if averager and averager.averaged_params else None,
                      meta)


def accuracy(model, images, labels, batch_size=512):
    if len(labels) == 0:
        return 0.0
    correct = 0
    for s in range(0, len(labels), batch_size):
        correct += int((predict(model, images[s:s + batch_size]) == labels[s:s + batch_size]).sum())
    return correct / len(labels)


def adversarial_accuracy(model, images, labels, name, cfg, batch_size=512):
    if len(labels) == 0:
        return 0.0
    robust = 0
    for s in range(0, len(labels), batch_size):
        x = images[s:s + batch_size].astype(model.dtype)
        y = labels[s:s + batch_size]
        fn = atk.ATTACKS[name]
        adv = fn(model, x, y, cfg, indices=np.arange(s, s + len(y)))
        robust += int((~adv.success_mask).sum())
    return robust / len(labels)


def _evaluate(model, test_set, config):
    suite = eval_suite(config.eval_epsilon, config.eval_seed, config.eval_restarts)
    nat = accuracy(model, test_set.images, test_set.labels)
    adv = {n: adversarial_accuracy(model, test_set.images, test_set.labels, n, suite[n])
           for n in config.eval_attacks}
    return nat, adv


def train(config, train_set, test_set, resume=None, record_time=True, on_epoch=None):
    """Adversarial training: per batch, attack the frozen model then take an SGD step
    on the loss at the adversarial inputs only.

    Returns a :class:`TrainResult`. ``on_epoch(record)`` is called after each
    epoch's evaluation.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("datasets must be nonempty")
    dtype = np.dtype(config.dtype)
    schedule = config.resolved_schedule()
    attack_cfg = config.training_attack()
    attack_fn = atk.nfgsm if config.paradigm == "nfgsm_at" else atk.pgd
    n = len(train_set)
    nb = -(-n // config.batch_size)
    wa_start = int(round(config.wa.start_fraction * config.epochs)) if config.wa else None

    if resume is None:
        model = init_model(config.arch, train_set.image_shape, train_set.classes, config.seed,
                           config.hidden, dtype)
        state = OrderedDict()
        rng = np.random.default_rng([config.seed, 1])
        averager = WeightAverager(config.wa.decay, wa_start) if config.wa else None
        start = 0
        best_score = -np.inf
    else:
        model = resume.to_model().astype(dtype)
        state = _copy_params(resume.opt_state) if resume.opt_state else OrderedDict()
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        averager = None
        if config.wa:
            averager = WeightAverager(config.wa.decay, wa_start,
                                      _copy_params(resume.averaged) if resume.averaged else None)
        start = resume.epoch
        best_score = resume.meta.get("best_score")
        best_score = -np.inf if best_score is None else best_score

    images = train_set.images.astype(dtype)
    labels = train_set.labels
    metrics = []
    best = _snapshot(model, start, state, rng, averager, best_score)
    last_good = best

    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        losses = []
        lr = 0.0
        for b in range(nb):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            x = augment_batch(config.augment, images[idx], config.seed, (2, epoch), idx)
            y = labels[idx]
            if isinstance(schedule, Piecewise):
                lr = schedule.lr_at(epoch)
            else:
                lr = schedule.lr_at(epoch + (b + 0.5) / nb)
            try:
                if attack_cfg is not None:
                    x = attack_fn(model, x, y, attack_cfg, indices=idx, key=(epoch, b)).x_adv
                res = backward(model, config.loss, x, y)
                if not np.isfinite(res.loss_value):
                    raise NonFiniteError("non-finite training loss", 0)
                sgd_step(model.params, res.param_grads, state, config.optimizer, lr)
            except (NonFiniteError, FloatingPointError) as e:
                raise TrainingDiverged(f"training diverged at epoch {epoch + 1}, batch {b}: {e}",
                                       epoch + 1, b, last_good) from e
            losses.append(res.loss_value)
            if averager is not None and epoch >= wa_start:
                averager.update(model.params)

        nat, adv = _evaluate(model, test_set, config)
        wa_acc = None
        if averager is not None and averager.averaged_params is not None:
            avg_model = model.copy()
            avg_model.params = _copy_params(averager.averaged_params)
            wa_nat, wa_adv = _evaluate(avg_model, test_set, config)
            wa_acc = {"nat": wa_nat, **wa_adv}
        rec = MetricsRecord(epoch + 1, float(lr), float(np.mean(losses)), nat, adv,
                            time.perf_counter() - t0 if record_time else 0.0, wa_acc)
        metrics.append(rec)
        score = nat if config.select_metric == "nat" else adv.get(config.select_metric, nat)
        if score > best_score:
            best_score = score
            best = _snapshot(model, epoch + 1, state, rng, averager, best_score)
        last_good = _snapshot(model, epoch + 1, state, rng, averager, best_score)
        log.info("epoch %d lr %.4g loss %.4f nat %.4f %s", epoch + 1, lr, rec.train_loss, nat,
                 " ".join(f"{k} {v:.4f}" for k, v in adv.items()))
        if on_epoch is not None:
            on_epoch(rec)

    final = _snapshot(model, config.epochs if config.epochs > start else start, state, rng, averager,
                      best_score)
    if not metrics:
        best = final
    return TrainResult(model, metrics, best, final, averager)


# -- metrics CSV ----------------------------------------------------------------

METRICS_HEADER = ("epoch", "lr", "train_loss", "nat_acc", "fgsm_acc", "pgd_acc", "cw_acc", "strong_acc", "wall_s")
ACC_COLUMNS = ("nat_acc", "fgsm_acc", "pgd_acc", "cw_acc", "strong_acc")


def _g6(v):
    return "" if v is None else format(float(v), ".6g")


def metrics_csv(records):
    lines = [",".join(METRICS_HEADER)]
    for r in records:
        row = [str(r.epoch), _g6(r.lr), _g6(r.train_loss), _g6(r.natural_acc)]
        row += [_g6(r.adv_acc.get(k)) for k in ("fgsm", "pgd", "cw", "strong")]
        row.append(_g6(r.wall_time))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def parse_metrics_csv(text):
    """Rows as dicts of floats (None for empty cells). Raises KeyError naming a missing column."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise KeyError("epoch")
    header = lines[0].split(",")
    for col in METRICS_HEADER:
        if col not in header:
            raise KeyError(col)
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append({h: (float(c) if c != "" else None) for h, c in zip(header, cells)})
    return rows


def records_from_rows(rows):
    out = []
    for r in rows:
        adv = {k: r[f"{k}_acc"] for k in ("fgsm", "pgd", "cw", "strong") if r.get(f"{k}_acc") is not None}
        out.append(MetricsRecord(int(r["epoch"]), r["lr"], r["train_loss"], r["nat_acc"], adv, r["wall_s"] or 0.0))
    return out


# -- checkpoint format ------------------------------------------------------------

CKPT_MAGIC = b"SATCKPT1"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_tensors(buf, tensors):
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _write_json(buf, obj):
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(raw)) + raw)


def checkpoint_bytes(ckpt):
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    buf.write(struct.pack("<B", ARCHITECTURES.index(ckpt.arch)))
    buf.write(struct.pack("<II", ckpt.hidden, ckpt.classes))
    buf.write(struct.pack("<B", len(ckpt.input_shape)) + struct.pack(f"<{len(ckpt.input_shape)}I", *ckpt.input_shape))
    buf.write(struct.pack("<I", ckpt.epoch))
    _write_tensors(buf, ckpt.params)
    buf.write(struct.pack("<B", ckpt.opt_state is not None))
    if ckpt.opt_state is not None:
        _write_tensors(buf, ckpt.opt_state)
    _write_json(buf, ckpt.rng_state)
    buf.write(struct.pack("<B", ckpt.averaged is not None))
    if ckpt.averaged is not None:
        _write_tensors(buf, ckpt.averaged)
    _write_json(buf, ckpt.meta)
    return buf.getvalue()


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensors(self, what):
        (count,) = self.unpack("<I", f"{what} count")
        out = OrderedDict()
        for _ in range(count):
            (ln,) = self.unpack("<H", f"{what} name length")
            name = self.take(ln, f"{what} name").decode()
            (ndim,) = self.unpack("<B", f"{what} {name} rank")
            shape = self.unpack(f"<{ndim}I", f"{what} {name} shape")
            size = int(np.prod(shape)) if shape else 1
            data = self.take(4 * size, f"{what} {name} data")
            out[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
        return out

    def json(self, what):
        (ln,) = self.unpack("<I", f"{what} length")
        return json.loads(self.take(ln, what).decode())


def checkpoint_from_bytes(raw):
    r = _Reader(raw)
    magic = r.take(8, "magic")
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    (arch_code,) = r.unpack("<B", "architecture")
    if arch_code >= len(ARCHITECTURES):
        raise CheckpointError(f"unknown architecture code {arch_code}")
    arch = ARCHITECTURES[arch_code]
    hidden, classes = r.unpack("<II", "hidden/classes")
    (nd,) = r.unpack("<B", "input rank")
    input_shape = r.unpack(f"<{nd}I", "input shape")
    (epoch,) = r.unpack("<I", "epoch")
    params = r.tensors("parameters")
    expected = param_shapes(arch, input_shape, classes, hidden)
    got = OrderedDict((k, v.shape) for k, v in params.items())
    if got != OrderedDict((k, tuple(v)) for k, v in expected.items()):
        raise CheckpointError(f"parameter shapes {dict(got)} do not match architecture {arch}")
    (has_opt,) = r.unpack("<B", "optimizer flag")
    opt = r.tensors("optimizer state") if has_opt else None
    rng_state = r.json("rng state")
    (has_avg,) = r.unpack("<B", "averaged flag")
    avg = r.tensors("averaged weights") if has_avg else None
    meta = r.json("metadata")
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(arch, tuple(input_shape), classes, params, hidden, epoch, opt, rng_state, avg, meta)


def save_checkpoint(path, ckpt):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
