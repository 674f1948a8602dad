"""SGD with momentum, learning-rate schedules and weight averaging."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
import math

import numpy as np


@dataclass(frozen=True)
class SgdConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


def sgd_step(params, grads, state, cfg, lr):
    """In-place update; ``state`` maps names to momentum buffers.

    g' = g + wd * w;  v = momentum * v + g';  w = w - lr * v
    """
    if state is None:
        state = OrderedDict()
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * w
        if cfg.momentum:
            v = state.get(name)
            v = g.copy() if v is None else cfg.momentum * v + g
            state[name] = v
        else:
            v = g
        w -= (lr * v).astype(w.dtype, copy=False)
    return params, state


@dataclass(frozen=True)
class Piecewise:
    base_lr: float | None = None  # None: resolved by the trainer (0.1, or 0.001 for RSL)
    drop_epochs: tuple = (100, 150)
    factor: float = 10.0
    total_epochs: int = 200

    kind = "piecewise"

    def lr_at(self, epoch):
        base = 0.1 if self.base_lr is None else self.base_lr
        drops = sum(1 for e in self.drop_epochs if math.floor(epoch) >= e)
        return base / self.factor**drops


@dataclass(frozen=True)
class OneCycle:
    max_lr: float = 0.2
    total_epochs: int = 200
    peak_fraction: float = 0.5

    kind = "onecycle"

    def lr_at(self, epoch):
        t = min(max(float(epoch), 0.0), float(self.total_epochs))
        peak = self.peak_fraction * self.total_epochs
        if t <= peak:
            return self.max_lr * t / peak
        return self.max_lr * (self.total_epochs - t) / (self.total_epochs - peak)


@dataclass(frozen=True)
class Cosine:
    max_lr: float = 0.2
    total_epochs: int = 200

    kind = "cosine"

    def lr_at(self, epoch):
        progress = min(max(float(epoch) / self.total_epochs, 0.0), 1.0)
        if progress == 1.0:
            return 0.0
        return self.max_lr * (1 + math.cos(math.pi * progress)) / 2


SCHEDULES = {cls.kind: cls for cls in (Piecewise, OneCycle, Cosine)}


def lr_at(schedule, epoch):
    return schedule.lr_at(epoch)


def schedule_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in SCHEDULES:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if "drop_epochs" in d:
        d["drop_epochs"] = tuple(d["drop_epochs"])
    return SCHEDULES[kind](**d)


def schedule_to_dict(s):
    d = {"kind": s.kind}
    for k, v in s.__dict__.items():
        d[k] = list(v) if isinstance(v, tuple) else v
    return d


@dataclass
class WeightAverager:
    """Exponential moving average of model parameters."""
    decay: float = 0.995
    start_epoch: int = 0
    averaged_params: "OrderedDict[str, np.ndarray] | None" = field(default=None, repr=False)
    updates: int = 0

    def update(self, current_params):
        if self.averaged_params is None:
            self.averaged_params = OrderedDict((k, v.copy()) for k, v in current_params.items())
        else:
            for k, v in current_params.items():
                avg = self.averaged_params[k]
                if avg.shape != v.shape:
                    raise ValueError(f"averaged {k} has shape {avg.shape}, current {v.shape}")
                self.averaged_params[k] = self.decay * avg + (1 - self.decay) * v
        self.updates += 1
        return self


def wa_update(averager, current_params):
    return averager.update(current_params)
