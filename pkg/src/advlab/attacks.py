"""L-infinity attacks used for the inner maximization and for evaluation.

All attacks are sign-gradient ascent on a target loss. Randomness comes from
per-sample generators seeded by (cfg.seed, *key, sample index, restart), so
results do not depend on batch composition or order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .diffcore import NonFiniteError, forward, input_gradient
from .losses import CEL, CWMargin, Loss

INITS = ("zero", "uniform", "gaussian")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    init: str = "gaussian"
    sigma: float | None = None  # gaussian init std; None means epsilon / 2
    noise_scale: float = 1.0  # uniform init interval is [-noise_scale*eps, noise_scale*eps]
    clip_delta: bool = True
    clip_image: bool = True
    restarts: int = 1
    target_loss: Loss = field(default_factory=CEL)
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def fgsm_config(**kw):
    kw = {"alpha": 10 / 255, "steps": 1, "init": "uniform", **kw}
    return AttackConfig(**kw)


def pgd_config(**kw):
    return AttackConfig(**kw)


def nfgsm_config(**kw):
    kw = {"alpha": 8 / 255, "steps": 1, "init": "uniform", "noise_scale": 2.0, "clip_delta": False, **kw}
    return AttackConfig(**kw)


def cw_config(**kw):
    kw = {"target_loss": CWMargin(), **kw}
    return AttackConfig(**kw)


@dataclass
class AdvBatch:
    x_adv: np.ndarray
    delta: np.ndarray
    success_mask: np.ndarray


def sample_rngs(seed, key, indices, restart=0):
    return [np.random.default_rng([int(seed), *map(int, key), int(i), int(restart)]) for i in indices]


def _init_delta(cfg, shape, indices, key, restart, dtype):
    n = shape[0]
    eps = cfg.epsilon
    if cfg.init == "zero" or eps == 0:
        return np.zeros(shape, dtype=dtype)
    rngs = sample_rngs(cfg.seed, key, indices, restart)
    if cfg.init == "uniform":
        bound = cfg.noise_scale * eps
        d = np.stack([r.uniform(-bound, bound, size=shape[1:]) for r in rngs])
    else:
        sigma = eps / 2 if cfg.sigma is None else cfg.sigma
        d = np.stack([r.normal(0.0, sigma, size=shape[1:]) for r in rngs])
        if cfg.clip_delta:
            d = np.clip(d, -eps, eps)
    return d.astype(dtype).reshape((n,) + tuple(shape[1:]))


def _project(x, delta, cfg):
    if cfg.clip_delta:
        delta = np.clip(delta, -cfg.epsilon, cfg.epsilon)
    if cfg.clip_image:
        delta = np.clip(x + delta, 0.0, 1.0) - x
    return delta


def _ascend(model, x, y, delta, cfg, loss, steps, clamp):
    for _ in range(steps):
        try:
            g, _ = input_gradient(model, loss, x + delta, y)
        except NonFiniteError as e:
            raise NonFiniteError(f"non-finite attack loss at sample {e.index}", e.index) from None
        bad = ~np.isfinite(g.reshape(len(g), -1)).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteError(f"non-finite input gradient at sample {i}", i)
        delta = delta + cfg.alpha * np.sign(g)
        if clamp:
            delta = _project(x, delta, cfg)
        elif cfg.clip_image:
            delta = np.clip(x + delta, 0.0, 1.0) - x
    return delta


def _finish(model, x, y, delta, cfg):
    x_adv = x + delta
    if cfg.clip_image:
        x_adv = np.clip(x_adv, 0.0, 1.0)
    success = forward(model, x_adv).argmax(axis=1) != y
    return AdvBatch(x_adv, x_adv - x, success)


def _prepare(model, batch, labels, indices):
    x = np.asarray(batch, dtype=model.dtype)
    y = np.asarray(labels, dtype=np.int64)
    idx = np.arange(len(x)) if indices is None else np.asarray(indices)
    return x, y, idx


def _start(model, x, cfg, idx, key, restart, delta0):
    if delta0 is not None:
        d = np.broadcast_to(np.asarray(delta0, dtype=model.dtype), x.shape).copy()
    else:
        d = _init_delta(cfg, x.shape, idx, key, restart, model.dtype)
    if cfg.clip_image:
        d = np.clip(x + d, 0.0, 1.0) - x
    return d


def fgsm(model, batch, labels, cfg=None, indices=None, key=(), delta0=None, restart=0):
    """Single signed-gradient step from a random start, clamped to the eps-ball."""
    cfg = cfg or fgsm_config()
    x, y, idx = _prepare(model, batch, labels, indices)
    if cfg.epsilon == 0:
        return _finish(model, x, y, np.zeros_like(x), cfg)
    delta = _start(model, x, cfg, idx, key, restart, delta0)
    delta = _ascend(model, x, y, delta, cfg, cfg.target_loss, 1, clamp=True)
    return _finish(model, x, y, delta, cfg)


def pgd(model, batch, labels, cfg=None, indices=None, key=(), delta0=None, restart=0):
    """Projected sign-gradient ascent for ``cfg.steps`` iterations."""
    cfg = cfg or pgd_config()
    if cfg.steps < 1:
        raise ValueError("pgd needs steps >= 1")
    x, y, idx = _prepare(model, batch, labels, indices)
    if cfg.epsilon == 0:
        return _finish(model, x, y, np.zeros_like(x), cfg)
    delta = _start(model, x, cfg, idx, key, restart, delta0)
    delta = _ascend(model, x, y, delta, cfg, cfg.target_loss, cfg.steps, clamp=True)
    return _finish(model, x, y, delta, cfg)


def nfgsm(model, batch, labels, cfg=None, indices=None, key=(), delta0=None, restart=0):
    """Noise + one signed step, no eps-ball clamp (image-range clip only)."""
    cfg = cfg or nfgsm_config()
    if cfg.clip_delta:
        cfg = replace(cfg, clip_delta=False)
    x, y, idx = _prepare(model, batch, labels, indices)
    delta = _start(model, x, cfg, idx, key, restart, delta0)
    delta = _ascend(model, x, y, delta, cfg, cfg.target_loss, 1, clamp=False)
    return _finish(model, x, y, delta, cfg)


def cw_pgd(model, batch, labels, cfg=None, indices=None, key=(), delta0=None, restart=0):
    """PGD with the CW margin as the target."""
    cfg = cfg or cw_config()
    if not isinstance(cfg.target_loss, CWMargin):
        cfg = replace(cfg, target_loss=CWMargin())
    return pgd(model, batch, labels, cfg, indices, key, delta0, restart)


def strong_eval(model, batch, labels, cfg=None, indices=None, key=(), attacks=("pgd", "cw")):
    """Multi-restart PGD(CE) + CW-margin PGD.

    Per sample, keeps the first perturbation that causes a misclassification;
    otherwise the one with the highest ``cfg.target_loss`` at the end.
    """
    cfg = cfg or pgd_config(restarts=3)
    x, y, idx = _prepare(model, batch, labels, indices)
    runs = []
    for name in attacks:
        fn = {"pgd": pgd, "cw": cw_pgd}[name]
        run_cfg = cfg if name == "cw" or not isinstance(cfg.target_loss, CWMargin) else replace(cfg, target_loss=CEL())
        for r in range(cfg.restarts):
            runs.append((fn, run_cfg, r))
    score_loss = cfg.target_loss if not isinstance(cfg.target_loss, CWMargin) else CEL()
    found = np.zeros(len(x), dtype=bool)
    best_x = None
    best_score = np.full(len(x), -np.inf)
    for fn, run_cfg, r in runs:
        adv = fn(model, x, y, run_cfg, indices=idx, key=key, restart=r)
        if best_x is None:
            best_x = adv.x_adv.copy()
        score = score_loss.value(forward(model, adv.x_adv), y)
        take_flip = adv.success_mask & ~found
        take_score = ~found & ~adv.success_mask & (score > best_score)
        take = take_flip | take_score
        best_x[take] = adv.x_adv[take]
        best_score = np.where(take_score, score, best_score)
        found |= adv.success_mask
    return AdvBatch(best_x, best_x - x, found)

ATTACKS = {"fgsm": fgsm, "pgd": pgd, "nfgsm": nfgsm, "cw": cw_pgd, "strong": strong_eval}
