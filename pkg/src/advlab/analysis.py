"""Evaluation reports, robust-overfitting gaps and the bias-variance decomposition."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
import json

import numpy as np

from . import attacks as atk
from .data import DEFAULT_CORRUPTIONS, corrupt, split_parts
from .diffcore import forward
from .losses import softmax
from .train import accuracy, adversarial_accuracy, eval_suite, train


@dataclass
class EvalReport:
    natural_acc: float
    adv_acc: dict = field(default_factory=dict)
    corruption_acc: dict = field(default_factory=dict)  # "label@severity" -> accuracy
    corruption_mean: float | None = None

    def to_dict(self):
        return asdict(self)


def evaluate(model, test_set, suite=None, corruptions=None, severities=(1, 2, 3, 4, 5), seed=0):
    """Natural accuracy plus accuracy under each attack in ``suite``.

    ``suite`` maps attack names (fgsm, pgd, cw, strong, nfgsm) to configs; the
    default is the FGSM / PGD-10 / CW-10 / strong set at eps = 8/255.
    The model is not modified.
    """
    suite = eval_suite() if suite is None else suite
    x, y = test_set.images, test_set.labels
    report = EvalReport(accuracy(model, x, y))
    for name, cfg in suite.items():
        report.adv_acc[name] = adversarial_accuracy(model, x, y, name, cfg)
    if corruptions:
        c = corruption_eval(model, test_set, corruptions, severities, seed)
        report.corruption_acc = c["cells"]
        report.corruption_mean = c["mean"]
    return report


def gap(values):
    values = list(values)
    if not values:
        raise ValueError("empty sequence")
    best, final = max(values), values[-1]
    return {"best": best, "final": final, "diff": best - final}


def overfit_gap(metrics):
    """Best / final / best - final for natural and each adversarial accuracy."""
    if not metrics:
        raise ValueError("overfit_gap needs at least one epoch of metrics")
    out = {"nat": gap(m.natural_acc for m in metrics)}
    for name in metrics[0].adv_acc:
        out[name] = gap(m.adv_acc[name] for m in metrics)
    return out


def corruption_eval(model, test_set, kinds=DEFAULT_CORRUPTIONS, severities=(1, 2, 3, 4, 5), seed=0):
    cells = {}
    for kind in kinds:
        for s in severities:
            xc = corrupt(test_set.images, kind, s, seed)
            cells[f"{kind.label}@{s}"] = accuracy(model, xc, test_set.labels)
    mean = float(np.mean(list(cells.values()))) if cells else None
    return {"cells": cells, "mean": mean}


# -- bias-variance --------------------------------------------------------------

@dataclass
class BVTerms:
    risk: float
    bias: float
    variance: float


@dataclass
class BVRow:
    sweep_eps: float
    natural: BVTerms
    adversarial: BVTerms
    natural_acc: list = field(default_factory=list)
    adversarial_acc: list = field(default_factory=list)


BV_HEADER = ("sweep_eps", "nat_risk", "nat_bias", "nat_var", "adv_risk", "adv_bias", "adv_var")


@dataclass
class BVReport:
    rows: list
    space: str = "softmax"

    def to_csv(self):
        lines = [",".join(BV_HEADER)]
        for r in self.rows:
            vals = (r.sweep_eps, r.natural.risk, r.natural.bias, r.natural.variance,
                    r.adversarial.risk, r.adversarial.bias, r.adversarial.variance)
            lines.append(",".join(format(v, ".10g") for v in vals))
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"space": self.space, "rows": [asdict(r) for r in self.rows]}, indent=2, sort_keys=True)


def decompose(preds, targets):
    """Squared-norm decomposition over model realizations.

    ``preds`` is (T, N, C): the prediction of each of T models on N points;
    ``targets`` is (N, C). Returns dataset-mean (risk, bias, variance) with
    risk = mean_t ||y - g_t||^2, bias = ||y - mean_t g_t||^2 and
    variance = mean_t ||g_t - mean_t g_t||^2.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mean = preds.mean(axis=0)
    risk = ((targets[None] - preds) ** 2).sum(axis=2).mean(axis=0)
    bias = ((targets - mean) ** 2).sum(axis=1)
    var = ((preds - mean[None]) ** 2).sum(axis=2).mean(axis=0)
    return BVTerms(float(risk.mean()), float(bias.mean()), float(var.mean()))


def attack_for_epsilon(cfg, eps):
    """Same attack at a different budget; the step size keeps its ratio to eps."""
    alpha = cfg.alpha * eps / cfg.epsilon if cfg.epsilon > 0 else cfg.alpha
    return replace(cfg, epsilon=eps, alpha=alpha)


def _predictions(model, x, space):
    logits = forward(model, x).astype(np.float64)
    return softmax(logits) if space == "softmax" else logits


def bias_variance(train_set, test_set, config, attack_cfg=None, eps_list=(8 / 255,), split_seed=0,
                  degenerate=False, space="softmax", parts=2, stratified=True):
    """Train one model per disjoint part of ``train_set`` for each training eps and
    decompose natural and adversarial test risk.

    Each part-model is attacked on its own (evaluation attack ``attack_cfg``,
    PGD-10 at 8/255 by default). ``degenerate`` trains every model on the first
    part with the same seed, so the variance must come out zero.
    """
    if space not in ("softmax", "logits"):
        raise ValueError("space must be 'softmax' or 'logits'")
    attack_cfg = attack_cfg or atk.pgd_config()
    halves = split_parts(train_set, parts, split_seed, stratified)
    if degenerate:
        halves = [halves[0]] * parts
    onehot = np.eye(test_set.classes)[test_set.labels]
    x = test_set.images
    base_attack = config.training_attack()
    rows = []
    for eps in eps_list:
        cfg_eps = config if base_attack is None else replace(config, attack=attack_for_epsilon(base_attack, eps))
        nat_preds, adv_preds, nat_acc, adv_acc = [], [], [], []
        for part in halves:
            model = train(cfg_eps, part, test_set, record_time=False).model
            adv = atk.pgd(model, x.astype(model.dtype), test_set.labels, attack_cfg) if attack_cfg.epsilon > 0 \
                else atk.AdvBatch(x, np.zeros_like(x), None)
            nat_preds.append(_predictions(model, x, space))
            adv_preds.append(_predictions(model, adv.x_adv, space))
            nat_acc.append(float((nat_preds[-1].argmax(1) == test_set.labels).mean()))
            adv_acc.append(float((adv_preds[-1].argmax(1) == test_set.labels).mean()))
        rows.append(BVRow(float(eps), decompose(nat_preds, onehot), decompose(adv_preds, onehot), nat_acc, adv_acc))
    return BVReport(rows, space)


def parse_bv_csv(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    if tuple(header) != BV_HEADER:
        raise ValueError(f"unexpected bias-variance CSV header {header}")
    return [dict(zip(header, map(float, ln.split(",")))) for ln in lines[1:]]


__all__ = ["EvalReport", "evaluate", "overfit_gap", "gap", "corruption_eval", "decompose", "bias_variance",
           "BVReport", "BVRow", "BVTerms", "BV_HEADER", "attack_for_epsilon",
           "parse_bv_csv"]
