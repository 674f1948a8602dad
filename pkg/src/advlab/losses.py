"""Classification objectives on raw logits.

Every loss exposes ``value(logits, labels)`` returning one value per sample
and ``grad(logits, labels)`` returning the derivative of each sample's value
w.r.t. its own logits. ``logits`` is (N, C), ``labels`` is (N,) ints.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

NORM_FLOOR = 1e-12


def _onehot(labels, classes, dtype=np.float64):
    out = np.zeros((len(labels), classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _rows(labels):
    return np.arange(len(labels)), labels


class Loss:
    name = "loss"

    def value(self, logits, labels):
        raise NotImplementedError

    def grad(self, logits, labels):
        raise NotImplementedError

    def __call__(self, logits, label):
        """Scalar loss for a single logit vector."""
        logits = np.asarray(logits, dtype=np.float64)[None, :]
        return float(self.value(logits, np.array([label]))[0])

    def to_dict(self):
        d = {"kind": self.name}
        for k, v in self.__dict__.items():
            d[k] = v.to_dict() if isinstance(v, Loss) else v
        return d


@dataclass(frozen=True)
class CEL(Loss):
    name = "cel"

    def value(self, logits, labels):
        return -_log_softmax(logits)[_rows(labels)]

    def grad(self, logits, labels):
        return softmax(logits) - _onehot(labels, logits.shape[1], logits.dtype)


@dataclass(frozen=True)
class OSL(Loss):
    """Squared distance between softmax output and the one-hot label."""
    name = "osl"

    def value(self, logits, labels):
        r = softmax(logits) - _onehot(labels, logits.shape[1], logits.dtype)
        return (r * r).sum(axis=1)

    def grad(self, logits, labels):
        p = softmax(logits)
        u = 2 * (p - _onehot(labels, logits.shape[1], logits.dtype))
        return p * (u - (p * u).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class RSL(Loss):
    """k * (f_y - M)^2 + sum_{j != y} f_j^2."""
    k: float = 2.0
    M: float = 1.0
    name = "rsl"

    def __post_init__(self):
        if self.k <= 0 or self.M <= 0:
            raise ValueError("RSL needs k > 0 and M > 0")

    def value(self, logits, labels):
        rows = _rows(labels)
        sq = logits * logits
        true = logits[rows]
        return sq.sum(axis=1) - sq[rows] + self.k * (true - self.M) ** 2

    def grad(self, logits, labels):
        g = 2 * logits
        rows = _rows(labels)
        g[rows] = 2 * self.k * (logits[rows] - self.M)
        return g


@dataclass(frozen=True)
class Squentropy(Loss):
    lam: float = 1.0
    name = "squentropy"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("squentropy needs lam >= 0")

    def value(self, logits, labels):
        rows = _rows(labels)
        ce = -_log_softmax(logits)[rows]
        if self.lam == 0:
            return ce
        sq = logits * logits
        return ce + self.lam * (sq.sum(axis=1) - sq[rows])

    def grad(self, logits, labels):
        g = CEL().grad(logits, labels)
        if self.lam == 0:
            return g
        mask = 1 - _onehot(labels, logits.shape[1], logits.dtype)
        return g + 2 * self.lam * logits * mask


@dataclass(frozen=True)
class LabelSmooth(Loss):
    eps: float = 0.1
    name = "label_smooth"

    def __post_init__(self):
        if not 0 <= self.eps < 1:
            raise ValueError("label smoothing needs 0 <= eps < 1")

    def _target(self, labels, classes, dtype):
        return (1 - self.eps) * _onehot(labels, classes, dtype) + self.eps / classes

    def value(self, logits, labels):
        if self.eps == 0:
            return CEL().value(logits, labels)
        t = self._target(labels, logits.shape[1], logits.dtype)
        return -(t * _log_softmax(logits)).sum(axis=1)

    def grad(self, logits, labels):
        if self.eps == 0:
            return CEL().grad(logits, labels)
        return softmax(logits) - self._target(labels, logits.shape[1], logits.dtype)


@dataclass(frozen=True)
class LogitPenalty(Loss):
    base: Loss = field(default_factory=CEL)
    beta: float = 0.01
    name = "logit_penalty"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("logit penalty needs beta >= 0")

    def value(self, logits, labels):
        v = self.base.value(logits, labels)
        if self.beta == 0:
            return v
        return v + self.beta * (logits * logits).sum(axis=1)

    def grad(self, logits, labels):
        g = self.base.grad(logits, labels)
        if self.beta == 0:
            return g
        return g + 2 * self.beta * logits


@dataclass(frozen=True)
class LogitNorm(Loss):
    """Cross-entropy on f / (tau * ||f||). Near-zero logits count as uniform."""
    tau: float = 1.0
    name = "logit_norm"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("logit norm needs tau > 0")

    def _normed(self, logits):
        norm = np.sqrt((logits * logits).sum(axis=1, keepdims=True))
        small = norm < NORM_FLOOR
        safe = np.where(small, 1.0, norm)
        return np.where(small, 0.0, logits / (self.tau * safe)), safe, small

    def value(self, logits, labels):
        return CEL().value(self._normed(logits)[0], labels)

    def grad(self, logits, labels):
        fhat, norm, small = self._normed(logits)
        g = CEL().grad(fhat, labels)
        proj = g - logits * (logits * g).sum(axis=1, keepdims=True) / norm**2
        return np.where(small, 0.0, proj / (self.tau * norm))


@dataclass(frozen=True)
class CWMargin(Loss):
    """max_{j != y} f_j - f_y; the attacker maximizes it."""
    name = "cw_margin"

    def _other(self, logits, labels):
        masked = logits.copy()
        masked[_rows(labels)] = -np.inf
        return masked.argmax(axis=1)

    def value(self, logits, labels):
        rows = _rows(labels)
        other = self._other(logits, labels)
        return logits[rows[0], other] - logits[rows]

    def grad(self, logits, labels):
        g = np.zeros_like(logits)
        rows = _rows(labels)
        g[rows[0], self._other(logits, labels)] = 1
        g[rows] = -1
        return g


@dataclass(frozen=True)
class Scaled(Loss):
    base: Loss = field(default_factory=CEL)
    factor: float = 1.0
    name = "scaled"

    def value(self, logits, labels):
        return self.factor * self.base.value(logits, labels)

    def grad(self, logits, labels):
        return self.factor * self.base.grad(logits, labels)


KINDS = {cls.name: cls for cls in (CEL, OSL, RSL, Squentropy, LabelSmooth,
                                   LogitPenalty, LogitNorm, CWMargin, Scaled)}


def loss_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if "base" in d:
        d["base"] = loss_from_dict(d["base"])
    return KINDS[kind](**d)


# scalar conveniences on a single logit vector

def cel(logits, label):
    return CEL()(logits, label)


def osl(logits, label):
    return OSL()(logits, label)


def rsl(logits, label, k=2.0, M=1.0):
    return RSL(k, M)(logits, label)


def squentropy(logits, label, lam=1.0):
    return Squentropy(lam)(logits, label)


def label_smooth(logits, label, eps):
    return LabelSmooth(eps)(logits, label)


def logit_penalty(logits, label, base=None, beta=0.01):
    return LogitPenalty(base or CEL(), beta)(logits, label)


def logit_norm(logits, label, tau=1.0):
    return LogitNorm(tau)(logits, label)


def cw_margin(logits, label):
    if len(logits) < 2:
        raise ValueError("cw margin needs at least two classes")
    return CWMargin()(logits, label)


def uniform_cel(classes):
    return math.log(classes)
