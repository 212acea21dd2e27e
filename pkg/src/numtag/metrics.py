"""Soft dice and positionwise accuracy.

The multi-class soft dice between predicted probabilities ``p`` and one-hot
targets ``t`` (both ``(T, C)``) averages one overlap term per class::

    dice_c = (2 * sum_i p[i,c] t[i,c] + eps) / (sum_i p[i,c]^2 + sum_i t[i,c]^2 + eps)

With ``eps = 1e-5`` a class absent from both ``p`` and ``t`` scores 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

DICE_EPS = 1e-5


class ShapeMismatch(ValueError):
    pass


class EmptyEvalSet(ValueError):
    pass


def one_hot(labels, num_classes: int = 3) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[..., None] == np.arange(num_classes)).astype(np.float64)


def soft_dice_batch(p, t, eps: float = DICE_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Per-sequence dice and per-class terms for ``p`` of shape (..., T, C).

    ``t`` may be one-hot with the same shape as ``p`` or integer labels.
    """
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t)
    if t.shape == p.shape[:-1]:
        t = one_hot(t, p.shape[-1])
    if t.shape != p.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {t.shape}")
    t = t.astype(np.float64)
    inter = (p * t).sum(axis=-2)
    denom = (p * p).sum(axis=-2) + (t * t).sum(axis=-2)
    per_class = (2.0 * inter + eps) / (denom + eps)
    return per_class.mean(axis=-1), per_class


def soft_dice(p, t, eps: float = DICE_EPS, per_class: bool = False):
    """Soft dice of one (T, C) prediction against a one-hot (T, C) target."""
    p = np.asarray(p)
    if p.ndim != 2:
        raise ShapeMismatch(f"expected a (T, C) array, got {p.shape}")
    dice, terms = soft_dice_batch(p, t, eps)
    return (float(dice), terms) if per_class else float(dice)


def accuracy(p, labels) -> float:
    """Fraction of positions whose argmax equals the label; ties go to the lower class."""
    p = np.asarray(p)
    labels = np.asarray(labels)
    if p.shape[:-1] != labels.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs labels {labels.shape}")
    return float((p.argmax(axis=-1) == labels).mean())


@dataclass
class EvalReport:
    dice: float
    accuracy: float
    per_class_dice: list[float]
    n_instances: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def summary(self) -> str:
        pc = " ".join(f"{d:.4f}" for d in self.per_class_dice)
        return f"dice={self.dice:.4f} accuracy={self.accuracy:.4f} per_class=[{pc}] n={self.n_instances}"


def report_from_predictions(p, labels, pooled: bool = False, eps: float = DICE_EPS) -> EvalReport:
    """Aggregate metrics over a batch ``p`` of shape (N, T, C).

    By default dice is the mean of per-instance values. ``pooled=True`` sums
    the overlap terms over every position of every instance first.
    """
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels)
    if len(p) == 0:
        raise EmptyEvalSet("nothing to evaluate")
    if pooled:
        C = p.shape[-1]
        _, terms = soft_dice_batch(p.reshape(-1, C), labels.reshape(-1), eps)
    else:
        _, per_inst = soft_dice_batch(p, labels, eps)
        terms = per_inst.mean(axis=0)
    acc = float(np.mean([accuracy(pi, li) for pi, li in zip(p, labels)]))
    return EvalReport(float(terms.mean()), acc, [float(x) for x in terms], int(len(p)))


def evaluate(model, instances, pooled: bool = False, batch_size: int = 256) -> EvalReport:
    from .dataset import as_arrays
    from .tagger import predict_proba

    if not instances:
        raise EmptyEvalSet("no instances to evaluate")
    x, y = as_arrays(instances)
    return report_from_predictions(predict_proba(model, x, batch_size), y, pooled=pooled)


def constant_baseline(labels, label: int = 0, num_classes: int = 3) -> np.ndarray:
    """One-hot predictions of a single class everywhere, shaped like ``labels`` + (C,)."""
    return one_hot(np.full(np.shape(labels), label), num_classes)
