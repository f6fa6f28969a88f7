"""Classification metrics and the rater-disagreement statistic.

Average precision is the interpolation-free mean of precision at the rank
of each positive, with score ties broken by ascending sample index.
"""

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError


@dataclass
class EvalReport:
    accuracy: float
    per_class_ap: list  # one entry per class, None where the class has no positives
    map: float
    confusion: np.ndarray
    class_names: tuple = None

    def to_json(self):
        return {
            "accuracy": self.accuracy,
            "map": self.map,
            "per_class_ap": self.per_class_ap,
            "confusion": self.confusion.tolist(),
            "class_names": None if self.class_names is None else list(self.class_names),
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2)


def _labels(x, name):
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ArgumentError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr.astype(np.int64)


def accuracy(predictions, labels):
    p, y = _labels(predictions, "predictions"), _labels(labels, "labels")
    if p.shape != y.shape:
        raise ArgumentError(f"{p.size} predictions for {y.size} labels")
    if p.size == 0:
        raise ArgumentError("accuracy of an empty set is undefined")
    return float(np.mean(p == y))


def average_precision(scores, positives):
    """AP for one class; raises :class:`ArgumentError` when there are no positives."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if s.shape != pos.shape or s.ndim != 1:
        raise ArgumentError(f"scores {s.shape} and positives {pos.shape} must be equal-length vectors")
    if not np.all(np.isfinite(s)):
        raise ArgumentError("scores must be finite")
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ArgumentError("average precision is undefined without positives")
    # Stable sort on -s keeps ascending index order among equal scores.
    order = np.argsort(-s, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    # fsum is correctly rounded, so the result does not depend on summation order
    return math.fsum(np.arange(1, n_pos + 1) / ranks) / n_pos


def mean_average_precision(probabilities, labels):
    """Returns ``(map, per_class_ap)``; classes without positives are skipped."""
    probs = np.asarray(probabilities, dtype=np.float64)
    y = _labels(labels, "labels")
    if probs.ndim != 2 or probs.shape[0] != y.size:
        raise ArgumentError(f"probabilities {probs.shape} do not match {y.size} labels")
    K = probs.shape[1]
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ArgumentError(f"labels must lie in [0, {K})")
    per_class = []
    for k in range(K):
        positives = y == k
        if not positives.any():
            per_class.append(None)
            continue
        per_class.append(average_precision(probs[:, k], positives))
    present = [ap for ap in per_class if ap is not None]
    if not present:
        raise ArgumentError("no class has a positive sample")
    skipped = K - len(present)
    if skipped:
        warnings.warn(f"{skipped} class(es) without positives skipped in mAP", stacklevel=2)
    return math.fsum(present) / len(present), per_class


def confusion_matrix(predictions, labels, num_classes):
    """Counts with rows = truth, columns = prediction."""
    p, y = _labels(predictions, "predictions"), _labels(labels, "labels")
    if p.shape != y.shape:
        raise ArgumentError(f"{p.size} predictions for {y.size} labels")
    for name, arr in (("prediction", p), ("label", y)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ArgumentError(f"{name} index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def format_confusion(cm, class_names=None):
    """Row-normalized percentages as an aligned text table."""
    cm = np.asarray(cm)
    K = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(k) for k in range(K)]
    names = names[:K] + [str(k) for k in range(len(names), K)]
    rows = cm.sum(axis=1, keepdims=True)
    pct = np.divide(100.0 * cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    width = max(8, max(len(n) for n in names) + 1)
    lines = ["truth\\pred".ljust(width) + "".join(n[:width - 1].rjust(width) for n in names)]
    for name, row in zip(names, pct):
        lines.append(name.ljust(width) + "".join(f"{v:{width}.1f}" for v in row))
    return "\n".join(lines)


def evaluation_report(probabilities, labels, num_classes=None, class_names=None):
    probs = np.asarray(probabilities, dtype=np.float64)
    K = num_classes or probs.shape[1]
    preds = np.argmax(probs, axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m, per_class = mean_average_precision(probs, labels)
    return EvalReport(
        accuracy=accuracy(preds, labels),
        per_class_ap=per_class,
        map=m,
        confusion=confusion_matrix(preds, labels, K),
        class_names=class_names,
    )


def rater_disagreement(ratings):
    """Per emotion, the mean over items of the population variance of their ratings.

    ``ratings`` maps an emotion name to a list of items, each item being the
    list of integer intensities (0..5) given by its raters. Items with fewer
    than two ratings are excluded with a warning.
    """
    out = {}
    for emotion, items in ratings.items():
        variances = []
        for idx, item in enumerate(items):
            r = np.asarray(item, dtype=np.float64)
            if r.size and (r.min() < 0 or r.max() > 5 or np.any(r != np.round(r))):
                raise ArgumentError(f"{emotion} item {idx}: ratings must be integers in [0, 5]")
            if r.size < 2:
                warnings.warn(f"{emotion} item {idx} has fewer than 2 ratings; excluded", stacklevel=2)
                continue
            variances.append(float(np.var(r)))
        out[emotion] = float(np.mean(variances)) if variances else float("nan")
    return out
