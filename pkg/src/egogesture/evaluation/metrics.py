"""Classification metrics, masked fingertip pixel error and confusion matrices."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..codec import UNKNOWN
from ..core import AnnotatedSample, DetectionResult, FingerId, GestureCode, InputError

METRICS = ("accuracy", "precision", "recall", "f1")


@dataclass
class ClassMetrics:
    per_class: "OrderedDict[str, dict]"
    mean: dict
    # Ratios with a zero denominator were reported as 0; listed as (class, metric).
    undefined: list = field(default_factory=list)
    unknown_predictions: int = 0
    total: int = 0

    def to_dict(self) -> dict:
        return {"per_class": self.per_class, "mean": self.mean, "undefined": self.undefined,
                "unknown_predictions": self.unknown_predictions, "total": self.total}


def _ordered_classes(pairs, classes):
    if classes is not None:
        return list(classes)
    seen = OrderedDict()
    for t, p in pairs:
        for c in (t, p):
            if c != UNKNOWN:
                seen.setdefault(c, None)
    return list(seen)


def _one_vs_rest(tp, fp, fn, tn, name, undefined):
    total = tp + fp + fn + tn
    row = {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "accuracy": (tp + tn) / total}
    for metric, num, den in (("precision", tp, tp + fp), ("recall", tp, tp + fn)):
        if den == 0:
            undefined.append((name, metric))
            row[metric] = 0.0
        else:
            row[metric] = num / den
    p, r = row["precision"], row["recall"]
    if p + r == 0:
        undefined.append((name, "f1"))
        row["f1"] = 0.0
    else:
        row["f1"] = 2 * p * r / (p + r)
    return row


def classification_metrics(results: Sequence[tuple], classes: Optional[Sequence[str]] = None,
                           mode: str = "class") -> ClassMetrics:
    """One-vs-rest accuracy, precision, recall and F1 per gesture class.

    ``results`` holds ``(true, predicted)`` pairs. In ``"class"`` mode these
    are class names; an ``"unknown"`` prediction is a negative for every
    class. In ``"finger"`` mode they are gesture codes and each finger bit is
    scored as its own binary problem.
    """
    results = list(results)
    if not results:
        raise InputError("classification_metrics needs at least one result")
    undefined: list = []
    per: OrderedDict[str, dict] = OrderedDict()
    if mode == "class":
        names = _ordered_classes(results, classes)
        for c in names:
            tp = sum(t == c and p == c for t, p in results)
            fp = sum(t != c and p == c for t, p in results)
            fn = sum(t == c and p != c for t, p in results)
            tn = len(results) - tp - fp - fn
            per[c] = _one_vs_rest(tp, fp, fn, tn, c, undefined)
        unknown = sum(p == UNKNOWN for _, p in results)
    elif mode == "finger":
        t = np.array([list(GestureCode.of(a).bits) for a, _ in results])
        p = np.array([list(GestureCode.of(b).bits) for _, b in results])
        for f in FingerId:
            tf, pf = t[:, f], p[:, f]
            tp = int(np.sum((tf == 1) & (pf == 1)))
            fp = int(np.sum((tf == 0) & (pf == 1)))
            fn = int(np.sum((tf == 1) & (pf == 0)))
            per[f.label] = _one_vs_rest(tp, fp, fn, len(results) - tp - fp - fn, f.label, undefined)
        unknown = 0
    else:
        raise InputError(f"mode must be 'class' or 'finger', got {mode!r}")
    mean = {m: float(np.mean([row[m] for row in per.values()])) for m in METRICS} if per else {}
    return ClassMetrics(per, mean, undefined, unknown, len(results))


@dataclass
class PixelErrorReport:
    # class -> {"mean", "std", "samples", "fingers"}; classes without any
    # correctly recognized sample are absent.
    per_class: "OrderedDict[str, dict]"
    overall_mean: Optional[float]
    overall_std: Optional[float]
    excluded: int = 0

    def to_dict(self) -> dict:
        return {"per_class": self.per_class, "overall_mean": self.overall_mean,
                "overall_std": self.overall_std, "excluded": self.excluded}


def fingertip_distances(sample: AnnotatedSample, det: DetectionResult) -> list[float]:
    out = []
    for f in det.code.visible():
        gt, pr = sample.fingertips[f], det.fingertips[f]
        if gt is None or pr is None:
            continue
        out.append(float(np.hypot(gt[0] - pr[0], gt[1] - pr[1])))
    return out


def pixel_error(results: Sequence[tuple], classes: Optional[Sequence[str]] = None) -> PixelErrorReport:
    """Mean Euclidean fingertip error over correctly recognized samples.

    A sample counts as recognized when the predicted code equals the true
    code exactly; only its visible fingers contribute. Standard deviation is
    taken over the per-finger distances.
    """
    by_class: OrderedDict[str, list[float]] = OrderedDict((c, []) for c in (classes or []))
    counts: dict[str, int] = {}
    excluded = 0
    for sample, det in results:
        by_class.setdefault(sample.gesture_class, [])
        if det is None or det.code != sample.code:
            excluded += 1
            continue
        by_class[sample.gesture_class].extend(fingertip_distances(sample, det))
        counts[sample.gesture_class] = counts.get(sample.gesture_class, 0) + 1
    per: OrderedDict[str, dict] = OrderedDict()
    everything: list[float] = []
    for c, d in by_class.items():
        if counts.get(c, 0) == 0:
            continue
        arr = np.asarray(d)
        per[c] = {"mean": float(arr.mean()), "std": float(arr.std()), "samples": counts[c],
                  "fingers": int(arr.size)}
        everything.extend(d)
    if everything:
        arr = np.asarray(everything)
        return PixelErrorReport(per, float(arr.mean()), float(arr.std()), excluded)
    return PixelErrorReport(per, None, None, excluded)


def confusion_matrix(results: Sequence[tuple], classes: Sequence[str]) -> np.ndarray:
    """Counts with rows = actual class, columns = predicted class plus a trailing unknown column."""
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes) + 1), dtype=np.int64)
    for t, p in results:
        if t not in index:
            raise InputError(f"true class {t!r} is not among {list(classes)}")
        m[index[t], index.get(p, len(classes))] += 1
    return m
