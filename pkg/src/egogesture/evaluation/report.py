"""Evaluation driver and aligned-text tables (classification, pixel error, ablation, timing)."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..codec import DEFAULT_THRESHOLD, UNKNOWN, GestureRegistry
from ..core import AnnotatedSample
from ..pipeline import GroundTruthDetector, HandDetector, detect_batch
from .metrics import METRICS, classification_metrics, confusion_matrix, pixel_error


def evaluate(net, samples: Sequence[AnnotatedSample], detector: Optional[HandDetector] = None,
             registry: Optional[GestureRegistry] = None, tau: float = DEFAULT_THRESHOLD,
             postprocess: Optional[str] = None, seed: int = 0, mode: str = "class") -> tuple[dict, list]:
    """Run the pipeline over ``samples``; returns the metric report and the raw detections.

    ``detector`` defaults to the ground-truth boxes. A sample for which the
    detector finds no hand counts as an ``unknown`` prediction.
    """
    registry = registry or GestureRegistry.default()
    detector = detector or GroundTruthDetector.from_samples(samples)
    items = [(s.name, s.image) for s in samples]
    dets = detect_batch(items, detector, net, tau, registry, postprocess, np.random.default_rng(seed))
    pairs = [(s.gesture_class, d.gesture_class if d is not None else UNKNOWN) for s, d in zip(samples, dets)]
    classes = registry.names
    if mode == "finger":
        code_pairs = [(s.code.bits, d.code.bits if d is not None else (0,) * 5) for s, d in zip(samples, dets)]
        cls = classification_metrics(code_pairs, mode="finger")
    else:
        cls = classification_metrics(pairs, classes)
    px = pixel_error(list(zip(samples, dets)), classes)
    return {
        "classification": cls.to_dict(),
        "pixel_error": px.to_dict(),
        "confusion": {"classes": classes, "matrix": confusion_matrix(pairs, classes).tolist()},
        "samples": len(samples),
        "no_hand": sum(d is None for d in dets),
    }, dets


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *map(line, rows)])


def classification_table(cls: dict, label: str = "") -> str:
    head = ["Class", "Accuracy", "Precision", "Recall", "F1"]
    rows = [[c, *(f"{100 * r[m]:.2f}" if m != "f1" else f"{r[m]:.4f}" for m in METRICS)]
            for c, r in cls["per_class"].items()]
    if cls["mean"]:
        rows.append(["Mean", *(f"{100 * cls['mean'][m]:.2f}" if m != "f1" else f"{cls['mean'][m]:.4f}"
                               for m in METRICS)])
    out = _table(head, rows)
    if cls.get("undefined"):
        out += "\n* zero denominator reported as 0: " + ", ".join(f"{c}/{m}" for c, m in cls["undefined"])
    if cls.get("unknown_predictions"):
        out += f"\n* {cls['unknown_predictions']} of {cls['total']} predictions matched no registered gesture"
    return (label + "\n" if label else "") + out


def pixel_error_table(px: dict, label: str = "") -> str:
    rows = [[c, f"{r['mean']:.2f} ± {r['std']:.2f}", str(r["samples"])] for c, r in px["per_class"].items()]
    if px["overall_mean"] is not None:
        rows.append(["Mean", f"{px['overall_mean']:.2f} ± {px['overall_std']:.2f}",
                     str(sum(r["samples"] for r in px["per_class"].values()))])
    out = _table(["Class", "Error (px)", "Samples"], rows)
    if px.get("excluded"):
        out += f"\n* {px['excluded']} misrecognized samples excluded"
    return (label + "\n" if label else "") + out


def ablation_table(reports: dict) -> str:
    """``reports`` maps variant name to an :func:`evaluate` report."""
    rows = []
    for name, rep in reports.items():
        px = rep["pixel_error"]
        err = "n/a" if px["overall_mean"] is None else f"{px['overall_mean']:.2f} ± {px['overall_std']:.2f}"
        rows.append([name, f"{100 * rep['classification']['mean']['accuracy']:.2f}", err])
    return _table(["Variant", "Mean accuracy", "Error (px)"], rows)


def timing_table(timing: dict) -> str:
    ms = lambda v: f"{v[0]:.2f} ± {v[1]:.2f}"
    rows = [["Parameters", f"{timing['parameters']:,}"],
            ["Detector (ms)", ms(timing["detector_ms"])],
            ["Forward (ms)", ms(timing["forward_ms"])],
            ["Post-processing (us)", ms(timing["postprocess_us"])],
            ["Total (ms)", ms(timing["total_ms"])],
            ["Images timed", str(timing["images"])]]
    return _table(["Quantity", "Value"], rows)
