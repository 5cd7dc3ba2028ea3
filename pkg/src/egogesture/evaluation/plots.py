"""Learning-curve and confusion-matrix figures."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core import InputError  # noqa: E402


def learning_curves(history: Sequence[dict], path: Union[str, Path]) -> Path:
    if not history:
        raise InputError("history is empty")
    epochs = [h["epoch"] for h in history]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, key in zip(axes, ("L1", "L2", "L")):
        ax.plot(epochs, [h[f"train_{key}"] for h in history], label="train")
        val = [h.get(f"val_{key}") for h in history]
        if any(v is not None and np.isfinite(v) for v in val):
            ax.plot(epochs, [np.nan if v is None else v for v in val], label="validation")
        ax.set_xlabel("epoch")
        ax.set_title(key)
        ax.set_yscale("log")
        ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def confusion_figure(matrix, classes: Sequence[str], path: Union[str, Path]) -> Path:
    m = np.asarray(matrix)
    cols = list(classes) + (["unknown"] if m.shape[1] == len(classes) + 1 else [])
    fig, ax = plt.subplots(figsize=(1 + 0.8 * len(cols), 1 + 0.7 * len(classes)))
    ax.imshow(m, cmap="Blues")
    ax.set_xticks(range(len(cols)), cols, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    thresh = m.max() / 2 if m.size else 0
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, str(m[i, j]), ha="center", va="center",
                    color="white" if m[i, j] > thresh else "black", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
