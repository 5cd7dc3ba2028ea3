"""Per-stage timing: hand detector, network forward, post-processing."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..codec import DEFAULT_THRESHOLD, GestureRegistry
from ..core import InputError
from ..model import parameter_count, predict
from ..pipeline import HandDetector, crop_and_resize, decode, final_coordinates, postprocess_for, to_network_input

WARMUP = 10


@dataclass
class TimingReport:
    parameters: int
    images: int
    detector_ms: tuple
    forward_ms: tuple
    postprocess_us: tuple
    total_ms: tuple

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _stat(values) -> tuple:
    a = np.asarray(values)
    return float(a.mean()), float(a.std())


def benchmark(net, detector: HandDetector, images: Sequence[np.ndarray], n_images: Optional[int] = None,
              warmup: int = WARMUP, tau: float = DEFAULT_THRESHOLD,
              ids: Optional[Sequence[str]] = None) -> TimingReport:
    """Time each stage per image (batch of one); the first ``warmup`` iterations are discarded."""
    n = n_images if n_images is not None else len(images) - warmup
    if n < 1:
        raise InputError("benchmark needs at least one timed image beyond the warm-up")
    registry = GestureRegistry.default()
    post = postprocess_for(net)
    rng = np.random.default_rng(0)
    det_t, fwd_t, post_t = [], [], []
    for i in range(warmup + n):
        image = images[i % len(images)]
        image_id = ids[i % len(ids)] if ids is not None else None
        t0 = time.perf_counter()
        box = detector.detect(image, image_id)
        t1 = time.perf_counter()
        if box is None:
            continue
        box = box.clip(image.shape[1], image.shape[0])
        crop = crop_and_resize(image, box, net.config.input_size)
        probs, pos = predict(net, to_network_input([crop.pixels]))
        t2 = time.perf_counter()
        coords = final_coordinates(pos, post, rng)
        decode(probs[0], coords[0], crop.bbox, tau, registry)
        t3 = time.perf_counter()
        if i >= warmup:
            det_t.append((t1 - t0) * 1e3)
            fwd_t.append((t2 - t1) * 1e3)
            post_t.append((t3 - t2) * 1e6)
    if not fwd_t:
        raise InputError("detector found no hand in any benchmark image")
    total = np.asarray(det_t) + np.asarray(fwd_t) + np.asarray(post_t) / 1e3
    return TimingReport(parameter_count(net), len(fwd_t), _stat(det_t), _stat(fwd_t), _stat(post_t), _stat(total))
