"""Detection: hand box -> crop/resize -> network -> threshold + ensemble average -> image pixels."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence, Union

import cv2
import numpy as np

from .codec import DEFAULT_THRESHOLD, GestureRegistry, binarize, classify
from .core import (
    AnnotatedSample,
    BoundingBox,
    DataError,
    DetectionResult,
    EgoGestureError,
    FingerProbabilities,
    FingertipSet,
    Frame,
    InputError,
    N_FINGERS,
)
from . import model as model_mod

POSTPROCESS = ("mean", "random_row", "none")


class PipelineError(EgoGestureError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.__cause__ = cause


# -- hand detectors ----------------------------------------------------------

class HandDetector(Protocol):
    def detect(self, image: np.ndarray, image_id: Optional[str] = None) -> Optional[BoundingBox]:
        ...


class GroundTruthDetector:
    """Returns the annotated box for each image id."""

    def __init__(self, boxes: Mapping[str, Optional[BoundingBox]]):
        self.boxes = dict(boxes)

    @classmethod
    def from_samples(cls, samples: Iterable[AnnotatedSample]) -> "GroundTruthDetector":
        return cls({s.name: s.bbox for s in samples})

    def detect(self, image, image_id=None):
        return self.boxes.get(image_id)


class BoxFileDetector(GroundTruthDetector):
    """Precomputed boxes from JSON lines ``{"image": path, "bbox": [x_tl, y_tl, x_br, y_br]}``."""

    def __init__(self, path: Union[str, Path]):
        boxes = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    bbox = rec.get("bbox")
                    boxes[str(rec["image"])] = None if bbox is None else BoundingBox(*bbox)
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"malformed box record: {exc}", line=lineno) from exc
        super().__init__(boxes)


class FullFrameDetector:
    def detect(self, image, image_id=None):
        h, w = image.shape[:2]
        return BoundingBox(0, 0, w, h)


# -- geometry ----------------------------------------------------------------

def ensemble_average(x: np.ndarray) -> np.ndarray:
    """Mean over the ensemble rows: 2N x 2N (or batched B x 2N x 2N) -> 2N."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (2 * N_FINGERS, 2 * N_FINGERS):
        raise InputError(f"ensemble matrix must be {2 * N_FINGERS}x{2 * N_FINGERS}, got {x.shape}")
    # Summing each column in sorted order makes the result independent of row order, bit for bit.
    return np.sort(x, axis=-2).sum(axis=-2) / x.shape[-2]


def random_row(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[rng.integers(x.shape[0])]
    rows = rng.integers(x.shape[1], size=x.shape[0])
    return x[np.arange(x.shape[0]), rows]


def final_coordinates(positions: np.ndarray, postprocess: str = "mean",
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if postprocess == "mean":
        return ensemble_average(positions)
    if postprocess == "random_row":
        return random_row(positions, rng if rng is not None else np.random.default_rng(0))
    if postprocess == "none":
        return np.asarray(positions, dtype=np.float64)
    raise InputError(f"postprocess must be one of {POSTPROCESS}, got {postprocess!r}")


@dataclass(frozen=True)
class Crop:
    pixels: np.ndarray  # size x size x 3, uint8
    bbox: BoundingBox

    @property
    def height(self) -> int:
        return self.bbox.height

    @property
    def width(self) -> int:
        return self.bbox.width


def crop_and_resize(image: np.ndarray, bbox: BoundingBox, size: int = 128) -> Crop:
    """Bilinear resize of the box region to ``size`` x ``size``."""
    if bbox.is_degenerate:
        raise InputError(f"degenerate bounding box {bbox.as_list()}")
    h, w = image.shape[:2]
    if not bbox.within(w, h):
        raise InputError(f"bounding box {bbox.as_list()} exceeds image {w}x{h}")
    region = np.ascontiguousarray(image[bbox.y_tl:bbox.y_br, bbox.x_tl:bbox.x_br])
    if region.shape[:2] == (size, size):
        pixels = region.copy()
    else:
        pixels = cv2.resize(region, (size, size), interpolation=cv2.INTER_LINEAR)
    return Crop(pixels, bbox)


def to_network_input(pixels: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32) / 255.0


def coords_to_image(coords: np.ndarray, bbox: BoundingBox) -> np.ndarray:
    """Normalized-crop 2N vector (x, y interleaved) -> image pixels."""
    out = np.array(coords, dtype=np.float64)
    out[0::2] = out[0::2] * bbox.width + bbox.x_tl
    out[1::2] = out[1::2] * bbox.height + bbox.y_tl
    return out


def coords_to_normalized(coords: np.ndarray, bbox: BoundingBox) -> np.ndarray:
    out = np.array(coords, dtype=np.float64)
    out[0::2] = (out[0::2] - bbox.x_tl) / bbox.width
    out[1::2] = (out[1::2] - bbox.y_tl) / bbox.height
    return out


def decode(probs: np.ndarray, coords: np.ndarray, bbox: BoundingBox,
           tau: float = DEFAULT_THRESHOLD, registry: Optional[GestureRegistry] = None) -> DetectionResult:
    """Threshold probabilities and map the visible fingers' normalized coordinates to image pixels."""
    p = FingerProbabilities(tuple(np.clip(np.asarray(probs, dtype=np.float64), 0.0, 1.0)))
    code = binarize(p, tau)
    pix = coords_to_image(coords, bbox)
    tips = tuple((float(pix[2 * f]), float(pix[2 * f + 1])) if code[f] else None for f in range(N_FINGERS))
    name = classify(code, registry or GestureRegistry.default())
    return DetectionResult(code, name, FingertipSet(tips, Frame.IMAGE_PIXELS), p, bbox)


def postprocess_for(net) -> str:
    return "none" if net.config.head in ("ensemble_gap", "fc") else "mean"


def detect(image: np.ndarray, detector: HandDetector, net, tau: float = DEFAULT_THRESHOLD,
           registry: Optional[GestureRegistry] = None, image_id: Optional[str] = None,
           postprocess: Optional[str] = None, rng: Optional[np.random.Generator] = None,
           ) -> Optional[DetectionResult]:
    results = detect_batch([(image_id, image)], detector, net, tau, registry, postprocess, rng)
    return results[0]


def detect_batch(items: Sequence[tuple], detector: HandDetector, net, tau: float = DEFAULT_THRESHOLD,
                 registry: Optional[GestureRegistry] = None, postprocess: Optional[str] = None,
                 rng: Optional[np.random.Generator] = None, batch_size: int = 32,
                 ) -> list[Optional[DetectionResult]]:
    """Run detection over ``(image_id, image)`` pairs independently; None where no hand is found."""
    registry = registry or GestureRegistry.default()
    postprocess = postprocess or postprocess_for(net)
    size = net.config.input_size
    crops: list[Optional[Crop]] = []
    for image_id, image in items:
        try:
            box = detector.detect(image, image_id)
            if box is not None:
                h, w = image.shape[:2]
                box = box.clip(w, h)
                crops.append(None if box.is_degenerate else crop_and_resize(image, box, size))
            else:
                crops.append(None)
        except Exception as exc:
            raise PipelineError("detector", exc) from exc
    results: list[Optional[DetectionResult]] = [None] * len(crops)
    todo = [i for i, c in enumerate(crops) if c is not None]
    for start in range(0, len(todo), batch_size):
        idx = todo[start:start + batch_size]
        try:
            probs, pos = model_mod.predict(net, to_network_input([crops[i].pixels for i in idx]))
        except Exception as exc:
            raise PipelineError("model", exc) from exc
        try:
            coords = final_coordinates(pos, postprocess, rng)
            for j, i in enumerate(idx):
                results[i] = decode(probs[j], coords[j], crops[i].bbox, tau, registry)
        except Exception as exc:
            raise PipelineError("post-processing", exc) from exc
    return results


def write_predictions(path: Union[str, Path], ids: Sequence[str],
                      results: Sequence[Optional[DetectionResult]]) -> None:
    with open(path, "w") as fh:
        for image_id, res in zip(ids, results):
            if res is None:
                rec = {"image": image_id, "class": None, "code": None, "probabilities": None,
                       "bbox": None, "frame": Frame.IMAGE_PIXELS.value, "fingertips": None}
            else:
                rec = res.record(image_id)
            fh.write(json.dumps(rec) + "\n")
