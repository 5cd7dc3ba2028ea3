"""Domain types shared across the package.

Coordinates follow the raster convention: origin at the top-left corner,
x grows rightward and y grows downward. Fingertip sets always carry the
frame they are expressed in; conversion between frames is explicit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

N_FINGERS = 5

Point = tuple[float, float]


class EgoGestureError(Exception):
    """Base class for all package errors."""


class ConfigError(EgoGestureError):
    pass


class InputError(EgoGestureError, ValueError):
    pass


class DataError(EgoGestureError):
    """Malformed or missing on-disk data."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(EgoGestureError):
    def __init__(self, message: str, step: Optional[int] = None, checkpoint=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class FingerId(enum.IntEnum):
    THUMB = 0
    INDEX = 1
    MIDDLE = 2
    RING = 3
    PINKY = 4

    @property
    def label(self) -> str:
        return self.name.lower()


class Frame(str, enum.Enum):
    NORMALIZED_CROP = "normalized-crop"
    CROP_PIXELS = "crop-pixels"
    IMAGE_PIXELS = "image-pixels"


@dataclass(frozen=True)
class GestureCode:
    """Per-finger visibility bits, thumb first."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != N_FINGERS:
            raise InputError(f"gesture code needs {N_FINGERS} bits, got {len(bits)}")
        if any(b not in (0, 1) for b in bits):
            raise InputError(f"gesture code bits must be 0/1, got {bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def of(cls, bits: Iterable[int]) -> "GestureCode":
        return cls(tuple(bits))

    @property
    def popcount(self) -> int:
        return sum(self.bits)

    def visible(self) -> list[FingerId]:
        return [FingerId(i) for i, b in enumerate(self.bits) if b]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float32)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, i):
        return self.bits[i]

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class FingerProbabilities:
    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if len(p) != N_FINGERS:
            raise InputError(f"expected {N_FINGERS} probabilities, got {len(p)}")
        if any(not (0.0 <= x <= 1.0) for x in p):
            raise InputError(f"probabilities must lie in [0, 1], got {p}")
        object.__setattr__(self, "p", p)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=np.float64)


@dataclass(frozen=True)
class BoundingBox:
    x_tl: int
    y_tl: int
    x_br: int
    y_br: int

    def __post_init__(self):
        for name in ("x_tl", "y_tl", "x_br", "y_br"):
            object.__setattr__(self, name, int(round(getattr(self, name))))

    @property
    def width(self) -> int:
        return self.x_br - self.x_tl

    @property
    def height(self) -> int:
        return self.y_br - self.y_tl

    @property
    def is_degenerate(self) -> bool:
        return self.width <= 0 or self.height <= 0

    def contains(self, x: float, y: float) -> bool:
        return self.x_tl <= x <= self.x_br and self.y_tl <= y <= self.y_br

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x_tl and 0 <= self.y_tl and self.x_br <= width and self.y_br <= height

    def clip(self, width: int, height: int) -> "BoundingBox":
        return BoundingBox(
            min(max(self.x_tl, 0), width),
            min(max(self.y_tl, 0), height),
            min(max(self.x_br, 0), width),
            min(max(self.y_br, 0), height),
        )

    def as_list(self) -> list[int]:
        return [self.x_tl, self.y_tl, self.x_br, self.y_br]


@dataclass(frozen=True)
class FingertipSet:
    coords: tuple[Optional[Point], ...]
    frame: Frame = Frame.IMAGE_PIXELS

    def __post_init__(self):
        coords = tuple(None if c is None else (float(c[0]), float(c[1])) for c in self.coords)
        if len(coords) != N_FINGERS:
            raise InputError(f"expected {N_FINGERS} fingertip slots, got {len(coords)}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "frame", Frame(self.frame))

    @classmethod
    def empty(cls, frame: Frame = Frame.IMAGE_PIXELS) -> "FingertipSet":
        return cls((None,) * N_FINGERS, frame)

    @property
    def present(self) -> list[FingerId]:
        return [FingerId(i) for i, c in enumerate(self.coords) if c is not None]

    def presence_code(self) -> GestureCode:
        return GestureCode(tuple(int(c is not None) for c in self.coords))

    def __getitem__(self, finger: int) -> Optional[Point]:
        return self.coords[int(finger)]

    def to_normalized(self, bbox: BoundingBox) -> "FingertipSet":
        if self.frame is not Frame.IMAGE_PIXELS:
            raise InputError(f"cannot normalize from frame {self.frame.value}")
        w, h = bbox.width, bbox.height
        return FingertipSet(
            tuple(None if c is None else ((c[0] - bbox.x_tl) / w, (c[1] - bbox.y_tl) / h)
                  for c in self.coords),
            Frame.NORMALIZED_CROP,
        )

    def to_image(self, bbox: BoundingBox) -> "FingertipSet":
        if self.frame is not Frame.NORMALIZED_CROP:
            raise InputError(f"cannot map frame {self.frame.value} to image pixels")
        w, h = bbox.width, bbox.height
        return FingertipSet(
            tuple(None if c is None else (c[0] * w + bbox.x_tl, c[1] * h + bbox.y_tl)
                  for c in self.coords),
            Frame.IMAGE_PIXELS,
        )

    def as_json(self) -> list:
        return [None if c is None else [c[0], c[1]] for c in self.coords]


def _frozen_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.flags.writeable:
        image = image.copy()
        image.flags.writeable = False
    return image


@dataclass(frozen=True, eq=False)
class AnnotatedSample:
    image: np.ndarray
    bbox: BoundingBox
    gesture_class: str
    code: GestureCode
    fingertips: FingertipSet
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "image", _frozen_image(self.image))

    def __eq__(self, other):
        if not isinstance(other, AnnotatedSample):
            return NotImplemented
        return (
            self.bbox == other.bbox
            and self.gesture_class == other.gesture_class
            and self.code == other.code
            and self.fingertips == other.fingertips
            and self.name == other.name
            and self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
        )

    def replace(self, **changes) -> "AnnotatedSample":
        fields = dict(image=self.image, bbox=self.bbox, gesture_class=self.gesture_class,
                      code=self.code, fingertips=self.fingertips, name=self.name)
        fields.update(changes)
        return AnnotatedSample(**fields)

    def record(self) -> dict:
        """JSON-lines annotation record (image path is the sample name)."""
        return {
            "image": self.name,
            "class": self.gesture_class,
            "bbox": self.bbox.as_list(),
            "visibility": list(self.code.bits),
            "fingertips": self.fingertips.as_json(),
        }


@dataclass(frozen=True)
class DetectionResult:
    code: GestureCode
    gesture_class: str
    fingertips: FingertipSet
    raw_probabilities: FingerProbabilities
    bbox: Optional[BoundingBox] = None

    def __post_init__(self):
        if self.fingertips.presence_code() != self.code:
            raise InputError("detection fingertips must be present exactly for visible fingers")

    def record(self, image: str = "") -> dict:
        return {
            "image": image,
            "class": self.gesture_class,
            "code": list(self.code.bits),
            "probabilities": list(self.raw_probabilities.p),
            "bbox": None if self.bbox is None else self.bbox.as_list(),
            "frame": self.fingertips.frame.value,
            "fingertips": self.fingertips.as_json(),
        }


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def validate_sample(sample: AnnotatedSample) -> list[Violation]:
    """Check every invariant of an annotated sample; violations are returned, not raised."""
    out: list[Violation] = []
    image = sample.image
    if image.ndim != 3 or image.shape[2] != 3:
        out.append(Violation("image", "image must be H x W x 3"))
        h = w = None
    else:
        h, w = image.shape[:2]
    box = sample.bbox
    if box.is_degenerate:
        out.append(Violation("bbox", "bbox must satisfy x_tl < x_br and y_tl < y_br"))
    if w is not None and not box.within(w, h):
        out.append(Violation("bbox", "bbox outside image bounds"))
    if sample.fingertips.frame is not Frame.IMAGE_PIXELS:
        out.append(Violation("fingertips", "annotations must be in image-pixels frame"))
    for finger in sample.fingertips.present:
        x, y = sample.fingertips[finger]
        if not (np.isfinite(x) and np.isfinite(y)):
            out.append(Violation(f"fingertips[{finger.label}]", "fingertip not finite"))
        elif not box.contains(x, y):
            out.append(Violation(f"fingertips[{finger.label}]", "fingertip outside bbox"))
    if sample.fingertips.presence_code() != sample.code:
        out.append(Violation("code", "code/fingertip mismatch"))
    if sample.code.popcount == 0:
        out.append(Violation("code", "gesture code has no visible finger"))
    return out


def sample_from_record(record: dict, image: np.ndarray) -> AnnotatedSample:
    """Build a sample from an annotation record; raises InputError on malformed fields."""
    try:
        bbox = BoundingBox(*record["bbox"])
        code = GestureCode.of(record["visibility"])
        tips = record["fingertips"]
        if len(tips) != N_FINGERS:
            raise InputError(f"expected {N_FINGERS} fingertip entries, got {len(tips)}")
        fingertips = FingertipSet(tuple(None if t is None else tuple(t) for t in tips))
        return AnnotatedSample(image, bbox, str(record["class"]), code, fingertips,
                               name=str(record.get("image", "")))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed annotation record: {exc!r}") from exc

