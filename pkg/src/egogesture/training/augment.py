"""Keypoint-consistent augmentation.

Geometric transforms move the image, the bounding box and every visible
fingertip through the same affine map. Photometric transforms (brightness,
Gaussian noise, salt noise) leave annotations untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from ..core import AnnotatedSample, BoundingBox, FingertipSet, Frame


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 15.0
    translate_frac: float = 0.10
    shear_deg: float = 10.0
    scale_range: tuple = (0.9, 1.1)
    crop_frac: float = 0.05
    brightness: float = 0.25
    noise_sigma: float = 0.02
    salt_fraction: float = 0.01
    geometric: bool = True
    photometric: bool = True
    max_attempts: int = 10

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(geometric=False, photometric=False)


def crop_center(bbox: BoundingBox) -> tuple[float, float]:
    """Centre of the box in pixel-index coordinates."""
    return (bbox.x_tl + bbox.x_br - 1) / 2.0, (bbox.y_tl + bbox.y_br - 1) / 2.0


def affine_matrix(rotation_deg: float = 0.0, translation=(0.0, 0.0), shear_deg: float = 0.0,
                  scale: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    """2x3 map: scale, then shear along x, then rotate, all about ``center``, then translate.

    Angles follow the raster frame (y down), so positive rotation turns +x towards +y.
    """
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, math.tan(math.radians(shear_deg))], [0.0, 1.0]])
    lin = rot @ shear @ (scale * np.eye(2))
    c = np.asarray(center, dtype=np.float64)
    offset = c + np.asarray(translation, dtype=np.float64) - lin @ c
    return np.hstack([lin, offset[:, None]])


def transform_points(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return points @ matrix[:, :2].T + matrix[:, 2]


def _transform_bbox(matrix: np.ndarray, bbox: BoundingBox) -> BoundingBox:
    # Corners as pixel indices; the box spans [min, max] inclusive.
    x0, y0, x1, y1 = bbox.x_tl, bbox.y_tl, bbox.x_br - 1, bbox.y_br - 1
    pts = transform_points(matrix, [[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
    lo = np.floor(pts.min(axis=0) + 1e-9)
    hi = np.ceil(pts.max(axis=0) - 1e-9) + 1
    return BoundingBox(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))


def apply_affine(sample: AnnotatedSample, matrix: np.ndarray) -> AnnotatedSample:
    """Warp image, bbox and fingertips with one affine map (bbox clipped to the image)."""
    h, w = sample.image.shape[:2]
    if np.array_equal(matrix, np.array([[1.0, 0, 0], [0, 1.0, 0]])):
        return sample
    image = cv2.warpAffine(np.ascontiguousarray(sample.image), matrix, (w, h),
                           flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    bbox = _transform_bbox(matrix, sample.bbox).clip(w, h)
    coords = []
    for c in sample.fingertips.coords:
        if c is None:
            coords.append(None)
        else:
            x, y = transform_points(matrix, [c])[0]
            coords.append((float(x), float(y)))
    return sample.replace(image=image, bbox=bbox, fingertips=FingertipSet(tuple(coords), Frame.IMAGE_PIXELS))


def _keeps_fingertips(sample: AnnotatedSample) -> bool:
    h, w = sample.image.shape[:2]
    box = sample.bbox
    if box.is_degenerate:
        return False
    for c in sample.fingertips.coords:
        if c is None:
            continue
        if not (box.contains(*c) and 0 <= c[0] <= w - 1 and 0 <= c[1] <= h - 1):
            return False
    return True


def random_affine(sample: AnnotatedSample, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    box = sample.bbox
    lo, hi = cfg.scale_range
    return affine_matrix(
        rotation_deg=rng.uniform(-cfg.rotation_deg, cfg.rotation_deg),
        translation=(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * box.width,
                     rng.uniform(-cfg.translate_frac, cfg.translate_frac) * box.height),
        shear_deg=rng.uniform(-cfg.shear_deg, cfg.shear_deg),
        scale=rng.uniform(lo, hi),
        center=crop_center(box),
    )


def random_crop(sample: AnnotatedSample, rng: np.random.Generator, frac: float) -> AnnotatedSample:
    """Jitter each bbox edge by up to ``frac`` of the box size."""
    if frac <= 0:
        return sample
    h, w = sample.image.shape[:2]
    b = sample.bbox
    dx, dy = frac * b.width, frac * b.height
    jitter = rng.uniform(-1.0, 1.0, size=4) * np.array([dx, dy, dx, dy])
    box = BoundingBox(*(np.array(b.as_list()) + jitter)).clip(w, h)
    return sample.replace(bbox=box)


def photometric(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    img = image.astype(np.float32) / 255.0
    img = img * (1.0 + rng.uniform(-cfg.brightness, cfg.brightness))
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, rng.uniform(0.0, cfg.noise_sigma), size=img.shape)
    if cfg.salt_fraction > 0:
        salt = rng.random(img.shape[:2]) < rng.uniform(0.0, cfg.salt_fraction)
        img[salt] = 1.0
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def augment(sample: AnnotatedSample, rng: np.random.Generator,
            config: Optional[AugmentConfig] = None) -> AnnotatedSample:
    """Random geometric + photometric augmentation.

    A geometric draw that would push a visible fingertip out of the crop is
    rejected and redrawn; after ``max_attempts`` rejections the geometry is
    left unchanged.
    """
    cfg = config or AugmentConfig()
    out = sample
    if cfg.geometric:
        for _ in range(cfg.max_attempts):
            cand = apply_affine(sample, random_affine(sample, rng, cfg))
            cand = random_crop(cand, rng, cfg.crop_frac)
            if _keeps_fingertips(cand):
                out = cand
                break
    if cfg.photometric:
        out = out.replace(image=photometric(out.image, rng, cfg))
    return out
