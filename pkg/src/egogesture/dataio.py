"""Dataset layout, split protocol, synthetic generator and corpus import.

A dataset root looks like::

    root/
      images/...           image files (PNG from the generator)
      annotations.jsonl    one record per image
      registry.json        class name -> 5-bit visibility code
      splits.json          written by :func:`write_splits`
"""
from __future__ import annotations

import json
import math
import shutil
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import cv2
import numpy as np

from .codec import GestureRegistry
from .core import (
    AnnotatedSample,
    BoundingBox,
    DataError,
    FingertipSet,
    Frame,
    InputError,
    N_FINGERS,
    sample_from_record,
    validate_sample,
)

ANNOTATIONS = "annotations.jsonl"
REGISTRY = "registry.json"
SPLITS = "splits.json"
IMAGES = "images"
SPLIT_MODES = ("block", "uniform", "fixed")

PathLike = Union[str, Path]


# -- split protocol ----------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    test_stride: int = 10
    val_stride: int = 20
    mode: str = "block"

    def __post_init__(self):
        if self.test_stride < 2 or self.val_stride < 2:
            raise InputError("split strides must be >= 2")
        if self.mode not in SPLIT_MODES:
            raise InputError(f"split mode must be one of {SPLIT_MODES}, got {self.mode!r}")


def _pick(n: int, stride: int, mode: str, rng: np.random.Generator) -> list[int]:
    """Indices of one item per full block of ``stride`` (or as many uniform picks)."""
    blocks = n // stride
    if mode == "uniform":
        return sorted(rng.choice(n, size=blocks, replace=False).tolist())
    if mode == "fixed":
        return [b * stride for b in range(blocks)]
    return [b * stride + int(rng.integers(stride)) for b in range(blocks)]


def split_class(files: Sequence[str], spec: SplitSpec, rng: np.random.Generator) -> dict[str, list[str]]:
    files = list(files)
    if not files:
        raise InputError("cannot split an empty class")
    test_idx = set(_pick(len(files), spec.test_stride, spec.mode, rng))
    rest = [f for i, f in enumerate(files) if i not in test_idx]
    val_idx = set(_pick(len(rest), spec.val_stride, spec.mode, rng))
    return {
        "test": [files[i] for i in sorted(test_idx)],
        "val": [rest[i] for i in sorted(val_idx)],
        "train": [f for i, f in enumerate(rest) if i not in val_idx],
    }


def split(files_per_class: Mapping[str, Sequence[str]], spec: SplitSpec = SplitSpec(),
          seed: int = 0) -> dict[str, dict[str, list[str]]]:
    """Per-class test/val/train split: one test item per block of ``test_stride``, then one
    validation item per block of ``val_stride`` of the remainder, the rest for training."""
    out = OrderedDict()
    for name, files in files_per_class.items():
        if not files:
            raise InputError(f"class {name!r} has no files")
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        out[name] = split_class(files, spec, rng)
    return out


def expected_split_sizes(n: int, spec: SplitSpec = SplitSpec()) -> tuple[int, int, int]:
    test = n // spec.test_stride
    val = (n - test) // spec.val_stride
    return test, val, n - test - val


def write_splits(path: PathLike, splits: Mapping, seed: int, spec: SplitSpec) -> None:
    doc = {"seed": seed, "mode": spec.mode, "test_stride": spec.test_stride,
           "val_stride": spec.val_stride, "classes": splits}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_splits(path: PathLike) -> dict:
    return json.loads(Path(path).read_text())


def split_members(splits_doc: Mapping, which: str) -> set[str]:
    return {f for parts in splits_doc["classes"].values() for f in parts[which]}


# -- loading / writing -------------------------------------------------------

def _read_image(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"cannot read image {path}")
    return np.ascontiguousarray(img[:, :, ::-1])


def _write_image(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), np.ascontiguousarray(image[:, :, ::-1])):
        raise DataError(f"cannot write image {path}")


class Dataset(Sequence):
    """Annotation records parsed up front; images read on access."""

    def __init__(self, root: PathLike, records: list[tuple[int, dict]], registry: GestureRegistry):
        self.root = Path(root)
        self.records = records
        self.registry = registry

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        lineno, rec = self.records[i]
        image = _read_image(self.root / rec["image"])
        try:
            sample = sample_from_record(rec, image)
        except InputError as exc:
            raise DataError(str(exc), line=lineno) from exc
        problems = validate_sample(sample)
        if problems:
            raise DataError("; ".join(map(str, problems)), line=lineno)
        return sample

    @property
    def names(self) -> list[str]:
        return [rec["image"] for _, rec in self.records]

    def subset(self, names) -> "Dataset":
        names = set(names)
        return Dataset(self.root, [r for r in self.records if r[1]["image"] in names], self.registry)

    def classes(self) -> "OrderedDict[str, list[str]]":
        out: OrderedDict[str, list[str]] = OrderedDict()
        for _, rec in self.records:
            out.setdefault(rec["class"], []).append(rec["image"])
        return out


def _check_record(rec: dict, lineno: int, registry: GestureRegistry, root: Path) -> None:
    for key in ("image", "class", "bbox", "visibility", "fingertips"):
        if key not in rec:
            raise DataError(f"record is missing {key!r}", line=lineno)
    vis, tips = rec["visibility"], rec["fingertips"]
    if not isinstance(vis, list) or len(vis) != N_FINGERS or any(b not in (0, 1) for b in vis):
        raise DataError(f"visibility must be {N_FINGERS} bits", line=lineno)
    if not isinstance(tips, list) or len(tips) != N_FINGERS:
        raise DataError(f"fingertips must list {N_FINGERS} entries (null where hidden)", line=lineno)
    present = [int(t is not None) for t in tips]
    if present != vis:
        raise DataError(f"visibility {vis} disagrees with listed fingertips {present}", line=lineno)
    if rec["class"] in registry and list(registry.code(rec["class"]).bits) != vis:
        raise DataError(f"visibility {vis} disagrees with registry code for {rec['class']}", line=lineno)
    if not isinstance(rec["bbox"], list) or len(rec["bbox"]) != 4:
        raise DataError("bbox must be [x_tl, y_tl, x_br, y_br]", line=lineno)
    if not (root / rec["image"]).is_file():
        raise DataError(f"missing image {rec['image']}", line=lineno)


def load_dataset(root: PathLike, registry: Optional[GestureRegistry] = None) -> Dataset:
    root = Path(root)
    if registry is None:
        registry = GestureRegistry.load(root / REGISTRY) if (root / REGISTRY).exists() else GestureRegistry.default()
    path = root / ANNOTATIONS
    if not path.exists():
        raise DataError(f"{path} not found")
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc}", line=lineno) from exc
            if not isinstance(rec, dict):
                raise DataError("record must be a JSON object", line=lineno)
            _check_record(rec, lineno, registry, root)
            records.append((lineno, rec))
    return Dataset(root, records, registry)


def write_dataset(root: PathLike, samples: Sequence[AnnotatedSample],
                  registry: Optional[GestureRegistry] = None) -> Path:
    """Write images, annotations and registry under ``root`` (overwriting)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = s.name or f"{IMAGES}/{i:06d}.png"
        _write_image(root / name, s.image)
        rec = s.record()
        rec["image"] = name
        lines.append(json.dumps(rec))
    (root / ANNOTATIONS).write_text("".join(l + "\n" for l in lines))
    (registry or GestureRegistry.default()).save(root / REGISTRY)
    return root


# -- synthetic data ----------------------------------------------------------

FINGER_COLORS = ((230, 30, 30), (30, 200, 30), (40, 60, 240), (240, 220, 20), (220, 40, 220))
# Pointing direction of each finger in degrees, counter-clockwise from +x as seen on screen.
FINGER_ANGLES = (165.0, 112.0, 90.0, 68.0, 45.0)
FINGER_LENGTHS = (0.75, 0.95, 1.0, 0.93, 0.75)


@dataclass(frozen=True)
class SyntheticConfig:
    width: int = 640
    height: int = 480
    registry: GestureRegistry = field(default_factory=GestureRegistry.default)
    hand_size: tuple = (60.0, 85.0)  # finger reach in pixels
    marker_radius: float = 4.0
    margin: tuple = (8, 16)
    tilt_deg: float = 20.0
    texture_cells: int = 12
    texture_amplitude: float = 40.0
    seed: int = 0
    stratified: bool = True


def _background(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    base = rng.uniform(40, 200, size=3)
    cells = (cfg.texture_cells, cfg.texture_cells)
    coarse = rng.normal(0.0, cfg.texture_amplitude, size=cells + (1,)) + rng.normal(
        0.0, 0.3 * cfg.texture_amplitude, size=cells + (3,))
    smooth = cv2.resize(coarse.astype(np.float32), (w, h), interpolation=cv2.INTER_CUBIC)
    fine = rng.normal(0.0, 6.0, size=(h, w, 3))
    return np.clip(base + smooth + fine, 0, 255).astype(np.uint8)


def _fixed(pt, shift=4):
    return (int(round(pt[0] * (1 << shift))), int(round(pt[1] * (1 << shift))))


def render_sample(cfg: SyntheticConfig, rng: np.random.Generator, gesture_class: str,
                  name: str = "") -> AnnotatedSample:
    """Render one hand proxy: palm ellipse, finger strokes, coloured fingertip markers."""
    code = cfg.registry.code(gesture_class)
    image = _background(cfg, rng)
    skin = tuple(int(v) for v in rng.uniform([150, 100, 80], [240, 190, 160]))
    for _ in range(100):
        reach = rng.uniform(*cfg.hand_size)
        tilt = rng.uniform(-cfg.tilt_deg, cfg.tilt_deg)
        cx = rng.uniform(reach * 1.3, cfg.width - reach * 1.3)
        cy = rng.uniform(reach * 1.2, cfg.height - reach * 0.6)
        tips: list = [None] * N_FINGERS
        strokes = []
        for f in range(N_FINGERS):
            ang = math.radians(FINGER_ANGLES[f] + tilt + rng.uniform(-5, 5))
            d = np.array([math.cos(ang), -math.sin(ang)])
            base = np.array([cx, cy]) + 0.3 * reach * d
            length = reach * FINGER_LENGTHS[f] * rng.uniform(0.9, 1.1) if code[f] else 0.42 * reach
            tip = np.array([cx, cy]) + length * d
            strokes.append((base, tip))
            if code[f]:
                tips[f] = (round(float(tip[0]), 2), round(float(tip[1]), 2))
        palm = (0.42 * reach, 0.36 * reach)
        pts = [np.array([cx - palm[0], cy - palm[1]]), np.array([cx + palm[0], cy + palm[1] + 0.25 * reach])]
        pts += [np.array(t) for t in tips if t is not None]
        lo = np.min(pts, axis=0) - rng.uniform(*cfg.margin, size=2)
        hi = np.max(pts, axis=0) + rng.uniform(*cfg.margin, size=2)
        bbox = BoundingBox(math.floor(lo[0]), math.floor(lo[1]), math.ceil(hi[0]), math.ceil(hi[1]))
        if bbox.within(cfg.width, cfg.height):
            break
    else:  # pragma: no cover - the placement ranges always admit a fit
        raise DataError("could not place synthetic hand inside the canvas")

    canvas = image.copy()
    thick = max(2, int(round(0.16 * reach)))
    cv2.ellipse(canvas, _fixed((cx, cy + 0.1 * reach)), _fixed(palm), tilt, 0, 360, skin, -1,
                cv2.LINE_8, 4)
    cv2.line(canvas, _fixed((cx, cy + 0.2 * reach)), _fixed((cx, cy + 0.6 * reach)), skin,
             int(0.5 * reach), cv2.LINE_8, 4)
    for f, (base, tip) in enumerate(strokes):
        cv2.line(canvas, _fixed(base), _fixed(tip), skin, thick, cv2.LINE_8, 4)
    for f, tip in enumerate(tips):
        if tip is not None:
            cv2.circle(canvas, _fixed(tip), int(round(cfg.marker_radius * 16)), FINGER_COLORS[f], -1,
                       cv2.LINE_8, 4)
    return AnnotatedSample(canvas, bbox, gesture_class, code,
                           FingertipSet(tuple(tips), Frame.IMAGE_PIXELS), name=name)


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), count: int = 8) -> list[AnnotatedSample]:
    """Deterministic (per seed) list of synthetic samples; classes cycle when stratified."""
    if count < 1:
        raise InputError("count must be >= 1")
    names = config.registry.names
    class_rng = np.random.default_rng([config.seed, 1])
    out = []
    for i in range(count):
        cls = names[i % len(names)] if config.stratified else names[int(class_rng.integers(len(names)))]
        rng = np.random.default_rng([config.seed, 0, i])
        out.append(render_sample(config, rng, cls, name=f"{IMAGES}/{cls}_{i:05d}.png"))
    return out


# -- corpus import -----------------------------------------------------------

def import_scut(source: PathLike, out: PathLike, registry: Optional[GestureRegistry] = None) -> int:
    """Convert a per-class label-list corpus into the package layout.

    ``source/<Class>/`` holds the images plus one or more ``*.txt`` label
    files whose lines read ``name x_tl y_tl x_br y_br x1 y1 ... xk yk``,
    with the k visible fingertips listed thumb-to-pinky. Returns the
    number of imported records.
    """
    source, out = Path(source), Path(out)
    registry = registry or GestureRegistry.default()
    if not source.is_dir():
        raise DataError(f"corpus directory {source} not found")
    records = []
    for cls in registry.names:
        cdir = source / cls
        if not cdir.is_dir():
            continue
        code = registry.code(cls)
        visible = code.visible()
        for label in sorted(cdir.glob("*.txt")):
            for lineno, line in enumerate(label.read_text().splitlines(), 1):
                parts = line.replace(",", " ").split()
                if not parts:
                    continue
                try:
                    nums = [float(v) for v in parts[1:]]
                except ValueError as exc:
                    raise DataError(f"{label}: non-numeric field", line=lineno) from exc
                if len(nums) != 4 + 2 * len(visible):
                    raise DataError(f"{label}: expected {4 + 2 * len(visible)} numbers, got {len(nums)}",
                                    line=lineno)
                img = cdir / parts[0]
                if not img.is_file():
                    raise DataError(f"{label}: missing image {parts[0]}", line=lineno)
                rel = f"{IMAGES}/{cls}/{parts[0]}"
                dest = out / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(img, dest)
                tips: list = [None] * N_FINGERS
                for j, f in enumerate(visible):
                    tips[f] = [nums[4 + 2 * j], nums[5 + 2 * j]]
                records.append({"image": rel, "class": cls, "bbox": [int(round(v)) for v in nums[:4]],
                                "visibility": list(code.bits), "fingertips": tips})
    out.mkdir(parents=True, exist_ok=True)
    (out / ANNOTATIONS).write_text("".join(json.dumps(r) + "\n" for r in records))
    registry.save(out / REGISTRY)
    return len(records)
