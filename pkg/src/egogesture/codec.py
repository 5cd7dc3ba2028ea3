"""Gesture codes: finger visibility bits, thresholding and class lookup."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

from .core import ConfigError, DataError, FingerId, FingerProbabilities, GestureCode, N_FINGERS

UNKNOWN = "unknown"
DEFAULT_THRESHOLD = 0.5


def encode_visibility(visible: Iterable[FingerId]) -> GestureCode:
    visible = {FingerId(f) for f in visible}
    return GestureCode(tuple(int(f in visible) for f in FingerId))


def binarize(probs, tau: float = DEFAULT_THRESHOLD) -> GestureCode:
    """Threshold per-finger confidences; a confidence equal to ``tau`` counts as hidden."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    p = probs.p if isinstance(probs, FingerProbabilities) else np.asarray(probs).tolist()
    return GestureCode(tuple(int(x > tau) for x in p))


def binarize_batch(probs: np.ndarray, tau: float = DEFAULT_THRESHOLD) -> np.ndarray:
    return (np.asarray(probs) > tau).astype(np.int64)


class GestureRegistry:
    """Mapping from gesture class name to its unique visibility code."""

    def __init__(self, entries: Mapping[str, Union[GestureCode, Iterable[int]]]):
        codes: dict[str, GestureCode] = {}
        seen: dict[GestureCode, str] = {}
        for name, code in entries.items():
            code = code if isinstance(code, GestureCode) else GestureCode.of(code)
            if code.popcount == 0:
                raise ConfigError(f"class {name!r} has the all-zero code")
            if code in seen:
                raise ConfigError(f"classes {seen[code]!r} and {name!r} share code {code}")
            seen[code] = name
            codes[name] = code
        if not codes:
            raise ConfigError("registry is empty")
        self._codes = codes
        self._names = seen

    @classmethod
    def default(cls) -> "GestureRegistry":
        text = resources.files("egogesture.data").joinpath("default_registry.json").read_text()
        return cls.from_json(text)

    @classmethod
    def from_json(cls, text: str) -> "GestureRegistry":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"registry is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise DataError("registry must be a JSON object of class name -> 5-bit array")
        for name, bits in raw.items():
            if not isinstance(bits, list) or len(bits) != N_FINGERS or any(b not in (0, 1) for b in bits):
                raise DataError(f"registry entry {name!r} must be a list of {N_FINGERS} bits")
        return cls(raw)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GestureRegistry":
        return cls.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps({k: list(v.bits) for k, v in self._codes.items()}, indent=2)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @property
    def names(self) -> list[str]:
        return list(self._codes)

    def code(self, name: str) -> GestureCode:
        return self._codes[name]

    def lookup(self, code: GestureCode) -> str:
        return self._names.get(code, UNKNOWN)

    def items(self):
        return self._codes.items()

    def __contains__(self, name) -> bool:
        return name in self._codes

    def __len__(self) -> int:
        return len(self._codes)

    def __eq__(self, other) -> bool:
        return isinstance(other, GestureRegistry) and self._codes == other._codes


def classify(code: GestureCode, registry: GestureRegistry) -> str:
    """Exact-match lookup; codes absent from the registry are ``"unknown"``."""
    return registry.lookup(code)
