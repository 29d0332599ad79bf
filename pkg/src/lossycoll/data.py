"""Synthetic fields, raw float32 files and PGM images."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, ParameterError


class FieldKind(enum.Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    GAUSSIAN_WALK = "gaussian_walk"
    SINE_MIX = "sine_mix"


@dataclass(frozen=True)
class SyntheticSpec:
    kind: FieldKind
    length: int
    seed: int = 0
    amplitude: float = 1.0
    offset: float = 0.0
    waves: int = 4  # sine_mix only

    def __post_init__(self):
        if not isinstance(self.kind, FieldKind):
            object.__setattr__(self, "kind", FieldKind(self.kind))
        if self.length <= 0:
            raise ParameterError(f"field length must be positive, got {self.length}")
        if self.waves <= 0:
            raise ParameterError("sine_mix needs at least one wave")


def generate_field(spec: SyntheticSpec) -> np.ndarray:
    """Deterministic float32 field for ``spec``."""
    n = spec.length
    rng = np.random.default_rng(spec.seed)
    if spec.kind is FieldKind.CONSTANT:
        values = np.full(n, spec.amplitude, dtype=np.float64)
    elif spec.kind is FieldKind.UNIFORM:
        values = rng.uniform(-spec.amplitude, spec.amplitude, n)
    elif spec.kind is FieldKind.GAUSSIAN_WALK:
        values = np.cumsum(rng.standard_normal(n)) * (spec.amplitude / np.sqrt(max(n, 1)))
    else:
        t = np.arange(n, dtype=np.float64) / n
        freqs = rng.uniform(1.0, 64.0, spec.waves)
        phases = rng.uniform(0.0, 2 * np.pi, spec.waves)
        weights = rng.uniform(0.2, 1.0, spec.waves)
        values = np.zeros(n)
        for f, p, w in zip(freqs, phases, weights):
            values += w * np.sin(2 * np.pi * f * t + p)
        values *= spec.amplitude / weights.sum()
    return (values + spec.offset).astype(np.float32)


def check_finite(values: np.ndarray, source: str = "field") -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise IngestionError(f"{source}: non-finite value {values.reshape(-1)[i]} at index {i}", i)
    return values


def load_raw_f32(path, count: int | None = None) -> np.ndarray:
    """Read little-endian float32 values; ``count`` reads a prefix."""
    size = os.path.getsize(path)
    if size % 4:
        raise IngestionError(f"{path}: {size} bytes is not a whole number of float32 values")
    available = size // 4
    if count is not None:
        if count <= 0:
            raise ParameterError(f"count must be positive, got {count}")
        if count > available:
            raise IngestionError(f"{path}: asked for {count} values, file holds {available}")
    n = available if count is None else count
    if n == 0:
        raise IngestionError(f"{path}: file is empty")
    values = np.fromfile(path, dtype="<f4", count=n).astype(np.float32)
    return check_finite(values, str(path))


def save_raw_f32(path, field) -> None:
    np.asarray(field, dtype="<f4").reshape(-1).tofile(path)


def to_gray8(image: np.ndarray) -> np.ndarray:
    """Min-max normalize to 0..255."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.rint((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (``P5``), 8-bit, min-max normalized."""
    if image.ndim != 2:
        raise ParameterError(f"PGM needs a 2-D image, got shape {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(to_gray8(image).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos)
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise IngestionError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise IngestionError(f"{path}: only 8-bit PGM supported")
    pixels = blob[pos + 1:pos + 1 + w * h]
    if len(pixels) != w * h:
        raise IngestionError(f"{path}: expected {w * h} pixels, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def synthetic_image(height: int, width: int, seed: int) -> np.ndarray:
    """Smooth 2-D test image: a few Gaussian blobs over a gentle gradient plus mild noise."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    img = 0.3 * (x / width) + 0.2 * (y / height)
    for _ in range(6):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        s = rng.uniform(0.03, 0.15) * min(height, width)
        img += rng.uniform(-1, 1) * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
    img += 0.01 * rng.standard_normal((height, width))
    return img.astype(np.float32)
