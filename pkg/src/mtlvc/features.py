"""Normalized spectrogram matrices and their on-disk binary format.

File layout (little-endian)::

    b"MTLF" | u32 version (=1) | u8 kind (0=MEL, 1=LINEAR) | u32 T | u32 F | T*F float32, row-major
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .errors import FeatureFormatError

MAGIC = b"MTLF"
VERSION = 1
_HEADER = struct.Struct("<4sIBII")


class FeatureKind(enum.IntEnum):
    MEL = 0
    LINEAR = 1


@dataclass
class FeatureMatrix:
    """Time-major T x F matrix with entries in [0, 1]."""

    values: np.ndarray
    kind: FeatureKind
    config: Optional[Any] = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        self.kind = FeatureKind(self.kind)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    def in_unit_range(self) -> bool:
        v = self.values
        return bool(np.all(np.isfinite(v)) and v.min(initial=0.0) >= 0.0 and v.max(initial=0.0) <= 1.0)


def write_features(path: Union[str, Path], fm: FeatureMatrix) -> None:
    values = np.ascontiguousarray(fm.values, dtype="<f4")
    t, f = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, int(fm.kind), t, f))
        fh.write(values.tobytes())


def read_features(path: Union[str, Path]) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, kind, t, f = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if kind not in (0, 1):
        raise FeatureFormatError(f"{path}: unknown kind {kind}")
    expected = _HEADER.size + 4 * t * f
    if len(data) != expected:
        raise FeatureFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, f)
    return FeatureMatrix(values.astype(np.float32), FeatureKind(kind))
