"""
Audio feature files and per-frame audio windows.

AUDF layout (little-endian): 4-byte magic ``AUDF``, u32 rows, u32 cols, u32 reserved,
then rows*cols float32 values in row-major order.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .config import AUDIO_FEATURE_DIM, FPS
from .errors import FormatError, InvalidParameter, NumericalError, ShapeError

AUDF_MAGIC = b"AUDF"
AUDF_HEADER = struct.Struct("<4sIII")


def write_audio_features(path: Union[str, Path], matrix: np.ndarray) -> None:
    """
    Write a (rows, cols) feature matrix as an AUDF file.

    Raises:
        ShapeError: when ``matrix`` is not two-dimensional
    """
    data = np.asarray(matrix)
    if data.ndim != 2:
        raise ShapeError(f"Audio features must be a 2-D matrix, got shape {data.shape}")
    rows, cols = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(AUDF_HEADER.pack(AUDF_MAGIC, rows, cols, 0))
        f.write(payload)


def read_audio_features(path: Union[str, Path]) -> np.ndarray:
    """
    Read an AUDF file.

    Returns:
        float32 matrix of shape (rows, cols)

    Raises:
        FormatError: unreadable file, bad magic, short header or a payload that does not match the header
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"Cannot read audio features {path}: {e}") from e
    if len(raw) < AUDF_HEADER.size:
        raise FormatError(f"{path}: file too short for an AUDF header ({len(raw)} bytes)")
    magic, rows, cols, _reserved = AUDF_HEADER.unpack_from(raw)
    if magic != AUDF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {AUDF_MAGIC!r}")
    expected = rows * cols * 4
    payload = raw[AUDF_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(f"{path}: header declares {rows}x{cols} float32 ({expected} bytes), found {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


@dataclass
class AudioWindow:
    """T x 29 features centered on one video frame (T odd)."""

    features: np.ndarray
    frame_rate: int = FPS

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != AUDIO_FEATURE_DIM:
            raise ShapeError(f"Audio window must be T x {AUDIO_FEATURE_DIM}, got {self.features.shape}")
        if self.features.shape[0] % 2 == 0:
            raise InvalidParameter(f"Audio window length must be odd, got {self.features.shape[0]}")
        if not np.isfinite(self.features).all():
            raise NumericalError("Audio window contains non-finite values")

    @property
    def length(self) -> int:
        return self.features.shape[0]


def audio_window(features: np.ndarray, center: int, window: int) -> AudioWindow:
    """
    Cut the window of ``window`` rows centered on ``center``; rows outside the clip
    repeat the nearest edge row.
    """
    if window % 2 == 0 or window < 1:
        raise InvalidParameter(f"Audio window length must be a positive odd number, got {window}")
    if len(features) == 0:
        raise ShapeError("Cannot cut a window from an empty feature matrix")
    half = window // 2
    rows = np.clip(np.arange(center - half, center + half + 1), 0, len(features) - 1)
    return AudioWindow(features=np.asarray(features[rows], dtype=np.float32))
