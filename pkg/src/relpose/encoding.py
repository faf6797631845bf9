"""Relative-information input encodings for a window of 2D poses.

All functions accept arrays shaped ``(..., T, J, 2)`` (leading batch axes are
allowed) or a :class:`PoseSequence2D`, and compute in double precision.

Shift invariance of :func:`positional_encode` is exact in floating point when
coordinates and offsets are single-precision values (what the dataset format
stores): the shifted sums are then exact in double precision, so the
differences cancel bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import re

import numpy as np

from .errors import ConfigurationError

CS_EPS = 1e-12
_VARIANTS = ("SUB", "IP", "CP", "CS", "SUB_PLUS_SQ", "SUB_WINDOWED")


@dataclass(frozen=True)
class PoseSequence2D:
    frames: np.ndarray
    root_index: int = 0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[-1] != 2:
            raise ValueError(f"expected (T, J, 2) frames, got {frames.shape}")
        if frames.shape[0] % 2 == 0:
            raise ValueError(f"window length must be odd, got {frames.shape[0]}")
        if np.any(np.abs(frames) > 1.0):
            raise ValueError("normalized coordinates must lie in [-1, 1]")
        if not 0 <= self.root_index < frames.shape[1]:
            raise ValueError(f"root index {self.root_index} out of range")
        object.__setattr__(self, "frames", frames)

    @property
    def center_index(self) -> int:
        return (self.frames.shape[0] - 1) // 2

    @property
    def current_pose(self) -> np.ndarray:
        return self.frames[self.center_index]


@dataclass(frozen=True)
class TemporalOperator:
    """Operator combining each frame with the current (center) pose."""

    variant: str = "SUB"
    window: int | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ConfigurationError(f"unknown temporal operator {self.variant!r}")
        if self.variant == "SUB_WINDOWED":
            if self.window is None or self.window < 1 or self.window % 2 == 0:
                raise ConfigurationError("SUB_WINDOWED needs an odd positive window")

    @property
    def channels(self) -> int:
        return {"SUB": 2, "SUB_WINDOWED": 2, "SUB_PLUS_SQ": 4}.get(self.variant, 1)

    @classmethod
    def parse(cls, text: str) -> "TemporalOperator":
        """Parse ``SUB``, ``IP``, ``CP``, ``CS``, ``SUB+SUB_S``, ``SUB_WINDOWED:81`` or ``SUB(81f)``."""
        t = text.strip().upper()
        if t in ("SUB+SUB_S", "SUB_PLUS_SQ"):
            return cls("SUB_PLUS_SQ")
        m = re.fullmatch(r"SUB(?:_WINDOWED)?[:(](\d+)F?\)?", t)
        if m:
            return cls("SUB_WINDOWED", int(m.group(1)))
        return cls(t)

    def __str__(self) -> str:
        return f"SUB_WINDOWED:{self.window}" if self.variant == "SUB_WINDOWED" else self.variant


@dataclass(frozen=True)
class EnhancedInput:
    """Per-frame, per-joint channel stack in the fixed order (abs, P, T)."""

    channels: np.ndarray
    include_abs: bool
    include_p: bool
    include_t: bool
    operator: TemporalOperator = field(default_factory=TemporalOperator)

    @property
    def num_channels(self) -> int:
        return self.channels.shape[-1]


def _frames(seq) -> np.ndarray:
    if isinstance(seq, PoseSequence2D):
        return seq.frames
    return np.asarray(seq, dtype=np.float64)


def input_channels(include_abs: bool, include_p: bool, include_t: bool, op: TemporalOperator) -> int:
    return 2 * include_abs + 2 * include_p + op.channels * include_t


def positional_encode(seq, root_index: int | None = None) -> np.ndarray:
    """Coordinates of every joint relative to the root joint of the same frame.

    A global offset cancels bit-exactly whenever coordinates and offset are
    single-precision values (magnitude 0 or at least 2**-28) carried in
    double precision, since every intermediate sum is then exact.
    """
    if root_index is None:
        root_index = seq.root_index if isinstance(seq, PoseSequence2D) else 0
    k = _frames(seq)
    return k - k[..., root_index : root_index + 1, :]


def temporal_encode(seq, op: TemporalOperator = TemporalOperator()) -> np.ndarray:
    k = _frames(seq)
    t = k.shape[-3]
    center = (t - 1) // 2
    kc = k[..., center : center + 1, :, :]
    if op.variant in ("SUB", "SUB_PLUS_SQ", "SUB_WINDOWED"):
        diff = k - kc
        if op.variant == "SUB_PLUS_SQ":
            return np.concatenate([diff, diff * diff], axis=-1)
        if op.variant == "SUB_WINDOWED":
            if op.window > t:
                raise ConfigurationError(f"window {op.window} exceeds sequence length {t}")
            half = (op.window - 1) // 2
            outside = np.ones(t, dtype=bool)
            outside[center - half : center + half + 1] = False
            diff = diff.copy()
            diff[..., outside, :, :] = 0.0
        return diff
    kc = np.broadcast_to(kc, k.shape)
    if op.variant == "IP":
        out = (k * kc).sum(axis=-1)
    elif op.variant == "CP":
        out = k[..., 0] * kc[..., 1] - k[..., 1] * kc[..., 0]
    else:
        n1 = np.linalg.norm(k, axis=-1)
        n2 = np.linalg.norm(kc, axis=-1)
        ok = (n1 >= CS_EPS) & (n2 >= CS_EPS)
        denom = np.where(ok, n1 * n2, 1.0)
        out = np.where(ok, (k * kc).sum(axis=-1) / denom, 0.0)
        out = np.clip(out, -1.0, 1.0)
    return out[..., None]


def assemble_input(
    seq,
    include_abs: bool = True,
    include_p: bool = True,
    include_t: bool = True,
    op: TemporalOperator = TemporalOperator(),
    root_index: int | None = None,
) -> EnhancedInput:
    if not (include_abs or include_p or include_t):
        raise ConfigurationError("at least one input block (abs, P, T) must be enabled")
    k = _frames(seq)
    blocks = []
    if include_abs:
        blocks.append(k)
    if include_p:
        blocks.append(positional_encode(seq, root_index))
    if include_t:
        blocks.append(temporal_encode(k, op))
    return EnhancedInput(np.concatenate(blocks, axis=-1), include_abs, include_p, include_t, op)


def normalize_coords(pixels, width: float, height: float) -> np.ndarray:
    """Map pixel coordinates so x spans [-1, 1]; y keeps the aspect ratio."""
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    p = np.asarray(pixels, dtype=np.float64)
    return (2.0 * p - np.array([width, height], dtype=np.float64)) / width


def denormalize_coords(coords, width: float, height: float) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    return (c * width + np.array([width, height], dtype=np.float64)) / 2.0
