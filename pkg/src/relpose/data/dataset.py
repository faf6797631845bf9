"""Pose dataset container, its on-disk format, and sliding-window extraction.

File layout: a UTF-8 text header terminated by the line ``end_header``,
followed by binary blocks. Header lines (``key = value``)::

    format = relpose-dataset 1
    joints = 17
    joint_names = pelvis,r_hip,...
    root = 0
    cameras = 1
    camera.0 = focal=1145.0 cx=500.0 cy=500.0 width=1000 height=1000
    sequences = 2
    sequence.0 = subject=S1 action=synth_000 camera=0 frames=200
    ...
    end_header

Then, per sequence in index order, a 2D block and a 3D block. Each block is
three little-endian uint32 ``(frames, joints, dims)`` followed by
``frames * joints * dims`` little-endian float32 values, row-major
(frame, joint, coordinate). 2D values are pixels, 3D values are camera-space
millimeters.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoding import normalize_coords
from ..errors import DataError
from ..model import JOINT_NAMES_17
from .synth import CameraSpec, SkeletonModel, synth_generate

FORMAT_TAG = "relpose-dataset 1"


@dataclass
class Sequence:
    subject: str
    action: str
    camera: int
    pose2d: np.ndarray
    pose3d: np.ndarray

    def __post_init__(self):
        if self.pose2d.shape[:2] != self.pose3d.shape[:2]:
            raise DataError(f"2D/3D frame or joint counts differ: {self.pose2d.shape} vs {self.pose3d.shape}")
        if self.pose2d.shape[-1] != 2 or self.pose3d.shape[-1] != 3:
            raise DataError("pose arrays must end in 2 (pixels) and 3 (millimeters)")

    @property
    def num_frames(self) -> int:
        return self.pose2d.shape[0]


@dataclass
class PoseDataset:
    joint_names: tuple[str, ...]
    cameras: list[CameraSpec]
    sequences: list[Sequence] = field(default_factory=list)
    root: int = 0

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def validate(self) -> None:
        for i, seq in enumerate(self.sequences):
            if seq.pose2d.shape[1] != self.num_joints:
                raise DataError(f"sequence {i} has {seq.pose2d.shape[1]} joints, dataset declares {self.num_joints}")
            if not 0 <= seq.camera < len(self.cameras):
                raise DataError(f"sequence {i} references unknown camera {seq.camera}")


def generate_dataset(
    seed: int,
    num_sequences: int,
    frames: int,
    amplitude: float = 1.0,
    jitter_px: float = 0.0,
    skeleton: SkeletonModel | None = None,
    camera: CameraSpec | None = None,
) -> PoseDataset:
    skeleton = skeleton or SkeletonModel.default()
    camera = camera or CameraSpec.default()
    seeds = np.random.SeedSequence(seed).generate_state(num_sequences)
    ds = PoseDataset(skeleton.names, [camera], root=skeleton.root)
    for i, s in enumerate(seeds):
        p2, p3 = synth_generate(skeleton, camera, int(s), frames, amplitude, jitter_px)
        ds.sequences.append(Sequence(f"S{i % 5 + 1}", f"synth_{i:03d}", 0, p2, p3))
    return ds


def extract_windows(sequence: Sequence, camera: CameraSpec, seq_len: int, root: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One window per frame: ``(F, T, J, 2)`` normalized inputs and ``(F, J, 3)`` root-relative targets.

    Windows are centered on their frame; frames outside the sequence repeat
    the first/last frame. Normalized coordinates are rounded to float32
    values (held in a float64 array) to match what the file format stores.
    """
    if seq_len % 2 == 0:
        raise ValueError("window length must be odd")
    f = sequence.num_frames
    if f == 0:
        raise DataError("cannot window an empty sequence")
    half = seq_len // 2
    idx = np.clip(np.arange(f)[:, None] + np.arange(-half, half + 1)[None], 0, f - 1)
    norm = normalize_coords(sequence.pose2d, camera.width, camera.height).astype(np.float32).astype(np.float64)
    targets = sequence.pose3d - sequence.pose3d[:, root : root + 1]
    return norm[idx], np.asarray(targets, dtype=np.float64)


def write_dataset(ds: PoseDataset, path) -> Path:
    ds.validate()
    lines = [
        f"format = {FORMAT_TAG}",
        f"joints = {ds.num_joints}",
        f"joint_names = {','.join(ds.joint_names)}",
        f"root = {ds.root}",
        f"cameras = {len(ds.cameras)}",
    ]
    for i, c in enumerate(ds.cameras):
        lines.append(f"camera.{i} = focal={c.focal!r} cx={c.cx!r} cy={c.cy!r} width={c.width} height={c.height}")
    lines.append(f"sequences = {len(ds.sequences)}")
    for i, s in enumerate(ds.sequences):
        if any(ch.isspace() or ch == "=" for ch in s.subject + s.action):
            raise DataError("subject and action ids may not contain whitespace or '='")
        lines.append(f"sequence.{i} = subject={s.subject} action={s.action} camera={s.camera} frames={s.num_frames}")
    lines.append("end_header")
    parts = [("\n".join(lines) + "\n").encode("utf-8")]
    for s in ds.sequences:
        for arr in (s.pose2d, s.pose3d):
            parts.append(struct.pack("<3I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def _fields(text: str, where: str) -> dict[str, str]:
    out = {}
    for tok in text.split():
        if "=" not in tok:
            raise DataError(f"malformed header field {tok!r} in {where}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def read_dataset(path) -> PoseDataset:
    blob = Path(path).read_bytes()
    marker = b"end_header\n"
    end = blob.find(marker)
    if end < 0:
        raise DataError(f"{path}: header terminator 'end_header' not found")
    try:
        header_lines = blob[:end].decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: header is not UTF-8") from exc
    header: dict[str, str] = {}
    for ln in header_lines:
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        if "=" not in ln:
            raise DataError(f"{path}: malformed header line {ln!r}")
        k, v = ln.split("=", 1)
        header[k.strip()] = v.strip()
    try:
        if header.get("format") != FORMAT_TAG:
            raise DataError(f"{path}: unsupported format {header.get('format')!r}")
        num_joints = int(header["joints"])
        names = tuple(header["joint_names"].split(","))
        if len(names) != num_joints:
            raise DataError(f"{path}: {len(names)} joint names for {num_joints} joints")
        cameras = []
        for i in range(int(header["cameras"])):
            f = _fields(header[f"camera.{i}"], f"camera.{i}")
            cameras.append(CameraSpec(float(f["focal"]), float(f["cx"]), float(f["cy"]), int(f["width"]), int(f["height"])))
        seq_meta = [_fields(header[f"sequence.{i}"], f"sequence.{i}") for i in range(int(header["sequences"]))]
        root = int(header.get("root", 0))
    except KeyError as exc:
        raise DataError(f"{path}: header is missing key {exc.args[0]!r}") from exc
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed header value ({exc})") from exc

    pos = end + len(marker)

    def block(dims: int, frames: int, label: str) -> np.ndarray:
        nonlocal pos
        if pos + 12 > len(blob):
            raise DataError(f"{path}: truncated block header for {label} at byte offset {pos}")
        f, j, d = struct.unpack_from("<3I", blob, pos)
        if j != num_joints:
            raise DataError(f"{path}: {label} has {j} joints but the header declares {num_joints} (dimension mismatch)")
        if d != dims or f != frames:
            raise DataError(f"{path}: {label} has shape ({f}, {j}, {d}), expected ({frames}, {num_joints}, {dims})")
        pos += 12
        nbytes = f * j * d * 4
        if pos + nbytes > len(blob):
            raise DataError(
                f"{path}: truncated data for {label}: need {nbytes} bytes at byte offset {pos}, file has {len(blob) - pos}"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=f * j * d, offset=pos).reshape(f, j, d).astype(np.float32)
        pos += nbytes
        return arr

    ds = PoseDataset(names, cameras, root=root)
    for i, meta in enumerate(seq_meta):
        frames = int(meta["frames"])
        p2 = block(2, frames, f"sequence {i} 2D block")
        p3 = block(3, frames, f"sequence {i} 3D block")
        ds.sequences.append(Sequence(meta["subject"], meta["action"], int(meta["camera"]), p2, p3))
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} unexpected trailing bytes at byte offset {pos}")
    ds.validate()
    return ds


def dataset_windows(ds: PoseDataset, seq_len: int, indices=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Windows, targets and the owning sequence index of every window, over selected sequences."""
    xs, ys, owner = [], [], []
    chosen = range(len(ds.sequences)) if indices is None else indices
    for i in chosen:
        s = ds.sequences[i]
        x, y = extract_windows(s, ds.cameras[s.camera], seq_len, ds.root)
        xs.append(x)
        ys.append(y)
        owner.append(np.full(len(x), i))
    if not xs:
        raise DataError("no sequences selected")
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(owner)


def split_sequences(num_sequences: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded sequence-level train/validation split (at least one of each when possible)."""
    order = np.random.default_rng(seed).permutation(num_sequences)
    n_val = int(round(num_sequences * val_fraction))
    if num_sequences > 1:
        n_val = min(max(n_val, 1), num_sequences - 1)
    else:
        n_val = 0
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


__all__ = [
    "JOINT_NAMES_17",
    "PoseDataset",
    "Sequence",
    "dataset_windows",
    "extract_windows",
    "generate_dataset",
    "read_dataset",
    "split_sequences",
    "write_dataset",
]
