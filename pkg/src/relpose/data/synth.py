"""Synthetic articulated motion: sinusoidal joint angles, forward kinematics, pinhole projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..model import JOINT_NAMES_17

MIN_DEPTH_MM = 500.0
IMAGE_MARGIN = 0.85  # generated joints stay within this normalized radius
FPS = 50.0


@dataclass(frozen=True)
class CameraSpec:
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def project(self, points) -> np.ndarray:
        """Camera-space millimeters ``(..., 3)`` to pixels ``(..., 2)``."""
        p = np.asarray(points, dtype=np.float64)
        z = p[..., 2]
        return np.stack([self.focal * p[..., 0] / z + self.cx, self.focal * p[..., 1] / z + self.cy], axis=-1)

    @classmethod
    def default(cls) -> "CameraSpec":
        return cls(focal=1145.0, cx=500.0, cy=500.0, width=1000, height=1000)


@dataclass(frozen=True)
class SkeletonModel:
    """Kinematic tree. ``offsets[j]`` is the rest-pose bone vector from ``parents[j]`` to ``j`` (mm)."""

    names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray
    root: int = 0

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        j = len(self.names)
        if len(self.parents) != j or offsets.shape != (j, 3):
            raise ValueError("names, parents and offsets must agree on the joint count")
        if self.parents[self.root] != -1:
            raise ValueError("root joint must have parent -1")
        for child, parent in enumerate(self.parents):
            if child == self.root:
                continue
            if not 0 <= parent < child:
                raise ValueError("parents must precede children (tree in topological order)")
            if np.linalg.norm(offsets[child]) <= 0:
                raise ValueError(f"bone ending at {self.names[child]} has zero length")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def bones(self) -> list[tuple[int, int, float]]:
        return [
            (p, c, float(np.linalg.norm(self.offsets[c])))
            for c, p in enumerate(self.parents)
            if c != self.root
        ]

    @classmethod
    def default(cls) -> "SkeletonModel":
        # x: subject's left, y: down, z: away from the camera
        parents = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
        offsets = [
            (0, 0, 0),
            (-130, 0, 0), (0, 450, 0), (0, 440, 0),
            (130, 0, 0), (0, 450, 0), (0, 440, 0),
            (0, -230, 0), (0, -250, 0), (0, -110, 0), (0, -120, 0),
            (150, 30, 0), (0, 280, 0), (0, 250, 0),
            (-150, 30, 0), (0, 280, 0), (0, 250, 0),
        ]
        return cls(JOINT_NAMES_17, parents, np.array(offsets, dtype=np.float64))


# joint -> per-axis angle amplitude (rad) for the rotation applied at that joint
_AMPLITUDES = {
    0: (0.15, 0.3, 0.1),
    1: (0.7, 0.15, 0.2), 4: (0.7, 0.15, 0.2),
    2: (0.8, 0.0, 0.0), 5: (0.8, 0.0, 0.0),
    7: (0.25, 0.2, 0.15), 8: (0.15, 0.15, 0.1), 9: (0.3, 0.4, 0.2),
    11: (0.9, 0.4, 0.6), 14: (0.9, 0.4, 0.6),
    12: (1.0, 0.0, 0.3), 15: (1.0, 0.0, 0.3),
}


def _rotation(angles: np.ndarray) -> np.ndarray:
    """``(..., 3)`` XYZ Euler angles to ``(..., 3, 3)`` matrices ``Rz @ Ry @ Rx``."""
    ax, ay, az = angles[..., 0], angles[..., 1], angles[..., 2]
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    one, zero = np.ones_like(ax), np.zeros_like(ax)
    rx = np.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx], -1).reshape(ax.shape + (3, 3))
    ry = np.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy], -1).reshape(ax.shape + (3, 3))
    rz = np.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one], -1).reshape(ax.shape + (3, 3))
    return rz @ ry @ rx


def forward_kinematics(skeleton: SkeletonModel, local_rotations: np.ndarray, root_position: np.ndarray) -> np.ndarray:
    """Joint positions ``(F, J, 3)`` from per-joint local rotations ``(F, J, 3, 3)``."""
    f, j = local_rotations.shape[:2]
    world = np.empty_like(local_rotations)
    pos = np.empty((f, j, 3))
    for c in range(j):
        p = skeleton.parents[c]
        if p < 0:
            world[:, c] = local_rotations[:, c]
            pos[:, c] = root_position
        else:
            world[:, c] = world[:, p] @ local_rotations[:, c]
            pos[:, c] = pos[:, p] + world[:, p] @ skeleton.offsets[c]
    return pos


def _motion(rng: np.random.Generator, frames: int, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Seeded joint angles ``(F, J, 3)`` and root trajectory ``(F, 3)``."""
    t = np.arange(frames) / FPS
    angles = np.zeros((frames, 17, 3))

    def wave(amp):
        freqs = rng.uniform(0.2, 1.5, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        weights = rng.dirichlet(np.ones(3))
        return amp * scale * (weights[None] * np.sin(2 * np.pi * freqs[None] * t[:, None] + phases[None])).sum(-1)

    for joint, amps in _AMPLITUDES.items():
        for axis, amp in enumerate(amps):
            if amp:
                angles[:, joint, axis] = wave(amp)
    # knees and elbows only flex one way
    for joint in (2, 5):
        angles[:, joint, 0] = -np.abs(angles[:, joint, 0])
    for joint in (12, 15):
        angles[:, joint, 0] = np.abs(angles[:, joint, 0])
    angles[:, 0, 1] += rng.uniform(-np.pi / 3, np.pi / 3)
    base = np.array([rng.uniform(-350, 350), rng.uniform(-150, 150), rng.uniform(4500, 6000)])
    travel = np.stack([wave(350.0), wave(80.0), wave(500.0)], axis=-1)
    return angles, base[None] + travel


def synth_generate(
    skeleton: SkeletonModel,
    camera: CameraSpec,
    seed: int,
    frames: int,
    amplitude: float = 1.0,
    jitter_px: float = 0.0,
    max_attempts: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Generate ``(pose2d_px (F, J, 2), pose3d_mm (F, J, 3))`` for one sequence.

    Each sequence draws its own motion intensity in [0.05, 1] times
    ``amplitude`` so that movement ranges vary across sequences. Motions that
    leave the image margin or come closer than 0.5 m are redrawn.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if frames < 1:
        raise ValueError("need at least one frame")
    if skeleton.num_joints != 17:
        raise ValueError("the motion model drives the 17-joint skeleton")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        scale = amplitude * rng.uniform(0.05, 1.0)
        angles, root = _motion(rng, frames, scale)
        pose3d = forward_kinematics(skeleton, _rotation(angles), root)
        if np.any(pose3d[..., 2] <= MIN_DEPTH_MM):
            continue
        pose2d = camera.project(pose3d)
        norm = (2.0 * pose2d - np.array([camera.width, camera.height])) / camera.width
        limit = IMAGE_MARGIN * np.array([1.0, camera.height / camera.width])
        if np.any(np.abs(norm) >= limit):
            continue
        if jitter_px > 0:
            pose2d = pose2d + rng.normal(0.0, jitter_px, size=pose2d.shape)
        return pose2d, pose3d
    raise DataError(f"could not place the skeleton inside the image after {max_attempts} attempts")
