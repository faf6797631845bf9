"""MPJPE / P-MPJPE, the global-offset robustness experiment, and movement-range stratification."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

Predictor = Callable[[np.ndarray], np.ndarray]


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance over every frame and joint of ``(..., J, 3)`` poses."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def per_frame_mpjpe(pred, gt) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def procrustes_transform(pred, gt) -> SimilarityTransform:
    """Similarity transform ``s R x + t`` minimizing the squared distance of ``pred`` to ``gt``.

    Proper rotations only: a reflection in the SVD solution is removed by
    flipping the weakest singular direction.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError("procrustes alignment needs two (J, 3) arrays")
    if pred.shape[0] < 3:
        raise ValueError("procrustes alignment needs at least 3 joints")
    mu_p, mu_g = pred.mean(0), gt.mean(0)
    x, y = pred - mu_p, gt - mu_g
    if np.linalg.matrix_rank(y, tol=1e-9 * max(1.0, np.abs(y).max())) < 2:
        warnings.warn("ground truth joints are collinear; alignment is not unique", RuntimeWarning, stacklevel=2)
    u, s, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    flip = np.array([1.0, 1.0, d])
    rot = vt.T @ np.diag(flip) @ u.T
    norm_x = (x * x).sum()
    scale = float((s * flip).sum() / norm_x) if norm_x > 0 else 1.0
    trans = mu_g - scale * rot @ mu_p
    return SimilarityTransform(scale, rot, trans)


def procrustes_align(pred, gt) -> np.ndarray:
    return procrustes_transform(pred, gt).apply(pred)


def p_mpjpe(pred, gt) -> float:
    """MPJPE after aligning every frame to its ground truth by a similarity transform."""
    return float(per_frame_p_mpjpe(pred, gt).mean())


def per_frame_p_mpjpe(pred, gt) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    aligned = np.stack([procrustes_align(p, g) for p, g in zip(pred, gt)])
    return np.linalg.norm(aligned - gt, axis=-1).mean(axis=-1)


# -- robustness to global offsets -------------------------------------------


def sample_offsets(count: int, a: float = 0.2, seed: int = 0) -> np.ndarray:
    """``count`` offsets uniform in ``(-a, a)^2``, rounded to single precision."""
    rng = np.random.default_rng(seed)
    off = rng.uniform(-a, a, size=(count, 2)).astype(np.float32).astype(np.float64)
    return np.clip(off, np.nextafter(np.float32(-a), np.float32(0)), np.nextafter(np.float32(a), np.float32(0)))


def offsets_with_magnitudes(magnitudes, a: float = 0.2, seed: int = 0) -> np.ndarray:
    """One offset per magnitude with a seeded direction keeping each coordinate inside ``(-a, a)``."""
    rng = np.random.default_rng(seed)
    out = []
    for m in magnitudes:
        if m == 0:
            out.append((0.0, 0.0))
            continue
        if m >= a * np.sqrt(2):
            raise ValueError(f"magnitude {m} cannot keep both coordinates inside (-{a}, {a})")
        lo = 0.0 if m < a else np.arccos(min(1.0, a / m)) + 1e-6
        theta = rng.uniform(lo, np.pi / 2 - lo) + rng.integers(4) * np.pi / 2
        out.append((m * np.cos(theta), m * np.sin(theta)))
    return np.asarray(out, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True)
class ShiftRow:
    dx: float
    dy: float
    magnitude: float
    err_vs_gt: float
    consistency: float
    skipped: int
    evaluated: int


def shift_experiment(predict: Predictor, windows, targets, offsets) -> list[ShiftRow]:
    """Compare predictions on original and globally shifted inputs.

    For each offset, windows whose shifted coordinates would leave (-1, 1) are
    skipped. ``err_vs_gt`` is MPJPE(P_s, P_g) and ``consistency`` is
    MPJPE(P_o, P_s), both over the kept windows. Original and shifted inputs go
    through ``predict`` with identical batching.
    """
    windows = np.asarray(windows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    rows = []
    for dx, dy in np.asarray(offsets, dtype=np.float64).reshape(-1, 2):
        shifted = windows + np.array([dx, dy])
        keep = np.all(np.abs(shifted) < 1.0, axis=(1, 2, 3))
        n_keep = int(keep.sum())
        if n_keep == 0:
            rows.append(ShiftRow(dx, dy, float(np.hypot(dx, dy)), float("nan"), float("nan"), len(windows), 0))
            continue
        p_o = predict(windows[keep])
        p_s = predict(shifted[keep])
        rows.append(
            ShiftRow(
                float(dx),
                float(dy),
                float(np.hypot(dx, dy)),
                mpjpe(p_s, targets[keep]),
                mpjpe(p_o, p_s),
                int(len(windows) - n_keep),
                n_keep,
            )
        )
    return rows


# -- movement range -----------------------------------------------------------


def movement_range(seq) -> np.ndarray | float:
    """Mean distance between every frame's joints and the center frame's joints.

    Accepts ``(T, J, 2)`` (returns a float) or ``(B, T, J, 2)`` (returns ``(B,)``).
    """
    k = np.asarray(getattr(seq, "frames", seq), dtype=np.float64)
    t = k.shape[-3]
    center = (t - 1) // 2
    d = np.linalg.norm(k - k[..., center : center + 1, :, :], axis=-1)
    mr = d.mean(axis=(-2, -1))
    return float(mr) if np.ndim(mr) == 0 else mr


@dataclass
class MRSubset:
    index: int
    mr_min: float
    mr_max: float
    members: np.ndarray
    mpjpe: float

    @property
    def count(self) -> int:
        return len(self.members)


def mr_bins(mr, bins: int = 10) -> list[np.ndarray]:
    """Split window indices into ``bins`` MR-ascending groups of equal count.

    Counts differ by at most one; the extra windows go to the last bins.
    Windows with identical MR always share a bin (so a constant-MR set lands
    entirely in bin 0).
    """
    mr = np.asarray(mr, dtype=np.float64)
    n = len(mr)
    if n < bins:
        raise ValueError(f"need at least {bins} windows for {bins} bins, got {n}")
    order = np.argsort(mr, kind="stable")
    base, extra = divmod(n, bins)
    sizes = [base + (1 if b >= bins - extra else 0) for b in range(bins)]
    labels = np.repeat(np.arange(bins), sizes)
    sorted_mr = mr[order]
    first = np.searchsorted(sorted_mr, sorted_mr, side="left")
    labels = labels[first]
    return [order[labels == b] for b in range(bins)]


def mr_stratified_eval(predict: Predictor, windows, targets, bins: int = 10) -> list[MRSubset]:
    windows = np.asarray(windows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mr = movement_range(windows)
    pred = predict(windows)
    errs = per_frame_mpjpe(pred, targets)
    out = []
    for b, members in enumerate(mr_bins(mr, bins)):
        if len(members) == 0:
            out.append(MRSubset(b, float("nan"), float("nan"), members, float("nan")))
            continue
        out.append(MRSubset(b, float(mr[members].min()), float(mr[members].max()), members, float(errs[members].mean())))
    return out
