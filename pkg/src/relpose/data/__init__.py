"""Datasets, window extraction and the synthetic motion generator."""
from .dataset import (
    PoseDataset,
    Sequence,
    dataset_windows,
    extract_windows,
    generate_dataset,
    read_dataset,
    split_sequences,
    write_dataset,
)
from .synth import CameraSpec, SkeletonModel, forward_kinematics, synth_generate

__all__ = [
    "CameraSpec",
    "PoseDataset",
    "Sequence",
    "SkeletonModel",
    "dataset_windows",
    "extract_windows",
    "forward_kinematics",
    "generate_dataset",
    "read_dataset",
    "split_sequences",
    "synth_generate",
    "write_dataset",
]
