"""Grouped Feature Fusion Network lifting a 2D pose window to a root-relative 3D pose.

Per-group TCN encoders read the enhanced input of their joints, a dense
encoder reads the current pose, an optional fusion block per group mixes the
local features of the *other* groups, and per-group decoders emit the joints.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoding import PoseSequence2D, TemporalOperator, assemble_input, input_channels, positional_encode
from .errors import ConfigurationError
from .numerics import (
    LayerParams,
    Tensor,
    as_tensor,
    batch_norm,
    concat,
    conv1d,
    dense,
    dropout,
    init_batchnorm,
    init_conv,
    init_dense,
    leaky_relu,
    narrow,
    reshape,
    take,
)

COMPONENTS = ("local", "global", "fusion", "decoder")
ENCODERS = ("local", "global")
OUTPUT_SCALE_MM = 1000.0  # decoder heads emit meters; outputs are reported in millimeters

JOINT_NAMES_17 = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)


@dataclass(frozen=True)
class GroupPartition:
    groups: tuple[tuple[int, ...], ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.groups) != len(self.names):
            raise ConfigurationError("one name per group is required")
        if any(len(g) == 0 for g in self.groups):
            raise ConfigurationError("groups must be non-empty")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def validate(self, num_joints: int) -> None:
        flat = [j for g in self.groups for j in g]
        if len(flat) != len(set(flat)):
            raise ConfigurationError("groups overlap: a joint appears in more than one group")
        if sorted(flat) != list(range(num_joints)):
            raise ConfigurationError(f"groups do not cover joints 0..{num_joints - 1} exactly")

    def order(self) -> np.ndarray:
        """Joint indices in group-concatenation order."""
        return np.array([j for g in self.groups for j in g], dtype=np.intp)

    @classmethod
    def default(cls) -> "GroupPartition":
        return cls(
            groups=((0, 7, 8, 9, 10), (11, 12, 13), (14, 15, 16), (4, 5, 6), (1, 2, 3)),
            names=("torso", "left_arm", "right_arm", "left_leg", "right_leg"),
        )


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 243
    num_joints: int = 17
    partition: GroupPartition = field(default_factory=GroupPartition.default)
    feature_dim: int = 512
    tcn_channels: int = 512
    tcn_dropout: float = 0.2
    dense_hidden: int = 1024
    dense_dropout: float = 0.25
    temporal_op: TemporalOperator = field(default_factory=TemporalOperator)
    include_abs: bool = True
    include_p: bool = True
    include_t: bool = True
    ffm_enabled: bool = True
    leaky_slope: float = 0.01
    global_input: str = "abs"
    root_index: int = 0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """CPU-tractable profile used by the synthetic experiments."""
        base = dict(seq_len=27, feature_dim=64, tcn_channels=64, dense_hidden=128)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def in_channels(self) -> int:
        return input_channels(self.include_abs, self.include_p, self.include_t, self.temporal_op)

    @property
    def tcn_depth(self) -> int:
        return tcn_depth(self.seq_len)

    def validate(self) -> None:
        if self.seq_len % 2 == 0:
            raise ConfigurationError("sequence length must be odd")
        tcn_depth(self.seq_len)
        self.partition.validate(self.num_joints)
        if not 0 <= self.root_index < self.num_joints:
            raise ConfigurationError("root index out of range")
        if self.in_channels == 0:
            raise ConfigurationError("at least one input block (abs, P, T) must be enabled")
        if self.global_input not in ("abs", "relative"):
            raise ConfigurationError(f"global_input must be 'abs' or 'relative', got {self.global_input!r}")
        if self.temporal_op.variant == "SUB_WINDOWED" and self.temporal_op.window > self.seq_len:
            raise ConfigurationError("temporal window exceeds the sequence length")

    def architecture(self) -> dict:
        """Every field that shapes parameters or outputs, except the stage-dependent FFM switch."""
        d = dataclasses.asdict(self)
        d.pop("ffm_enabled")
        d["partition"] = {"groups": [list(g) for g in self.partition.groups], "names": list(self.partition.names)}
        d["temporal_op"] = str(self.temporal_op)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.architecture(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def tcn_depth(seq_len: int) -> int:
    """Number of residual blocks whose width-3 receptive field is exactly ``seq_len``."""
    depth = round(math.log(seq_len, 3)) if seq_len > 0 else 0
    if depth < 1 or 3**depth != seq_len:
        raise ConfigurationError(
            f"sequence length {seq_len} is not a power of 3; the TCN receptive field cannot match it"
        )
    return depth


def receptive_field(depth: int, width: int = 3) -> int:
    return 1 + (width - 1) * sum(width**level for level in range(depth))


def _seed_for(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")])


class FeatureFusionNetwork:
    """Parameters and forward pass of the grouped lifting network.

    ``layers`` maps hierarchical names (``"local.2.block0.dilated"``) to
    :class:`LayerParams`; the first name segment is the component used for
    stage-wise freezing.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.frozen: set[str] = set()
        self.layers: dict[str, LayerParams] = {}
        for comp in self.active_components():
            self.reinitialize(comp, seed)

    # construction ----------------------------------------------------------

    def active_components(self) -> tuple[str, ...]:
        return COMPONENTS if self.config.ffm_enabled else ("local", "global", "decoder")

    def _build(self, component: str, rng: np.random.Generator) -> dict[str, LayerParams]:
        cfg, dt = self.config, self.dtype
        parts = cfg.partition
        out: dict[str, LayerParams] = {}
        if component == "local":
            for i, joints in enumerate(parts.groups):
                out.update(self._tcn(f"local.{i}", len(joints) * cfg.in_channels, rng))
        elif component == "global":
            out.update(self._dense_block("global", 2 * cfg.num_joints, cfg.feature_dim, rng))
        elif component == "fusion":
            n_in = (parts.num_groups - 1) * cfg.feature_dim
            for i in range(parts.num_groups):
                out.update(self._dense_block(f"fusion.{i}", n_in, cfg.feature_dim, rng))
        elif component == "decoder":
            n_in = (3 if cfg.ffm_enabled else 2) * cfg.feature_dim
            for i, joints in enumerate(parts.groups):
                out.update(self._dense_block(f"decoder.{i}", n_in, 3 * len(joints), rng))
        else:
            raise ConfigurationError(f"unknown component {component!r}")
        for lp in out.values():
            lp.weight.data = lp.weight.data.astype(dt)
            lp.bias.data = lp.bias.data.astype(dt)
            if lp.kind == "batchnorm":
                lp.running_mean = lp.running_mean.astype(dt)
                lp.running_var = lp.running_var.astype(dt)
        return out

    def _tcn(self, prefix: str, c_in: int, rng) -> dict[str, LayerParams]:
        c, d = self.config.tcn_channels, self.config.feature_dim
        layers = {f"{prefix}.proj": init_conv(c_in, c, 1, rng), f"{prefix}.proj_bn": init_batchnorm(c)}
        for level in range(self.config.tcn_depth):
            layers[f"{prefix}.block{level}.dilated"] = init_conv(c, c, 3, rng)
            layers[f"{prefix}.block{level}.dilated_bn"] = init_batchnorm(c)
            layers[f"{prefix}.block{level}.pointwise"] = init_conv(c, c, 1, rng)
            layers[f"{prefix}.block{level}.pointwise_bn"] = init_batchnorm(c)
        layers[f"{prefix}.out"] = init_conv(c, d, 1, rng)
        return layers

    def _dense_block(self, prefix: str, n_in: int, n_out: int, rng) -> dict[str, LayerParams]:
        h = self.config.dense_hidden
        return {
            f"{prefix}.fc_in": init_dense(n_in, h, rng),
            f"{prefix}.bn_in": init_batchnorm(h),
            f"{prefix}.fc1": init_dense(h, h, rng),
            f"{prefix}.bn1": init_batchnorm(h),
            f"{prefix}.fc2": init_dense(h, h, rng),
            f"{prefix}.bn2": init_batchnorm(h),
            f"{prefix}.fc_out": init_dense(h, n_out, rng),
        }

    def reinitialize(self, component: str, seed: int) -> None:
        """Fresh seeded parameters for one component, replacing any existing ones."""
        for name in [n for n in self.layers if n.split(".", 1)[0] == component]:
            del self.layers[name]
        rng = np.random.default_rng(_seed_for(seed, component))
        self.layers.update(self._build(component, rng))
        if component in self.frozen:
            self.freeze([component])

    def audit(self) -> None:
        """Check every parameter shape against the configuration."""
        expected = FeatureFusionNetwork.__new__(FeatureFusionNetwork)
        expected.config, expected.dtype, expected.frozen, expected.layers = self.config, self.dtype, set(), {}
        for comp in self.active_components():
            expected.layers.update(expected._build(comp, np.random.default_rng(0)))
        if set(expected.layers) != set(self.layers):
            missing = sorted(set(expected.layers) ^ set(self.layers))
            raise ConfigurationError(f"parameter set does not match the configuration: {missing[:5]}")
        for name, lp in expected.layers.items():
            got = self.layers[name]
            if got.weight.shape != lp.weight.shape or got.bias.shape != lp.bias.shape:
                raise ConfigurationError(f"{name}: shape {got.weight.shape} != expected {lp.weight.shape}")

    # parameter access ------------------------------------------------------

    def parameters(self, components: Sequence[str] | None = None) -> dict[str, Tensor]:
        out = {}
        for lname, lp in self.layers.items():
            if components is not None and lname.split(".", 1)[0] not in components:
                continue
            for tname, t in lp.tensors().items():
                out[f"{lname}.{tname}"] = t
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.parameters().items() if t.requires_grad}

    def state_dict(self, components: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        out = {}
        for lname, lp in self.layers.items():
            if components is not None and lname.split(".", 1)[0] not in components:
                continue
            for tname, t in lp.tensors().items():
                out[f"{lname}.{tname}"] = t.data.copy()
            for bname, b in lp.buffers().items():
                out[f"{lname}.{bname}"] = b.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], components: Sequence[str] | None = None) -> None:
        for lname, lp in self.layers.items():
            if components is not None and lname.split(".", 1)[0] not in components:
                continue
            for tname, t in lp.tensors().items():
                key = f"{lname}.{tname}"
                if key not in state:
                    raise ConfigurationError(f"state is missing {key}")
                if state[key].shape != t.shape:
                    raise ConfigurationError(f"{key}: shape {state[key].shape} != {t.shape}")
                t.data = np.array(state[key], dtype=self.dtype)
            if lp.kind == "batchnorm":
                lp.running_mean = np.array(state[f"{lname}.running_mean"], dtype=self.dtype)
                lp.running_var = np.array(state[f"{lname}.running_var"], dtype=self.dtype)

    def freeze(self, components: Sequence[str]) -> None:
        """Frozen components run in inference mode and record no gradients."""
        self.frozen.update(components)
        for t in self.parameters(components).values():
            t.requires_grad = False
            t.grad = None

    def unfreeze(self) -> None:
        self.frozen.clear()
        for t in self.parameters().values():
            t.requires_grad = True

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    def astype(self, dtype) -> "FeatureFusionNetwork":
        self.dtype = np.dtype(dtype)
        for lp in self.layers.values():
            lp.weight.data = lp.weight.data.astype(dtype)
            lp.bias.data = lp.bias.data.astype(dtype)
            if lp.kind == "batchnorm":
                lp.running_mean = lp.running_mean.astype(dtype)
                lp.running_var = lp.running_var.astype(dtype)
        return self

    # building blocks -------------------------------------------------------

    def _act(self, h, bn_name, training, rate, rng):
        cfg = self.config
        h = batch_norm(h, self.layers[bn_name], training, cfg.bn_momentum, cfg.bn_eps)
        h = leaky_relu(h, cfg.leaky_slope)
        return dropout(h, rate, training, rng)

    def _mode(self, component: str, training: bool) -> bool:
        return training and component not in self.frozen

    def local_encode(self, group: int, x, training: bool = False, rng=None) -> Tensor:
        """TCN over a ``(B, T, J_i * C)`` group input, collapsing time to a ``(B, D)`` feature."""
        cfg = self.config
        prefix = f"local.{group}"
        training = self._mode("local", training)
        x = x if isinstance(x, Tensor) else as_tensor(np.asarray(x, dtype=self.dtype))
        expected = len(cfg.partition.groups[group]) * cfg.in_channels
        if x.ndim != 3 or x.shape[2] != expected or x.shape[1] != cfg.seq_len:
            raise ConfigurationError(f"group {group} expects (B, {cfg.seq_len}, {expected}) input, got {x.shape}")
        rate = cfg.tcn_dropout
        h = conv1d(x, self.layers[f"{prefix}.proj"])
        h = self._act(h, f"{prefix}.proj_bn", training, rate, rng)
        for level in range(cfg.tcn_depth):
            dil = 3**level
            residual = narrow(h, 1, dil, h.shape[1] - dil)
            h = conv1d(h, self.layers[f"{prefix}.block{level}.dilated"], kernel_width=3, dilation=dil)
            h = self._act(h, f"{prefix}.block{level}.dilated_bn", training, rate, rng)
            h = conv1d(h, self.layers[f"{prefix}.block{level}.pointwise"])
            h = self._act(h, f"{prefix}.block{level}.pointwise_bn", training, rate, rng)
            h = residual + h
        h = conv1d(h, self.layers[f"{prefix}.out"])
        return reshape(h, (h.shape[0], cfg.feature_dim))

    def _dense_forward(self, prefix: str, x: Tensor, training: bool, rng) -> Tensor:
        rate = self.config.dense_dropout
        h = self._act(dense(x, self.layers[f"{prefix}.fc_in"]), f"{prefix}.bn_in", training, rate, rng)
        skip = h
        h = self._act(dense(h, self.layers[f"{prefix}.fc1"]), f"{prefix}.bn1", training, rate, rng)
        h = self._act(dense(h, self.layers[f"{prefix}.fc2"]), f"{prefix}.bn2", training, rate, rng)
        return dense(skip + h, self.layers[f"{prefix}.fc_out"])

    def global_encode(self, current_pose, training: bool = False, rng=None) -> Tensor:
        """Dense residual encoder over the ``(B, J, 2)`` current pose."""
        cur = np.asarray(current_pose, dtype=self.dtype)
        cur = cur.reshape(cur.shape[0], -1)
        if cur.shape[1] != 2 * self.config.num_joints:
            raise ConfigurationError(f"global encoder expects {self.config.num_joints} joints")
        return self._dense_forward("global", as_tensor(cur), self._mode("global", training), rng)

    def fuse(self, group: int, others: Sequence[Tensor], training: bool = False, rng=None) -> Tensor:
        """Fused feature for ``group`` from the local features of the other groups, in ascending order."""
        if not self.config.ffm_enabled:
            raise ConfigurationError("fusion block is disabled in this configuration")
        n = self.config.partition.num_groups
        if len(others) != n - 1:
            raise ConfigurationError(f"fusion expects {n - 1} local features, got {len(others)}")
        return self._dense_forward(f"fusion.{group}", concat(list(others), axis=1), self._mode("fusion", training), rng)

    def decode(self, group: int, local, global_, fused=None, training: bool = False, rng=None) -> Tensor:
        if self.config.ffm_enabled != (fused is not None):
            raise ConfigurationError(
                "decoder input must be (local, fused, global) with the FFM and (local, global) without it"
            )
        feats = [local, fused, global_] if fused is not None else [local, global_]
        return self._dense_forward(f"decoder.{group}", concat(feats, axis=1), self._mode("decoder", training), rng)

    # full model ------------------------------------------------------------

    def encode_inputs(self, windows) -> tuple[np.ndarray, np.ndarray]:
        """Enhanced input ``(B, T, J, C)`` and the global encoder input ``(B, J, 2)``."""
        cfg = self.config
        k = windows.frames[None] if isinstance(windows, PoseSequence2D) else np.asarray(windows, dtype=np.float64)
        if k.ndim == 3:
            k = k[None]
        if k.shape[1:] != (cfg.seq_len, cfg.num_joints, 2):
            raise ConfigurationError(f"expected windows of shape (B, {cfg.seq_len}, {cfg.num_joints}, 2), got {k.shape}")
        enh = assemble_input(k, cfg.include_abs, cfg.include_p, cfg.include_t, cfg.temporal_op, cfg.root_index)
        center = (cfg.seq_len - 1) // 2
        current = k[:, center]
        if cfg.global_input == "relative":
            current = positional_encode(current, cfg.root_index)
        return enh.channels, current

    def forward(self, windows, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """``(B, T, J, 2)`` windows to a ``(B, J, 3)`` root-relative pose tensor."""
        cfg = self.config
        enh, current = self.encode_inputs(windows)
        b = enh.shape[0]
        locals_ = []
        for i, joints in enumerate(cfg.partition.groups):
            xi = enh[:, :, list(joints), :].reshape(b, cfg.seq_len, -1)
            locals_.append(self.local_encode(i, xi, training, rng))
        glob = self.global_encode(current, training, rng)
        outs = []
        n = cfg.partition.num_groups
        for i in range(n):
            fused = None
            if cfg.ffm_enabled:
                fused = self.fuse(i, [locals_[m] for m in range(n) if m != i], training, rng)
            outs.append(self.decode(i, locals_[i], glob, fused, training, rng))
        flat = reshape(concat(outs, axis=1), (b, cfg.num_joints, 3))
        pose = take(flat, np.argsort(cfg.partition.order()), axis=1)
        mask = np.full((1, cfg.num_joints, 1), OUTPUT_SCALE_MM, dtype=self.dtype)
        mask[0, cfg.root_index] = 0.0
        return pose * mask

    __call__ = forward

    def predict(self, windows, batch_size: int = 256) -> np.ndarray:
        """Inference-mode predictions in float64, evaluated in fixed-size chunks."""
        k = np.asarray(windows, dtype=np.float64)
        if k.ndim == 3:
            return self.forward(k[None]).data[0].astype(np.float64)
        out = [self.forward(k[s : s + batch_size]).data for s in range(0, len(k), batch_size)]
        if not out:
            return np.zeros((0, self.config.num_joints, 3))
        return np.concatenate(out).astype(np.float64)
