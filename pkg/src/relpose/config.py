"""Flat ``key = value`` config files with ``[model]`` and ``[train]`` sections.

Keys of ``[model]`` (all optional; unspecified keys take the profile default)::

    profile        desk | paper      base profile the other keys override
    seq_len        odd power of 3    frames per window (T)
    num_joints     int               J
    groups         "0,7,8,9,10; 11,12,13; ..."  joint indices per group
    group_names    "torso,left_arm,..."
    feature_dim, tcn_channels, dense_hidden       ints
    tcn_dropout, dense_dropout, leaky_slope       floats
    temporal_op    SUB | IP | CP | CS | SUB+SUB_S | SUB_WINDOWED:<odd>
    include_abs, include_p, include_t             true / false
    global_input   abs | relative
    root_index     int
    bn_momentum, bn_eps                           floats

Keys of ``[train]``::

    epochs         "20,20,5"          epochs of stages 1..3
    lr             "1e-3,1e-3,5e-4"   initial learning rate of stages 1..3
    batch_size     int
    weight_decay   float
    seed           int
    val_fraction   float
    dtype          float32 | float64
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .encoding import TemporalOperator
from .errors import ConfigurationError
from .model import GroupPartition, ModelConfig

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}
_INT_KEYS = ("seq_len", "num_joints", "feature_dim", "tcn_channels", "dense_hidden", "root_index")
_FLOAT_KEYS = ("tcn_dropout", "dense_dropout", "leaky_slope", "bn_momentum", "bn_eps")
_BOOL_KEYS = ("include_abs", "include_p", "include_t")


@dataclass
class TrainSettings:
    epochs: tuple[int, int, int] = (20, 20, 5)
    lr: tuple[float, float, float] = (1e-3, 1e-3, 5e-4)
    batch_size: int = 32
    weight_decay: float = 0.01
    seed: int = 0
    val_fraction: float = 0.1
    dtype: str = "float32"

    @classmethod
    def paper(cls) -> "TrainSettings":
        return cls(epochs=(80, 80, 20), batch_size=1024)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    train: TrainSettings = field(default_factory=TrainSettings)
    profile: str = "desk"


def _parse_bool(key: str, text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"{key}: expected true/false, got {text!r}") from None


def model_from_section(section: dict[str, str]) -> tuple[ModelConfig, str]:
    section = dict(section)
    profile = section.pop("profile", "desk").strip()
    if profile not in ("desk", "paper"):
        raise ConfigurationError(f"unknown profile {profile!r}")
    kw: dict = {}
    try:
        for key, raw in section.items():
            if key in _INT_KEYS:
                kw[key] = int(raw)
            elif key in _FLOAT_KEYS:
                kw[key] = float(raw)
            elif key in _BOOL_KEYS:
                kw[key] = _parse_bool(key, raw)
            elif key == "temporal_op":
                kw[key] = TemporalOperator.parse(raw)
            elif key == "global_input":
                kw[key] = raw.strip()
            elif key in ("groups", "group_names"):
                continue
            else:
                raise ConfigurationError(f"unknown [model] key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad [model] value: {exc}") from exc
    if "groups" in section:
        groups = tuple(tuple(int(j) for j in g.split(",") if j.strip()) for g in section["groups"].split(";"))
        names = tuple(n.strip() for n in section.get("group_names", "").split(",") if n.strip())
        if not names:
            names = tuple(f"group{i}" for i in range(len(groups)))
        kw["partition"] = GroupPartition(groups, names)
    cfg = ModelConfig.desk(**kw) if profile == "desk" else ModelConfig(**kw)
    cfg.validate()
    return cfg, profile


def model_to_section(cfg: ModelConfig, profile: str = "desk") -> dict[str, str]:
    out = {"profile": profile}
    for key in _INT_KEYS + _FLOAT_KEYS:
        out[key] = repr(getattr(cfg, key))
    for key in _BOOL_KEYS:
        out[key] = "true" if getattr(cfg, key) else "false"
    out["temporal_op"] = str(cfg.temporal_op)
    out["global_input"] = cfg.global_input
    out["groups"] = "; ".join(",".join(str(j) for j in g) for g in cfg.partition.groups)
    out["group_names"] = ",".join(cfg.partition.names)
    return out


def _triple(key: str, text: str, cast):
    parts = [cast(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigurationError(f"{key}: expected three comma-separated values, got {text!r}")
    return tuple(parts)


def train_from_section(section: dict[str, str], profile: str = "desk") -> TrainSettings:
    ts = TrainSettings.paper() if profile == "paper" else TrainSettings()
    try:
        for key, raw in section.items():
            if key == "epochs":
                ts.epochs = _triple(key, raw, int)
            elif key == "lr":
                ts.lr = _triple(key, raw, float)
            elif key in ("batch_size", "seed"):
                setattr(ts, key, int(raw))
            elif key in ("weight_decay", "val_fraction"):
                setattr(ts, key, float(raw))
            elif key == "dtype":
                if raw.strip() not in ("float32", "float64"):
                    raise ConfigurationError("dtype must be float32 or float64")
                ts.dtype = raw.strip()
            else:
                raise ConfigurationError(f"unknown [train] key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad [train] value: {exc}") from exc
    if ts.batch_size < 2:
        raise ConfigurationError("batch size must be at least 2 (batch normalization)")
    return ts


def train_to_section(ts: TrainSettings) -> dict[str, str]:
    return {
        "epochs": ",".join(str(e) for e in ts.epochs),
        "lr": ",".join(repr(x) for x in ts.lr),
        "batch_size": str(ts.batch_size),
        "weight_decay": repr(ts.weight_decay),
        "seed": str(ts.seed),
        "val_fraction": repr(ts.val_fraction),
        "dtype": ts.dtype,
    }


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from exc
    unknown = set(cp.sections()) - {"model", "train"}
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    model, profile = model_from_section(dict(cp["model"]) if cp.has_section("model") else {})
    train = train_from_section(dict(cp["train"]) if cp.has_section("train") else {}, profile)
    return RunConfig(model, train, profile)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(rc: RunConfig) -> str:
    lines = ["[model]"]
    lines += [f"{k} = {v}" for k, v in model_to_section(rc.model, rc.profile).items()]
    lines += ["", "[train]"]
    lines += [f"{k} = {v}" for k, v in train_to_section(rc.train).items()]
    return "\n".join(lines) + "\n"


def model_config_text(cfg: ModelConfig, profile: str = "desk") -> str:
    return dump_config(RunConfig(cfg, TrainSettings(), profile)).split("\n[train]")[0]


def model_config_from_text(text: str) -> ModelConfig:
    return parse_config(text).model
