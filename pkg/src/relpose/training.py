"""Three-stage optimization: encoders without fusion, fusion with frozen encoders, full finetune."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import TrainSettings, model_config_from_text, model_config_text
from .data import PoseDataset, dataset_windows, split_sequences
from .errors import ConfigurationError, DataError, NumericalError
from .evaluation import mpjpe
from .model import ENCODERS, FeatureFusionNetwork, ModelConfig
from .numerics import OptimizerState, adamw_step, backward, decay_lr, load_checkpoint, mpjpe_loss, save_checkpoint

METRICS_HEADER = ("stage", "epoch", "lr", "train_loss", "val_mpjpe")


@dataclass(frozen=True)
class StagePlan:
    stage: int
    epochs: int
    lr: float
    batch_size: int = 1024
    frozen: tuple[str, ...] = ()
    discard: tuple[str, ...] = ()
    ffm_enabled: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigurationError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.epochs < 0:
            raise ConfigurationError("epoch count must be nonnegative")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be at least 2 (batch normalization)")

    @classmethod
    def for_stage(cls, stage: int, epochs: int, lr: float, batch_size: int = 1024) -> "StagePlan":
        if stage == 1:
            return cls(1, epochs, lr, batch_size, (), (), ffm_enabled=False)
        if stage == 2:
            return cls(2, epochs, lr, batch_size, ENCODERS, ("decoder",), ffm_enabled=True)
        return cls(3, epochs, lr, batch_size, (), (), ffm_enabled=True)


def default_plans(settings: TrainSettings | None = None) -> tuple[StagePlan, StagePlan, StagePlan]:
    s = settings or TrainSettings.paper()
    return tuple(StagePlan.for_stage(i + 1, s.epochs[i], s.lr[i], s.batch_size) for i in range(3))


@dataclass
class TrainingData:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    train_sequences: list[int] = field(default_factory=list)
    val_sequences: list[int] = field(default_factory=list)


def prepare_data(ds: PoseDataset, seq_len: int, val_fraction: float = 0.1, seed: int = 0) -> TrainingData:
    """Windows of a seeded sequence-level train/validation split."""
    train_idx, val_idx = split_sequences(len(ds.sequences), val_fraction, seed)
    if not train_idx:
        raise DataError("dataset has no training sequences")
    tx, ty, _ = dataset_windows(ds, seq_len, train_idx)
    if val_idx:
        vx, vy, _ = dataset_windows(ds, seq_len, val_idx)
    else:
        vx, vy = tx[:0], ty[:0]
    return TrainingData(tx, ty, vx, vy, train_idx, val_idx)


@dataclass(frozen=True)
class EpochRecord:
    stage: int
    epoch: int
    lr: float
    train_loss: float
    val_mpjpe: float


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches; a final batch of one window joins the previous batch."""
    if n == 0:
        raise DataError("no training windows")
    order = rng.permutation(n)
    batches = [order[s : s + batch_size] for s in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    if len(batches[0]) < 2:
        raise DataError("batch normalization needs at least two training windows")
    return batches


def train_epoch(
    model: FeatureFusionNetwork,
    x: np.ndarray,
    y: np.ndarray,
    state: OptimizerState,
    batch_size: int,
    seed: int,
    stage: int = 1,
    epoch: int = 1,
) -> float:
    """One pass over shuffled windows; returns the window-weighted mean loss."""
    batches = batch_indices(len(x), batch_size, _stream(seed, 0, stage, epoch))
    params = model.trainable_parameters()
    total = 0.0
    for b, idx in enumerate(batches):
        model.zero_grad()
        pred = model.forward(x[idx], training=True, rng=_stream(seed, 1, stage, epoch, b))
        loss = mpjpe_loss(pred, y[idx])
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss at stage {stage}, epoch {epoch}, batch {b}")
        backward(loss)
        adamw_step(params, state)
        total += value * len(idx)
    return total / len(x)


def _stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


# -- checkpoints ------------------------------------------------------------


def save_model_checkpoint(
    path,
    model: FeatureFusionNetwork,
    stage: int,
    epoch: int,
    state: OptimizerState | None = None,
    extra: dict | None = None,
) -> Path:
    tensors = dict(model.state_dict())
    meta = {
        "stage": stage,
        "epoch": epoch,
        "config_hash": model.config.config_hash(),
        "ffm_enabled": model.config.ffm_enabled,
        "config": model_config_text(model.config),
        "dtype": model.dtype.name,
    }
    if state is not None:
        meta["optimizer"] = state.hyperparameters()
        for name, m in state.exp_avg.items():
            tensors[f"optim.exp_avg.{name}"] = m
            tensors[f"optim.exp_avg_sq.{name}"] = state.exp_avg_sq[name]
    if extra:
        meta.update(extra)
    return save_checkpoint(path, tensors, meta)


@dataclass
class LoadedCheckpoint:
    model: FeatureFusionNetwork
    metadata: dict
    optimizer: OptimizerState | None


def load_model_checkpoint(path, config: ModelConfig | None = None) -> LoadedCheckpoint:
    """Rebuild the model stored in ``path``; refuses a checkpoint of a different architecture."""
    tensors, meta = load_checkpoint(path)
    try:
        stored = model_config_from_text(meta["config"]).replace(ffm_enabled=bool(meta["ffm_enabled"]))
        stored_hash = meta["config_hash"]
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint metadata lacks {exc.args[0]!r}") from exc
    if stored.config_hash() != stored_hash:
        raise DataError(f"{path}: stored configuration does not match its recorded hash")
    if config is not None and config.config_hash() != stored_hash:
        raise ConfigurationError(
            f"{path}: checkpoint config hash {stored_hash} does not match the requested configuration "
            f"({config.config_hash()})"
        )
    model = FeatureFusionNetwork(stored, seed=0, dtype=np.dtype(meta.get("dtype", "float64")))
    model.load_state_dict(tensors)
    opt = None
    if "optimizer" in meta:
        opt = OptimizerState(**{k: v for k, v in meta["optimizer"].items()})
        prefix = "optim.exp_avg."
        for key, arr in tensors.items():
            if key.startswith(prefix):
                name = key[len(prefix) :]
                opt.exp_avg[name] = arr
                opt.exp_avg_sq[name] = tensors[f"optim.exp_avg_sq.{name}"]
    return LoadedCheckpoint(model, meta, opt)


# -- stages ----------------------------------------------------------------


def enter_stage(
    plan: StagePlan,
    config: ModelConfig,
    seed: int,
    previous: FeatureFusionNetwork | None = None,
    dtype=np.float32,
) -> FeatureFusionNetwork:
    """Model at the start of ``plan``: fresh, or built from the previous stage's model.

    Stage 2 imports only the encoders; its fusion blocks and decoders are new.
    Stage 3 imports everything.
    """
    cfg = config.replace(ffm_enabled=plan.ffm_enabled)
    model = FeatureFusionNetwork(cfg, seed=_stage_seed(seed, plan.stage), dtype=dtype)
    if plan.stage > 1:
        if previous is None:
            raise ConfigurationError(f"stage {plan.stage} needs the stage {plan.stage - 1} checkpoint")
        prev_stage = plan.stage - 1
        if previous.config.config_hash() != cfg.config_hash():
            raise ConfigurationError(f"stage {prev_stage} checkpoint was trained with a different configuration")
        if plan.stage == 2 and previous.config.ffm_enabled:
            raise ConfigurationError("stage 2 must start from a stage 1 model (no fusion blocks)")
        if plan.stage == 3 and not previous.config.ffm_enabled:
            raise ConfigurationError("stage 3 must start from a stage 2 model (with fusion blocks)")
        keep = [c for c in previous.active_components() if c not in plan.discard]
        model.load_state_dict(previous.state_dict(keep), keep)
    model.freeze(plan.frozen)
    return model


def run_stage(
    plan: StagePlan,
    model: FeatureFusionNetwork,
    data: TrainingData,
    seed: int,
    weight_decay: float = 0.01,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[FeatureFusionNetwork, list[EpochRecord], OptimizerState]:
    """Train ``model`` (already prepared by :func:`enter_stage`) for ``plan.epochs`` epochs."""
    state = OptimizerState(lr=plan.lr, weight_decay=weight_decay)
    records = []
    for epoch in range(1, plan.epochs + 1):
        lr = state.lr
        loss = train_epoch(model, data.train_x, data.train_y, state, plan.batch_size, seed, plan.stage, epoch)
        val = mpjpe(model.predict(data.val_x), data.val_y) if len(data.val_x) else float("nan")
        rec = EpochRecord(plan.stage, epoch, lr, loss, val)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        decay_lr(state)
    return model, records, state


def format_metrics(records: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow([r.stage, r.epoch, f"{r.lr:.9e}", f"{r.train_loss:.9f}", f"{r.val_mpjpe:.9f}"])
    return buf.getvalue()


def read_metrics(path) -> list[EpochRecord]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochRecord(int(r["stage"]), int(r["epoch"]), float(r["lr"]), float(r["train_loss"]), float(r["val_mpjpe"]))
        for r in rows
    ]


def run_training(
    config: ModelConfig,
    settings: TrainSettings,
    dataset: PoseDataset,
    out_dir,
    stages: Sequence[int] = (1, 2, 3),
    resume=None,
    log: Callable[[str], None] | None = None,
) -> list[EpochRecord]:
    """Run consecutive stages, writing ``stage{n}.ckpt`` and ``metrics.csv`` into ``out_dir``.

    ``resume`` is the checkpoint of the stage preceding ``stages[0]``. Rows of
    ``metrics.csv`` from stages that are being rerun are replaced.
    """
    stages = list(stages)
    if stages != list(range(stages[0], stages[0] + len(stages))):
        raise ConfigurationError(f"stages must be consecutive, got {stages}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(settings.dtype)
    previous = None
    if stages[0] > 1:
        if resume is None:
            raise ConfigurationError(f"stage {stages[0]} needs the stage {stages[0] - 1} checkpoint (--resume)")
        loaded = load_model_checkpoint(resume, config)
        if loaded.metadata.get("stage") != stages[0] - 1:
            raise ConfigurationError(
                f"{resume} is a stage {loaded.metadata.get('stage')} checkpoint; stage {stages[0]} needs stage "
                f"{stages[0] - 1}"
            )
        previous = loaded.model
    data = prepare_data(dataset, config.seq_len, settings.val_fraction, settings.seed)
    metrics_path = out / "metrics.csv"
    records = [r for r in read_metrics(metrics_path) if r.stage < stages[0]]
    plans = default_plans(settings)
    for s in stages:
        plan = plans[s - 1]
        model = enter_stage(plan, config, settings.seed, previous, dtype)

        def on_epoch(rec: EpochRecord) -> None:
            records.append(rec)
            metrics_path.write_text(format_metrics(records))
            if log is not None:
                log(f"stage {rec.stage} epoch {rec.epoch}: lr {rec.lr:.3e} loss {rec.train_loss:.3f} "
                    f"val {rec.val_mpjpe:.3f}")

        model, _, state = run_stage(plan, model, data, settings.seed, settings.weight_decay, on_epoch)
        model.unfreeze()
        save_model_checkpoint(
            out / f"stage{s}.ckpt",
            model,
            s,
            plan.epochs,
            state,
            {"seed": settings.seed, "train_sequences": json.dumps(data.train_sequences)},
        )
        previous = model
    metrics_path.write_text(format_metrics(records))
    return records
