import numpy as np
import pytest

from relpose.config import TrainSettings
from relpose.data import dataset_windows, generate_dataset
from relpose.errors import ConfigurationError, DataError, NumericalError
from relpose.model import ENCODERS, FeatureFusionNetwork, ModelConfig
from relpose.numerics import OptimizerState
from relpose.numerics.checkpoint import load_checkpoint, save_checkpoint
from relpose.training import (
    StagePlan,
    batch_indices,
    default_plans,
    enter_stage,
    format_metrics,
    load_model_checkpoint,
    prepare_data,
    read_metrics,
    run_stage,
    run_training,
    save_model_checkpoint,
    train_epoch,
)

SMALL = ModelConfig.desk(seq_len=9, feature_dim=16, tcn_channels=16, dense_hidden=32)
QUICK = TrainSettings(epochs=(2, 2, 2), lr=(1e-3, 1e-3, 5e-4), batch_size=16)


@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(11, 5, 24)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, small_ds):
    out = tmp_path_factory.mktemp("run")
    records = run_training(SMALL, QUICK, small_ds, out)
    return out, records


def _params(path):
    tensors, _ = load_checkpoint(path)
    return tensors


# plans and batching ------------------------------------------------------


def test_stage_plans():
    p1, p2, p3 = default_plans(QUICK)
    assert not p1.ffm_enabled and p1.frozen == ()
    assert p2.frozen == ENCODERS and p2.discard == ("decoder",) and p2.ffm_enabled
    assert p3.frozen == () and p3.ffm_enabled
    assert [p.lr for p in (p1, p2, p3)] == [1e-3, 1e-3, 5e-4]
    assert default_plans()[0].epochs == 80 and default_plans()[0].batch_size == 1024
    with pytest.raises(ConfigurationError):
        StagePlan(4, 1, 1e-3)
    with pytest.raises(ConfigurationError):
        StagePlan(1, 1, 1e-3, batch_size=1)


def test_batches_cover_all_and_merge_singleton():
    rng = np.random.default_rng(0)
    batches = batch_indices(33, 16, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(33))
    assert [len(b) for b in batches] == [16, 17]
    with pytest.raises(DataError):
        batch_indices(1, 16, rng)


# epochs ------------------------------------------------------------------


def test_identical_seeds_give_identical_losses(small_ds):
    data = prepare_data(small_ds, SMALL.seq_len, 0.2, 0)
    losses = []
    for _ in range(2):
        model = FeatureFusionNetwork(SMALL.replace(ffm_enabled=False), seed=3, dtype=np.float32)
        state = OptimizerState(lr=1e-3)
        losses.append([train_epoch(model, data.train_x, data.train_y, state, 16, 5, 1, e) for e in (1, 2)])
    assert losses[0] == losses[1]


def test_lr_closed_form(small_ds):
    data = prepare_data(small_ds, SMALL.seq_len, 0.2, 0)
    plan = StagePlan.for_stage(1, 6, 2e-3, 16)
    model = enter_stage(plan, SMALL, 0)
    _, records, state = run_stage(plan, model, data, 0)
    for k, rec in enumerate(records):
        assert rec.lr == pytest.approx(2e-3 * 0.95**k, rel=1e-12)
    assert state.lr == pytest.approx(2e-3 * 0.95**6, rel=1e-12)


def test_non_finite_loss_aborts(small_ds):
    data = prepare_data(small_ds, SMALL.seq_len, 0.2, 0)
    model = FeatureFusionNetwork(SMALL.replace(ffm_enabled=False), seed=0, dtype=np.float32)
    y = data.train_y.copy()
    y[0, 1, 0] = np.nan
    with pytest.raises(NumericalError, match="non-finite"):
        train_epoch(model, data.train_x, y, OptimizerState(lr=1e-3), 16, 0)


def test_loss_decreases_on_200_window_set():
    ds = generate_dataset(21, 5, 40)
    x, y, _ = dataset_windows(ds, 27)
    assert len(x) == 200
    model = FeatureFusionNetwork(ModelConfig.desk(ffm_enabled=False), seed=0, dtype=np.float32)
    state = OptimizerState(lr=1e-3)
    losses = []
    for epoch in range(1, 21):
        losses.append(train_epoch(model, x, y, state, 32, 0, 1, epoch))
        state.lr *= 0.95
    assert losses[-1] < losses[0]


# stages and checkpoints ----------------------------------------------------


def test_run_training_outputs(trained):
    out, records = trained
    assert [(r.stage, r.epoch) for r in records] == [(s, e) for s in (1, 2, 3) for e in (1, 2)]
    for s in (1, 2, 3):
        assert (out / f"stage{s}.ckpt").exists()
    back = read_metrics(out / "metrics.csv")
    assert [(r.stage, r.epoch) for r in back] == [(r.stage, r.epoch) for r in records]
    for a, b in zip(back, records):
        assert a.lr == pytest.approx(b.lr, rel=1e-9)
        assert a.train_loss == pytest.approx(b.train_loss, abs=1e-8)
        assert a.val_mpjpe == pytest.approx(b.val_mpjpe, abs=1e-8)
    assert (out / "metrics.csv").read_text() == format_metrics(records)


def test_stage1_has_no_fusion_parameters(trained):
    out, _ = trained
    names = _params(out / "stage1.ckpt")
    assert not any(k.startswith("fusion.") for k in names)
    assert any(k.startswith("fusion.") for k in _params(out / "stage2.ckpt"))


def test_stage2_keeps_encoders_bit_identical(trained):
    out, _ = trained
    s1, s2 = _params(out / "stage1.ckpt"), _params(out / "stage2.ckpt")
    enc = [k for k in s1 if k.split(".")[0] in ENCODERS]
    assert enc
    for k in enc:
        assert s1[k].tobytes() == s2[k].tobytes(), k
    assert any(s1[k].tobytes() != s2[k].tobytes() for k in s1 if k.startswith("decoder."))


def test_stage2_decoders_are_fresh(trained, small_ds):
    out, _ = trained
    stage1 = load_model_checkpoint(out / "stage1.ckpt").model
    plan = default_plans(QUICK)[1]
    model = enter_stage(plan, SMALL, QUICK.seed, stage1, np.float32)
    fresh = FeatureFusionNetwork(SMALL, seed=0, dtype=np.float32)
    s1 = stage1.state_dict()
    for k, v in model.state_dict(["decoder"]).items():
        assert v.tobytes() != s1[k].tobytes()
    for k, v in model.state_dict(list(ENCODERS)).items():
        assert v.tobytes() == s1[k].tobytes()
    assert set(model.state_dict()) == set(fresh.state_dict())


def test_frozen_components_get_no_gradients(trained, small_ds):
    out, _ = trained
    stage1 = load_model_checkpoint(out / "stage1.ckpt").model
    model = enter_stage(default_plans(QUICK)[1], SMALL, 0, stage1, np.float32)
    data = prepare_data(small_ds, SMALL.seq_len, 0.2, 0)
    from relpose.numerics import backward, mpjpe_loss

    backward(mpjpe_loss(model.forward(data.train_x[:8], training=True, rng=np.random.default_rng(0)), data.train_y[:8]))
    for name, t in model.parameters().items():
        if name.split(".")[0] in ENCODERS:
            assert t.grad is None, name
        else:
            assert t.grad is not None, name


def test_checkpoint_round_trip(tmp_path):
    model = FeatureFusionNetwork(SMALL, seed=4, dtype=np.float32)
    state = OptimizerState(lr=3e-4)
    state.exp_avg["x"] = np.arange(3.0)
    state.exp_avg_sq["x"] = np.ones(3)
    save_model_checkpoint(tmp_path / "m.ckpt", model, 2, 7, state, {"seed": 4})
    loaded = load_model_checkpoint(tmp_path / "m.ckpt", SMALL)
    for k, v in model.state_dict().items():
        assert np.array_equal(loaded.model.state_dict()[k], v)
    assert loaded.metadata["stage"] == 2 and loaded.metadata["epoch"] == 7
    assert loaded.optimizer.lr == 3e-4
    assert np.array_equal(loaded.optimizer.exp_avg["x"], np.arange(3.0))


def test_hash_mismatch_refused(trained):
    out, _ = trained
    with pytest.raises(ConfigurationError, match="hash"):
        load_model_checkpoint(out / "stage2.ckpt", SMALL.replace(dense_hidden=64))


def test_tampered_config_detected(tmp_path, trained):
    out, _ = trained
    tensors, meta = load_checkpoint(out / "stage1.ckpt")
    meta["config"] = meta["config"].replace("dense_hidden = 32", "dense_hidden = 33")
    save_checkpoint(tmp_path / "bad.ckpt", tensors, meta)
    with pytest.raises(DataError):
        load_model_checkpoint(tmp_path / "bad.ckpt")


def test_missing_prerequisite(tmp_path, small_ds, trained):
    with pytest.raises(ConfigurationError, match="needs the stage 1"):
        run_training(SMALL, QUICK, small_ds, tmp_path, stages=(2, 3))
    out, _ = trained
    with pytest.raises(ConfigurationError, match="stage 2 needs stage 1"):
        run_training(SMALL, QUICK, small_ds, tmp_path, stages=(2,), resume=out / "stage2.ckpt")
    with pytest.raises(ConfigurationError):
        enter_stage(default_plans(QUICK)[2], SMALL, 0, None)


def test_resume_matches_full_run(tmp_path, small_ds, trained):
    out, records = trained
    run_training(SMALL, QUICK, small_ds, tmp_path, stages=(1,))
    run_training(SMALL, QUICK, small_ds, tmp_path, stages=(2, 3), resume=tmp_path / "stage1.ckpt")
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert (tmp_path / "stage3.ckpt").read_bytes() == (out / "stage3.ckpt").read_bytes()
