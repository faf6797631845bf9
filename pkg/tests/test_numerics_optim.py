import numpy as np
import pytest

from relpose.numerics import OptimizerState, Tensor, adamw_step, decay_lr

from oracles import adamw_scalar


def _param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_zero_gradient_without_decay_is_noop():
    p = _param([1.0, -2.0])
    adamw_step({"p": p}, OptimizerState(lr=0.1, weight_decay=0.0), {"p": np.zeros(2)})
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_first_step_closed_form():
    p = _param([0.0])
    adamw_step({"p": p}, OptimizerState(lr=0.1, weight_decay=0.0), {"p": np.ones(1)})
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_two_steps_match_scalar_oracle():
    rng = np.random.default_rng(0)
    init = rng.normal(size=5)
    grad = rng.normal(size=5)
    p = _param(init.copy())
    state = OptimizerState(lr=1e-2, weight_decay=0.01)
    for _ in range(2):
        adamw_step({"p": p}, state, {"p": grad})
    want = [adamw_scalar(float(a), [float(g)] * 2, 1e-2, 0.01) for a, g in zip(init, grad)]
    assert np.max(np.abs(p.data - want)) <= 1e-12
    assert state.step == 2


def test_varying_gradients_match_scalar_oracle():
    rng = np.random.default_rng(1)
    grads = rng.normal(size=(4, 3))
    init = rng.normal(size=3)
    p = _param(init.copy())
    state = OptimizerState(lr=3e-3, weight_decay=0.05)
    for g in grads:
        adamw_step({"p": p}, state, {"p": g})
    want = [adamw_scalar(float(init[i]), grads[:, i].tolist(), 3e-3, 0.05) for i in range(3)]
    assert np.max(np.abs(p.data - want)) <= 1e-12


def test_decay_is_decoupled_contraction():
    # with a zero gradient the moments stay zero, so only the decay acts
    p = _param([2.0, -4.0])
    state = OptimizerState(lr=0.1, weight_decay=0.5)
    for _ in range(3):
        adamw_step({"p": p}, state, {"p": np.zeros(2)})
    np.testing.assert_allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.05) ** 3, rtol=0, atol=1e-15)


def test_parameters_without_gradient_are_untouched():
    a, b = _param([1.0]), _param([1.0])
    a.grad = np.ones(1)
    adamw_step({"a": a, "b": b}, OptimizerState(lr=0.1))
    assert b.data[0] == 1.0
    assert a.data[0] != 1.0
    assert "b" not in OptimizerState(lr=0.1).exp_avg


def test_decay_lr_closed_form():
    s = OptimizerState(lr=1e-3)
    decay_lr(s)
    assert s.lr == pytest.approx(9.5e-4, rel=1e-15)
    s = OptimizerState(lr=1e-3)
    for _ in range(80):
        decay_lr(s)
    assert s.lr == pytest.approx(1e-3 * 0.95**80, rel=1e-12)
    assert s.lr == pytest.approx(1.65e-5, rel=1e-2)
    before = s.lr
    decay_lr(decay_lr(s))
    assert s.lr < before * 0.95


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        OptimizerState(lr=0.0)
    with pytest.raises(ValueError):
        OptimizerState(lr=1e-3, weight_decay=-1)
    with pytest.raises(ValueError):
        OptimizerState(lr=1e-3, beta1=1.0)
