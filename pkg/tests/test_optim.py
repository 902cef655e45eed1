import math

import numpy as np
import pytest

from distill_lab.core.errors import InvariantViolation, NonFiniteGradientError
from distill_lab.sandbox.optim import AdamState, adam_step, cosine_lr


def test_cosine_schedule():
    assert cosine_lr(0.1, 0.0) == pytest.approx(0.1)
    assert cosine_lr(0.1, 0.5) == pytest.approx(0.05)
    assert cosine_lr(0.1, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(0.1, 2.0) == cosine_lr(0.1, 1.0)
    assert cosine_lr(0.1, -1.0) == cosine_lr(0.1, 0.0)


def test_warmup_scales_first_steps():
    state = AdamState.create({"w": np.zeros(1)}, base_lr=0.1, total_steps=100, warmup_steps=4)
    assert state.learning_rate(0.0) == pytest.approx(0.025)


def test_two_steps_against_hand_computation():
    params = {"w": np.array([1.0, -2.0])}
    g1 = np.array([0.5, -1.0])
    g2 = np.array([0.25, 0.5])
    state = AdamState.create(params, base_lr=0.1, total_steps=10)

    p1, s1 = adam_step(params, {"w": g1}, state, 0.0)
    expected1 = params["w"] - 0.1 * g1 / (np.abs(g1) + 1e-8)
    assert np.allclose(p1["w"], expected1, rtol=0, atol=1e-12)

    p2, s2 = adam_step(p1, {"w": g2}, s1, 0.1)
    lr2 = 0.1 * 0.5 * (1 + math.cos(math.pi * 0.1))
    m = 0.9 * (0.1 * g1) + 0.1 * g2
    v = 0.999 * (0.001 * g1 ** 2) + 0.001 * g2 ** 2
    m_hat = m / (1 - 0.9 ** 2)
    v_hat = v / (1 - 0.999 ** 2)
    expected2 = expected1 - lr2 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(p2["w"], expected2, rtol=0, atol=1e-12)
    assert s2.step == 2


def test_step_does_not_mutate_inputs():
    params = {"w": np.array([1.0, 2.0])}
    state = AdamState.create(params, base_lr=0.1, total_steps=5)
    adam_step(params, {"w": np.array([1.0, 1.0])}, state, 0.0)
    assert params["w"].tolist() == [1.0, 2.0]
    assert state.step == 0
    assert not state.m["w"].any()


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_gradient_aborts(bad):
    params = {"w": np.array([1.0, 2.0]), "b": np.zeros(1)}
    state = AdamState.create(params, base_lr=0.1, total_steps=5)
    with pytest.raises(NonFiniteGradientError) as excinfo:
        adam_step(params, {"w": np.array([1.0, bad]), "b": np.zeros(1)}, state, 0.0)
    assert excinfo.value.tensors == ["w"]
    assert excinfo.value.step == 1


def test_mismatched_names():
    state = AdamState.create({"w": np.zeros(2)}, base_lr=0.1, total_steps=5)
    with pytest.raises(InvariantViolation):
        adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, state, 0.0)
    with pytest.raises(InvariantViolation):
        AdamState.create({"w": np.zeros(2)}, base_lr=0.1, total_steps=0)


def test_three_step_trajectory_at_constant_rate():
    grads = [0.5, -0.25, 1.0]
    state = AdamState.create({"w": np.zeros(1)}, base_lr=0.1, total_steps=100)
    params = {"w": np.array([1.0])}

    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        params, state = adam_step(params, {"w": np.array([g])}, state, 0.0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(params["w"][0] - w) < 1e-12
        assert abs(state.m["w"][0] - m) < 1e-12
        assert abs(state.v["w"][0] - v) < 1e-12

    assert state.step == 3


def test_zero_gradient_leaves_parameters_and_decays_moments():
    params = {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}
    zeros = {name: np.zeros_like(p) for name, p in params.items()}
    state = AdamState.create(params, base_lr=0.1, total_steps=10)

    fresh, fresh_state = adam_step(params, zeros, state, 0.0)
    for name in params:
        assert np.array_equal(fresh[name], params[name])
        assert not fresh_state.m[name].any() and not fresh_state.v[name].any()

    g = {"w": np.array([0.5, -1.0]), "b": np.array([2.0])}
    warm, warm_state = adam_step(params, g, state, 0.0)
    # the schedule reaches exactly zero at the end, so only the moments move
    still, still_state = adam_step(warm, zeros, warm_state, 1.0)
    for name in params:
        assert np.array_equal(still[name], warm[name])
        assert np.allclose(still_state.m[name], 0.9 * warm_state.m[name], rtol=1e-15, atol=0)
        assert np.allclose(still_state.v[name], 0.999 * warm_state.v[name], rtol=1e-15, atol=0)
    assert still_state.step == 2
