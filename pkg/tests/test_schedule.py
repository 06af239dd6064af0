import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noncross.errors import ConfigError, DimensionError, NumericGuardError
from noncross.schedule import NoiseSchedule, make_cosine, make_linear, predict_x0, q_sample


def test_linear_single_step():
    s = make_linear(1, 0.1, 0.1)
    assert s.beta.tolist() == [0.1]
    assert s.alpha_bar[0] == pytest.approx(0.9, abs=1e-15)


def test_linear_three_steps_hand_product():
    s = make_linear(3, 0.1, 0.3)
    np.testing.assert_allclose(s.beta, [0.1, 0.2, 0.3], rtol=1e-15)
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.9 * 0.8, 0.9 * 0.8 * 0.7], rtol=1e-12)
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72, 0.504], rtol=1e-12)


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (5, 0.0, 0.1), (5, 0.3, 0.1), (5, 0.1, 1.0)])
def test_linear_bounds(args):
    with pytest.raises(ConfigError):
        make_linear(*args)


def test_cosine_starts_near_one_and_decreases():
    s = make_cosine(1000)
    assert s.alpha_bar[0] > 0.99
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_cosine_betas_clipped():
    s = make_cosine(10)
    f = lambda u: math.cos((u + 0.008) / 1.008 * math.pi / 2) ** 2  # noqa: E731
    direct = [min(1 - f((i + 1) / 10) / f(i / 10), 0.999) for i in range(10)]
    np.testing.assert_allclose(s.beta, direct, rtol=1e-14)
    assert s.beta.max() <= 0.999


def test_cosine_rejects_zero_steps():
    with pytest.raises(ConfigError):
        make_cosine(0)


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 400), lo=st.floats(1e-5, 0.2), span=st.floats(0, 0.5))
def test_alpha_bar_invariants(T, lo, span):
    hi = min(lo + span, 0.9)
    s = make_linear(T, lo, hi)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))
    assert np.all(np.diff(s.alpha_bar) < 0)
    np.testing.assert_allclose(s.alpha_bar, np.cumprod(1 - s.beta), rtol=1e-12)


def test_schedule_is_immutable():
    s = make_linear(4, 0.1, 0.2)
    with pytest.raises(ValueError):
        s.beta[0] = 0.5


def test_q_sample_nearly_clean_at_tiny_beta():
    s = make_linear(3, 1e-10, 1e-9)
    x0 = np.array([1.0, -2.0])
    np.testing.assert_allclose(q_sample(s, x0, np.ones(2), 0), x0, atol=1e-4)


def test_q_sample_zero_signal():
    s = make_linear(10, 0.01, 0.2)
    eps = np.array([0.3, -1.2])
    assert np.array_equal(q_sample(s, np.zeros(2), eps, 4), math.sqrt(1 - s.alpha_bar[4]) * eps)


def test_q_sample_calculator_value():
    s = make_linear(3, 0.1, 0.3)
    assert q_sample(s, [1.0], [1.0], 1)[0] == pytest.approx(math.sqrt(0.72) + math.sqrt(0.28), abs=1e-12)
    assert q_sample(s, [1.0], [1.0], 1)[0] == pytest.approx(1.37767, abs=1e-5)


def test_q_sample_errors():
    s = make_linear(3, 0.1, 0.3)
    with pytest.raises(IndexError):
        q_sample(s, [1.0], [1.0], 3)
    with pytest.raises(DimensionError):
        q_sample(s, [1.0, 2.0], [1.0], 0)


@pytest.mark.parametrize("sched", [make_linear(1000, 1e-4, 0.02), make_cosine(1000)])
def test_round_trip_every_t(sched):
    rng = np.random.default_rng(0)
    x0, eps = rng.standard_normal(5), rng.standard_normal(5)
    for t in range(sched.T):
        back = predict_x0(sched, q_sample(sched, x0, eps, t), eps, t)
        assert np.max(np.abs(back - x0)) < 1e-10


def test_predict_x0_zero_noise():
    s = make_linear(10, 0.01, 0.2)
    x = np.array([0.4, 1.1])
    np.testing.assert_allclose(predict_x0(s, x, np.zeros(2), 7), x / math.sqrt(s.alpha_bar[7]), rtol=1e-15)


def test_predict_x0_direct_formula():
    s = make_linear(10, 0.01, 0.2)
    rng = np.random.default_rng(5)
    for _ in range(20):
        t = int(rng.integers(10))
        x, e = rng.standard_normal(3), rng.standard_normal(3)
        ab = np.prod([1 - (0.01 + (0.2 - 0.01) * i / 9) for i in range(t + 1)])
        np.testing.assert_allclose(predict_x0(s, x, e, t), (x - math.sqrt(1 - ab) * e) / math.sqrt(ab), rtol=1e-12)


def test_predict_x0_guard():
    s = NoiseSchedule(np.full(3, 0.9999999))
    with pytest.raises(NumericGuardError):
        predict_x0(s, [1.0], [0.0], 2)


def test_batched_timesteps():
    s = make_linear(10, 0.01, 0.2)
    rng = np.random.default_rng(1)
    x0, eps = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    t = np.array([0, 3, 9, 5])
    batched = q_sample(s, x0, eps, t)
    for i in range(4):
        np.testing.assert_array_equal(batched[i], q_sample(s, x0[i], eps[i], int(t[i])))


def test_forward_process_moments():
    s = make_linear(10, 0.01, 0.2)
    t, n = 6, 100_000
    x0 = np.array([1.5, -0.5])
    eps = np.random.default_rng(11).standard_normal((n, 2))
    xt = q_sample(s, np.broadcast_to(x0, (n, 2)), eps, t)
    ab = s.alpha_bar[t]
    mean_se = np.sqrt((1 - ab) / n)
    assert np.all(np.abs(xt.mean(axis=0) - np.sqrt(ab) * x0) < 4 * mean_se)
    var_se = (1 - ab) * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(xt.var(axis=0, ddof=1) - (1 - ab)) < 4 * var_se)


def test_dict_round_trip():
    s = make_cosine(20)
    s2 = NoiseSchedule.from_dict(s.to_dict())
    assert np.array_equal(s.beta, s2.beta) and s2.kind == "cosine"
