import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vifa import optim
from vifa.optim import AmsGradState, step


def test_first_step_hand_value():
    s = AmsGradState.zeros(1, denom_eps=0.0)
    s1, p = step(s, np.zeros(1), np.ones(1))
    assert s1.m[0] == pytest.approx(0.1, abs=1e-15)
    assert s1.v[0] == pytest.approx(0.001, abs=1e-15)
    assert s1.v_hat[0] == s1.v[0]
    assert p[0] == pytest.approx(-0.01 * 0.1 / np.sqrt(0.001), abs=1e-12)
    assert abs(p[0] - (-0.031623)) < 1e-6
    assert s1.t == 1


def test_zero_gradient_is_a_fixed_point():
    s = AmsGradState.zeros(3)
    p = np.array([1.0, -2.0, 3.0])
    for _ in range(50):
        s, q = step(s, p, np.zeros(3))
        np.testing.assert_array_equal(q, p)


def test_v_hat_keeps_the_large_value():
    s = AmsGradState.zeros(1)
    s1, _ = step(s, np.zeros(1), [10.0])
    s2, _ = step(s1, np.zeros(1), [0.1])
    assert s2.v_hat[0] >= s1.v_hat[0]
    assert s2.v[0] < s2.v_hat[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_step_is_bounded_by_the_definition(seed):
    rng = np.random.default_rng(seed)
    s = AmsGradState.zeros(4, denom_eps=0.0)
    p = np.zeros(4)
    for _ in range(20):
        g = rng.normal(scale=rng.uniform(0.01, 10), size=4)
        prev = s.v_hat
        s, q = step(s, p, g)
        assert np.all(s.v_hat >= prev)
        assert np.all(np.abs(q - p) <= s.eta * np.abs(s.m) / np.sqrt(s.v_hat) + 1e-15)
        p = q


def test_quadratic_converges():
    s = AmsGradState.zeros(3)
    xi = np.full(3, 5.0)
    for _ in range(100_000):
        s, xi = step(s, xi, xi)
        if np.linalg.norm(xi) < 1e-3:
            break
    assert np.linalg.norm(xi) < 1e-3


def test_bit_reproducible():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(100, 5))
    out = []
    for _ in range(2):
        s, p = AmsGradState.zeros(5), np.ones(5)
        for g in grads:
            s, p = step(s, p, g)
        out.append(p)
    assert out[0].tobytes() == out[1].tobytes()


def test_errors():
    s = AmsGradState.zeros(3)
    with pytest.raises(FloatingPointError, match="index 1"):
        step(s, np.zeros(3), [0.0, np.inf, 0.0])
    with pytest.raises(ValueError):
        step(s, np.zeros(3), np.zeros(2))


def test_defaults_and_state_round_trip():
    d = optim.defaults()
    assert (d["eta"], d["beta1"], d["beta2"], d["M"], d["fallback_eta"]) == (0.01, 0.9, 0.999, 128, 0.005)
    s = AmsGradState.zeros(2)
    np.testing.assert_array_equal(s.m, 0)
    np.testing.assert_array_equal(s.v_hat, 0)
    s, _ = step(s, np.zeros(2), [1.0, -3.0])
    back = AmsGradState.from_json(s.to_json())
    np.testing.assert_array_equal(back.v_hat, s.v_hat)
    assert back.t == 1 and back.denom_eps == s.denom_eps
