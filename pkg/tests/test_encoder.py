import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vifa.encoder import (EncoderParams, EncoderPass, default_hidden_size, elu, elu_grad, forward,
                          init_encoder)


def test_elu_values():
    assert elu(0.0) == 0.0
    assert elu(1.5) == 1.5
    v = elu(-40.0)
    # exp(-40) is below double resolution near -1, so the value rounds to -1
    assert -1.0 <= v < -1.0 + 1e-15


def test_elu_derivative_branches():
    for z in (0.7, 3.0):
        assert elu_grad(z) == 1.0
        assert (elu(z + 1e-6) - elu(z - 1e-6)) / 2e-6 == pytest.approx(1.0)
    for z in (-0.7, -3.0):
        assert elu_grad(z) == pytest.approx(np.exp(z))
        assert (elu(z + 1e-6) - elu(z - 1e-6)) / 2e-6 == pytest.approx(np.exp(z), rel=1e-8)


def test_zero_network():
    p = EncoderParams(np.zeros((3, 4)), np.zeros(3), np.zeros((4, 3)), np.zeros(4))
    post = forward(p, np.eye(4)[:2])
    np.testing.assert_array_equal(post.mu, 0.0)
    np.testing.assert_array_equal(post.log_sigma, 0.0)
    np.testing.assert_array_equal(post.sigma, 1.0)


def test_hand_evaluation():
    p = EncoderParams(W1=[[2.0, 0.0]], b1=[-1.0], W2=[[1.0], [0.0]], b2=[0.0, 0.0])
    post = forward(p, [[1.0, 0.0]])
    np.testing.assert_allclose(post.mu, [[1.0]])
    np.testing.assert_allclose(post.log_sigma, [[0.0]])


def test_width_mismatch():
    p = init_encoder(6, 4, 2, seed=0)
    with pytest.raises(ValueError, match="width"):
        forward(p, np.zeros((2, 5)))


def test_identical_rows_identical_outputs():
    p = init_encoder(6, 4, 2, seed=0)
    post = forward(p, np.ones((2, 6)))
    np.testing.assert_array_equal(post.mu[0], post.mu[1])


@given(st.permutations(range(6)))
def test_row_permutation_equivariance(perm):
    p = init_encoder(5, 4, 2, seed=1)
    rows = np.random.default_rng(0).normal(size=(6, 5))
    a = forward(p, rows)
    b = forward(p, rows[list(perm)])
    np.testing.assert_array_equal(a.mu[list(perm)], b.mu)
    np.testing.assert_array_equal(a.log_sigma[list(perm)], b.log_sigma)


def test_init_bounds_and_determinism():
    p = init_encoder(250, 130, 5, seed=4)
    assert 1 / np.sqrt(250) == pytest.approx(0.06325, abs=1e-5)
    assert np.all(np.abs(p.W1) < 1 / np.sqrt(250)) and np.all(np.abs(p.b1) < 1 / np.sqrt(250))
    assert np.all(np.abs(p.W2) < 1 / np.sqrt(130)) and np.all(np.abs(p.b2) < 1 / np.sqrt(130))
    # biases are sampled, not zero
    assert np.abs(p.b1).max() > 0
    q = init_encoder(250, 130, 5, seed=4)
    for k in ("W1", "b1", "W2", "b2"):
        np.testing.assert_array_equal(getattr(p, k), getattr(q, k))
    assert p.W2.shape == (10, 130)


def test_default_hidden_size():
    assert default_hidden_size(250, 5) == 130
    assert default_hidden_size(100, 10) == 60
    for P in (1, 3, 7):
        assert default_hidden_size(2 * P, P) == 2 * P


def test_log_sigma_clamped():
    p = EncoderParams(np.zeros((1, 1)), [0.0], [[0.0], [0.0]], [0.0, -50.0])
    post = forward(p, [[1.0]])
    assert post.log_sigma[0, 0] == -10.0
    assert np.isfinite(post.sigma).all()


def test_jacobian_vector_products(rng):
    p = init_encoder(6, 5, 2, seed=3)
    p.W1 *= 5
    rows = rng.normal(size=(4, 6))
    g_mu, g_ls = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    grads = EncoderPass(p, rows).backward(g_mu, g_ls)

    def f():
        net = EncoderPass(p, rows)
        return np.sum(net.mu * g_mu) + np.sum(net.log_sigma * g_ls)

    for name in ("W1", "b1", "W2", "b2"):
        arr = getattr(p, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + 1e-6
            up = f()
            arr[idx] = old - 1e-6
            down = f()
            arr[idx] = old
            fd = (up - down) / 2e-6
            an = getattr(grads, name)[idx]
            assert abs(fd - an) <= 1e-6 * max(abs(fd) + abs(an), 1e-3)
