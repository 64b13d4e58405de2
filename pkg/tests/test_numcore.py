import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selfsent.numcore import (
    ContractError,
    Rng,
    cross_entropy,
    derive_seed,
    dropout,
    grad_check,
    hard_sigmoid_ew,
    matmul,
    softmax_rows,
    tanh_ew,
)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_examples():
    b = np.array([[5.0, 6], [7, 8]])
    assert np.array_equal(matmul(np.eye(2), b), b)
    assert np.array_equal(matmul(np.zeros((3, 2)), b), np.zeros((3, 2)))
    a = np.array([[1.0, 2], [3, 4]])
    expected = naive_matmul(a, b)
    assert expected.tolist() == [[19, 22], [43, 50]]
    assert np.array_equal(matmul(a, b), expected)


def test_matmul_dimension_mismatch():
    with pytest.raises(ContractError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_random_against_loops():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(2, 5))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9)


def test_tanh():
    assert tanh_ew(np.array([0.0]))[0] == 0.0
    x = np.linspace(-5, 5, 41)
    np.testing.assert_allclose(tanh_ew(x) + tanh_ew(-x), 0.0, atol=0)
    assert abs(tanh_ew(np.array([20.0]))[0] - 1.0) < 1e-9
    y = tanh_ew(np.linspace(-3, 3, 101))
    assert np.all((y > -1) & (y < 1))


@pytest.mark.parametrize("x, expected", [(0.0, 0.5), (2.5, 1.0), (-2.5, 0.0), (1.0, 0.7), (10.0, 1.0), (-7.0, 0.0)])
def test_hard_sigmoid(x, expected):
    assert hard_sigmoid_ew(np.array([x]))[0] == pytest.approx(expected, abs=1e-15)


def test_softmax_examples():
    np.testing.assert_allclose(softmax_rows(np.ones((1, 4))), [[0.25] * 4])
    np.testing.assert_allclose(softmax_rows(np.array([[0.0, math.log(2)]])), [[1 / 3, 2 / 3]], atol=1e-15)
    v = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(softmax_rows(v + 17.5), softmax_rows(v), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-1e4, 1e4)))
def test_softmax_stable_rows_sum_to_one(x):
    p = softmax_rows(x)
    assert np.all(np.isfinite(p)) and np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def scalar_cross_entropy(probs, targets):
    n, c = len(probs), len(probs[0])
    loss = 0.0
    grad = [[0.0] * c for _ in range(n)]
    for i in range(n):
        loss -= math.log(max(probs[i][targets[i]], 1e-12))
        for j in range(c):
            grad[i][j] = (probs[i][j] - (1.0 if j == targets[i] else 0.0)) / n
    return loss / n, grad


def test_cross_entropy_examples():
    loss, _ = cross_entropy(np.full((1, 3), 1 / 3), [2])
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    loss, _ = cross_entropy(np.array([[1.0, 0.0, 0.0]]), [0])
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_against_scalar_oracle():
    rng = np.random.default_rng(4)
    probs = softmax_rows(rng.normal(size=(2, 3)))
    targets = [1, 0]
    loss, grad = cross_entropy(probs, targets)
    ref_loss, ref_grad = scalar_cross_entropy(probs.tolist(), targets)
    assert abs(loss - ref_loss) < 1e-12
    np.testing.assert_allclose(grad, ref_grad, atol=1e-12)


def test_cross_entropy_grad_matches_logit_differences():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(3, 3))
    targets = [2, 0, 1]
    _, grad = cross_entropy(softmax_rows(logits), targets)
    err = grad_check(lambda z: (cross_entropy(softmax_rows(z), targets)[0], grad), logits, 1e-6)
    assert err < 1e-7


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ContractError):
        cross_entropy(np.full((1, 3), 1 / 3), [3])


def test_dropout_degenerate_and_eval():
    x = np.random.default_rng(0).normal(size=(4, 5))
    y, mask = dropout(x, 0.0, True, Rng(1))
    assert np.array_equal(y, x) and np.all(mask == 1)
    for p in (0.1, 0.5, 0.9):
        y, _ = dropout(x, p, False)
        assert y is x


def test_dropout_rejects_p_one():
    with pytest.raises(ContractError):
        dropout(np.ones(3), 1.0, True, Rng(0))


def test_dropout_monte_carlo_mean():
    x = np.random.default_rng(2).uniform(0.5, 1.5, size=100_000)
    y, _ = dropout(x, 0.5, True, Rng(3))
    assert abs(y.mean() - x.mean()) / x.mean() < 0.02
    assert np.all((y == 0) | np.isclose(y, 2 * x))


def test_dropout_channel_zeroes_whole_features():
    x = np.ones((6, 7, 50))
    y, mask = dropout(x, 0.3, True, Rng(4), style="channel")
    assert mask.shape == (6, 1, 50)
    zeroed = (y == 0).all(axis=1)
    assert np.array_equal(zeroed, (y == 0).any(axis=1))


def test_dropout_timestep_zeroes_whole_tokens():
    x = np.ones((6, 7, 50))
    y, mask = dropout(x, 0.3, True, Rng(4), style="timestep")
    assert mask.shape == (6, 7, 1)
    assert np.array_equal((y == 0).all(axis=2), (y == 0).any(axis=2))


def test_rng_reproducible_and_derived_streams_differ():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.random(1000), b.random(1000))
    assert np.array_equal(a.integers(0, 10**9, 50), b.integers(0, 10**9, 50))
    assert derive_seed(42, "teacher") == derive_seed(42, "teacher")
    assert derive_seed(42, "teacher") != derive_seed(42, "student")
    assert not np.array_equal(Rng(42).derive("x").random(10), Rng(42).derive("y").random(10))


def test_grad_check_examples():
    w = np.array([3.0])
    assert grad_check(lambda p: (float(p[0] ** 2), 2 * p), w, 1e-5) < 1e-8
    assert grad_check(lambda p: (7.0, np.zeros_like(p)), w, 1e-5) == 0.0
    assert grad_check(lambda p: (float("nan"), p), w) == float("inf")


def test_grad_check_detects_wrong_gradient():
    w = np.array([1.0, -2.0])
    assert grad_check(lambda p: (float((p**2).sum()), 3 * p), w) > 0.1
