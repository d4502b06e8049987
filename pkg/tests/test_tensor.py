"""Numeric core: forward values against small closed forms, gradients
against central finite differences (the independent oracle for every op).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roleid import tensor as T
from roleid.tensor import Tensor


def fd_grad(loss_fn, leaf, eps=1e-3):
    """Central-difference gradient of loss_fn() w.r.t. leaf.data."""
    flat = leaf.data.reshape(-1)
    out = np.zeros_like(flat)
    with T.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2 * eps)
    return out.reshape(leaf.data.shape)


def check_op(build_loss, leaves, tol=1e-4, eps=1e-3):
    for p in leaves:
        p.grad = None
    loss = build_loss()
    T.backward(loss)
    for p in leaves:
        assert p.grad is not None, "leaf never reached by backward"
        ref = fd_grad(build_loss, p, eps=eps)
        err = np.abs(p.grad - ref) / np.maximum.reduce([np.abs(p.grad), np.abs(ref), np.full_like(ref, 1e-8)])
        assert err.max() <= tol, f"max rel err {err.max():.2e}"


SEEDS = list(range(10))


@pytest.fixture(autouse=True)
def f64():
    with T.precision("f64"):
        yield


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_add_mul_broadcast(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    c = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    check_op(lambda: T.sum_all(T.mul(T.add(a, b), c)), [a, b, c])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul_2d(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    check_op(lambda: T.sum_all(T.matmul(a, b)), [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul_batched_vs_shared_weight(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    check_op(lambda: T.sum_all(T.mul(T.matmul(x, w), T.matmul(x, w))), [x, w])


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", [T.tanh, T.sigmoid, T.relu])
def test_grad_activations(seed, op):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(4, 3)) + 0.05, requires_grad=True)
    check_op(lambda: T.sum_all(T.mul(op(x), op(x))), [x], tol=2e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_log_clip(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
    check_op(lambda: T.sum_all(T.log(T.clip_min(x, 1e-12))), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_concat_stack_slice(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)

    def loss():
        cat = T.concat([a, b], axis=1)
        piled = T.stack([cat, cat], axis=0)
        row = T.index_axis(piled, 2, 1)
        return T.sum_all(T.mul(row, row))

    check_op(loss, [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_reshape_transpose_sum(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)

    def loss():
        y = T.transpose_last(T.reshape(x, (6, 4)))
        return T.sum_all(T.mul(T.sum_axis(y, axis=0), T.sum_axis(y, axis=0)))

    check_op(loss, [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_max_axis(seed):
    rng = np.random.default_rng(seed)
    # Separate entries so the argmax is stable under the FD perturbation.
    base = rng.permutation(24).reshape(2, 3, 4) * 0.5
    x = Tensor(base, requires_grad=True)
    check_op(lambda: T.sum_all(T.mul(T.max_axis(x, axis=1), T.max_axis(x, axis=1))), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_embedding(seed):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
    ids = rng.integers(0, 7, size=(2, 4))
    check_op(lambda: T.sum_all(T.mul(T.embedding(w, ids), T.embedding(w, ids))), [w])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_masked_softmax(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    weights = Tensor(rng.normal(size=(3, 5)))

    def loss():
        return T.sum_all(T.mul(T.masked_softmax(x, axis=-1, mask=mask), weights))

    check_op(loss, [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_masked_mean_rows(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    mask = rng.random((2, 4)) > 0.4
    mask[:, 0] = True
    check_op(lambda: T.sum_all(T.mul(T.masked_mean_rows(x, mask), T.masked_mean_rows(x, mask))), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_dropout_fixed_mask(seed):
    # Same derived rng each call means the mask is constant, so FD applies.
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

    def loss():
        drop_rng = np.random.default_rng(seed + 1000)
        y = T.dropout(x, 0.5, training=True, rng=drop_rng)
        return T.sum_all(T.mul(y, y))

    check_op(loss, [x])


# --- masked softmax pinned values ------------------------------------------


def test_softmax_uniform_on_equal_logits():
    out = T.masked_softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_softmax_analytic_two_logits():
    out = T.masked_softmax(Tensor([np.log(2.0), 0.0]))
    np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-12)


def test_softmax_single_unmasked_element():
    out = T.masked_softmax(Tensor([5.0, 9.9]), mask=np.array([True, False]))
    np.testing.assert_array_equal(out.data, [1.0, 0.0])


def test_softmax_all_masked_group_raises_with_index():
    x = Tensor(np.zeros((2, 3)))
    mask = np.array([[True, False, True], [False, False, False]])
    with pytest.raises(ValueError, match=r"\(1,\)"):
        T.masked_softmax(x, axis=-1, mask=mask)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 6))
def test_softmax_rows_stochastic_and_masked_zero(seed, rows, cols):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(scale=4.0, size=(rows, cols)))
    mask = rng.random((rows, cols)) > 0.4
    mask[:, 0] = True
    out = T.masked_softmax(logits, axis=-1, mask=mask).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(rows), atol=1e-6)
    assert (out[~mask] == 0).all()


# --- dropout ----------------------------------------------------------------


def test_dropout_eval_is_identity():
    x = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4))
    assert T.dropout(x, 0.5, training=False, rng=None) is x


def test_dropout_train_scales_kept_units():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((200, 200)))
    y = T.dropout(x, 0.25, training=True, rng=rng).data
    kept = y != 0
    np.testing.assert_allclose(y[kept], 1.0 / 0.75)
    # Expectation preserved within sampling noise.
    assert abs(y.mean() - 1.0) < 0.02


# --- misc mechanics ---------------------------------------------------------


def test_precision_switch_controls_dtype():
    with T.precision("f32"):
        assert Tensor([1.0]).data.dtype == np.float32
    with T.precision("f64"):
        assert Tensor([1.0]).data.dtype == np.float64


def test_no_grad_suppresses_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert y._backward is None and not y.requires_grad


def test_gradient_accumulates_over_reuse():
    x = Tensor([3.0], requires_grad=True)
    loss = T.sum_all(T.add(T.mul(x, x), T.mul(x, x)))
    T.backward(loss)
    np.testing.assert_allclose(x.grad, [12.0])
