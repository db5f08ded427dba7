"""Tape mechanics: recording, replay, accumulation, misuse errors."""
import threading

import numpy as np
import pytest

from vecmap import ops
from vecmap.tensor import Tape, TapeError, Tensor, unbroadcast


def test_tensor_wraps_and_casts():
    t = Tensor([1, 2, 3])
    assert t.dtype == np.float64
    assert t.shape == (3,)
    assert not t.requires_grad


def test_scalar_loss_required():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_backward_simple_chain():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_grad_accumulates_across_tapes():
    x = Tensor(np.array([2.0]), requires_grad=True)
    for _ in range(3):
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(x, x))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, [12.0])


def test_diamond_reuse_sums_gradients():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        a = ops.mul(x, x)
        loss = ops.sum_all(ops.add(a, a))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [12.0])


def test_double_backward_rejected():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(x)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_reset_allows_reuse():
    x = Tensor(np.array([1.0]), requires_grad=True)
    tape = Tape()
    with tape:
        loss = ops.sum_all(ops.mul(x, x))
    tape.backward(loss)
    tape.reset()
    with tape:
        loss = ops.sum_all(ops.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


def test_nested_tape_rejected():
    with Tape():
        with pytest.raises(TapeError):
            with Tape():
                pass


def test_no_grad_outside_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ops.mul(x, x)
    assert y.requires_grad
    assert x.grad is None


def test_requires_grad_gating():
    x = Tensor(np.ones(2), requires_grad=False)
    w = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(x, w))
    tape.backward(loss)
    assert x.grad is None
    np.testing.assert_allclose(w.grad, np.ones(2))


def test_tape_is_thread_local():
    errors = []

    def worker():
        try:
            x = Tensor(np.array([2.0]), requires_grad=True)
            with Tape() as tape:
                loss = ops.sum_all(ops.mul(x, x))
            tape.backward(loss)
            np.testing.assert_allclose(x.grad, [4.0])
        except Exception as e:  # pragma: no cover
            errors.append(e)

    with Tape():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert not errors


@pytest.mark.parametrize(
    "gshape,tshape",
    [((3, 4), (3, 4)), ((3, 4), (1, 4)), ((3, 4), (4,)), ((2, 3, 4), (3, 1)), ((5,), ())],
)
def test_unbroadcast_inverts_broadcasting(gshape, tshape, rng):
    g = rng.normal(size=gshape)
    out = unbroadcast(g, tshape)
    assert out.shape == tshape
    # summing over broadcast axes must preserve the total
    np.testing.assert_allclose(out.sum(), g.sum())


def test_non_finite_forward_rejected_in_softmax():
    from vecmap.tensor import ShapeError

    with pytest.raises(ShapeError):
        ops.softmax_last_axis(Tensor(np.array([np.nan, 0.0])))
    with pytest.raises(ShapeError):
        ops.softmax_last_axis(Tensor(np.array([np.inf, 0.0])))
    with pytest.raises(ShapeError):
        ops.softmax_last_axis(Tensor(np.array([-np.inf, -np.inf])))
