import os
import sys

import numpy as np
import pytest
import torch

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from networks import tensor as T
from networks.optimizer import SgdState, sgd_step

T.set_default_dtype('float64')


def _param(values):
    return T.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_backward_square_sum():
    w = _param([1., 2.])
    with T.Tape():
        loss = T.sum(w * w)
    T.backward(loss)
    assert np.array_equal(w.grad, [2., 4.])


def test_backward_mean():
    w = _param([3., -1., 0.5, 7.])
    with T.Tape():
        loss = T.mean(w)
    T.backward(loss)
    assert np.allclose(w.grad, 0.25)


def test_backward_rejects_non_scalar():
    w = _param([1., 2.])
    with T.Tape():
        out = w * 2.
    with pytest.raises(ValueError):
        T.backward(out)


def test_backward_clears_tape():
    w = _param([1., 2.])
    with T.Tape() as tape:
        loss = T.sum(w * w)
    T.backward(loss)
    assert len(tape) == 0
    with pytest.raises(ValueError):
        T.backward(loss)


def test_no_grad_records_nothing():
    w = _param([1., 2.])
    with T.Tape() as tape:
        with T.no_grad():
            out = T.sum(w * w)
    assert len(tape) == 0
    assert not out.requires_grad


def test_accumulation_is_linear():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4))
    w = _param(rng.standard_normal((4, 2)))

    def loss_a():
        return T.sum(T.relu(T.matmul(x, w)))

    def loss_b():
        return T.mean(T.sigmoid(T.matmul(x, w)))

    with T.Tape():
        total = loss_a() + loss_b()
    T.backward(total)
    combined = w.grad.copy()
    w.grad = None
    with T.Tape():
        a = loss_a()
    T.backward(a)
    with T.Tape():
        b = loss_b()
    T.backward(b)
    assert np.allclose(combined, w.grad, atol=1e-12)


def test_softmax_of_zeros_is_uniform():
    probs = T.softmax(np.zeros((2, 4)))
    assert np.allclose(probs.values, 0.25)


def test_softmax_rows_sum_to_one():
    logits = np.random.default_rng(1).standard_normal((5, 7)) * 10
    assert np.all(np.abs(T.softmax(logits).values.sum(axis=1) - 1) < 1e-9)


def test_relu_negative_has_zero_gradient():
    x = _param([-1.5])
    with T.Tape():
        loss = T.sum(T.relu(x))
    T.backward(loss)
    assert loss.item() == 0
    assert x.grad[0] == 0


def test_grad_reverse():
    x = _param([1.5, -2.])
    with T.Tape():
        y = T.grad_reverse(x, 1.0)
        loss = T.sum(y * np.array([3., 4.]))
    assert np.array_equal(y.values, x.values)
    T.backward(loss)
    assert np.array_equal(x.grad, [-3., -4.])


def test_grad_reverse_scales_by_beta():
    x = _param([1.])
    with T.Tape():
        loss = T.sum(T.grad_reverse(x, 0.5) * 2.)
    T.backward(loss)
    assert x.grad[0] == -1.


def test_log_of_zero_is_finite():
    out = T.log(np.array([0., 1.]))
    assert np.all(np.isfinite(out.values))
    assert out.values[1] == 0


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r'\(2, 3\).*\(4, 5\)'):
        T.matmul(np.zeros((2, 3)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        T.add(np.zeros(3), np.zeros(4))


def test_conv2d_output_shape():
    for size, stride in [(64, 2), (32, 2), (8, 1), (7, 2)]:
        out = T.conv2d(np.zeros((size, size, 3)), np.zeros((3, 3, 3, 5)), np.zeros(5),
                       stride=stride, padding=1)
        expected = (size + 2 - 3) // stride + 1
        assert out.shape == (expected, expected, 5)


@pytest.mark.parametrize('stride', [1, 2])
def test_conv2d_matches_torch(stride):
    rng = np.random.default_rng(stride)
    x_np = rng.standard_normal((9, 8, 3))
    w_np = rng.standard_normal((3, 3, 3, 4))
    b_np = rng.standard_normal(4)
    upstream = None

    x, w, b = _param(x_np), _param(w_np), _param(b_np)
    with T.Tape():
        out = T.conv2d(x, w, b, stride=stride, padding=1)
        upstream = rng.standard_normal(out.shape)
        loss = T.sum(out * upstream)
    T.backward(loss)

    xt = torch.tensor(x_np.transpose(2, 0, 1)[None], requires_grad=True)
    wt = torch.tensor(w_np.transpose(3, 2, 0, 1), requires_grad=True)
    bt = torch.tensor(b_np, requires_grad=True)
    out_t = torch.nn.functional.conv2d(xt, wt, bt, stride=stride, padding=1)
    (out_t * torch.tensor(upstream.transpose(2, 0, 1)[None])).sum().backward()

    assert np.allclose(out.values, out_t.detach().numpy()[0].transpose(1, 2, 0), atol=1e-10)
    assert np.allclose(x.grad, xt.grad.numpy()[0].transpose(1, 2, 0), atol=1e-10)
    assert np.allclose(w.grad, wt.grad.numpy().transpose(2, 3, 1, 0), atol=1e-10)
    assert np.allclose(b.grad, bt.grad.numpy(), atol=1e-10)


def test_softmax_and_sigmoid_gradients_match_torch():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((4, 5))
    upstream = rng.standard_normal((4, 5))
    for ours, theirs in [(T.softmax, lambda t: torch.softmax(t, dim=-1)),
                         (T.sigmoid, torch.sigmoid)]:
        x = _param(logits)
        with T.Tape():
            loss = T.sum(ours(x) * upstream)
        T.backward(loss)
        xt = torch.tensor(logits, requires_grad=True)
        (theirs(xt) * torch.tensor(upstream)).sum().backward()
        assert np.allclose(x.grad, xt.grad.numpy(), atol=1e-12)


def test_region_mean_over_all_cells_equals_global_mean():
    fmap = np.random.default_rng(4).standard_normal((4, 4, 6))
    everything = T.region_mean(fmap, [np.arange(16)])
    assert np.array_equal(everything.values, T.global_mean(fmap).values)


def test_region_mean_gradient():
    fmap = _param(np.random.default_rng(5).standard_normal((2, 2, 3)))
    with T.Tape():
        loss = T.sum(T.region_mean(fmap, [[0, 1], [3]]))
    T.backward(loss)
    expected = np.array([0.5, 0.5, 0., 1.])[:, None].repeat(3, axis=1).reshape(2, 2, 3)
    assert np.allclose(fmap.grad, expected)


def test_take_and_concat_gradients():
    x = _param(np.arange(6.).reshape(2, 3))
    y = _param(np.ones((1, 3)))
    with T.Tape():
        stacked = T.concat([x, y], axis=0)
        loss = T.sum(T.take(stacked, [2, 0, 1]))
    T.backward(loss)
    assert np.array_equal(x.grad, [[0, 0, 1], [1, 0, 0]])
    assert np.array_equal(y.grad, [[0, 1, 0]])


def test_one_hot():
    assert np.array_equal(T.one_hot([2, 0], 3).values, [[0, 0, 1], [1, 0, 0]])


def test_sgd_single_step():
    p = _param([1.])
    p.grad = np.array([1.])
    sgd_step({'p': p}, SgdState(learning_rate=0.1, momentum=0.))
    assert np.isclose(p.values[0], 0.9)
    assert p.grad[0] == 0


def test_sgd_momentum_two_steps():
    p = _param([0.])
    state = SgdState(learning_rate=0.1, momentum=0.9)
    for _ in range(2):
        p.grad = np.array([1.])
        sgd_step({'p': p}, state)
    assert np.isclose(p.values[0], -0.29)


def test_sgd_zero_gradient_keeps_params():
    p = _param([0.3, -0.2])
    sgd_step({'p': p}, SgdState(learning_rate=0.5, momentum=0.9))
    assert np.array_equal(p.values, [0.3, -0.2])
