"""Tensor ops: forward values, shape errors and vector-Jacobian products vs finite differences."""

import numpy as np
import pytest
import torch

from freecg import autodiff as ad
from freecg.autodiff import ShapeError


def _fd_check(fn, *shapes, seed=0, positive=False, step=1e-4):
    """Max relative error of autograd vs central differences for ``sum(r * fn(*xs))``."""
    gen = torch.Generator().manual_seed(seed)
    xs = [torch.randn(*s, generator=gen, dtype=torch.float64) for s in shapes]
    if positive:
        xs = [x.abs() + 0.5 for x in xs]
    xs = [x.requires_grad_(True) for x in xs]
    out = fn(*xs)
    r = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    grads = ad.backward((out * r).sum(), xs)
    worst = 0.0
    for x, g in zip(xs, grads):
        num = torch.zeros_like(x)
        flat = x.detach().clone().reshape(-1)
        for k in range(flat.numel()):
            vals = []
            for sgn in (1, -1):
                pert = flat.clone()
                pert[k] += sgn * step
                args = [pert.reshape(x.shape) if y is x else y.detach() for y in xs]
                vals.append(float((fn(*args) * r).sum()))
            num.view(-1)[k] = (vals[0] - vals[1]) / (2 * step)
        worst = max(worst, float((g - num).abs().max() / num.abs().max().clamp_min(1e-300)))
    return worst


W34 = (4, 3)


@pytest.mark.parametrize(
    "name, fn, shapes, positive",
    [
        ("add", ad.add, [(3, 4), (3, 4)], False),
        ("subtract", ad.sub, [(3, 4), (3, 4)], False),
        ("scale", lambda a: ad.scale(a, -2.5), [(5,)], False),
        ("multiply", ad.mul, [(3, 4), (3, 4)], False),
        ("multiply-broadcast", ad.mul, [(3, 4), (4,)], False),
        ("linear", lambda x, w, b: ad.linear(x, w, b), [(2, 3), W34, (4,)], False),
        ("linear-axis0", lambda x, w: ad.linear(x, w, axis=0), [(3, 5), W34], False),
        ("sum", lambda x: ad.sum_axis(x, 1), [(3, 4)], False),
        ("segment_sum", lambda v: ad.segment_sum(v, torch.tensor([0, 2, 2, 0, 3]), 5), [(5, 3)], False),
        ("dot", ad.dot, [(3, 4), (3, 4)], False),
        ("max", lambda x: ad.max_over_axis(x, 1)[0], [(4, 6)], False),
        ("silu", ad.silu, [(10,)], False),
        ("cosine", ad.cosine, [(10,)], False),
        ("sqrt", ad.sqrt, [(10,)], True),
        ("norm", lambda x: ad.norm(x, 1), [(4, 3)], False),
        ("concat", lambda a, b: ad.concat([a, b], 1), [(2, 3), (2, 5)], False),
        ("split", lambda x: ad.split(x, [3, 5], 1)[1] * 2, [(2, 8)], False),
        ("gather_rows", lambda x: ad.gather_rows(x, torch.tensor([2, 0, 2, 1])), [(3, 4)], False),
        ("broadcast", lambda x: ad.broadcast(x, (5, 3)), [(1, 3)], False),
    ],
)
def test_gradient_matches_finite_differences(name, fn, shapes, positive):
    assert _fd_check(fn, *shapes, positive=positive) < 1e-6


def test_second_derivative_through_forces():
    """Force-matching needs gradients of gradients."""
    x = torch.randn(5, dtype=torch.float64, requires_grad=True)
    (g,) = ad.backward(ad.sum_axis(ad.silu(x) ** 3), [x], create_graph=True)
    (gg,) = ad.backward(ad.sum_axis(g), [x])
    xd = x.detach()
    s = torch.sigmoid(xd)
    f1 = s * (1 + xd * (1 - s))  # silu'
    f2 = s * (1 - s) * (2 + xd * (1 - 2 * s))  # silu''
    silu = xd * s
    expect = 6 * silu * f1**2 + 3 * silu**2 * f2
    torch.testing.assert_close(gg, expect, atol=1e-12, rtol=1e-12)


def test_silu_at_zero():
    x = ad.tensor([0.0], requires_grad=True)
    y = ad.silu(x)
    assert float(y.detach()) == 0.0
    (g,) = ad.backward(y.sum(), [x])
    assert float(g) == 0.5


def test_segment_sum_empty_segment_is_zero_row():
    v = ad.tensor(np.ones((2, 3)))
    out = ad.segment_sum(v, torch.tensor([0, 0]), 3)
    assert out.shape == (3, 3)
    np.testing.assert_array_equal(out[1:].numpy(), 0.0)


def test_segment_sum_with_no_rows():
    v = ad.tensor(np.zeros((0, 4)), requires_grad=True)
    out = ad.segment_sum(v, torch.zeros(0, dtype=torch.long), 2)
    assert out.shape == (2, 4) and float(out.abs().sum()) == 0.0


def test_max_ties_pick_smallest_index_and_route_gradient():
    x = ad.tensor([[1.0, 3.0, 3.0, 2.0]], requires_grad=True)
    value, idx = ad.max_over_axis(x, 1)
    assert int(idx) == 1 and float(value) == 3.0
    (g,) = ad.backward(value.sum(), [x])
    np.testing.assert_array_equal(g.numpy(), [[0.0, 1.0, 0.0, 0.0]])


def test_sum_of_leaf_gives_ones():
    x = ad.tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    (g,) = ad.backward(ad.sum_axis(x), [x])
    np.testing.assert_array_equal(g.numpy(), np.ones((2, 3)))


def test_dot_with_itself_gives_twice_x():
    x = ad.tensor([1.0, -2.0, 0.5], requires_grad=True)
    (g,) = ad.backward(ad.dot(x, x), [x])
    np.testing.assert_array_equal(g.numpy(), [2.0, -4.0, 1.0])


def test_unused_leaf_gets_zero_gradient():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    y = ad.tensor([3.0], requires_grad=True)
    gx, gy = ad.backward(ad.sum_axis(x * x), [x, y])
    assert float(gy) == 0.0


def test_fan_out_accumulates():
    x = ad.tensor([2.0], requires_grad=True)
    (g,) = ad.backward((x * 3 + x * x).sum(), [x])
    assert float(g) == 7.0


def test_detached_tensor_gets_no_gradient():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    y = x.detach()
    z = (x * y).sum()
    (g,) = ad.backward(z, [x])
    np.testing.assert_array_equal(g.numpy(), [1.0, 2.0])


def test_backward_contract():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(x * 2, [x])
    with pytest.raises(ValueError, match="tape"):
        ad.backward(ad.tensor(1.0), [x])


@pytest.mark.parametrize(
    "op, args",
    [
        ("add", lambda: ad.add(torch.zeros(2, 3), torch.zeros(3, 2))),
        ("subtract", lambda: ad.sub(torch.zeros(2), torch.zeros(3))),
        ("multiply", lambda: ad.mul(torch.zeros(2, 3), torch.zeros(4))),
        ("linear", lambda: ad.linear(torch.zeros(2, 3), torch.zeros(4, 5))),
        ("dot", lambda: ad.dot(torch.zeros(3), torch.zeros(4))),
        ("segment_sum", lambda: ad.segment_sum(torch.zeros(3, 2), torch.zeros(4, dtype=torch.long), 2)),
        ("concat", lambda: ad.concat([torch.zeros(2, 3), torch.zeros(3, 3)], 1)),
        ("split", lambda: ad.split(torch.zeros(2, 5), [2, 2], 1)),
        ("gather_rows", lambda: ad.gather_rows(torch.zeros(3, 2), torch.zeros(2, 2, dtype=torch.long))),
        ("broadcast", lambda: ad.broadcast(torch.zeros(2, 3), (4, 3))),
    ],
)
def test_shape_errors_name_op_and_shapes(op, args):
    with pytest.raises(ShapeError) as info:
        args()
    assert info.value.op.startswith(op)
    assert len(info.value.shapes) == 2
    assert op in str(info.value)


def test_precision_switch():
    default = torch.get_default_dtype()
    try:
        ad.set_precision(32)
        assert ad.tensor([1.0]).dtype == torch.float32
        assert ad.get_dtype() == torch.float32
        ad.set_precision(64)
        assert ad.tensor([1.0]).dtype == torch.float64
        with pytest.raises(ValueError):
            ad.set_precision(16)
    finally:
        ad.set_precision(64)
        torch.set_default_dtype(default)


def test_identical_passes_are_bitwise_equal():
    gen = torch.Generator().manual_seed(3)
    v = torch.randn(50, 8, generator=gen, dtype=torch.float64)
    idx = torch.randint(0, 7, (50,), generator=gen)
    a = ad.segment_sum(ad.silu(v), idx, 7)
    b = ad.segment_sum(ad.silu(v), idx, 7)
    assert torch.equal(a, b)


def test_thread_cap_from_environment(monkeypatch):
    before = torch.get_num_threads()
    try:
        monkeypatch.setenv("FREECG_THREADS", "1")
        assert ad.configure_threads() == 1
        assert torch.get_num_threads() == 1
    finally:
        torch.set_num_threads(before)
