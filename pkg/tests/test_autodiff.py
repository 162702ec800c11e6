import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dyskernel import autodiff as ad
from dyskernel.autodiff import OPS, ShapeError, Tensor, finite_diff_grad, forward_op, no_grad


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_add_example():
    assert forward_op("add", [[1.0, 2.0], [3.0, 4.0]]).data.tolist() == [4.0, 6.0]


def test_softmax_equal_logits_uniform():
    out = forward_op("softmax-over-axis", [np.zeros(3)], {"axis": 0}).data
    np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-15)


def test_conv2d_ones_valid():
    out = forward_op("conv2d", [np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1)])
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((2, 3, 7, 6)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    out = ad.conv2d(x, w, b, stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros(out.shape)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_unknown_op_rejected():
    with pytest.raises(ValueError, match="unknown op"):
        forward_op("matmul", [np.ones(2)])


def test_shape_mismatch_names_op_and_axes():
    with pytest.raises(ShapeError, match=r"add: incompatible axes \[1\]"):
        ad.add(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ShapeError, match="mul: rank mismatch"):
        ad.mul(np.ones((2, 3)), np.ones(3))


def test_node_recorded_only_with_grad_inputs():
    assert ad.add(np.ones(2), np.ones(2))._node is None
    assert ad.add(leaf(np.ones(2)), np.ones(2))._node is not None
    with no_grad():
        assert ad.add(leaf(np.ones(2)), np.ones(2))._node is None


def test_backward_square():
    x = leaf(3.0)
    ad.mul(x, x).backward()
    assert x.grad == pytest.approx(6.0)


def test_backward_sum_softmax_is_zero():
    z = leaf(np.random.default_rng(1).standard_normal(5))
    ad.sum_(ad.softmax(z, axis=0)).backward()
    np.testing.assert_allclose(z.grad, 0.0, atol=1e-15)


def test_backward_rejects_non_scalar():
    with pytest.raises(ShapeError, match="scalar"):
        ad.backward(ad.mul(leaf(np.ones(3)), 2.0))


def test_backward_accumulates_over_shared_subgraph():
    x = leaf(2.0)
    y = ad.mul(x, x)
    ad.add(y, y).backward()
    assert x.grad == pytest.approx(8.0)


def test_unreachable_leaf_keeps_zero_grad():
    a, b = leaf(np.ones(2)), leaf(np.ones(2))
    a.grad, b.grad = np.zeros(2), np.zeros(2)
    ad.sum_(ad.square(a)).backward()
    np.testing.assert_array_equal(b.grad, 0.0)


def test_grid_sample_mean_gradient_matches_fd():
    rng = np.random.default_rng(3)
    field = leaf(rng.standard_normal((1, 1, 4, 4)))
    coords = leaf(rng.integers(0, 3, (1, 2, 2, 3, 3)) + rng.uniform(0.1, 0.9, (1, 2, 2, 3, 3)))
    f = lambda _: ad.mean(ad.grid_sample(field, coords))
    f(None).backward()
    np.testing.assert_allclose(field.grad, finite_diff_grad(f, field, 1e-4), rtol=1e-4, atol=1e-10)
    np.testing.assert_allclose(coords.grad, finite_diff_grad(f, coords, 1e-4), rtol=1e-4, atol=1e-10)


def test_finite_diff_of_sum_is_ones():
    x = np.random.default_rng(0).standard_normal((3, 2))
    np.testing.assert_allclose(finite_diff_grad(lambda t: ad.sum_(t), x, 1e-4), 1.0, atol=1e-9)


def test_finite_diff_square_at_three():
    assert finite_diff_grad(lambda t: ad.square(t), np.array(3.0), 1e-4) == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_restores_input():
    x = leaf(np.arange(4.0))
    finite_diff_grad(lambda t: ad.sum_(ad.exp(t)), x)
    np.testing.assert_array_equal(x.data, np.arange(4.0))


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda t: t, np.ones(1), 0.0)


def test_op_registry_covers_required_kinds():
    required = {
        "add", "mul", "matmul-per-position", "conv2d", "softmax-over-axis", "exp", "sum", "mean",
        "grid-sample-bilinear", "concat-channels", "reshape-heads", "leaky-relu", "square", "sqrt-scaled-dot",
    }
    assert required <= set(OPS)


def test_scaled_dot_and_weighted_sum_shapes():
    q = np.ones((2, 3, 4, 5, 6))
    k = np.ones((2, 3, 4, 7, 5, 6))
    logits = ad.scaled_dot(q, k, scale=0.5)
    assert logits.shape == (2, 4, 7, 5, 6)
    np.testing.assert_allclose(logits.data, 1.5)
    v = np.ones((2, 3, 4, 7, 5, 6))
    assert ad.weighted_sum(logits, v).shape == (2, 3, 4, 5, 6)


def test_scalar_tensor_keeps_rank_zero():
    assert Tensor(2.0).shape == ()
    assert ad.div(np.ones((1, 1, 2, 2)), Tensor(np.float64(2.0))).shape == (1, 1, 2, 2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(z):
    out = ad.softmax(z, axis=1).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(out >= 0) and np.all(out <= 1)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(6)
    w = rng.standard_normal(6)

    def grad_of(fn):
        x = leaf(x0)
        fn(x).backward()
        return x.grad

    l1 = lambda x: ad.sum_(ad.exp(ad.mul(x, 0.3)))
    l2 = lambda x: ad.sum_(ad.mul(ad.square(x), w))
    combo = grad_of(lambda x: ad.add(ad.mul(l1(x), a), ad.mul(l2(x), b)))
    np.testing.assert_allclose(combo, a * grad_of(l1) + b * grad_of(l2), rtol=1e-6, atol=1e-12)


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    field, coords = rng.standard_normal((1, 2, 5, 5)), rng.uniform(0, 4, (1, 3, 2, 5, 5))
    a = ad.grid_sample(field, coords).data
    b = ad.grid_sample(field, coords).data
    assert a.tobytes() == b.tobytes()
