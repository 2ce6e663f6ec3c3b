import numpy as np
import pytest

from pbrflow import autodiff as ad


def fd_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = f(x)
        xf[i] = orig - h
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2 * h)
    return g


def check_op(build, x0, rtol=1e-6, atol=1e-9):
    """build(tensor) -> scalar Tensor; compares grad() against central FD."""
    leaf = ad.Tensor(x0.copy(), requires_grad=True)
    loss = build(leaf)
    (analytic,) = ad.grad(loss, [leaf])
    numeric = fd_grad(lambda arr: float(ad.value_of(build(ad.Tensor(arr)))), x0.copy())
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


class TestElementwiseGrads:
    def test_add_mul_broadcast(self, rng):
        x0 = rng.normal(size=(3, 4))
        w = rng.normal(size=(4,))
        check_op(lambda t: ad.asum((t * w + 2.0) * t), x0)

    def test_div_pow(self, rng):
        x0 = rng.uniform(0.5, 2.0, size=(3, 3))
        check_op(lambda t: ad.asum(t**3 / (t + 1.0)), x0)

    def test_exp_log_sqrt(self, rng):
        x0 = rng.uniform(0.5, 2.0, size=(5,))
        check_op(lambda t: ad.asum(ad.exp(t) + ad.log(t) + ad.sqrt(t)), x0)

    def test_log1p_tanh(self, rng):
        x0 = rng.uniform(-0.5, 2.0, size=(6,))
        check_op(lambda t: ad.asum(ad.log1p(t * t) + ad.tanh(t)), x0)

    def test_gelu(self, rng):
        x0 = rng.normal(size=(8,))
        check_op(lambda t: ad.asum(ad.gelu(t)), x0)

    def test_where(self, rng):
        x0 = rng.normal(size=(6,))
        mask = x0 > 0
        check_op(lambda t: ad.asum(ad.where(mask, t * 2.0, t * t)), x0)


class TestClampGrads:
    def test_maximum_scalar(self):
        x0 = np.array([-1.0, 0.5, 2.0])
        leaf = ad.Tensor(x0, requires_grad=True)
        (g,) = ad.grad(ad.asum(ad.maximum(leaf, 0.0) * 3.0), [leaf])
        assert g.tolist() == [0.0, 3.0, 3.0]

    def test_clip_zero_subgradient_outside(self):
        x0 = np.array([-0.5, 0.25, 0.75, 1.5])
        leaf = ad.Tensor(x0, requires_grad=True)
        (g,) = ad.grad(ad.asum(ad.clip(leaf, 0.0, 1.0)), [leaf])
        assert g.tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_clip_zero_subgradient_at_boundary(self):
        leaf = ad.Tensor(np.array([0.0, 1.0]), requires_grad=True)
        (g,) = ad.grad(ad.asum(ad.clip(leaf, 0.0, 1.0)), [leaf])
        assert g.tolist() == [0.0, 0.0]

    def test_maximum_tensor_pair(self, rng):
        x0 = rng.normal(size=(5,))
        y = rng.normal(size=(5,))
        check_op(lambda t: ad.asum(ad.maximum(t, y) + ad.minimum(t, y)), x0)


class TestShapeOps:
    def test_matmul_2d(self, rng):
        x0 = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 5))
        check_op(lambda t: ad.asum(ad.matmul(t, w) ** 2), x0)

    def test_matmul_batched(self, rng):
        x0 = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(2, 4, 3))
        check_op(lambda t: ad.asum(ad.matmul(t, w) ** 2), x0)

    def test_matmul_broadcast_rhs(self, rng):
        x0 = rng.normal(size=(2, 5, 3))
        w = rng.normal(size=(3, 3))
        check_op(lambda t: ad.asum(ad.matmul(t, w) ** 2), x0)

    def test_reshape_transpose_slice(self, rng):
        x0 = rng.normal(size=(4, 6))
        check_op(
            lambda t: ad.asum(ad.transpose(ad.reshape(t, (2, 12)))[3:7, :] ** 2), x0
        )

    def test_strided_slice(self, rng):
        x0 = rng.normal(size=(8, 8))
        check_op(lambda t: ad.asum(t[::2, 1::3] ** 2), x0)

    def test_concat_stack(self, rng):
        x0 = rng.normal(size=(3, 2))
        check_op(
            lambda t: ad.asum(ad.concatenate([t, t * 2.0], axis=0) ** 2)
            + ad.asum(ad.stack([t, t + 1.0], axis=1) ** 2),
            x0,
        )

    def test_sum_axis_keepdims(self, rng):
        x0 = rng.normal(size=(3, 4, 2))
        check_op(lambda t: ad.asum(ad.asum(t, axis=1, keepdims=True) ** 2), x0)
        check_op(lambda t: ad.asum(ad.amean(t, axis=(0, 2)) ** 2), x0)

    def test_softmax(self, rng):
        x0 = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 5))
        check_op(lambda t: ad.asum(ad.softmax(t, axis=-1) * w), x0)


class TestEngine:
    def test_constants_build_no_graph(self):
        out = ad.exp(np.array([1.0, 2.0]))
        assert isinstance(out, np.ndarray)

    def test_diamond_graph_accumulates(self):
        leaf = ad.Tensor(np.array([2.0]), requires_grad=True)
        y = leaf * 3.0
        loss = ad.asum(y * y + y)
        (g,) = ad.grad(loss, [leaf])
        # d/dx (9x^2 + 3x) = 18x + 3 = 39
        assert g.tolist() == [39.0]

    def test_grad_is_pure(self, rng):
        leaf = ad.Tensor(rng.normal(size=(4,)), requires_grad=True)
        loss = ad.asum(leaf * leaf)
        g1 = ad.grad(loss, [leaf])[0]
        g2 = ad.grad(loss, [leaf])[0]
        assert np.array_equal(g1, g2)

    def test_unused_leaf_gets_zeros(self, rng):
        a = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
        b = ad.Tensor(rng.normal(size=(2,)), requires_grad=True)
        (ga, gb) = ad.grad(ad.asum(a * a), [a, b])
        assert np.any(ga != 0)
        assert np.all(gb == 0)

    def test_detach_blocks_gradient(self, rng):
        leaf = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
        loss = ad.asum(leaf.detach() * leaf)
        (g,) = ad.grad(loss, [leaf])
        np.testing.assert_allclose(g, leaf.data)

    def test_deep_chain_no_recursion_limit(self):
        leaf = ad.Tensor(np.array([1.0]), requires_grad=True)
        t = leaf
        for _ in range(5000):
            t = t + 1.0
        (g,) = ad.grad(ad.asum(t), [leaf])
        assert g.tolist() == [1.0]

    def test_non_scalar_loss_rejected(self, rng):
        leaf = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.grad(leaf * 2.0, [leaf])
