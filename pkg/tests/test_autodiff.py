import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrecon.autodiff import Tensor, add, affine, conv2d, conv2d_backward, l2_loss, relu, reshape
from macrecon.errors import NonFiniteError, ShapeError
from oracles import conv2d_loops, max_rel_err, numeric_grad


class TestTensor:
    def test_rejects_nan_and_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_rejects_empty_extent(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_integer_input_promoted(self):
        assert Tensor([1, 2]).dtype == np.float64

    def test_grad_shape_matches(self, rng):
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        l2_loss(reshape(affine(Tensor([1.0, 2.0]), w, b), (1, 3)), np.zeros((1, 3))).backward()
        assert w.grad.shape == w.shape and b.grad.shape == b.shape

    def test_shared_input_accumulates(self):
        a = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        l2_loss(add(a, a), np.zeros((1, 2))).backward()
        # d/da sum((2a)^2) = 8a
        np.testing.assert_allclose(a.grad, 8 * a.data)


class TestConv2d:
    def test_all_ones_example(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=1).data
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], float)
        np.testing.assert_array_equal(conv2d_loops(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), 1)[0, 0], expected)
        np.testing.assert_array_equal(out[0, 0], expected)

    def test_delta_kernel_is_identity(self, rng):
        x = rng.normal(size=(2, 1, 6, 5))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(k)).data, x)

    def test_zero_kernel(self, rng):
        out = conv2d(Tensor(rng.normal(size=(1, 2, 5, 5))), Tensor(np.zeros((3, 2, 3, 3)))).data
        assert out.shape == (1, 3, 5, 5) and not out.any()

    @pytest.mark.parametrize("k", [1, 3, 5])
    @pytest.mark.parametrize("cin,cout", [(1, 1), (2, 3), (4, 1)])
    def test_matches_loop_oracle(self, rng, k, cin, cout):
        x = rng.normal(size=(2, cin, 7, 6))
        w = rng.normal(size=(cout, cin, k, k))
        out = conv2d(Tensor(x), Tensor(w)).data
        np.testing.assert_allclose(out, conv2d_loops(x, w, (k - 1) // 2), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 5, 7])
    def test_same_padding_preserves_shape(self, rng, k):
        x = rng.normal(size=(1, 2, 9, 8))
        assert conv2d(Tensor(x), Tensor(rng.normal(size=(3, 2, k, k)))).shape == (1, 3, 9, 8)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 3, 3, 3))))

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**31))
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=(2, 1, 2, 6, 6))
        k = Tensor(r.normal(size=(3, 2, 3, 3)))
        lhs = conv2d(Tensor(a * x + b * y), k).data
        rhs = a * conv2d(Tensor(x), k).data + b * conv2d(Tensor(y), k).data
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)

    def test_batch_decomposition(self, rng):
        x = rng.normal(size=(5, 3, 8, 8))
        k = Tensor(rng.normal(size=(4, 3, 3, 3)))
        full = conv2d(Tensor(x), k).data
        singles = np.concatenate([conv2d(Tensor(x[i : i + 1]), k).data for i in range(5)])
        np.testing.assert_allclose(full, singles, rtol=0, atol=1e-12)


class TestConv2dBackward:
    def test_zero_upstream(self, rng):
        gx, gk = conv2d_backward(np.zeros((1, 2, 5, 5)), rng.normal(size=(1, 3, 5, 5)), rng.normal(size=(2, 3, 3, 3)))
        assert not gx.data.any() and not gk.data.any()

    def test_scalar_product_rule(self):
        gx, gk = conv2d_backward(np.full((1, 1, 1, 1), 2.0), np.full((1, 1, 1, 1), 3.0), np.full((1, 1, 1, 1), 5.0), pad=0)
        assert gk.data.item() == 2.0 * 3.0
        assert gx.data.item() == 2.0 * 5.0

    def test_upstream_shape_checked(self, rng):
        with pytest.raises(ShapeError):
            conv2d_backward(np.zeros((1, 1, 4, 4)), rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(1, 1, 3, 3)))

    def test_finite_differences(self, rng):
        x = rng.normal(size=(1, 1, 5, 5))
        k = rng.normal(size=(1, 1, 3, 3))
        up = rng.normal(size=(1, 1, 5, 5))

        def f(d):
            return float(np.sum(up * conv2d(Tensor(d["x"]), Tensor(d["k"])).data))

        num = numeric_grad(f, {"x": x, "k": k})
        gx, gk = conv2d_backward(up, x, k)
        assert max_rel_err(gx.data, num["x"]) < 1e-5
        assert max_rel_err(gk.data, num["k"]) < 1e-5

    def test_graph_matches_explicit_backward(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
        k = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        up = rng.normal(size=(2, 4, 6, 6))
        conv2d(x, k).backward(up)
        gx, gk = conv2d_backward(up, x.data, k.data)
        np.testing.assert_allclose(x.grad, gx.data, atol=1e-12)
        np.testing.assert_allclose(k.grad, gk.data, atol=1e-12)


class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_positive_passthrough(self, rng):
        x = Tensor(rng.uniform(0.1, 1, size=6), requires_grad=True)
        up = rng.normal(size=6)
        out = relu(x)
        out.backward(up)
        np.testing.assert_array_equal(out.data, x.data)
        np.testing.assert_array_equal(x.grad, up)

    def test_negative_blocked(self, rng):
        x = Tensor(-rng.uniform(0.1, 1, size=6), requires_grad=True)
        out = relu(x)
        out.backward(np.ones(6))
        assert not out.data.any() and not x.grad.any()

    def test_zero_subgradient(self):
        x = Tensor([0.0], requires_grad=True)
        relu(x).backward(np.ones(1))
        assert x.grad[0] == 0.0


class TestAffine:
    def test_origin_gives_bias(self, rng):
        b = rng.normal(size=4)
        np.testing.assert_array_equal(affine(Tensor(np.zeros(2)), Tensor(rng.normal(size=(4, 2))), Tensor(b)).data, b)

    def test_zero_weight(self, rng):
        b = rng.normal(size=3)
        for _ in range(5):
            out = affine(Tensor(rng.normal(size=2) * 10), Tensor(np.zeros((3, 2))), Tensor(b))
            np.testing.assert_array_equal(out.data, b)

    def test_matvec_example(self):
        out = affine(Tensor([1.0, 1.0]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([1.0, 1.0]))
        np.testing.assert_array_equal(out.data, [4.0, 8.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            affine(Tensor([1.0, 2.0, 3.0]), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))

    def test_finite_differences(self, rng):
        d = {"c": rng.normal(size=2), "w": rng.normal(size=(3, 2)), "b": rng.normal(size=3)}
        up = rng.normal(size=3)

        def f(v):
            return float(up @ affine(Tensor(v["c"]), Tensor(v["w"]), Tensor(v["b"])).data)

        t = {k: Tensor(v, requires_grad=True) for k, v in d.items()}
        affine(t["c"], t["w"], t["b"]).backward(up)
        num = numeric_grad(f, d)
        for k in d:
            assert max_rel_err(t[k].grad, num[k]) < 1e-5


class TestL2Loss:
    def test_identical_is_zero(self, rng):
        x = rng.normal(size=(2, 1, 4, 4))
        assert l2_loss(Tensor(x), x).item() == 0.0

    def test_constant_offset(self, rng):
        t = rng.normal(size=(1, 1, 5, 4))
        c = 0.25
        assert l2_loss(Tensor(t + c), t).item() == pytest.approx(20 * c * c, rel=1e-12)

    def test_matches_loop_oracle(self, rng):
        p, t = rng.normal(size=(2, 3, 1, 4, 5))
        acc = 0.0
        for idx in np.ndindex(p.shape):
            acc += (p[idx] - t[idx]) ** 2
        assert abs(l2_loss(Tensor(p), t).item() - acc / 3) < 1e-12

    def test_gradient(self, rng):
        p, t = rng.normal(size=(2, 4, 1, 3, 3))
        pt = Tensor(p, requires_grad=True)
        l2_loss(pt, t).backward()
        np.testing.assert_allclose(pt.grad, 2 * (p - t) / 4, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l2_loss(Tensor(np.zeros((1, 2))), np.zeros((1, 3)))
