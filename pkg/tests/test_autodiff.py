import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dnlfusion import autodiff as ad
from dnlfusion.autodiff import Tensor
from dnlfusion.gradcheck import op_cases
from oracles import naive_avgpool, naive_conv2d, naive_depthwise


def param(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestConv2d:
    def test_scalar_product(self):
        out = ad.conv2d(Tensor([[[5.0]]]), Tensor([[[[2.0]]]]), Tensor([0.0]))
        assert out.data.tolist() == [[[10.0]]]

    def test_box_sum(self):
        out = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), pad=1)
        assert out.data[0, 1, 1] == 9.0
        assert [out.data[0, i, j] for i, j in [(0, 0), (0, 2), (2, 0), (2, 2)]] == [4.0] * 4

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 2, 5), (1, 0, 1)])
    def test_matches_nested_loops(self, rng, stride, pad, k):
        x = rng.normal(size=(4, 8, 8))
        w = rng.normal(size=(3, 4, k, k))
        b = rng.normal(size=3)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, pad), rtol=0, atol=1e-12)

    def test_output_size(self, rng):
        out = ad.conv2d(Tensor(rng.normal(size=(2, 3, 9, 7))), Tensor(rng.normal(size=(5, 3, 3, 3))), stride=2, pad=1)
        assert out.shape == (2, 5, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="3 channels but weights expect 4"):
            ad.conv2d(Tensor(rng.normal(size=(3, 5, 5))), Tensor(rng.normal(size=(2, 4, 3, 3))))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ValueError, match="odd"):
            ad.conv2d(Tensor(rng.normal(size=(1, 5, 5))), Tensor(rng.normal(size=(1, 1, 2, 2))))


class TestMultiscale:
    def kernels(self, rng, c):
        return [Tensor(rng.normal(size=(c // 4, k, k))) for k in (1, 3, 5, 7)]

    def test_group_sizes(self, rng):
        x = Tensor(rng.normal(size=(8, 6, 6)))
        ks = self.kernels(rng, 8)
        assert [k.shape[0] for k in ks] == [2, 2, 2, 2]
        assert ad.depthwise_multiscale_conv(x, ks).shape == (8, 6, 6)

    def test_identity_kernels(self, rng):
        x = rng.normal(size=(8, 9, 9))
        ks = []
        for k in (1, 3, 5, 7):
            kern = np.zeros((2, k, k))
            kern[:, k // 2, k // 2] = 1.0
            ks.append(Tensor(kern))
        np.testing.assert_array_equal(ad.depthwise_multiscale_conv(Tensor(x), ks).data, x)

    def test_matches_per_group_oracle(self, rng):
        x = rng.normal(size=(8, 9, 9))
        ks = self.kernels(rng, 8)
        expected = np.concatenate([naive_depthwise(x[2 * g : 2 * g + 2], ks[g].data) for g in range(4)])
        out = ad.depthwise_multiscale_conv(Tensor(x), ks)
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-12)

    def test_channels_not_divisible(self, rng):
        with pytest.raises(ValueError, match="divisible by 4"):
            ad.depthwise_multiscale_conv(Tensor(rng.normal(size=(6, 5, 5))), self.kernels(rng, 8))


class TestRelu:
    def test_values(self):
        assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_all_negative(self, rng):
        assert not ad.relu(Tensor(-np.abs(rng.normal(size=10)) - 0.1)).data.any()

    @pytest.mark.parametrize("x,grad", [(2.0, 1.0), (-1.0, 0.0), (0.0, 0.0)])
    def test_gradient(self, x, grad):
        t = param([x])
        ad.relu(t).sum().backward()
        assert t.grad.tolist() == [grad]


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_shift_invariance(self):
        a = ad.softmax(Tensor([[1.0, 2.0, 3.0]])).data
        b = ad.softmax(Tensor([[11.0, 12.0, 13.0]])).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = ad.softmax(Tensor(rng.normal(size=(5, 7)) * 10))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_large_logits_stay_finite(self):
        out = ad.softmax(Tensor([[1000.0, 0.0, -1000.0]]))
        assert np.all(np.isfinite(out.data))

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (3, 6), elements=st.floats(-50, 50)),
        arrays(np.float64, (3, 1), elements=st.floats(-100, 100)),
    )
    def test_property_rowwise_shift(self, z, shift):
        a = ad.softmax(Tensor(z)).data
        b = ad.softmax(Tensor(z + shift)).data
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestBatchnorm:
    def run(self, x, training=True):
        c = x.shape[1]
        rm, rv = np.zeros(c), np.ones(c)
        out = ad.batchnorm(Tensor(x), Tensor(np.ones(c)), Tensor(np.full(c, 0.3)), rm, rv, training=training)
        return out.data, rm, rv

    def test_constant_channel_gives_beta(self):
        out, _, _ = self.run(np.full((4, 2, 3, 3), 7.0))
        np.testing.assert_allclose(out, 0.3, atol=1e-12)

    def test_standardized_input_unchanged(self, rng):
        x = rng.normal(size=(6, 3, 5, 5))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        rm, rv = np.zeros(3), np.ones(3)
        out = ad.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True)
        np.testing.assert_allclose(out.data, x, atol=1e-5 * np.abs(x).max() + 1e-6)

    def test_train_statistics(self, rng):
        x = rng.normal(2.0, 3.0, size=(5, 4, 6, 6))
        rm, rv = np.zeros(4), np.ones(4)
        out = ad.batchnorm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)

    def test_running_stats_momentum(self, rng):
        x = rng.normal(2.0, 3.0, size=(5, 4, 6, 6))
        _, rm, rv = self.run(x)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12)

    def test_eval_before_training_uses_initial_stats(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        out, rm, rv = self.run(x, training=False)
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5) + 0.3, atol=1e-12)
        assert rm.tolist() == [0.0] * 3 and rv.tolist() == [1.0] * 3


class TestAvgpool:
    def test_mean(self):
        assert ad.avgpool2d(Tensor([[[1.0, 3.0], [5.0, 7.0]]]), 2).data.tolist() == [[[4.0]]]

    def test_constant(self):
        out = ad.avgpool2d(Tensor(np.full((2, 6, 6), 3.5)), 2, 2)
        assert np.all(out.data == 3.5)

    def test_matches_nested_loops(self, rng):
        x = rng.normal(size=(3, 9, 8))
        for k, s in [(2, 2), (3, 1), (3, 2)]:
            np.testing.assert_allclose(ad.avgpool2d(Tensor(x), k, s).data, naive_avgpool(x, k, s), atol=1e-12)


class TestBackward:
    def test_linear_form(self, rng):
        w, x = param(rng.normal(size=5)), rng.normal(size=5)
        grads = ad.backward((w * x).sum(), {"w": w})
        np.testing.assert_array_equal(grads["w"], x)

    def test_inactive_relu(self):
        w = param([1.0])
        r = ad.relu(-w)
        grads = ad.backward((r * r).sum(), {"w": w})
        assert grads["w"].tolist() == [0.0]

    def test_non_scalar_rejected(self, rng):
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(param(rng.normal(size=3)) * 2.0)

    def test_shared_subexpression_accumulates(self):
        w = param([3.0])
        y = w * w + w  # dy/dw = 2w + 1
        assert ad.backward(y.sum(), {"w": w})["w"].tolist() == [7.0]

    def test_unreached_parameter_gets_zeros(self):
        a, b = param([1.0, 2.0]), param([5.0])
        grads = ad.backward(a.sum(), {"a": a, "b": b})
        assert grads["b"].tolist() == [0.0]

    def test_topological_order(self, rng):
        a = param(rng.normal(size=3))
        y = ad.relu(a * 2.0) + a
        order = ad.topological_order(y.sum())
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for parent in node._parents:
                if parent.requires_grad:
                    assert pos[id(parent)] < pos[id(node)]

    def test_deterministic(self, rng):
        x, w = rng.normal(size=(2, 3, 6, 6)), param(rng.normal(size=(4, 3, 3, 3)))

        def run():
            out = ad.conv2d(Tensor(x), w, pad=1)
            return out.data.copy(), ad.backward((out * out).sum(), {"w": w})["w"].copy()

        (o1, g1), (o2, g2) = run(), run()
        assert o1.tobytes() == o2.tobytes() and g1.tobytes() == g2.tobytes()


@pytest.mark.parametrize("case", op_cases(), ids=lambda c: "")
def test_op_gradients_match_finite_differences(case):
    result = case()
    assert result.passed, str(result)
