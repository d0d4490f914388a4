"""Forward semantics and graph mechanics of the autodiff engine."""

import numpy as np
import pytest
import scipy.ndimage as ndi
from hypothesis import given, settings, strategies as st

from slicesep import tensor as T
from slicesep.errors import ConfigurationError, UsageError
from slicesep.tensor import Tensor


def rand(*shape, seed=0):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, shape)


class TestElementwise:
    def test_add_sub_mul_values(self):
        a, b = rand(2, 3, 3, seed=1), rand(2, 3, 3, seed=2)
        np.testing.assert_allclose(T.add(Tensor(a), Tensor(b)).data, a + b)
        np.testing.assert_allclose(T.sub(Tensor(a), Tensor(b)).data, a - b)
        np.testing.assert_allclose(T.mul(Tensor(a), Tensor(b)).data, a * b)

    def test_python_scalar_operands(self):
        a = rand(3, 3)
        t = Tensor(a)
        np.testing.assert_allclose((t + 2.0).data, a + 2.0)
        np.testing.assert_allclose((2.0 - t).data, 2.0 - a)
        np.testing.assert_allclose((t * -3.0).data, a * -3.0)
        np.testing.assert_allclose((-t).data, -a)

    def test_zero_dim_tensor_broadcast(self):
        a = rand(2, 4, 4)
        s = Tensor(np.asarray(0.25))
        np.testing.assert_allclose(T.mul(Tensor(a), s).data, a * 0.25)
        np.testing.assert_allclose(T.add(Tensor(a), s).data, a + 0.25)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            T.add(Tensor(rand(2, 3)), Tensor(rand(3, 2)))
        with pytest.raises(ConfigurationError):
            T.mul(Tensor(rand(1, 4, 4)), Tensor(rand(1, 4, 5)))

    def test_square_absolute(self):
        a = np.array([-2.0, -0.5, 0.0, 1.5])
        np.testing.assert_allclose(T.square(Tensor(a)).data, a * a)
        np.testing.assert_allclose(T.absolute(Tensor(a)).data, np.abs(a))

    def test_sigmoid_values_and_stability(self):
        assert T.sigmoid(Tensor(np.asarray(0.0))).item() == 0.5
        big = T.sigmoid(Tensor(np.array([1000.0, -1000.0])))
        np.testing.assert_allclose(big.data, [1.0, 0.0])
        assert np.all(np.isfinite(big.data))

    def test_leaky_relu(self):
        a = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_allclose(T.leaky_relu(Tensor(a), 0.2).data, [-0.2, 0.0, 2.0])
        with pytest.raises(ConfigurationError):
            T.leaky_relu(Tensor(a), 1.5)

    def test_reductions(self):
        a = rand(3, 4)
        assert T.tsum(Tensor(a)).item() == pytest.approx(a.sum())
        assert T.tmean(Tensor(a)).item() == pytest.approx(a.mean())

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_sigmoid_range_property(self, seed):
        a = np.random.default_rng(seed).normal(0, 50.0, (4, 4))
        out = T.sigmoid(Tensor(a)).data
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        assert np.all(np.isfinite(out))


class TestStructuralOps:
    def test_concat_channels(self):
        a, b = rand(1, 4, 4, seed=3), rand(2, 4, 4, seed=4)
        out = T.concat_channels([Tensor(a), Tensor(b)])
        assert out.shape == (3, 4, 4)
        np.testing.assert_allclose(out.data, np.concatenate([a, b], axis=0))
        with pytest.raises(ConfigurationError):
            T.concat_channels([Tensor(a), Tensor(rand(1, 5, 4))])
        with pytest.raises(ConfigurationError):
            T.concat_channels([])

    def test_spatial_gradient_ramp(self):
        col = np.arange(5.0)
        img = np.tile(col, (1, 4, 1))  # value = column index
        gx = T.spatial_gradient(Tensor(img), "x").data
        assert np.all(gx[..., :-1] == 1.0)
        assert np.all(gx[..., -1] == 0.0)
        gy = T.spatial_gradient(Tensor(img), "y").data
        np.testing.assert_array_equal(gy, 0.0)
        with pytest.raises(ConfigurationError):
            T.spatial_gradient(Tensor(img), "z")

    def test_element_pick(self):
        a = rand(2, 3, 3)
        out = T.element(Tensor(a), (1, 2, 0))
        assert out.shape == ()
        assert out.item() == a[1, 2, 0]

    def test_reshape_crop(self):
        a = rand(1, 4, 6)
        r = T.reshape(Tensor(a), (2, 12))
        np.testing.assert_array_equal(r.data, a.reshape(2, 12))
        c = T.crop2d(Tensor(a), 3, 5)
        np.testing.assert_array_equal(c.data, a[..., :3, :5])
        with pytest.raises(ConfigurationError):
            T.crop2d(Tensor(a), 5, 5)


class TestPadding:
    def test_reflect_1d_pattern(self):
        row = np.array([[[1.0, 2.0, 3.0]]])
        out = T.pad2d(Tensor(row), (0, 0, 2, 2), "reflect").data
        np.testing.assert_array_equal(out[0, 0], [3, 2, 1, 2, 3, 2, 1])

    def test_reflect_matches_numpy(self):
        a = rand(2, 5, 6)
        out = T.pad2d(Tensor(a), (3, 3, 2, 2), "reflect").data
        ref = np.pad(a, [(0, 0), (3, 3), (2, 2)], mode="reflect")
        np.testing.assert_array_equal(out, ref)

    def test_reflect_wide_matches_numpy(self):
        a = rand(1, 4, 4)
        out = T.pad2d(Tensor(a), (5, 5, 5, 5), "reflect").data
        ref = np.pad(a, [(0, 0), (5, 5), (5, 5)], mode="reflect")
        np.testing.assert_array_equal(out, ref)

    def test_zeros(self):
        a = rand(1, 3, 3)
        out = T.pad2d(Tensor(a), (1, 1, 1, 1), "zeros").data
        assert out.shape == (1, 5, 5)
        assert out[0, 0, 0] == 0.0
        np.testing.assert_array_equal(out[0, 1:4, 1:4], a[0])

    def test_negative_pad_rejected(self):
        with pytest.raises(ConfigurationError):
            T.pad2d(Tensor(rand(1, 3, 3)), (-1, 0, 0, 0))


class TestConv2d:
    def test_delta_kernel_identity(self):
        a = rand(1, 6, 6)
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = T.conv2d(Tensor(a), Tensor(k), padding="reflect").data
        np.testing.assert_allclose(out, a)

    def test_matches_scipy_reflect(self):
        a = rand(1, 8, 8, seed=7)
        k = rand(1, 1, 5, 5, seed=8)
        out = T.conv2d(Tensor(a), Tensor(k), padding="reflect").data
        ref = ndi.correlate(a[0], k[0, 0], mode="mirror")
        np.testing.assert_allclose(out[0], ref, rtol=1e-12, atol=1e-12)

    def test_multichannel_matches_scipy(self):
        a = rand(3, 7, 7, seed=9)
        k = rand(2, 3, 3, 3, seed=10)
        b = rand(2, seed=11)
        out = T.conv2d(Tensor(a), Tensor(k), bias=Tensor(b), padding="reflect").data
        for o in range(2):
            ref = sum(ndi.correlate(a[c], k[o, c], mode="mirror") for c in range(3))
            np.testing.assert_allclose(out[o], ref + b[o], rtol=1e-12, atol=1e-12)

    def test_stride2_subsamples(self):
        a = rand(1, 8, 8, seed=12)
        k = rand(1, 1, 3, 3, seed=13)
        full = T.conv2d(Tensor(a), Tensor(k), stride=1, padding="reflect").data
        half = T.conv2d(Tensor(a), Tensor(k), stride=2, padding="reflect").data
        assert half.shape == (1, 4, 4)
        np.testing.assert_allclose(half, full[:, ::2, ::2])

    def test_valid_shape(self):
        out = T.conv2d(Tensor(rand(1, 8, 8)), Tensor(rand(1, 1, 5, 5)), padding="valid")
        assert out.shape == (1, 4, 4)

    def test_uniform_kernel_preserves_constant(self):
        a = np.full((1, 9, 9), 3.25)
        k = np.full((1, 1, 7, 7), 1.0 / 49.0)
        out = T.conv2d(Tensor(a), Tensor(k), padding="reflect").data
        np.testing.assert_allclose(out, 3.25, rtol=1e-12)

    def test_laplacian_annihilates_constant(self):
        a = np.full((1, 9, 9), -1.7)
        k = np.zeros((1, 1, 7, 7))
        k[0, 0, 2:5, 2:5] = [[0, 1, 0], [1, -4, 1], [0, 1, 0]]
        out = T.conv2d(Tensor(a), Tensor(k), padding="reflect").data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_bad_arguments(self):
        a, k = Tensor(rand(1, 8, 8)), Tensor(rand(1, 1, 4, 4))
        with pytest.raises(ConfigurationError):
            T.conv2d(a, k)
        with pytest.raises(ConfigurationError):
            T.conv2d(a, Tensor(rand(1, 1, 3, 3)), stride=3)
        with pytest.raises(ConfigurationError):
            T.conv2d(a, Tensor(rand(1, 2, 3, 3)))
        with pytest.raises(ConfigurationError):
            T.conv2d(Tensor(rand(8, 8)), Tensor(rand(1, 1, 3, 3)))
        with pytest.raises(ConfigurationError):
            T.conv2d(a, Tensor(rand(1, 1, 3, 3)), padding="wrap")


class TestResampling:
    def test_downsample_block_means(self):
        a = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = T.downsample2(Tensor(a)).data
        np.testing.assert_allclose(out, [[[2.5]]])

    def test_downsample_constant(self):
        a = np.full((2, 6, 6), 0.7)
        np.testing.assert_allclose(T.downsample2(Tensor(a)).data, 0.7)

    def test_downsample_odd_pads_reflect(self):
        a = rand(1, 5, 7)
        out = T.downsample2(Tensor(a)).data
        padded = np.pad(a, [(0, 0), (0, 1), (0, 1)], mode="reflect")
        ref = 0.25 * (
            padded[:, 0::2, 0::2]
            + padded[:, 1::2, 0::2]
            + padded[:, 0::2, 1::2]
            + padded[:, 1::2, 1::2]
        )
        assert out.shape == (1, 3, 4)
        np.testing.assert_allclose(out, ref)

    def test_upsample_doubles_and_preserves_constant(self):
        a = np.full((1, 4, 5), -2.0)
        out = T.upsample2(Tensor(a)).data
        assert out.shape == (1, 8, 10)
        np.testing.assert_allclose(out, -2.0)

    def test_upsample_interior_interpolation(self):
        a = np.array([[[0.0, 1.0, 2.0, 3.0]]])
        out = T.upsample2(Tensor(a)).data[0, :, :]
        # interior even outputs sit a quarter pixel toward the previous sample
        np.testing.assert_allclose(out[0, 2], 0.25 * 0.0 + 0.75 * 1.0)
        np.testing.assert_allclose(out[0, 3], 0.75 * 1.0 + 0.25 * 2.0)
        np.testing.assert_allclose(out[0, 0], 0.0)
        np.testing.assert_allclose(out[0, -1], 3.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_updown_mean_preserved(self, seed):
        # both resamplers use weights summing to one, so the global mean survives
        a = np.random.default_rng(seed).uniform(-1, 1, (1, 6, 6))
        up = T.upsample2(Tensor(a)).data
        assert up.mean() == pytest.approx(a.mean(), rel=1e-9)


class TestBackwardMechanics:
    def test_backward_requires_scalar(self):
        t = Tensor(rand(2, 2), requires_grad=True)
        with pytest.raises(UsageError):
            T.add(t, t).backward()

    def test_leaf_grads_accumulate_across_calls(self):
        t = Tensor(rand(3, 3), requires_grad=True)
        T.tsum(T.square(t)).backward()
        first = t.grad.copy()
        T.tsum(T.square(t)).backward()
        np.testing.assert_allclose(t.grad, 2.0 * first)
        t.zero_grad()
        assert t.grad is None

    def test_intermediates_do_not_double_count(self):
        t = Tensor(rand(3, 3), requires_grad=True)
        mid = T.square(t)
        loss = T.tsum(mid)
        loss.backward()
        g1 = t.grad.copy()
        loss.backward()
        np.testing.assert_allclose(t.grad, 2.0 * g1)

    def test_shared_subexpression(self):
        # d/dx sum(x*x + x*x) = 4x when the same node feeds two consumers
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        sq = T.square(t)
        T.tsum(T.add(sq, sq)).backward()
        np.testing.assert_allclose(t.grad, 4.0 * t.data)

    def test_no_grad_inputs_stay_clean(self):
        fixed = Tensor(rand(3, 3))
        w = Tensor(rand(3, 3), requires_grad=True)
        T.tsum(T.mul(fixed, w)).backward()
        assert fixed.grad is None
        np.testing.assert_allclose(w.grad, fixed.data)

    def test_constant_graph_backward_is_noop(self):
        a = Tensor(rand(2, 2))
        out = T.tsum(T.square(a))
        assert not out.requires_grad
        out.backward()  # nothing to propagate, must not raise
        assert a.grad is None

    def test_float32_is_preserved(self):
        t = Tensor(rand(2, 4, 4).astype(np.float32), requires_grad=True)
        k = Tensor(rand(2, 2, 3, 3).astype(np.float32), requires_grad=True)
        out = T.tmean(T.square(T.upsample2(T.downsample2(T.conv2d(t, k)))))
        assert out.dtype == np.float32
        out.backward()
        assert t.grad.dtype == np.float32
        assert k.grad.dtype == np.float32

    def test_integer_input_promoted_to_float(self):
        t = Tensor(np.arange(4).reshape(2, 2))
        assert t.dtype == np.float64
