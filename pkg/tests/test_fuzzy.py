import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdiff.errors import DegenerateBatch, ShapeMismatch
from fdiff.fuzzy import SIGMA_MIN, FuzzyLayer, _log_and, flm_and_rule, flm_forward, flm_membership, flm_param_grads
from fdiff.numerics import ops
from fdiff.numerics.gradcheck import grad_check
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor, backprop


def layer(c=3, m=5, seed=0):
    return FuzzyLayer(c, M=m, rng=SeededRng(seed))


class TestMembership:
    def test_peak(self):
        fl = layer(2, 3)
        fl.mu.data[:] = 0.7
        f = Tensor(np.full((2, 3, 3, 3), 0.7))
        np.testing.assert_array_equal(flm_membership(f, fl).data, 1.0)

    def test_one_sigma_offset(self):
        fl = layer(1, 1)
        fl.mu.data[:] = 0.25
        fl.sigma.data[:] = 0.5
        f = Tensor(np.full((1, 2, 2, 2), 0.75))
        np.testing.assert_allclose(flm_membership(f, fl).data, np.exp(-1.0), rtol=1e-15)
        assert np.exp(-1.0) == pytest.approx(0.367879, abs=1e-6)

    def test_shape_and_parameter_layout(self, rng):
        fl = layer(3, 4)
        f = Tensor(rng.normal((2, 3, 2, 2, 2)))
        m = flm_membership(f, fl).data
        assert m.shape == (4, 2, 3, 2, 2, 2)
        k, c = 2, 1
        expect = np.exp(-((f.data[:, c] - fl.mu.data[k, c]) ** 2) / fl.sigma.data[k, c] ** 2)
        np.testing.assert_allclose(m[k, :, c], expect, rtol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-6, 6), st.floats(-3, 3), st.floats(0.5, 3))
    def test_range(self, f, mu, sigma):
        fl = layer(1, 1)
        fl.mu.data[:] = mu
        fl.sigma.data[:] = sigma
        m = flm_membership(Tensor(np.full((1, 1, 1, 1), f)), fl).data
        assert np.all((m > 0) & (m <= 1))

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            flm_membership(Tensor(rng.normal((4, 2, 2, 2))), layer(3))


class TestAndRule:
    def test_all_ones(self):
        np.testing.assert_array_equal(flm_and_rule(Tensor(np.ones((5, 2, 2, 2, 2)))).data, 1.0)

    def test_square(self, rng):
        m = rng.uniform(0.1, 1.0, size=(2, 2, 2, 2))
        np.testing.assert_allclose(flm_and_rule(Tensor(np.stack([m, m]))).data, m * m, rtol=1e-15)

    def test_hand_product(self):
        assert flm_and_rule(Tensor(np.full((3, 1, 1, 1, 1), 0.5))).data.item() == 0.125

    @pytest.mark.parametrize("m", [1, 3, 8])
    def test_log_space_matches_direct(self, rng, m):
        mem = Tensor(rng.uniform(0.05, 1.0, size=(m, 2, 3, 3, 3)))
        np.testing.assert_allclose(flm_and_rule(mem, log_space=True).data, flm_and_rule(mem, log_space=False).data,
                                   rtol=1e-10, atol=0)

    @pytest.mark.parametrize("m", [3, 8, 12])
    def test_fused_log_path_matches_product(self, rng, m):
        fl = layer(2, m)
        f = Tensor(rng.normal((2, 2, 3, 3, 3)))
        direct = flm_and_rule(flm_membership(f, fl), log_space=False).data
        np.testing.assert_allclose(_log_and(f, fl).data, direct, rtol=1e-10, atol=1e-300)

    def test_default_switches_to_log_for_large_m(self, rng):
        mem = Tensor(rng.uniform(0.5, 1.0, size=(9, 1, 2, 2, 2)))
        np.testing.assert_array_equal(flm_and_rule(mem).data, flm_and_rule(mem, log_space=True).data)
        few = Tensor(mem.data[:8])
        np.testing.assert_array_equal(flm_and_rule(few).data, flm_and_rule(few, log_space=False).data)

    def test_output_in_unit_interval(self, rng):
        fl = layer(3, 5)
        out = flm_and_rule(flm_membership(Tensor(rng.normal((2, 3, 4, 4, 4))), fl)).data
        assert np.all((out > 0) & (out <= 1))


class TestForward:
    def test_shape(self, rng):
        for shape in [(2, 3, 4, 4, 4), (3, 4, 4, 4)]:
            assert flm_forward(Tensor(rng.normal(shape)), layer(3)).shape == shape

    def test_unit_memberships_identity_bn(self, rng):
        # Wide memberships make the AND map 1 everywhere; with BN in eval mode at
        # running stats (0, 1) and identity affine, output = (1 + f) / sqrt(1 + eps).
        fl = layer(2, 3)
        fl.sigma.data[:] = 1e9
        f = Tensor(rng.normal((2, 2, 3, 3, 3)))
        out = flm_forward(f, fl, train=False)
        np.testing.assert_allclose(out.data, (1.0 + f.data) / np.sqrt(1.0 + 1e-5), rtol=1e-12)

    def test_train_mode_statistics(self, rng):
        fl = layer(2, 3)
        out = flm_forward(Tensor(rng.normal((2, 2, 3, 3, 3))), fl, train=True).data
        # Each branch is normalised to zero mean, so the sum is too.
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3, 4)), 0.0, atol=1e-12)

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatch):
            flm_forward(Tensor(np.ones((1, 3, 1, 1, 1))), layer(3), train=True)

    def test_gradients(self, rng):
        fl = layer(3, 5)
        f = Tensor(rng.normal((2, 3, 3, 3, 3)), requires_grad=True)
        w = Tensor(rng.normal(f.shape))
        obj = lambda _: ops.sum(ops.mul(flm_forward(f, fl), w))
        for t in (fl.mu, fl.sigma, f):
            assert grad_check(obj, t, max_entries=30, rng=rng).max_rel_err < 1e-4

    def test_sum_gradient_through_membership(self, rng):
        # The pre-BN fuzzy map has non-trivial gradients for sum as the objective.
        fl = layer(2, 4)
        f = Tensor(rng.normal((2, 2, 3, 3, 3)))
        obj = lambda _: ops.sum(flm_and_rule(flm_membership(f, fl)))
        for t in (fl.mu, fl.sigma):
            assert grad_check(obj, t).max_rel_err < 1e-4


class TestParamGrads:
    def test_stationary_mu(self):
        fl = layer(1, 1)
        fl.mu.data[:] = 0.3
        f = Tensor(np.full((1, 1, 2, 2, 2), 0.3))
        backprop(ops.sum(flm_membership(f, fl)))
        assert flm_param_grads(fl)["mu"][0, 0] == 0.0

    def test_sigma_gradient_sign(self):
        # d/dsigma exp(-d^2/sigma^2) = +2 d^2 / sigma^3 * m: widening raises membership.
        fl = layer(1, 1)
        fl.mu.data[:] = 0.0
        fl.sigma.data[:] = 1.0
        f = Tensor(np.full((1, 1, 1, 1), 2.0))
        backprop(ops.sum(flm_membership(f, fl)))
        assert flm_param_grads(fl)["sigma"][0, 0] == pytest.approx(2 * 4 * np.exp(-4.0), rel=1e-14)

    def test_projection_at_floor(self, rng):
        fl = layer(2, 3)
        fl.sigma.data[:] = SIGMA_MIN
        f = Tensor(rng.normal((2, 2, 2, 2)) * 1e-3)
        backprop(ops.sum(ops.neg(flm_membership(f, fl))))
        g = flm_param_grads(fl)["sigma"]
        assert np.all(g <= 0)
        fl.sigma.data -= 0.1 * g
        assert np.all(fl.sigma.data >= SIGMA_MIN)

    def test_clamp(self):
        fl = layer(2, 2)
        fl.sigma.data[:] = -0.5
        fl.clamp_()
        np.testing.assert_array_equal(fl.sigma.data, SIGMA_MIN)

    def test_init(self):
        fl = layer(4, 5, seed=3)
        np.testing.assert_array_equal(fl.sigma.data, 1.0)
        np.testing.assert_array_equal(fl.mu.data, SeededRng(3).normal((5, 4)))
