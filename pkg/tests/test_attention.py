import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdiff.attention import (AttentionFusion, IterativeAttentionFusion, MsCam, af, fuse_trajectory, iaf,
                             mscam_weights)
from fdiff.errors import EmptyTrajectory, InvalidReduction, ShapeMismatch
from fdiff.numerics import ops
from fdiff.numerics.gradcheck import grad_check
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor


def zero_cam(cam: MsCam) -> MsCam:
    for _, p in cam.named_parameters():
        p.data[:] = 0.0
    return cam


def saturate(cam: MsCam, value: float) -> MsCam:
    zero_cam(cam)
    cam.local.bn2.beta.data[:] = value
    return cam


class TestMsCam:
    def test_bad_reduction(self):
        with pytest.raises(InvalidReduction):
            MsCam(6, r=4)

    def test_pointwise_kernels(self):
        cam = MsCam(8, r=4, rng=SeededRng(0))
        for name, p in cam.named_parameters():
            if name.endswith("weight"):
                assert p.shape[2:] == (1, 1, 1)
        assert cam.local.pwconv1.weight.shape[:2] == (2, 8)

    def test_zeroed_is_half(self, rng):
        cam = zero_cam(MsCam(4, r=2, rng=rng))
        m = mscam_weights(Tensor(rng.normal((2, 4, 3, 3, 3))), cam).data
        np.testing.assert_array_equal(m, 0.5)

    def test_strictly_inside_unit_interval(self, rng):
        cam = MsCam(8, r=4, rng=rng)
        m = mscam_weights(Tensor(rng.normal((3, 8, 4, 4, 4)) * 3), cam).data
        assert np.all((m > 0) & (m < 1))

    def test_constant_volume_branches_align(self, rng):
        # Identical branch parameters in eval mode: pooling a constant volume is the
        # identity, so the global branch equals the local one and M is constant in space.
        cam = MsCam(4, r=2, rng=rng)
        cam.global_.load_state_dict(cam.local.state_dict())
        for bn in (cam.local.bn1, cam.local.bn2, cam.global_.bn1, cam.global_.bn2):
            bn.running_mean.data[:] = rng.normal((bn.running_mean.shape[0],))
            bn.running_var.data[:] = rng.uniform(0.5, 2.0, size=bn.running_var.shape[0])
        cam.global_.load_state_dict(cam.local.state_dict())
        cam.eval()
        x = Tensor(np.broadcast_to(rng.normal((1, 4, 1, 1, 1)), (1, 4, 3, 3, 3)).copy())
        local = cam.local(x).data
        glob = cam.global_(ops.global_avg_pool3d(x)).data
        np.testing.assert_allclose(local, np.broadcast_to(glob, local.shape), rtol=1e-12)
        m = cam(x).data
        np.testing.assert_allclose(m, np.broadcast_to(m[..., :1, :1, :1], m.shape), rtol=0, atol=0)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            MsCam(4, r=2, rng=rng)(Tensor(rng.normal((2, 3, 2, 2, 2))))

    def test_gradients(self, rng):
        cam = MsCam(4, r=2, rng=rng)
        x = Tensor(rng.normal((2, 4, 2, 2, 2)), requires_grad=True)
        w = Tensor(rng.normal(x.shape))
        obj = lambda _: ops.sum(ops.mul(cam(x), w))
        for t in [x] + cam.parameters():
            assert grad_check(obj, t, max_entries=16, rng=rng).max_rel_err < 1e-4


class TestFusion:
    def test_af_identity(self, rng):
        x = Tensor(rng.normal((2, 4, 3, 3, 3)))
        np.testing.assert_array_equal(AttentionFusion(4, 2, rng)(x, x).data, x.data)

    def test_iaf_identity(self, rng):
        x = Tensor(rng.normal((2, 4, 3, 3, 3)))
        np.testing.assert_array_equal(IterativeAttentionFusion(4, 2, rng)(x, x).data, x.data)

    def test_saturated_af_selects_y(self, rng):
        cam = saturate(MsCam(4, r=2, rng=rng), 60.0)
        x, y = Tensor(rng.normal((2, 4, 2, 2, 2))), Tensor(rng.normal((2, 4, 2, 2, 2)))
        np.testing.assert_allclose(af(x, y, cam).data, y.data, rtol=0, atol=1e-15)

    def test_saturated_af_selects_x(self, rng):
        cam = saturate(MsCam(4, r=2, rng=rng), -60.0)
        x, y = Tensor(rng.normal((2, 4, 2, 2, 2))), Tensor(rng.normal((2, 4, 2, 2, 2)))
        np.testing.assert_allclose(af(x, y, cam).data, x.data, rtol=0, atol=1e-15)

    def test_zeroed_iaf_is_mean(self, rng):
        s1, s2 = zero_cam(MsCam(4, 2, rng)), zero_cam(MsCam(4, 2, rng))
        x, y = Tensor(rng.normal((2, 4, 2, 2, 2))), Tensor(rng.normal((2, 4, 2, 2, 2)))
        np.testing.assert_allclose(iaf(x, y, s1, s2).data, (x.data + y.data) / 2, rtol=1e-15, atol=1e-15)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            AttentionFusion(4, 2, rng)(Tensor(np.ones((2, 4, 2, 2, 2))), Tensor(np.ones((2, 4, 2, 2, 3))))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 5.0))
    def test_convex_bounds(self, seed, scale):
        r = SeededRng(seed)
        x, y = Tensor(r.normal((2, 4, 2, 2, 2)) * scale), Tensor(r.normal((2, 4, 2, 2, 2)) * scale)
        lo, hi = np.minimum(x.data, y.data), np.maximum(x.data, y.data)
        for mod in (AttentionFusion(4, 2, r), IterativeAttentionFusion(4, 2, r)):
            z = mod(x, y).data
            assert np.all(z >= lo) and np.all(z <= hi)

    @pytest.mark.parametrize("cls", [AttentionFusion, IterativeAttentionFusion])
    def test_gradients(self, rng, cls):
        mod = cls(4, 2, rng)
        x, y = (Tensor(rng.normal((2, 4, 2, 2, 2)), requires_grad=True) for _ in range(2))
        w = Tensor(rng.normal(x.shape))
        obj = lambda _: ops.sum(ops.mul(mod(x, y), w))
        for t in [x, y] + mod.parameters():
            assert grad_check(obj, t, max_entries=16, rng=rng).max_rel_err < 1e-4


class TestTrajectory:
    def test_single(self, rng):
        p = Tensor(rng.uniform(size=(2, 2, 2, 2, 2)))
        assert fuse_trajectory([p], IterativeAttentionFusion(2, 2, rng)) is p

    def test_identical(self, rng):
        p = Tensor(rng.uniform(size=(2, 2, 2, 2, 2)))
        out = fuse_trajectory([p, Tensor(p.data.copy()), Tensor(p.data.copy())], IterativeAttentionFusion(2, 2, rng))
        np.testing.assert_array_equal(out.data, p.data)

    def test_two_with_zeroed_cams_is_mean(self, rng):
        mod = IterativeAttentionFusion(2, 2, rng)
        zero_cam(mod.stage1), zero_cam(mod.stage2)
        a, b = Tensor(rng.uniform(size=(2, 2, 2, 2, 2))), Tensor(rng.uniform(size=(2, 2, 2, 2, 2)))
        np.testing.assert_allclose(fuse_trajectory([a, b], mod).data, (a.data + b.data) / 2, rtol=1e-15)

    def test_left_fold_order(self, rng):
        mod = IterativeAttentionFusion(2, 2, rng)
        ps = [Tensor(rng.uniform(size=(2, 2, 2, 2, 2))) for _ in range(3)]
        np.testing.assert_array_equal(fuse_trajectory(ps, mod).data, mod(mod(ps[0], ps[1]), ps[2]).data)

    def test_no_fusion_returns_last(self, rng):
        ps = [Tensor(rng.uniform(size=(2, 2))) for _ in range(3)]
        assert fuse_trajectory(ps, None) is ps[-1]

    def test_empty(self):
        with pytest.raises(EmptyTrajectory):
            fuse_trajectory([], None)
