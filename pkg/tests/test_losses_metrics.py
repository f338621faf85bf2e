import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdiff.errors import EmptyMask, InvalidLabel, ShapeMismatch
from fdiff.losses import loss_from_probs, total_loss
from fdiff.metrics import (boundary, dsc, dsc_from_jaccard, evaluate_masks, hausdorff, hd95, jaccard, recall,
                           surface_distances)
from fdiff.numerics.gradcheck import grad_check
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor


def brute_hd95(a, b):
    """All-pairs oracle: boundary by explicit 6-neighbour scan, distances by exhaustive search."""
    def surf(m):
        pts = []
        for idx in zip(*np.nonzero(m)):
            for ax in range(3):
                for step in (-1, 1):
                    n = list(idx)
                    n[ax] += step
                    if not (0 <= n[ax] < m.shape[ax]) or not m[tuple(n)]:
                        pts.append(idx)
                        break
                else:
                    continue
                break
        return np.array(pts, dtype=np.float64)
    pa, pb = surf(a), surf(b)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return float(np.percentile(np.concatenate([d.min(1), d.min(0)]), 95, method="linear"))


def blob(rng, shape, p):
    return rng.random(shape) < p


class TestTotalLoss:
    def test_saturated(self, rng):
        x0 = (rng.random((2, 2, 4, 4, 4)) < 0.3).astype(np.float64)
        logits = Tensor(np.where(x0 == 1, 60.0, -60.0))
        assert total_loss(logits, x0).total.item() < 1e-5

    def test_half_mse(self):
        x0 = np.zeros((1, 1, 2, 2, 2))
        x0[..., 0] = 1
        terms = total_loss(Tensor(np.zeros_like(x0)), x0)
        assert terms.mse == 0.25
        assert terms.bce == pytest.approx(np.log(2.0), rel=1e-12)

    def test_components_sum(self, rng):
        x0 = (rng.random((2, 2, 3, 3, 3)) < 0.4).astype(np.float64)
        t = total_loss(Tensor(rng.normal(x0.shape) * 2), x0)
        assert t.total.item() == pytest.approx(t.mse + t.bce + t.dice, rel=1e-14)
        row = t.as_row()
        assert set(row) == {"loss", "mse", "bce", "dice"}

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 20.0))
    def test_nonnegative(self, seed, scale):
        r = SeededRng(seed)
        x0 = (r.random((1, 2, 3, 3, 3)) < 0.5).astype(np.float64)
        t = total_loss(Tensor(r.normal(x0.shape) * scale), x0)
        assert t.total.item() >= 0 and min(t.mse, t.bce, t.dice) >= 0

    def test_invalid_label(self):
        with pytest.raises(InvalidLabel):
            total_loss(Tensor(np.zeros((1, 1, 2, 2, 2))), np.full((1, 1, 2, 2, 2), 0.5))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            total_loss(Tensor(np.zeros((1, 1, 2, 2, 2))), np.zeros((1, 1, 2, 2, 3)))

    def test_gradient(self, rng):
        x0 = (rng.random((2, 2, 3, 3, 3)) < 0.5).astype(np.float64)
        z = Tensor(rng.normal(x0.shape), requires_grad=True)
        assert grad_check(lambda v: total_loss(v, x0).total, z).max_rel_err < 1e-4

    def test_prob_gradient(self, rng):
        x0 = (rng.random((1, 2, 3, 3, 3)) < 0.5).astype(np.float64)
        p = Tensor(rng.uniform(0.05, 0.95, size=x0.shape), requires_grad=True)
        assert grad_check(lambda v: loss_from_probs(v, x0).total, p).max_rel_err < 1e-4

    def test_clamp_keeps_bce_finite(self):
        x0 = np.ones((1, 1, 1, 1, 2))
        t = loss_from_probs(Tensor(np.zeros_like(x0)), x0)
        assert t.bce == pytest.approx(-np.log(1e-7), rel=1e-6)


class TestOverlap:
    def test_dsc_cases(self, rng):
        a = blob(rng, (5, 5, 5), 0.3)
        assert dsc(a, a) == 1.0
        b = np.zeros((5, 5, 5), bool)
        b[0, 0, 0] = True
        c = np.zeros((5, 5, 5), bool)
        c[4, 4, 4] = True
        assert dsc(b, c) == 0.0
        assert dsc(np.zeros(3), np.zeros(3)) == 1.0

    def test_dsc_half(self):
        a = np.array([1, 1, 1, 1, 0, 0, 0, 0])
        b = np.array([0, 0, 1, 1, 1, 1, 0, 0])
        assert dsc(a, b) == 0.5

    def test_jaccard_third(self):
        a = np.array([1, 1, 1, 1, 0, 0])
        b = np.array([0, 0, 1, 1, 1, 1])
        assert jaccard(a, b) == pytest.approx(0.333333, abs=1e-6)
        assert jaccard(a, a) == 1.0
        assert jaccard(np.zeros(4), np.zeros(4)) == 1.0

    def test_recall(self, rng):
        gt = np.array([1, 1, 1, 1, 0, 0])
        pred = np.array([1, 1, 1, 0, 1, 0])
        assert recall(pred, gt) == 0.75
        assert recall(gt, gt) == 1.0
        assert recall(np.ones(6), blob(rng, (6,), 0.5)) == 1.0
        assert recall(np.zeros(6), np.zeros(6)) == 1.0

    def test_recall_not_symmetric(self):
        a, b = np.array([1, 1, 0, 0]), np.array([1, 0, 0, 0])
        assert recall(a, b) != recall(b, a)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
    def test_identity_and_symmetry(self, seed, p, q):
        r = SeededRng(seed)
        a, b = blob(r, (6, 6, 6), p), blob(r, (6, 6, 6), q)
        assert abs(dsc(a, b) - dsc_from_jaccard(jaccard(a, b))) < 1e-12
        assert dsc(a, b) == dsc(b, a) and jaccard(a, b) == jaccard(b, a)
        assert dsc(a, b) >= jaccard(a, b)

    def test_shape_mismatch(self):
        for fn in (dsc, jaccard, recall, hd95):
            with pytest.raises(ShapeMismatch):
                fn(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


class TestSurface:
    def test_cube_boundary(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:4, 1:4, 1:4] = True
        b = boundary(m)
        assert b.sum() == 26 and not b[2, 2, 2]

    def test_volume_edge_is_background(self):
        assert boundary(np.ones((3, 3, 3), bool)).sum() == 26

    def test_identical(self, rng):
        a = blob(rng, (6, 6, 6), 0.4)
        d1, d2 = surface_distances(a, a)
        assert np.all(d1 == 0) and np.all(d2 == 0)
        assert hd95(a, a) == 0.0

    def test_single_voxels(self):
        a = np.zeros((4, 4, 4), bool)
        b = np.zeros((4, 4, 4), bool)
        a[0, 0, 0], b[0, 0, 3] = True, True
        d1, d2 = surface_distances(a, b)
        assert d1.tolist() == [3.0] and d2.tolist() == [3.0]
        assert hd95(a, b) == 3.0

    def test_empty(self):
        e, a = np.zeros((3, 3, 3), bool), np.ones((3, 3, 3), bool)
        with pytest.raises(EmptyMask):
            surface_distances(e, a)
        assert hd95(e, e) == 0.0
        assert hd95(e, a) is None and hd95(a, e) is None
        assert hausdorff(e, a) is None

    def test_not_3d(self):
        with pytest.raises(ShapeMismatch):
            boundary(np.ones((3, 3)))

    def test_brute_force_oracle(self):
        r = SeededRng(77)
        for _ in range(50):
            shape = tuple(int(s) for s in r.integers(3, 13, size=3))
            a, b = blob(r, shape, 0.3), blob(r, shape, 0.3)
            if not a.any() or not b.any():
                continue
            assert hd95(a, b) == brute_hd95(a, b)
            assert hd95(a, b) <= hausdorff(a, b)
            assert hd95(a, b) == hd95(b, a)

    def test_shifted_ball(self):
        idx = np.indices((12, 12, 12)).transpose(1, 2, 3, 0)
        a = ((idx - 5.5) ** 2).sum(-1) < 9
        b = np.roll(a, 2, axis=0)
        assert hd95(a, b) == brute_hd95(a, b)
        assert hausdorff(a, b) == 2.0


class TestReport:
    def test_averages(self):
        gt = np.zeros((2, 4, 4, 4), bool)
        gt[0, :2] = True
        gt[1, 0, 0, 0] = True
        pred = gt.copy()
        pred[1] = False
        rep = evaluate_masks(pred, gt, "v")
        assert rep.per_class[0].dsc == 1.0 and rep.per_class[1].dsc == 0.0
        assert rep.dsc == 0.5
        assert rep.hd95 == 0.0 and rep.hd95_undefined == 1
        js = rep.to_json()
        assert js["id"] == "v" and js["per_class"][1]["hd95"] is None

    def test_single_channel(self, rng):
        a = blob(rng, (4, 4, 4), 0.5)
        assert len(evaluate_masks(a, a).per_class) == 1

    def test_product_grid_convention(self):
        for ea, eb in itertools.product([True, False], repeat=2):
            a = np.zeros((3, 3, 3), bool) if ea else np.ones((3, 3, 3), bool)
            b = np.zeros((3, 3, 3), bool) if eb else np.ones((3, 3, 3), bool)
            c = evaluate_masks(a, b).per_class[0]
            assert c.hd95_undefined == (ea != eb)
