"""End-to-end acceptance checks, one test per criterion.

Criteria 6 and 7 train real models at desk scale (16^3 phantoms, the
``desk`` preset) and take several minutes each on one CPU core; every test
reports a PASS/FAIL line that pytest prints in its terminal summary.
"""
import time

import numpy as np
import pytest

from fdiff.ablation import ROW_LABELS, run_ablation
from fdiff.attention import AttentionFusion, IterativeAttentionFusion
from fdiff.checkpoint import load_state, save_state
from fdiff.commands import cmd_eval, cmd_gen_data, cmd_sample, cmd_train
from fdiff.config import load_config
from fdiff.data import VolumeRecord, read_volume, write_volume
from fdiff.diffusion import build_linear_schedule, posterior_mean_from_eps, posterior_params, q_sample, x0_eps_convert
from fdiff.gradsuite import run_suite
from fdiff.metrics import dsc, hd95, jaccard, recall
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor

from test_losses_metrics import brute_hd95


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    cfg = load_config("desk").replace(data_dir=str(root / "data"))
    manifest = cmd_gen_data(cfg)
    return cfg, root, manifest, time.perf_counter() - start


@pytest.fixture(scope="session")
def trained_full(desk):
    cfg, root, _, gen_seconds = desk
    start = time.perf_counter()
    full = cfg.replace(variant="full")
    res = cmd_train(full, root / "full")
    report = cmd_eval(full, res.checkpoint, "test", root / "full")
    untrained = cmd_train(full.replace(iterations=0), root / "untrained")
    base = cmd_eval(full, untrained.checkpoint, "test", root / "untrained")
    return full, res, report, base, gen_seconds + time.perf_counter() - start


def test_criterion_1_posterior_mean_forms(criterion):
    start = time.perf_counter()
    sched = build_linear_schedule(1000, 1e-4, 0.02)
    rng = SeededRng(2024)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(1, 1001))
        x0, eps = rng.normal((2, 4, 4, 4)), rng.normal((2, 4, 4, 4))
        xt = q_sample(x0, t, eps, sched)
        mean_x0, _ = posterior_params(x0, xt, t, sched)
        worst = max(worst, float(np.abs(posterior_mean_from_eps(xt, t, eps, sched) - mean_x0).max()))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-10 and seconds < 1.0
    criterion(1, ok, f"max |mean_x0 - mean_eps| = {worst:.2e} (tol 1e-10), {seconds:.3f} s (< 1 s)")
    assert worst <= 1e-10 and seconds < 1.0


def test_criterion_2_reparameterisation_roundtrip(criterion):
    start = time.perf_counter()
    sched = build_linear_schedule()
    rng = SeededRng(7)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(1, 1001))
        x0, eps = rng.normal((2, 4, 4, 4)), rng.normal((2, 4, 4, 4))
        xt = q_sample(x0, t, eps, sched)
        worst = max(worst, float(np.abs(x0_eps_convert("x0_to_eps", xt, t, x0, sched) - eps).max()))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-12 and seconds < 1.0
    criterion(2, ok, f"max |eps_rec - eps| = {worst:.2e} (tol 1e-12), {seconds:.3f} s (< 1 s)")
    assert worst <= 1e-12 and seconds < 1.0


def test_criterion_3_gradient_suite(criterion):
    start = time.perf_counter()
    rep = run_suite(h=1e-6, tol=1e-4, seed=0, groups=["flm", "mscam", "af", "iaf", "loss"])
    seconds = time.perf_counter() - start
    worst = max(r.max_rel_err for r in rep.rows)
    has_flm = {("flm", "mu"), ("flm", "sigma")} <= {(r.group, r.name) for r in rep.rows}
    ok = rep.passed and has_flm and seconds < 120
    criterion(3, ok, f"{len(rep.rows)} tensors, worst rel err {worst:.2e} (tol 1e-4), {seconds:.1f} s (< 120 s)")
    assert ok, rep.table()


def test_criterion_4_fusion_bounds(criterion):
    rng = SeededRng(4)
    af, iaf = AttentionFusion(4, r=2, rng=rng), IterativeAttentionFusion(4, r=2, rng=rng)
    violations, ident = 0, True
    for i in range(1000):
        scale = float(rng.uniform(0.1, 10.0))
        x, y = Tensor(rng.normal((2, 4, 2, 2, 2)) * scale), Tensor(rng.normal((2, 4, 2, 2, 2)) * scale)
        lo, hi = np.minimum(x.data, y.data), np.maximum(x.data, y.data)
        for z in (af(x, y).data, iaf(x, y).data):
            violations += int(np.sum((z < lo) | (z > hi)))
        ident &= bool(np.array_equal(iaf(x, x).data, x.data))
    ok = violations == 0 and ident
    criterion(4, ok, f"1000 pairs: {violations} bound violations, iaf(X,X)==X exactly: {ident}")
    assert ok


def test_criterion_5_metric_oracle(criterion):
    rng = SeededRng(5)
    mismatches, pairs, worst_identity = 0, 0, 0.0
    while pairs < 50:
        shape = tuple(int(s) for s in rng.integers(3, 13, size=3))
        a, b = rng.random(shape) < 0.3, rng.random(shape) < 0.3
        if not a.any() or not b.any():
            continue
        pairs += 1
        mismatches += hd95(a, b) != brute_hd95(a, b)
        j = jaccard(a, b)
        worst_identity = max(worst_identity, abs(dsc(a, b) - 2 * j / (1 + j)))
    v1, v2 = np.zeros((4, 4, 4), bool), np.zeros((4, 4, 4), bool)
    v1[0, 0, 0], v2[0, 0, 3] = True, True
    hand = {
        "dsc": dsc([1, 1, 1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 1, 1, 0, 0]) == 0.5,
        "jaccard": jaccard([1, 1, 1, 1, 0, 0], [0, 0, 1, 1, 1, 1]) == 1 / 3,
        "recall": recall([1, 1, 1, 0, 1, 0], [1, 1, 1, 1, 0, 0]) == 0.75,
        "hd95": hd95(v1, v2) == 3.0,
    }
    ok = mismatches == 0 and worst_identity <= 1e-12 and all(hand.values())
    criterion(5, ok, f"hd95 vs brute force: {mismatches}/50 mismatches; |DSC - 2J/(1+J)| <= {worst_identity:.1e}; "
                     f"hand cases {hand}")
    assert ok


def test_criterion_6_end_to_end_learning(criterion, desk, trained_full):
    _, _, manifest, _ = desk
    full, res, report, base, seconds = trained_full
    n_train, _, n_test = manifest.counts()
    d, d0 = report.mean("dsc"), base.mean("dsc")
    ok = (n_train, n_test) == (40, 10) and full.iterations <= 500 and d >= 0.80 and d - d0 >= 0.4 and seconds < 900
    criterion(6, ok, f"{n_train}/{n_test} split, {full.iterations} iterations: test DSC {d:.4f} (>= 0.80), "
                     f"untrained {d0:.4f} (gain {d - d0:.4f} >= 0.4), HD95 {report.mean('hd95')}, "
                     f"{seconds:.0f} s (< 900 s)")
    assert (n_train, n_test) == (40, 10) and full.iterations <= 500
    assert d >= 0.80 and d - d0 >= 0.4 and seconds < 900


def test_criterion_7_ablation_direction(criterion, desk, tmp_path_factory):
    cfg, _, _, _ = desk
    assert tuple(cfg.ablation_seeds) == (0, 1, 2)
    out = tmp_path_factory.mktemp("ablation")
    result = run_ablation(cfg, out)
    trend = result.trend()
    shape_ok = [r["label"] for r in result.table()] == list(ROW_LABELS.values()) and \
        result.columns() == ["label", "dsc_c0", "dsc_c1", "dsc", "hd95_c0", "hd95_c1", "hd95"]
    ok = trend["dsc_full_ge_basic"] and trend["hd95_full_le_basic_plus_half"] and shape_ok
    criterion(7, ok, f"3 seeds: DSC full {trend['full_dsc']:.4f} vs basic {trend['basic_dsc']:.4f}; "
                     f"HD95 full {trend['full_hd95']} vs basic {trend['basic_hd95']} (+0.5 allowed); "
                     f"table rows {[r['label'] for r in result.table()]}")
    print(result.text())
    assert ok


def test_criterion_8_determinism(criterion, desk, trained_full, tmp_path):
    full, res, _, _, _ = trained_full
    cfg = full.replace(eta=0.0)
    vol = sorted((desk[1] / "data").glob("*.fdfv"))[0]
    a = cmd_sample(cfg, res.checkpoint, vol, tmp_path / "a")
    b = cmd_sample(cfg, res.checkpoint, vol, tmp_path / "b")
    sample_ok = (np.array_equal(a.mask, b.mask) and np.array_equal(a.fused, b.fused)
                 and (tmp_path / "a" / "fused.fdfv").read_bytes() == (tmp_path / "b" / "fused.fdfv").read_bytes())

    rng = SeededRng(8)
    fdfv_ok = True
    for dt in (np.float32, np.float64, np.uint8):
        rec = VolumeRecord((rng.uniform(size=(1, 4, 5, 6)) * 255).astype(dt),
                           (rng.random((2, 4, 5, 6)) < 0.5).astype(np.uint8), id=f"r-{dt.__name__}", seed=99)
        write_volume(rec, tmp_path / "r.fdfv")
        back = read_volume(tmp_path / "r.fdfv")
        fdfv_ok &= back == rec and back.image.tobytes() == rec.image.tobytes()
    state = load_state(res.checkpoint)
    save_state(state, tmp_path / "copy.fdfw")
    back = load_state(tmp_path / "copy.fdfw")
    fdfw_ok = (res.checkpoint.read_bytes() == (tmp_path / "copy.fdfw").read_bytes()
               and all(back[k].dtype == v.dtype and back[k].tobytes() == v.tobytes() for k, v in state.items()))
    ok = sample_ok and fdfv_ok and fdfw_ok
    criterion(8, ok, f"sample bitwise identical: {sample_ok}; FDFV roundtrip: {fdfv_ok}; FDFW roundtrip: {fdfw_ok}")
    assert ok
