import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opcrecipe import litho, metrics, opc
from opcrecipe.geometry import FragmentPolicy, place_control_points, rasterize, synth_clip


def xor_count_loop(a, b):
    """Independent brute-force pixel loop oracle."""
    n = 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if bool(a[i, j]) != bool(b[i, j]):
                n += 1
    return n


class TestEpeReport:
    def test_perfect_print(self):
        rep = metrics.EpeReport.from_distances([1, 2], [0.0, 0.5], [True, True], 1.0)
        assert rep.epe_n == 0
        assert rep.epe_d == 0.0

    def test_single_violation(self):
        rep = metrics.EpeReport.from_distances([1], [3.0], [True], 1.0)
        assert rep.epe_n == 1
        assert rep.epe_d == 3.0

    def test_mixed_inner_outer(self):
        rep = metrics.EpeReport.from_distances([1, 2, 3], [0.5, -2.0, 4.0],
                                               [True, True, True], 1.0)
        assert rep.epe_n == 2
        assert rep.epe_d == 6.0

    def test_epe_d_lower_bound(self):
        rep = metrics.EpeReport.from_distances([1, 2, 3], [1.5, -2.0, 4.0],
                                               [True] * 3, 1.0)
        assert rep.epe_d >= rep.epe_n * rep.threshold_nm


class TestPvb:
    def test_equal_grids(self):
        g = np.ones((10, 10), dtype=bool)
        assert metrics.pvb(g, g).value == 0

    def test_all_ones_vs_zeros(self):
        assert metrics.pvb(np.ones((10, 10), dtype=bool),
                           np.zeros((10, 10), dtype=bool)).value == 100

    def test_symmetry_and_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random((32, 32)) > 0.5
        b = rng.random((32, 32)) > 0.5
        assert metrics.pvb(a, b).value == metrics.pvb(b, a).value == xor_count_loop(a, b)

    def test_nested_popcount_difference(self):
        rng = np.random.default_rng(4)
        small = rng.random((24, 24)) > 0.7
        big = small | (rng.random((24, 24)) > 0.8)
        assert metrics.pvb(big, small).value == int(big.sum()) - int(small.sum())

    def test_dim_mismatch(self):
        with pytest.raises(metrics.MetricError):
            metrics.pvb(np.zeros((4, 4), bool), np.zeros((4, 5), bool))


class TestOpcLoss:
    def test_perfect(self):
        target = np.zeros((8, 8), dtype=bool)
        rep = metrics.EpeReport.from_distances([], [], [], 1.0)
        loss = metrics.opc_loss(target, target, rep, metrics.PvBand(0),
                                metrics.LossWeights())
        assert loss.total == 0.0

    def test_weighted_sum(self):
        printed = np.zeros((8, 8), dtype=bool)
        target = printed.copy()
        target.ravel()[:10] = True  # l2 = 10
        rep = metrics.EpeReport.from_distances([1, 2], [2.0, -3.0], [True] * 2, 1.0)
        loss = metrics.opc_loss(printed, target, rep, metrics.PvBand(5),
                                metrics.LossWeights(1.0, 100.0, 1.0))
        assert loss.total == 10 + 100 * 2 + 5  # 215

    def test_beta_linearity(self):
        printed = np.zeros((8, 8), dtype=bool)
        rep = metrics.EpeReport.from_distances([1], [5.0], [True], 1.0)
        l1 = metrics.opc_loss(printed, printed, rep, metrics.PvBand(0),
                              metrics.LossWeights(beta=100.0))
        l2 = metrics.opc_loss(printed, printed, rep, metrics.PvBand(0),
                              metrics.LossWeights(beta=200.0))
        assert l2.total == 2 * l1.total

    def test_distance_term_switch(self):
        printed = np.zeros((8, 8), dtype=bool)
        rep = metrics.EpeReport.from_distances([1, 2], [2.0, -3.0], [True] * 2, 1.0)
        loss = metrics.opc_loss(printed, printed, rep, metrics.PvBand(0),
                                metrics.LossWeights(), epe_loss_term="distance")
        assert loss.epe_term == 5.0


class TestRatioTable:
    def test_published_rows_round_to_2_decimals(self):
        baseline = {"pvb": 53328.0, "epe_n": 119.70, "epe_d": 693.10}
        variants = {
            "opc+llm": {"pvb": 51271.0, "epe_n": 107.00, "epe_d": 561.70},
            "opc+rl": {"pvb": 50060.0, "epe_n": 105.60, "epe_d": 525.90},
        }
        rows = {r.metric: r for r in metrics.ratio_table(baseline, variants)}
        assert [c[2] for c in rows["pvb"].variants] == ["0.96", "0.94"]
        assert [c[2] for c in rows["epe_n"].variants] == ["0.89", "0.88"]
        assert [c[2] for c in rows["epe_d"].variants] == ["0.81", "0.76"]

    def test_identical_rows_ratio_one(self):
        rows = metrics.ratio_table({"m": 5.0}, {"v": {"m": 5.0}})
        assert rows[0].variants[0][2] == "1.00"

    def test_zero_baseline_flagged(self):
        rows = metrics.ratio_table({"m": 0.0}, {"v": {"m": 3.0}})
        assert rows[0].variants[0][2] == "n/a"

    def test_missing_metric_rejected(self):
        with pytest.raises(metrics.MetricError):
            metrics.ratio_table({"m": 1.0}, {"v": {}})


class TestGuardBand:
    def test_interior_slicing(self):
        g = np.ones((64, 64), dtype=bool)
        inner = metrics.interior(g, 100, 4)
        assert inner.shape == (14, 14)

    def test_epe_report_excludes_guard_points(self):
        clip = synth_clip(0)
        placed = place_control_points(clip, FragmentPolicy())
        cfg = litho.LithoConfig()
        mask = rasterize(clip, cfg.pixel_nm).astype(float)
        aerial = litho.simulate(mask, cfg).aerial
        rep = metrics.epe_evaluate(placed, aerial, cfg, metrics.MetricsConfig())
        for pid in rep.point_ids:
            x, y = placed.point_position(placed.point_by_id(pid))
            assert 100 <= x <= clip.width_nm - 100
            assert 100 <= y <= clip.height_nm - 100


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pvb_random_grids_match_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16)) > 0.5
    b = rng.random((16, 16)) > 0.5
    assert metrics.pvb(a, b).value == xor_count_loop(a, b)
