import numpy as np
import pytest

from opcrecipe import litho
from opcrecipe.geometry import LayoutClip, Polygon, rasterize, rasterize_coverage


def direct_conv_at(mask, kernel, i, j):
    """Brute-force zero-padded convolution at one pixel (independent oracle)."""
    k = kernel.array
    r = k.shape[0] // 2
    acc = 0.0
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            ii, jj = i + di, j + dj
            if 0 <= ii < mask.shape[0] and 0 <= jj < mask.shape[1]:
                acc += mask[ii, jj] * k[r + di, r + dj]
    return acc


class TestKernel:
    def test_sums_to_one(self):
        k = litho.make_kernel(24, 4)
        assert abs(k.array.sum() - 1.0) < 1e-12

    def test_rot90_symmetric(self):
        k = litho.make_kernel(24, 4)
        assert np.allclose(k.array, np.rot90(k.array), atol=0)

    def test_truncation_side(self):
        assert litho.make_kernel(24, 4).side == 37  # 2*ceil(3*6)+1

    def test_sigma_below_pixel_rejected(self):
        with pytest.raises(litho.ConfigError):
            litho.make_kernel(2, 4)


@pytest.fixture(scope="module")
def square_mask():
    clip = LayoutClip("sq", 512, 512,
                      (Polygon([(200, 200), (200, 300), (300, 300), (300, 200)]),))
    return rasterize(clip, 4).astype(float), clip


class TestSimulate:
    def test_zero_mask_prints_nothing(self):
        cfg = litho.LithoConfig()
        res = litho.simulate(np.zeros((64, 64)), cfg)
        assert not res.printed.any()

    def test_full_mask_interior_aerial_one(self):
        cfg = litho.LithoConfig()
        res = litho.simulate(np.ones((128, 128)), cfg)
        assert abs(res.aerial[64, 64] - 1.0) < 1e-12
        assert res.printed[64, 64]

    def test_linearity_in_dose(self, square_mask):
        mask, _ = square_mask
        cfg = litho.LithoConfig()
        a1 = litho.simulate(mask, cfg, dose=1.0).aerial
        a15 = litho.simulate(mask, cfg, dose=1.5).aerial
        assert np.max(np.abs(a15 - 1.5 * a1)) < 1e-12

    def test_shift_equivariance(self):
        cfg = litho.LithoConfig()
        rng = np.random.default_rng(0)
        mask = np.zeros((128, 128))
        mask[40:70, 40:60] = rng.random((30, 20))
        shifted = np.roll(mask, (5, 7), axis=(0, 1))
        a = litho.simulate(mask, cfg).aerial
        b = litho.simulate(shifted, cfg).aerial
        assert np.allclose(np.roll(a, (5, 7), axis=(0, 1))[20:100, 20:100],
                           b[20:100, 20:100], atol=1e-12)

    def test_resist_strictly_inside_unit_interval(self, square_mask):
        mask, _ = square_mask
        res = litho.simulate(mask, litho.LithoConfig())
        assert res.resist.min() > 0.0
        assert res.resist.max() < 1.0

    def test_matches_direct_convolution(self, square_mask):
        mask, _ = square_mask
        cfg = litho.LithoConfig()
        kernel = litho.make_kernel(cfg.kernel_sigma_nm, cfg.pixel_nm)
        aerial = litho.simulate(mask, cfg).aerial
        for (i, j) in [(50, 50), (63, 63), (75, 50), (10, 10)]:
            assert aerial[i, j] == pytest.approx(direct_conv_at(mask, kernel, i, j),
                                                 abs=1e-12)

    def test_corner_rounding_on_square(self, square_mask):
        # 100x100 nm isolated square: corner pixels of the target do not print
        # while edge-midpoint pixels do (brute-force conv confirms the aerial).
        mask, clip = square_mask
        cfg = litho.LithoConfig()
        res = litho.simulate(mask, cfg)
        target = rasterize(clip, 4)
        corner_cells = [(50, 50), (50, 74), (74, 50), (74, 74)]
        kernel = litho.make_kernel(cfg.kernel_sigma_nm, cfg.pixel_nm)
        for (i, j) in corner_cells:
            assert target[i, j]
            assert not res.printed[i, j]
            assert direct_conv_at(mask, kernel, i, j) < cfg.resist_threshold
        assert res.printed[62, 62]  # center prints

    def test_nonpositive_dose_rejected(self):
        with pytest.raises(litho.ConfigError):
            litho.simulate(np.zeros((8, 8)), litho.LithoConfig(), dose=0.0)


class TestProcessCorners:
    def test_zero_delta_collapses(self, square_mask):
        mask, _ = square_mask
        cfg = litho.LithoConfig(dose_delta=1e-9)
        w = litho.process_corners(mask, cfg)
        assert np.array_equal(w.z_max, w.z_min)

    def test_dose_monotone_nesting(self):
        cfg = litho.LithoConfig()
        rng = np.random.default_rng(1)
        for _ in range(5):
            mask = (rng.random((96, 96)) > 0.6).astype(float)
            w = litho.process_corners(mask, cfg)
            assert not (w.z_min & ~w.z_nominal).any()
            assert not (w.z_nominal & ~w.z_max).any()

    def test_popcount_ordering(self, square_mask):
        mask, _ = square_mask
        w = litho.process_corners(mask, litho.LithoConfig())
        assert w.z_min.sum() <= w.z_max.sum()

    def test_matches_simulate_bitwise(self, square_mask):
        mask, _ = square_mask
        cfg = litho.LithoConfig()
        w = litho.process_corners(mask, cfg)
        hi = litho.simulate(mask, cfg, dose=1.0 + cfg.dose_delta)
        assert np.array_equal(w.z_max, hi.printed)


class TestEdgeCrossing:
    def _ramp_aerial(self, slope_per_nm, value_at, x0_nm, n=64, pixel=4):
        # aerial varying linearly along x: f(x) = value_at + slope*(x - x0)
        xs = (np.arange(n) + 0.5) * pixel
        row = value_at + slope_per_nm * (xs - x0_nm)
        return np.tile(row, (n, 1))

    def test_point_exactly_on_crossing(self):
        cfg = litho.LithoConfig()
        aerial = self._ramp_aerial(-0.01, cfg.resist_threshold, 100.0)
        c = litho.edge_crossing_distance(aerial, cfg, (100.0, 128.0), (1.0, 0.0))
        assert c.resolved
        assert abs(c.distance_nm) < 1e-9

    def test_linear_ramp_crossing_outside(self):
        cfg = litho.LithoConfig()
        # printed at the point, crossing 3.5 nm further out
        aerial = self._ramp_aerial(-0.01, cfg.resist_threshold + 0.035, 100.0)
        c = litho.edge_crossing_distance(aerial, cfg, (100.0, 128.0), (1.0, 0.0))
        assert c.resolved
        assert c.distance_nm == pytest.approx(3.5, abs=0.1)

    def test_inner_crossing_negative(self):
        cfg = litho.LithoConfig()
        aerial = self._ramp_aerial(-0.01, cfg.resist_threshold - 0.035, 100.0)
        c = litho.edge_crossing_distance(aerial, cfg, (100.0, 128.0), (1.0, 0.0))
        assert c.resolved
        assert c.distance_nm == pytest.approx(-3.5, abs=0.1)

    def test_unresolved_deep_inside(self):
        cfg = litho.LithoConfig()
        aerial = np.full((128, 128), 0.9)
        c = litho.edge_crossing_distance(aerial, cfg, (256.0, 256.0), (1.0, 0.0))
        assert not c.resolved
        assert c.distance_nm == cfg.crossing_range_nm

    def test_profile_matches_scalar(self):
        cfg = litho.LithoConfig()
        clip = LayoutClip("sq", 512, 512,
                          (Polygon([(200, 200), (200, 300), (300, 300), (300, 200)]),))
        mask = rasterize_coverage(clip.polygons, 512, 512, 4)
        aerial = litho.simulate(mask, cfg).aerial
        pts = np.array([[200.0, 250.0], [250.0, 300.0], [250.0, 250.0]])
        nrm = np.array([[-1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        dist, ok = litho.crossing_profile(aerial, cfg, pts, nrm)
        for k in range(3):
            c = litho.edge_crossing_distance(aerial, cfg, tuple(pts[k]), tuple(nrm[k]))
            assert c.distance_nm == dist[k]
            assert c.resolved == ok[k]


class TestGridIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        grid = rng.random((17, 23))
        path = tmp_path / "g.grid"
        litho.write_grid(path, grid, 4)
        back, pixel = litho.read_grid(path)
        assert pixel == 4
        assert np.array_equal(back, grid)
