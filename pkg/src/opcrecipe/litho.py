"""Forward lithography model: Gaussian aerial image, logistic resist,
binary printed patterns at nominal and +/-2% dose corners.

The optical model is a normalized isotropic Gaussian kernel (square-truncated
at 3 sigma) convolved with an area-coverage mask raster under zero padding;
dose scales aerial intensity multiplicatively.  This keeps every quantity
brute-force checkable while still producing corner rounding, line-end pullback
and proximity effects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LithoConfig:
    kernel_sigma_nm: float = 24.0
    resist_threshold: float = 0.5
    resist_steepness: float = 50.0
    dose_nominal: float = 1.0
    dose_delta: float = 0.02
    pixel_nm: int = 4
    crossing_range_nm: float = 200.0

    def validate(self):
        problems = []
        if self.kernel_sigma_nm < self.pixel_nm:
            problems.append("kernel_sigma_nm must be >= pixel_nm")
        if not (0.0 < self.resist_threshold < 1.0):
            problems.append("resist_threshold must be in (0, 1)")
        if self.resist_steepness <= 0:
            problems.append("resist_steepness must be positive")
        if not (0.0 < self.dose_delta < 0.1):
            problems.append("dose_delta must be in (0, 0.1)")
        if self.pixel_nm < 1:
            problems.append("pixel_nm must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))
        return self


@dataclass(frozen=True)
class Kernel:
    array: np.ndarray  # 2-D, sums to 1
    vec: np.ndarray    # 1-D factor; array == outer(vec, vec) / sum
    sigma_nm: float
    pixel_nm: int

    @property
    def side(self) -> int:
        return self.array.shape[0]


def make_kernel(sigma_nm: float, pixel_nm: int) -> Kernel:
    """Odd-sized isotropic Gaussian, truncated at 3 sigma, entries summing to 1."""
    if sigma_nm < pixel_nm:
        raise ConfigError(f"sigma {sigma_nm} nm must be >= pixel {pixel_nm} nm")
    sigma_px = sigma_nm / pixel_nm
    radius = int(math.ceil(3.0 * sigma_px))
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(offs ** 2) / (2.0 * sigma_px ** 2))
    arr = np.outer(g, g)
    arr /= arr.sum()
    return Kernel(arr, g / g.sum(), sigma_nm, pixel_nm)


_kernel_cache: dict = {}


def _kernel_for(cfg: LithoConfig) -> Kernel:
    key = (cfg.kernel_sigma_nm, cfg.pixel_nm)
    k = _kernel_cache.get(key)
    if k is None:
        k = _kernel_cache[key] = make_kernel(cfg.kernel_sigma_nm, cfg.pixel_nm)
    return k


@dataclass(frozen=True)
class LithoResult:
    aerial: np.ndarray   # >= 0
    resist: np.ndarray   # strictly inside (0, 1)
    printed: np.ndarray  # bool, aerial >= resist_threshold


_fft_cache: dict = {}


def _convolve_unit(mask: np.ndarray, kernel: Kernel) -> np.ndarray:
    """Zero-padded convolution with the Gaussian at dose 1 (cached-FFT)."""
    m = np.asarray(mask, dtype=np.float64)
    ny, nx = m.shape
    ky, kx = kernel.array.shape
    key = (ny, nx, kernel.sigma_nm, kernel.pixel_nm)
    entry = _fft_cache.get(key)
    if entry is None:
        fy = sfft.next_fast_len(ny + ky - 1)
        fx = sfft.next_fast_len(nx + kx - 1)
        kpad = np.zeros((fy, fx))
        kpad[:ky, :kx] = kernel.array
        entry = _fft_cache[key] = (sfft.rfft2(kpad), (fy, fx))
    kf, (fy, fx) = entry
    mpad = np.zeros((fy, fx))
    mpad[:ny, :nx] = m
    full = sfft.irfft2(sfft.rfft2(mpad) * kf, s=(fy, fx))
    ry, rx = (ky - 1) // 2, (kx - 1) // 2
    return np.maximum(full[ry:ry + ny, rx:rx + nx], 0.0)


_TINY = np.nextafter(0.0, 1.0)
_ALMOST_ONE = np.nextafter(1.0, 0.0)


def simulate(mask: np.ndarray, cfg: LithoConfig, dose: float = 1.0) -> LithoResult:
    """Aerial = dose * (mask conv kernel); resist = logistic; printed = aerial >= T_r."""
    if dose <= 0:
        raise ConfigError("dose must be positive")
    aerial = dose * _convolve_unit(mask, _kernel_for(cfg))
    with np.errstate(over="ignore"):
        resist = 1.0 / (1.0 + np.exp(-cfg.resist_steepness * (aerial - cfg.resist_threshold)))
    resist = np.clip(resist, _TINY, _ALMOST_ONE)
    printed = aerial >= cfg.resist_threshold
    return LithoResult(aerial, resist, printed)


@dataclass(frozen=True)
class ProcessWindow:
    aerial_nominal: np.ndarray
    z_nominal: np.ndarray
    z_max: np.ndarray
    z_min: np.ndarray


def process_corners(mask: np.ndarray, cfg: LithoConfig) -> ProcessWindow:
    """Printed grids at dose 1, 1+delta, 1-delta; z_min within z_nom within z_max."""
    base = _convolve_unit(mask, _kernel_for(cfg))
    t = cfg.resist_threshold
    z_nom = (cfg.dose_nominal * base) >= t
    z_max = ((cfg.dose_nominal + cfg.dose_delta) * base) >= t
    z_min = ((cfg.dose_nominal - cfg.dose_delta) * base) >= t
    return ProcessWindow(cfg.dose_nominal * base, z_nom, z_max, z_min)


def corners_from_aerial(aerial_nominal: np.ndarray, cfg: LithoConfig) -> ProcessWindow:
    """Process corners reusing an existing nominal-dose aerial image."""
    t = cfg.resist_threshold
    scale_hi = (cfg.dose_nominal + cfg.dose_delta) / cfg.dose_nominal
    scale_lo = (cfg.dose_nominal - cfg.dose_delta) / cfg.dose_nominal
    return ProcessWindow(
        aerial_nominal,
        aerial_nominal >= t,
        (scale_hi * aerial_nominal) >= t,
        (scale_lo * aerial_nominal) >= t,
    )


# ---------------------------------------------------------------------------
# Sub-pixel contour crossing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Crossing:
    distance_nm: float
    resolved: bool


def _bilinear(grid: np.ndarray, px: np.ndarray, py: np.ndarray, pixel_nm: float) -> np.ndarray:
    """Sample grid (cell centers at (i+0.5)*pixel) at nm positions, clamped
    to the border cells (zero-gradient extension)."""
    ny, nx = grid.shape
    fx = np.clip(px / pixel_nm - 0.5, 0.0, nx - 1.0)
    fy = np.clip(py / pixel_nm - 0.5, 0.0, ny - 1.0)
    ix = np.clip(fx.astype(np.int64), 0, nx - 2)
    iy = np.clip(fy.astype(np.int64), 0, ny - 2)
    tx = fx - ix
    ty = fy - iy
    v00 = grid[iy, ix]
    v01 = grid[iy, ix + 1]
    v10 = grid[iy + 1, ix]
    v11 = grid[iy + 1, ix + 1]
    top = v00 * (1.0 - tx) + v01 * tx
    bot = v10 * (1.0 - tx) + v11 * tx
    return top * (1.0 - ty) + bot * ty


def crossing_profile(aerial: np.ndarray, cfg: LithoConfig,
                     points: np.ndarray, normals: np.ndarray):
    """Signed distance along each outward normal to the first resist-threshold
    crossing of the bilinearly interpolated aerial image.

    Positive means the printed contour lies outside the target edge.  Points
    whose profile never crosses within crossing_range_nm get the signed range
    and resolved=False.  Sampling steps by one pixel with linear root-finding
    between the bracketing samples.
    """
    pts = np.asarray(points, dtype=np.float64)
    nrm = np.asarray(normals, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    step = float(cfg.pixel_nm)
    n_steps = int(math.ceil(cfg.crossing_range_nm / step))
    t = cfg.resist_threshold
    s = np.arange(0, n_steps + 1, dtype=np.float64) * step  # (K+1,)

    f0 = _bilinear(aerial, pts[:, 0], pts[:, 1], step)
    printed0 = f0 >= t
    dirsign = np.where(printed0, 1.0, -1.0)  # outward if printed, else inward

    px = pts[:, 0][:, None] + (dirsign[:, None] * s[None, :]) * nrm[:, 0][:, None]
    py = pts[:, 1][:, None] + (dirsign[:, None] * s[None, :]) * nrm[:, 1][:, None]
    f = _bilinear(aerial, px.ravel(), py.ravel(), step).reshape(px.shape)

    crossed = (f >= t) != printed0[:, None]
    crossed[:, 0] = False
    has = crossed.any(axis=1)
    first = np.argmax(crossed, axis=1)
    first = np.where(has, first, 1)
    rows = np.arange(len(pts))
    f_hi = f[rows, first]
    f_lo = f[rows, first - 1]
    denom = f_hi - f_lo
    frac = np.where(denom != 0.0, (t - f_lo) / np.where(denom == 0.0, 1.0, denom), 0.0)
    s_star = (first - 1 + frac) * step
    dist = np.where(has, dirsign * s_star, dirsign * cfg.crossing_range_nm)
    return dist, has


def edge_crossing_distance(aerial: np.ndarray, cfg: LithoConfig,
                           point, direction) -> Crossing:
    """Scalar crossing along +/-direction from one point; see crossing_profile."""
    d, ok = crossing_profile(aerial, cfg,
                             np.array([point], dtype=np.float64),
                             np.array([direction], dtype=np.float64))
    return Crossing(float(d[0]), bool(ok[0]))


# ---------------------------------------------------------------------------
# Portable float-grid debug dump
# ---------------------------------------------------------------------------


def write_grid(path, grid: np.ndarray, pixel_nm: int):
    g = np.asarray(grid, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"GRID {g.shape[0]} {g.shape[1]} {pixel_nm}\n")
        for row in g:
            fh.write(" ".join(repr(v) for v in row) + "\n")


def read_grid(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "GRID":
            raise ConfigError(f"{path}: not a float-grid file")
        ny, nx, pixel = int(header[1]), int(header[2]), int(header[3])
        data = np.loadtxt(fh, dtype=np.float64).reshape(ny, nx)
    return data, pixel
