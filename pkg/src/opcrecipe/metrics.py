"""EPE/PVB evaluation, the composite OPC loss, and ratio reporting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import litho
from .geometry import PlacedClip, PointKind


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 100.0
    gamma_w: float = 1.0  # PVB weight; distinct from the RL discount factor


@dataclass(frozen=True)
class MetricsConfig:
    epe_threshold_nm: float = 1.0
    guard_nm: int = 100          # border band excluded from all metrics
    epe_loss_term: str = "count"  # "count" (epe_n) or "distance" (epe_d)
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self):
        problems = []
        if self.epe_threshold_nm <= 0:
            problems.append("epe_threshold_nm must be positive")
        if self.guard_nm < 0:
            problems.append("guard_nm must be >= 0")
        if self.epe_loss_term not in ("count", "distance"):
            problems.append("epe_loss_term must be 'count' or 'distance'")
        if problems:
            raise MetricError("; ".join(problems))
        return self


@dataclass(frozen=True)
class EpeReport:
    point_ids: tuple
    distances: tuple          # signed nm, per point
    resolved: tuple
    threshold_nm: float
    epe_n: int
    epe_d: float

    @staticmethod
    def from_distances(point_ids, distances, resolved, threshold_nm: float) -> "EpeReport":
        """Count and sum violations: |d| strictly greater than the threshold.

        Inner (negative) and outer (positive) violations both count; the sum
        runs in point-id order so it is reproducible term for term.
        """
        n = 0
        d_sum = 0.0
        for d in distances:
            if abs(d) > threshold_nm:
                n += 1
                d_sum += abs(d)
        return EpeReport(tuple(point_ids), tuple(float(d) for d in distances),
                         tuple(bool(r) for r in resolved), threshold_nm, n, d_sum)


def in_guard_band(pos, width_nm, height_nm, guard_nm) -> bool:
    x, y = pos
    return (x < guard_nm or y < guard_nm
            or x > width_nm - guard_nm or y > height_nm - guard_nm)


def epe_evaluate(placed: PlacedClip, aerial: np.ndarray, litho_cfg: litho.LithoConfig,
                 cfg: MetricsConfig) -> EpeReport:
    """Measure every EPE control point (offset applied) along its host edge's
    outward normal; points inside the border guard band are excluded, and
    unresolved crossings count at the search cap."""
    clip = placed.clip
    pts = []
    ids = []
    normals = []
    for p in placed.epe_points():
        if p.position_arc < -1e-9 or p.position_arc > p.edge_length_nm + 1e-9:
            raise MetricError(f"point {p.id} lies off its host edge")
        pos = placed.point_position(p)
        if in_guard_band(pos, clip.width_nm, clip.height_nm, cfg.guard_nm):
            continue
        ids.append(p.id)
        pts.append(pos)
        normals.append(placed.point_normal(p))
    if not ids:
        return EpeReport((), (), (), cfg.epe_threshold_nm, 0, 0.0)
    dist, ok = litho.crossing_profile(aerial, litho_cfg, np.array(pts), np.array(normals))
    return EpeReport.from_distances(ids, dist.tolist(), ok.tolist(), cfg.epe_threshold_nm)


@dataclass(frozen=True)
class PvBand:
    value: int


def pvb(z_max: np.ndarray, z_min: np.ndarray) -> PvBand:
    """Pixel count of the XOR region; equals the squared Euclidean norm of the
    difference for binary grids, and the popcount difference under nesting."""
    if z_max.shape != z_min.shape:
        raise MetricError(f"grid shapes differ: {z_max.shape} vs {z_min.shape}")
    return PvBand(int(np.count_nonzero(z_max != z_min)))


def l2_mismatch(printed: np.ndarray, target: np.ndarray) -> int:
    if printed.shape != target.shape:
        raise MetricError(f"grid shapes differ: {printed.shape} vs {target.shape}")
    return int(np.count_nonzero(printed != target))


@dataclass(frozen=True)
class OpcLoss:
    l2: int
    epe_term: float
    pvb_term: int
    weights: LossWeights

    @property
    def total(self) -> float:
        w = self.weights
        return w.alpha * self.l2 + w.beta * self.epe_term + w.gamma_w * self.pvb_term


def opc_loss(printed_nominal: np.ndarray, target_raster: np.ndarray,
             epe_report: EpeReport, pv_band: PvBand,
             weights: LossWeights, epe_loss_term: str = "count") -> OpcLoss:
    epe_term = float(epe_report.epe_n) if epe_loss_term == "count" else epe_report.epe_d
    return OpcLoss(l2_mismatch(printed_nominal, target_raster), epe_term,
                   pv_band.value, weights)


def interior(grid: np.ndarray, guard_nm: int, pixel_nm: int) -> np.ndarray:
    g = guard_nm // pixel_nm
    if g == 0:
        return grid
    return grid[g:-g, g:-g]


# ---------------------------------------------------------------------------
# Ratio reporting (variant / baseline per metric, 2-decimal rounding)
# ---------------------------------------------------------------------------


def ratio(value: float, baseline: float) -> str:
    if baseline == 0:
        return "n/a"
    return f"{value / baseline:.2f}"


@dataclass(frozen=True)
class RatioRow:
    metric: str
    baseline: float
    variants: tuple  # (name, value, ratio string) per variant


def ratio_table(baseline: dict, variants: dict) -> list:
    """baseline: metric -> value; variants: name -> {metric -> value}."""
    rows = []
    for metric, base in baseline.items():
        cells = []
        for name, vals in variants.items():
            if metric not in vals:
                raise MetricError(f"variant {name!r} is missing metric {metric!r}")
            cells.append((name, vals[metric], ratio(vals[metric], base)))
        rows.append(RatioRow(metric, base, tuple(cells)))
    return rows


METRICS_CSV_COLUMNS = ("clip_id", "variant", "pvb", "epe_n", "epe_d", "l2",
                       "loss_total", "runtime_ms")


def metrics_csv_row(clip_id: str, variant: str, loss: OpcLoss, report: EpeReport,
                    pv_band: PvBand, runtime_ms) -> str:
    # runtime_ms may be "" (deterministic mode keeps metric files byte-stable)
    rt = "" if runtime_ms is None else f"{runtime_ms:.0f}"
    return (f"{clip_id},{variant},{pv_band.value},{report.epe_n},"
            f"{report.epe_d!r},{loss.l2},{loss.total!r},{rt}")
