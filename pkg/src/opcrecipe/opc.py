"""Edge-based iterative OPC engine driven by per-fragment EPE feedback.

Each iteration simulates the current mask, measures signed EPE at every
fragment's measurement point on the *target* edge, and moves the fragment
along its outward normal by -gain * epe (clamped per iteration and in total).
A recipe configures the engine purely through control-point placement.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import litho, metrics
from .geometry import (
    FragmentPolicy,
    GeometryError,
    PlacedClip,
    PointKind,
    apply_fragment_normal_moves,
    rasterize,
    rasterize_coverage,
)


class OpcConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OpcConfig:
    max_iters: int = 20
    gain: float = 0.5
    per_iter_cap_nm: float = 4.0
    stop_epsilon_nm: float = 0.5
    max_total_move_nm: float = 24.0  # shape movement constraint
    fragment_policy: FragmentPolicy = field(default_factory=FragmentPolicy)

    def validate(self):
        problems = []
        if self.max_iters < 1:
            problems.append("max_iters must be >= 1")
        if not (0.0 < self.gain <= 1.0):
            problems.append("gain must be in (0, 1]")
        if self.per_iter_cap_nm < 1:
            problems.append("per_iter_cap_nm must be >= 1")
        if self.stop_epsilon_nm <= 0:
            problems.append("stop_epsilon_nm must be positive")
        if self.max_total_move_nm < self.per_iter_cap_nm:
            problems.append("max_total_move_nm must be >= per_iter_cap_nm")
        try:
            self.fragment_policy.validate()
        except GeometryError as exc:
            problems.append(str(exc))
        if problems:
            raise OpcConfigError("; ".join(problems))
        return self


@dataclass(frozen=True)
class IterationStats:
    loss: metrics.OpcLoss
    epe_abs_max: float
    step_abs_max: float
    epe_d: float


@dataclass(frozen=True)
class OpcResult:
    polygons: tuple          # corrected mask polygons
    iterations: int
    epe_report: metrics.EpeReport
    pv_band: metrics.PvBand
    loss: metrics.OpcLoss
    trace: tuple             # IterationStats, one per iteration used
    converged: bool
    aborted: bool
    displacements: tuple     # final per-fragment normal moves, nm
    runtime_ms: float = 0.0


def _fragment_layout(placed: PlacedClip):
    """Flat fragment spans per polygon plus each fragment's measurement point."""
    spans = []
    meas_pos = []
    meas_nrm = []
    meas_pts = []
    epe_by_frag = {}
    for p in placed.points:
        if p.kind is PointKind.EPE:
            epe_by_frag[(p.polygon_index, p.edge_index, p.fragment_index)] = p
    for poly_idx, fp in enumerate(placed.fragmented):
        per_edge = placed.effective_spans(poly_idx)
        spans.append(per_edge)
        for e in fp.polygon.edges:
            for k in range(len(per_edge[e.index])):
                pt = epe_by_frag[(poly_idx, e.index, k)]
                meas_pts.append(pt)
                meas_pos.append(placed.point_position(pt))
                meas_nrm.append(placed.point_normal(pt))
    return (spans, np.array(meas_pos, dtype=np.float64),
            np.array(meas_nrm, dtype=np.float64), meas_pts)


def build_mask(placed: PlacedClip, spans, displacements) -> tuple:
    """Corrected mask polygons from cumulative per-fragment displacements."""
    polys = []
    di = 0
    for poly_idx, fp in enumerate(placed.fragmented):
        per_edge = spans[poly_idx]
        frags = [(e.index, s, t) for e in fp.polygon.edges for (s, t) in per_edge[e.index]]
        moves = [float(displacements[di + k]) for k in range(len(frags))]
        di += len(frags)
        poly, _ = apply_fragment_normal_moves(fp.polygon, frags, moves, validate=False)
        polys.append(poly)
    return tuple(polys)


def run_opc(placed: PlacedClip, litho_cfg: litho.LithoConfig, opc_cfg: OpcConfig,
            metrics_cfg: metrics.MetricsConfig) -> OpcResult:
    """Deterministic feedback loop; stops when every measured |epe| falls at
    or below stop_epsilon_nm or after max_iters iterations."""
    opc_cfg.validate()
    litho_cfg.validate()
    t0 = time.perf_counter()
    clip = placed.clip
    spans, meas_pos, meas_nrm, meas_pts = _fragment_layout(placed)
    n_frag = len(meas_pos)
    disp = np.zeros(n_frag, dtype=np.float64)
    target = rasterize(clip, litho_cfg.pixel_nm)
    guard = metrics_cfg.guard_nm
    pixel = litho_cfg.pixel_nm
    # metric points = the guard-band-filtered subset of the feedback points
    metric_rows = [i for i, pt in enumerate(meas_pts)
                   if not metrics.in_guard_band(tuple(meas_pos[i]), clip.width_nm,
                                                clip.height_nm, guard)]

    trace = []
    aborted = False
    converged = False
    window = None
    report = None
    iterations = 0
    for it in range(1, opc_cfg.max_iters + 1):
        iterations = it
        try:
            mask_polys = build_mask(placed, spans, disp)
        except GeometryError:
            aborted = True
            iterations = it - 1
            break
        cov = rasterize_coverage(mask_polys, clip.width_nm, clip.height_nm, pixel)
        aerial = litho_cfg.dose_nominal * litho._convolve_unit(cov, litho._kernel_for(litho_cfg))
        window = litho.corners_from_aerial(aerial, litho_cfg)

        d, resolved = litho.crossing_profile(aerial, litho_cfg, meas_pos, meas_nrm)
        report = metrics.EpeReport.from_distances(
            [meas_pts[i].id for i in metric_rows], [float(d[i]) for i in metric_rows],
            [bool(resolved[i]) for i in metric_rows], metrics_cfg.epe_threshold_nm)
        pv = metrics.pvb(metrics.interior(window.z_max, guard, pixel),
                         metrics.interior(window.z_min, guard, pixel))
        loss = metrics.opc_loss(metrics.interior(window.z_nominal, guard, pixel),
                                metrics.interior(target, guard, pixel),
                                report, pv, metrics_cfg.weights,
                                metrics_cfg.epe_loss_term)
        epe_abs_max = float(np.max(np.abs(d))) if n_frag else 0.0
        if epe_abs_max <= opc_cfg.stop_epsilon_nm:
            trace.append(IterationStats(loss, epe_abs_max, 0.0, report.epe_d))
            converged = True
            break
        step = 0.0
        if it < opc_cfg.max_iters:
            raw = np.clip(-opc_cfg.gain * d, -opc_cfg.per_iter_cap_nm, opc_cfg.per_iter_cap_nm)
            new_disp = np.clip(disp + raw, -opc_cfg.max_total_move_nm, opc_cfg.max_total_move_nm)
            step = float(np.max(np.abs(new_disp - disp))) if n_frag else 0.0
            disp = new_disp
        trace.append(IterationStats(loss, epe_abs_max, step, report.epe_d))

    if window is None:  # first build failed; report the unperturbed target
        mask_polys = tuple(fp.polygon for fp in placed.fragmented)
        cov = rasterize_coverage(mask_polys, clip.width_nm, clip.height_nm, pixel)
        window = litho.corners_from_aerial(
            litho_cfg.dose_nominal * litho._convolve_unit(cov, litho._kernel_for(litho_cfg)),
            litho_cfg)
        report = metrics.epe_evaluate(placed, window.aerial_nominal, litho_cfg, metrics_cfg)
        iterations = 1
        trace.append(IterationStats(
            metrics.opc_loss(metrics.interior(window.z_nominal, guard, pixel),
                             metrics.interior(target, guard, pixel),
                             report,
                             metrics.pvb(metrics.interior(window.z_max, guard, pixel),
                                         metrics.interior(window.z_min, guard, pixel)),
                             metrics_cfg.weights, metrics_cfg.epe_loss_term),
            0.0, 0.0, report.epe_d))

    final = trace[-1]
    pv = metrics.pvb(metrics.interior(window.z_max, guard, pixel),
                     metrics.interior(window.z_min, guard, pixel))
    runtime_ms = (time.perf_counter() - t0) * 1000.0
    return OpcResult(mask_polys, iterations, report, pv, final.loss, tuple(trace),
                     converged, aborted, tuple(disp.tolist()), runtime_ms)


# ---------------------------------------------------------------------------
# Recipe application: rule classes -> tangential point offsets
# ---------------------------------------------------------------------------


class RecipeApplyError(ValueError):
    pass


def apply_recipe_points(placed: PlacedClip, rules, pool, c_classes: int,
                        labeler=None) -> PlacedClip:
    """Label every point, match it against the per-kind rule set, and move it
    tangentially by class_to_offset(class).  Unmatched points default to
    class 0 (no movement)."""
    from . import features as feat
    from . import recipes as rec

    if labeler is None:
        labeler = lambda pl, pt: feat.label_point(pl, pt, pool)
    known = {f.name for f in pool.features} | set(feat.TYPE_FEATURES)
    for rule in rules:
        for lit in rule.condition:
            name = lit[4:] if lit.startswith("not ") else lit
            if name not in known:
                raise RecipeApplyError(f"rule references unknown feature {name!r}")
    by_kind = {"EPE": [r for r in rules if r.type == "EPE"],
               "FRAG": [r for r in rules if r.type == "FRAG"]}
    offsets = {}
    for pt in placed.points:
        vec = labeler(placed, pt)
        cls = rec.apply_rules(by_kind[pt.kind.value], vec) if by_kind[pt.kind.value] else 0
        offsets[pt.id] = feat.class_to_offset(cls, c_classes)
    return placed.with_offsets(offsets)


def apply_movement_records(placed: PlacedClip, records, c_classes: int) -> PlacedClip:
    """Offsets straight from stage-1 movement records (the OPC+RL variant)."""
    from . import features as feat

    offsets = {r.point_id: feat.class_to_offset(r.movement_class, c_classes) for r in records}
    return placed.with_offsets(offsets)
