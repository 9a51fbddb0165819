"""Binary feature pool over control points, movement-class binning, and the
point-label record format.

Every pool feature is realized as a deterministic geometric predicate so the
downstream tree/recipe machinery never depends on a live annotation service.
Distance semantics: "near" <= 100 nm, "far" in (100, 500] nm, a jog is a
boundary step of <= 40 nm, and a path is "long" from 400 nm.  Directional
"has polygon" probes ray-cast from just outside the host edge and count any
solid ahead, the host polygon's own distant parts included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import (
    ControlPoint,
    CornerKind,
    PlacedClip,
    PointKind,
    classify_corners,
    detect_jogs,
)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureThresholds:
    near_nm: float = 100.0
    far_nm: float = 500.0
    jog_nm: float = 40.0
    long_path_nm: float = 400.0
    corridor_nm: float = 40.0


@dataclass(frozen=True)
class FeatureDef:
    name: str
    description: str


@dataclass(frozen=True)
class FeaturePool:
    features: tuple
    thresholds: FeatureThresholds = field(default_factory=FeatureThresholds)

    def names(self) -> list:
        return [f.name for f in self.features]

    def validate(self):
        names = self.names()
        if len(names) != len(set(names)):
            raise FeatureError("feature names must be unique within a pool")
        return self


_BUILTIN = [
    ("near_jog", "in the near distance, there is a jog on that edge where it is located"),
    ("face_jog", "there is a jog facing the point"),
    ("on_jog_long_edge", "it is on the jog, but on the long edge of the jog"),
    ("on_jog_short_edge", "it is on the jog, but on the short edge of the jog"),
    ("on_start_corner_seg", "it is on the corner start segment by clockwise"),
    ("on_end_corner_seg", "it is on the corner end segment by clockwise"),
    ("near_hor_dir_has_polygon", "in the near horizontal direction, there are polygons facing on that edge where it is located, but not connected on edge"),
    ("far_hor_dir_has_polygon", "in the far horizontal direction, there are polygons facing on that edge where it is located, but not connected on edge"),
    ("near_ver_dir_has_polygon", "in the near vertical direction, there are polygons facing on that edge where it is located, but not connected on edge"),
    ("far_ver_dir_has_polygon", "in the far vertical direction, there are polygons facing on that edge where it is located, but not connected on edge"),
    ("on_horizontal_edge", "the point is located on a horizontal edge"),
    ("on_vertical_edge", "the point is located on a vertical edge"),
    ("near_convex_corner", "there is a convex corner near the point, connected on edge"),
    ("near_concave_corner", "there is a concave corner near the point, connected on edge"),
    ("face_convex_corner", "there is a convex corner facing the point, not connected on edge"),
    ("face_concave_corner", "there is a concave corner facing the point, not connected on edge"),
    ("near_horizontal_edge", "there is a horizontal edge near the point"),
    ("near_vertical_edge", "there is a vertical edge near the point"),
    ("far_horizontal_edge", "there is a horizontal edge far from the point"),
    ("far_vertical_edge", "there is a vertical edge far from the point"),
    ("at_long_path_end", "the point is located at the end of a long path"),
    ("at_short_path_end", "the point is located at the end of a short path"),
    ("at_long_path_side", "the point is located at the side of a long path"),
    ("at_short_path_side", "the point is located at the side of a short path"),
]

TYPES_DESCRIPTION = ("CV for the corner vertical, CH for the corner horizontal, "
                     "H for the horizontal but not on corner, V for the vertical "
                     "but not on corner.")

# Implemented spare predicates the self-improvement loop can draw on when it
# runs without a remote annotator.
_RESERVE = [
    ("near_line_end", "there is a line end near the point"),
    ("face_line_end", "there is a line end facing the point across space"),
    ("on_line_end_edge", "the point is located on a line end edge"),
    ("on_short_edge", "the host edge is short"),
    ("on_long_edge", "the host edge is long"),
    ("mid_edge_region", "the point sits in the middle region of its host edge"),
    ("dense_neighborhood", "more than one other polygon lies close to the point"),
    ("near_clip_border", "the point is close to the clip border"),
]


def builtin_pool() -> FeaturePool:
    return FeaturePool(tuple(FeatureDef(n, d) for n, d in _BUILTIN)).validate()


def reserve_features() -> list:
    return [FeatureDef(n, d) for n, d in _RESERVE]


TYPE_FEATURES = ("types_CV", "types_CH", "types_H", "types_V")


@dataclass(frozen=True)
class FeatureVector:
    point_id: int
    kind: str           # "EPE" | "FRAG"
    type_tag: str       # CV | CH | H | V
    values: dict        # feature name -> bool, in pool order

    def expanded(self) -> dict:
        """Booleans with the categorical tag one-hot encoded for tree training."""
        out = {t: (t == f"types_{self.type_tag}") for t in TYPE_FEATURES}
        out.update(self.values)
        return out


# ---------------------------------------------------------------------------
# Movement binning: 2C+1 classes over the +/-40 nm range
# ---------------------------------------------------------------------------


def bin_movement(delta_nm: float, c_classes: int) -> int:
    """Class = clamp(round(delta / step), -C, +C) with step = 40/C and
    half-away-from-zero rounding, so bin(-d) == -bin(d)."""
    if abs(delta_nm) > 40.0 + 1e-9:
        raise FeatureError(f"movement {delta_nm} nm outside the +/-40 nm range")
    step = 40.0 / c_classes
    cls = int(math.floor(abs(delta_nm) / step + 0.5))
    cls = min(cls, c_classes)
    return cls if delta_nm >= 0 else -cls


def class_to_offset(movement_class: int, c_classes: int) -> float:
    return movement_class * (40.0 / c_classes)


@dataclass(frozen=True)
class MovementRecord:
    point_id: int
    kind: str
    sign: str           # "+" | "-"
    distance_nm: float  # 0..40
    movement_class: int

    @staticmethod
    def from_offset(point_id: int, kind: str, offset_nm: float, c_classes: int) -> "MovementRecord":
        cls = bin_movement(offset_nm, c_classes)
        return MovementRecord(point_id, kind, "+" if offset_nm >= 0 else "-",
                              abs(offset_nm), cls)

    def to_json(self) -> dict:
        return {"point_id": self.point_id, "kind": self.kind, "sign": self.sign,
                "distance_nm": self.distance_nm, "class": self.movement_class}

    @staticmethod
    def from_json(obj: dict) -> "MovementRecord":
        return MovementRecord(obj["point_id"], obj["kind"], obj["sign"],
                              obj["distance_nm"], obj["class"])


# ---------------------------------------------------------------------------
# Geometric context shared by the predicates
# ---------------------------------------------------------------------------


class ClipIndex:
    """Precomputed per-clip geometry used by every predicate."""

    def __init__(self, placed: PlacedClip):
        self.placed = placed
        self.polygons = [fp.polygon for fp in placed.fragmented]
        self.corners = [classify_corners(p) for p in self.polygons]
        self.jog_edges = [set(detect_jogs(p)) for p in self.polygons]
        self.v_edges = []  # (x, ylo, yhi)
        self.h_edges = []  # (y, xlo, xhi)
        for poly in self.polygons:
            for e in poly.edges:
                if e.orientation == "V":
                    ylo, yhi = sorted((e.p0[1], e.p1[1]))
                    self.v_edges.append((e.p0[0], ylo, yhi))
                else:
                    xlo, xhi = sorted((e.p0[0], e.p1[0]))
                    self.h_edges.append((e.p0[1], xlo, xhi))

    def first_solid_x(self, ox, oy, sign, lo=0.5, hi=500.0):
        best = None
        for (x, ylo, yhi) in self.v_edges:
            if ylo <= oy < yhi:
                d = (x - ox) * sign
                if lo < d <= hi and (best is None or d < best):
                    best = d
        return best

    def first_solid_y(self, ox, oy, sign, lo=0.5, hi=500.0):
        best = None
        for (y, xlo, xhi) in self.h_edges:
            if xlo <= ox < xhi:
                d = (y - oy) * sign
                if lo < d <= hi and (best is None or d < best):
                    best = d
        return best


def _seg_dist(px, py, a, b) -> float:
    ax, ay = a
    bx, by = b
    if ax == bx:  # vertical
        ylo, yhi = sorted((ay, by))
        dy = max(ylo - py, 0.0, py - yhi)
        return math.hypot(px - ax, dy)
    xlo, xhi = sorted((ax, bx))
    dx = max(xlo - px, 0.0, px - xhi)
    return math.hypot(dx, py - ay)


class _PointContext:
    """Everything a predicate may ask about one control point."""

    def __init__(self, index: ClipIndex, pt: ControlPoint, thr: FeatureThresholds):
        self.index = index
        self.thr = thr
        self.pt = pt
        placed = index.placed
        self.fp = placed.fragmented[pt.polygon_index]
        self.poly = self.fp.polygon
        self.edge = self.poly.edges[pt.edge_index]
        self.pos = placed.point_position(pt)
        self.normal = self.edge.outward_normal
        self.arc = pt.position_arc
        self.n_frags = len(self.fp.fragments_of_edge(pt.edge_index))
        self.corner_segged = self.fp.corner_segmented[pt.edge_index]
        self.kinds = index.corners[pt.polygon_index]
        self.jogs = index.jog_edges[pt.polygon_index]

        px, py = self.pos
        nx, ny = self.normal
        probe = (px + nx, py + ny)  # 1 nm outside the host edge
        if self.edge.orientation == "V":
            self.outward_dist = index.first_solid_x(px, py, nx, hi=thr.far_nm)
            d1 = index.first_solid_y(probe[0], probe[1], 1, hi=thr.far_nm)
            d2 = index.first_solid_y(probe[0], probe[1], -1, hi=thr.far_nm)
            self.tangent_dist = _opt_min(d1, d2)
            self.hor_dist, self.ver_dist = self.outward_dist, self.tangent_dist
        else:
            self.outward_dist = index.first_solid_y(px, py, ny, hi=thr.far_nm)
            d1 = index.first_solid_x(probe[0], probe[1], 1, hi=thr.far_nm)
            d2 = index.first_solid_x(probe[0], probe[1], -1, hi=thr.far_nm)
            self.tangent_dist = _opt_min(d1, d2)
            self.hor_dist, self.ver_dist = self.tangent_dist, self.outward_dist

    def corner_kind_at(self, vertex_index: int) -> CornerKind:
        return self.kinds[vertex_index % len(self.kinds)].kind

    def endpoint_corner_dists(self):
        """(kind, along-edge distance) for the host edge's two endpoint corners."""
        start = (self.corner_kind_at(self.pt.edge_index), self.arc)
        end = (self.corner_kind_at(self.pt.edge_index + 1), self.edge.length - self.arc)
        return [start, end]

    def in_outward_corridor(self, qx, qy):
        """Distance ahead if (qx, qy) sits in front of the point within the
        lateral corridor, else None."""
        px, py = self.pos
        nx, ny = self.normal
        ahead = (qx - px) * nx + (qy - py) * ny
        lateral = abs((qx - px) * ny - (qy - py) * nx)
        if 0.5 < ahead <= self.thr.far_nm and lateral <= self.thr.corridor_nm:
            return ahead
        return None

    def facing_corners(self):
        out = []
        skip = {(self.pt.polygon_index, self.pt.edge_index),
                (self.pt.polygon_index, (self.pt.edge_index + 1) % len(self.poly.vertices))}
        for pi, poly in enumerate(self.index.polygons):
            for ci, v in enumerate(poly.vertices):
                if (pi, ci) in skip:
                    continue
                d = self.in_outward_corridor(v[0], v[1])
                if d is not None:
                    out.append((self.index.corners[pi][ci].kind, d))
        return out

    def edge_distances(self, orientation: str):
        """Distances from the point to every edge of the given orientation,
        the host edge excluded."""
        px, py = self.pos
        dists = []
        for pi, poly in enumerate(self.index.polygons):
            for e in poly.edges:
                if pi == self.pt.polygon_index and e.index == self.pt.edge_index:
                    continue
                if e.orientation == orientation:
                    dists.append(_seg_dist(px, py, e.p0, e.p1))
        return dists

    def jog_connector_info(self):
        """(is_connector, host_is_long_flank, host_is_short_flank)."""
        n = len(self.poly.edges)
        if self.pt.edge_index in self.jogs:
            return True, False, False
        host = self.edge
        for j in self.jogs:
            for flank_idx, other_idx in (((j - 1) % n, (j + 1) % n),
                                         ((j + 1) % n, (j - 1) % n)):
                if flank_idx == host.index:
                    other = self.poly.edges[other_idx]
                    if host.length >= other.length:
                        return False, True, False
                    return False, False, True
        return False, False, False

    def nearest_jog_dist(self):
        px, py = self.pos
        best = None
        for j in self.jogs:
            e = self.poly.edges[j]
            d = _seg_dist(px, py, e.p0, e.p1)
            if best is None or d < best:
                best = d
        return best

    def facing_jog(self):
        for pi, poly in enumerate(self.index.polygons):
            for j in self.index.jog_edges[pi]:
                e = poly.edges[j]
                mx = (e.p0[0] + e.p1[0]) / 2.0
                my = (e.p0[1] + e.p1[1]) / 2.0
                if self.in_outward_corridor(mx, my) is not None:
                    return True
        return False

    def path_info(self):
        """(is_long, at_end, at_side) from the host polygon's bounding box."""
        x0, y0, x1, y1 = self.poly.bbox
        w, h = x1 - x0, y1 - y0
        long_axis = "x" if w >= h else "y"
        length = max(w, h)
        is_long = length >= self.thr.long_path_nm
        host = self.edge
        if long_axis == "x":
            at_side = host.orientation == "H"
            at_end = host.orientation == "V" and host.p0[0] in (x0, x1)
        else:
            at_side = host.orientation == "V"
            at_end = host.orientation == "H" and host.p0[1] in (y0, y1)
        return is_long, at_end, at_side

    def line_end_edges(self):
        """Short edges with two convex corners, across all polygons."""
        out = []
        for pi, poly in enumerate(self.index.polygons):
            kinds = self.index.corners[pi]
            n = len(poly.edges)
            for e in poly.edges:
                if e.length <= 160 and kinds[e.index].kind is CornerKind.CONVEX \
                        and kinds[(e.index + 1) % n].kind is CornerKind.CONVEX:
                    out.append((pi, e))
        return out

    def on_corner_seg(self, which: str) -> bool:
        if not self.corner_segged:
            return False
        fi = self.pt.fragment_index
        if which == "start":
            return fi == 0
        if self.pt.kind is PointKind.EPE:
            return fi == self.n_frags - 1
        return fi == self.n_frags - 2  # last interior boundary touches the end seg


def _opt_min(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def _near(dist, thr: FeatureThresholds) -> bool:
    return dist is not None and dist <= thr.near_nm


def _far(dist, thr: FeatureThresholds) -> bool:
    return dist is not None and thr.near_nm < dist <= thr.far_nm


def _type_tag(ctx: _PointContext) -> str:
    on_corner = ctx.on_corner_seg("start") or ctx.on_corner_seg("end")
    if ctx.edge.orientation == "V":
        return "CV" if on_corner else "V"
    return "CH" if on_corner else "H"


_PREDICATES = {
    "near_jog": lambda c: _near(c.nearest_jog_dist(), c.thr),
    "face_jog": lambda c: c.facing_jog(),
    "on_jog_long_edge": lambda c: c.jog_connector_info()[1],
    "on_jog_short_edge": lambda c: c.jog_connector_info()[0] or c.jog_connector_info()[2],
    "on_start_corner_seg": lambda c: c.on_corner_seg("start"),
    "on_end_corner_seg": lambda c: c.on_corner_seg("end"),
    "near_hor_dir_has_polygon": lambda c: _near(c.hor_dist, c.thr),
    "far_hor_dir_has_polygon": lambda c: _far(c.hor_dist, c.thr),
    "near_ver_dir_has_polygon": lambda c: _near(c.ver_dist, c.thr),
    "far_ver_dir_has_polygon": lambda c: _far(c.ver_dist, c.thr),
    "on_horizontal_edge": lambda c: c.edge.orientation == "H",
    "on_vertical_edge": lambda c: c.edge.orientation == "V",
    "near_convex_corner": lambda c: any(
        k is CornerKind.CONVEX and d <= c.thr.near_nm for k, d in c.endpoint_corner_dists()),
    "near_concave_corner": lambda c: any(
        k is CornerKind.CONCAVE and d <= c.thr.near_nm for k, d in c.endpoint_corner_dists()),
    "face_convex_corner": lambda c: any(k is CornerKind.CONVEX for k, _ in c.facing_corners()),
    "face_concave_corner": lambda c: any(k is CornerKind.CONCAVE for k, _ in c.facing_corners()),
    "near_horizontal_edge": lambda c: any(d <= c.thr.near_nm for d in c.edge_distances("H")),
    "near_vertical_edge": lambda c: any(d <= c.thr.near_nm for d in c.edge_distances("V")),
    "far_horizontal_edge": lambda c: any(
        c.thr.near_nm < d <= c.thr.far_nm for d in c.edge_distances("H")),
    "far_vertical_edge": lambda c: any(
        c.thr.near_nm < d <= c.thr.far_nm for d in c.edge_distances("V")),
    "at_long_path_end": lambda c: c.path_info()[0] and c.path_info()[1],
    "at_short_path_end": lambda c: (not c.path_info()[0]) and c.path_info()[1],
    "at_long_path_side": lambda c: c.path_info()[0] and c.path_info()[2],
    "at_short_path_side": lambda c: (not c.path_info()[0]) and c.path_info()[2],
    # reserve predicates
    "near_line_end": lambda c: any(
        _seg_dist(c.pos[0], c.pos[1], e.p0, e.p1) <= c.thr.near_nm
        for _, e in c.line_end_edges()
        if not (c.pt.edge_index == e.index and c.poly is c.index.polygons[c.pt.polygon_index])),
    "face_line_end": lambda c: any(
        c.in_outward_corridor((e.p0[0] + e.p1[0]) / 2.0, (e.p0[1] + e.p1[1]) / 2.0) is not None
        for _, e in c.line_end_edges()),
    "on_line_end_edge": lambda c: any(
        pi == c.pt.polygon_index and e.index == c.pt.edge_index
        for pi, e in c.line_end_edges()),
    "on_short_edge": lambda c: c.edge.length <= 120,
    "on_long_edge": lambda c: c.edge.length >= 400,
    "mid_edge_region": lambda c: 0.3 <= (c.arc / c.edge.length) <= 0.7,
    "dense_neighborhood": lambda c: sum(
        1 for pi, poly in enumerate(c.index.polygons)
        if pi != c.pt.polygon_index
        and min(_seg_dist(c.pos[0], c.pos[1], e.p0, e.p1) for e in poly.edges) <= 300) >= 2,
    "near_clip_border": lambda c: (
        min(c.pos[0], c.pos[1],
            c.index.placed.clip.width_nm - c.pos[0],
            c.index.placed.clip.height_nm - c.pos[1]) <= 150),
}


def label_point(placed: PlacedClip, pt: ControlPoint, pool: FeaturePool,
                index: ClipIndex = None) -> FeatureVector:
    """Evaluate every pool feature for one point; pure and deterministic.

    Pass a prebuilt ClipIndex when labeling many points of the same clip.
    """
    if index is None:
        index = ClipIndex(placed)
    ctx = _PointContext(index, pt, pool.thresholds)
    values = {}
    for f in pool.features:
        pred = _PREDICATES.get(f.name)
        if pred is None:
            raise FeatureError(f"no geometric predicate registered for {f.name!r}")
        values[f.name] = bool(pred(ctx))
    return FeatureVector(pt.id, pt.kind.value, _type_tag(ctx), values)


def label_clip(placed: PlacedClip, pool: FeaturePool) -> list:
    index = ClipIndex(placed)
    return [label_point(placed, pt, pool, index) for pt in placed.points]


# ---------------------------------------------------------------------------
# Label records (the jsonl export shape)
# ---------------------------------------------------------------------------


def label_record(vec: FeatureVector, result_class: int) -> dict:
    features = {"types": vec.type_tag}
    features.update(vec.values)
    return {"epe_id": vec.point_id, "features": features, "result": result_class}


def parse_label_record(obj: dict):
    feats = dict(obj["features"])
    tag = feats.pop("types")
    values = {k: bool(v) for k, v in feats.items()}
    vec = FeatureVector(obj["epe_id"], "", tag, values)
    return vec, int(obj["result"])
