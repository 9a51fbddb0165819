"""Rectilinear layout geometry: clips, fragmentation, control points, rasters.

Coordinates are nanometers in a y-up plane.  Target polygons are simple,
axis-parallel loops stored clockwise with integer vertices; polygons built
from fragment moves may carry float coordinates (rounded only on export).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

MAX_OFFSET_NM = 40.0


class GeometryError(ValueError):
    """Invalid geometry (non-rectilinear, self-intersecting, out of bounds)."""


class LayoutParseError(GeometryError):
    def __init__(self, message, line_no):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SynthesisError(GeometryError):
    """Synthetic clip generation could not satisfy its constraints."""


def ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _twice_signed_area(vertices) -> float:
    s = 0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return s


class CornerKind(Enum):
    CONVEX = "convex"
    CONCAVE = "concave"


@dataclass(frozen=True)
class CornerInfo:
    vertex_index: int
    kind: CornerKind


class Edge:
    """Directed edge of a clockwise polygon with its outward unit normal."""

    __slots__ = ("index", "p0", "p1", "orientation", "length", "direction",
                 "outward_normal")

    def __init__(self, index, p0, p1):
        self.index = index
        self.p0 = p0
        self.p1 = p1
        self.orientation = "H" if p0[1] == p1[1] else "V"
        self.length = abs(p1[0] - p0[0]) + abs(p1[1] - p0[1])
        dx = _sign(p1[0] - p0[0])
        dy = _sign(p1[1] - p0[1])
        self.direction = (dx, dy)
        # Interior lies to the right of travel on a clockwise (y-up) loop,
        # so outward is the left-hand rotation of the direction.
        self.outward_normal = (-dy, dx)

    def point_at(self, t: float) -> tuple:
        dx, dy = self.direction
        return (self.p0[0] + dx * t, self.p0[1] + dy * t)

    def __repr__(self):
        return f"Edge({self.index}, {self.p0}, {self.p1})"


def _sign(v) -> int:
    return int(v > 0) - int(v < 0)


class Polygon:
    """Simple rectilinear polygon, clockwise, no consecutive collinear vertices.

    Immutable by convention; edges and corner data are computed once.
    """

    def __init__(self, vertices, validate: bool = True, normalize: bool = True):
        verts = [(v[0], v[1]) for v in vertices]
        verts = _drop_collinear(verts)
        if len(verts) < 4:
            raise GeometryError(f"polygon needs >= 4 vertices, got {len(verts)}")
        area2 = _twice_signed_area(verts)
        if area2 == 0:
            raise GeometryError("degenerate polygon with zero area")
        if normalize:
            if area2 > 0:  # counter-clockwise under y-up: flip
                verts = [verts[0]] + verts[1:][::-1]
            start = min(range(len(verts)), key=lambda i: verts[i])
            verts = verts[start:] + verts[:start]
        self.vertices = tuple(verts)
        self.edges = tuple(
            Edge(i, verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))
        )
        if validate:
            self._validate()

    def _validate(self):
        for e in self.edges:
            if e.p0[0] != e.p1[0] and e.p0[1] != e.p1[1]:
                raise GeometryError(f"edge {e.p0}->{e.p1} is not axis-parallel")
            if e.p0 == e.p1:
                raise GeometryError(f"zero-length edge at {e.p0}")
        if _self_intersects(self.edges):
            raise GeometryError("polygon is self-intersecting")

    @property
    def area(self) -> float:
        return abs(_twice_signed_area(self.vertices)) / 2.0

    @property
    def perimeter(self) -> float:
        return sum(e.length for e in self.edges)

    @property
    def bbox(self) -> tuple:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return (min(xs), min(ys), max(xs), max(ys))

    def __eq__(self, other):
        return isinstance(other, Polygon) and self.vertices == other.vertices

    def __hash__(self):
        return hash(self.vertices)

    def __repr__(self):
        return f"Polygon({list(self.vertices)!r})"


def _drop_collinear(verts):
    out = list(verts)
    changed = True
    while changed and len(out) >= 3:
        changed = False
        for i in range(len(out)):
            a = out[i - 1]
            b = out[i]
            c = out[(i + 1) % len(out)]
            if a == b or (a[0] == b[0] == c[0]) or (a[1] == b[1] == c[1]):
                del out[i]
                changed = True
                break
    return out


def _segments_intersect(a0, a1, b0, b1) -> bool:
    """Axis-parallel closed-segment intersection test."""
    ax0, ax1 = sorted((a0[0], a1[0]))
    ay0, ay1 = sorted((a0[1], a1[1]))
    bx0, bx1 = sorted((b0[0], b1[0]))
    by0, by1 = sorted((b0[1], b1[1]))
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


def _self_intersects(edges) -> bool:
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share exactly one vertex
            if _segments_intersect(edges[i].p0, edges[i].p1, edges[j].p0, edges[j].p1):
                return True
    return False


def classify_corners(poly: Polygon) -> list:
    """One CornerInfo per vertex; convex count minus concave count is 4."""
    out = []
    verts = poly.vertices
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i - 1]
        bx, by = verts[i]
        cx, cy = verts[(i + 1) % n]
        cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
        kind = CornerKind.CONVEX if cross < 0 else CornerKind.CONCAVE
        out.append(CornerInfo(i, kind))
    return out


def detect_jogs(poly: Polygon, jog_max_nm: float = 40.0) -> list:
    """Edge indices of jogs: short steps whose two corners have opposite kinds."""
    kinds = [c.kind for c in classify_corners(poly)]
    n = len(poly.edges)
    jogs = []
    for e in poly.edges:
        if e.length <= jog_max_nm and kinds[e.index] != kinds[(e.index + 1) % n]:
            jogs.append(e.index)
    return jogs


# ---------------------------------------------------------------------------
# Layout clips and the line-oriented layout format
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayoutClip:
    id: str
    width_nm: int
    height_nm: int
    polygons: tuple

    def validate(self):
        problems = []
        if self.width_nm <= 0 or self.height_nm <= 0:
            problems.append("clip dimensions must be positive")
        for pi, poly in enumerate(self.polygons):
            for x, y in poly.vertices:
                if not (isinstance(x, int) and isinstance(y, int)):
                    problems.append(f"polygon {pi} has non-integer vertex ({x}, {y})")
                    break
                if not (0 <= x <= self.width_nm and 0 <= y <= self.height_nm):
                    problems.append(f"polygon {pi} vertex ({x}, {y}) outside clip")
                    break
        for i in range(len(self.polygons)):
            for j in range(i + 1, len(self.polygons)):
                if polygons_overlap(self.polygons[i], self.polygons[j]):
                    problems.append(f"polygons {i} and {j} overlap or touch")
        if problems:
            raise GeometryError("; ".join(problems))
        return self


def polygons_overlap(a: Polygon, b: Polygon) -> bool:
    ab, bb = a.bbox, b.bbox
    if ab[2] < bb[0] or bb[2] < ab[0] or ab[3] < bb[1] or bb[3] < ab[1]:
        return False
    for ea in a.edges:
        for eb in b.edges:
            if _segments_intersect(ea.p0, ea.p1, eb.p0, eb.p1):
                return True
    return point_in_polygon(a.vertices[0], b) or point_in_polygon(b.vertices[0], a)


def point_in_polygon(pt, poly: Polygon) -> bool:
    """Strict interior test (boundary points count as outside)."""
    px, py = pt
    for e in poly.edges:
        x0, x1 = sorted((e.p0[0], e.p1[0]))
        y0, y1 = sorted((e.p0[1], e.p1[1]))
        if x0 <= px <= x1 and y0 <= py <= y1:
            if e.orientation == "H" and py == y0:
                return False
            if e.orientation == "V" and px == x0:
                return False
    inside = False
    for e in poly.edges:
        if e.orientation != "V":
            continue
        ylo, yhi = sorted((e.p0[1], e.p1[1]))
        if ylo <= py < yhi and e.p0[0] > px:
            inside = not inside
    return inside


def point_in_any(pt, polygons) -> bool:
    return any(point_in_polygon(pt, p) for p in polygons)


def parse_layout(text: str) -> LayoutClip:
    clip_id = None
    width = height = None
    polygons = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "CLIP":
            if len(parts) != 4:
                raise LayoutParseError("CLIP expects: CLIP <id> <width> <height>", line_no)
            clip_id = parts[1]
            try:
                width, height = int(parts[2]), int(parts[3])
            except ValueError:
                raise LayoutParseError("CLIP dimensions must be integers", line_no) from None
        elif parts[0] == "POLY":
            coords = parts[1:]
            if len(coords) < 8 or len(coords) % 2:
                raise LayoutParseError("POLY expects an even count of >= 8 integers", line_no)
            try:
                nums = [int(c) for c in coords]
            except ValueError:
                raise LayoutParseError("POLY coordinates must be integers", line_no) from None
            pts = list(zip(nums[0::2], nums[1::2]))
            try:
                polygons.append(Polygon(pts))
            except GeometryError as exc:
                raise LayoutParseError(str(exc), line_no) from exc
        else:
            raise LayoutParseError(f"unknown record {parts[0]!r}", line_no)
    if clip_id is None:
        raise LayoutParseError("missing CLIP header", 1)
    return LayoutClip(clip_id, width, height, tuple(polygons)).validate()


def layout_to_text(clip: LayoutClip) -> str:
    lines = [f"CLIP {clip.id} {clip.width_nm} {clip.height_nm}"]
    for poly in clip.polygons:
        coords = " ".join(f"{int(round(x))} {int(round(y))}" for x, y in poly.vertices)
        lines.append(f"POLY {coords}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Fragmentation and control points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FragmentPolicy:
    corner_segment_nm: int = 24
    max_fragment_nm: int = 56
    min_fragment_nm: int = 16

    def validate(self):
        problems = []
        if self.min_fragment_nm > self.max_fragment_nm:
            problems.append("min_fragment_nm must be <= max_fragment_nm")
        if self.corner_segment_nm > self.max_fragment_nm:
            problems.append("corner_segment_nm must be <= max_fragment_nm")
        if min(self.corner_segment_nm, self.max_fragment_nm, self.min_fragment_nm) < 1:
            problems.append("fragment lengths must be >= 1 nm")
        if problems:
            raise GeometryError("; ".join(problems))
        return self


def _equal_split(total: int, pieces: int) -> list:
    base, rem = divmod(total, pieces)
    return [base + 1] * rem + [base] * (pieces - rem)


def fragment_edge_lengths(length: int, policy: FragmentPolicy):
    """Split one edge: corner segments at both ends when room permits, then
    equal-as-possible interior pieces no longer than max_fragment_nm.

    Returns (lengths, degenerate) where degenerate marks a too-short edge
    kept as a single fragment.
    """
    if length < 2 * policy.min_fragment_nm:
        return [length], True
    if length >= 2 * policy.corner_segment_nm + policy.min_fragment_nm:
        interior = length - 2 * policy.corner_segment_nm
        k = ceil_div(interior, policy.max_fragment_nm)
        return (
            [policy.corner_segment_nm]
            + _equal_split(interior, k)
            + [policy.corner_segment_nm],
            False,
        )
    k = ceil_div(length, policy.max_fragment_nm)
    return _equal_split(length, k), False


class PointKind(Enum):
    EPE = "EPE"
    FRAG = "FRAG"


@dataclass(frozen=True)
class ControlPoint:
    """EPE-measurement or fragment-boundary point on a target edge.

    ``tangential_offset_nm`` is signed along the clockwise traversal
    direction of the host edge and capped at +/-40 nm.
    """

    id: int
    kind: PointKind
    polygon_index: int
    edge_index: int
    arclength_nm: float
    edge_length_nm: float
    tangential_offset_nm: float = 0.0
    fragment_index: int = 0
    clamped: bool = False

    @property
    def position_arc(self) -> float:
        return self.arclength_nm + self.tangential_offset_nm


class OffsetCapError(GeometryError):
    """Requested move would push a control point past the +/-40 nm cap."""


def move_point_tangential(pt: ControlPoint, delta_nm: float) -> ControlPoint:
    new_offset = pt.tangential_offset_nm + delta_nm
    if abs(new_offset) > MAX_OFFSET_NM + 1e-9:
        raise OffsetCapError(
            f"point {pt.id}: offset {new_offset:+.1f} nm exceeds the "
            f"+/-{MAX_OFFSET_NM:.0f} nm cap"
        )
    clamped = False
    pos = pt.arclength_nm + new_offset
    if pos < 0:
        new_offset = -pt.arclength_nm
        clamped = True
    elif pos > pt.edge_length_nm:
        new_offset = pt.edge_length_nm - pt.arclength_nm
        clamped = True
    return replace(pt, tangential_offset_nm=new_offset, clamped=clamped)


@dataclass(frozen=True)
class Fragment:
    edge_index: int
    start_nm: float
    end_nm: float
    degenerate: bool = False

    @property
    def length(self) -> float:
        return self.end_nm - self.start_nm

    @property
    def midpoint(self) -> float:
        return (self.start_nm + self.end_nm) / 2.0


@dataclass
class FragmentedPolygon:
    polygon: Polygon
    fragments: list  # Fragment, in clockwise edge order
    corner_segmented: list  # bool per edge: corner segments applied

    def fragments_of_edge(self, edge_index: int) -> list:
        return [f for f in self.fragments if f.edge_index == edge_index]


def fragment(poly: Polygon, policy: FragmentPolicy) -> FragmentedPolygon:
    policy.validate()
    fragments = []
    segged = []
    for e in poly.edges:
        lengths, degenerate = fragment_edge_lengths(int(round(e.length)), policy)
        segged.append(len(lengths) >= 3 and lengths[0] == policy.corner_segment_nm
                      and not degenerate
                      and int(round(e.length)) >= 2 * policy.corner_segment_nm + policy.min_fragment_nm)
        pos = 0
        for ln in lengths:
            fragments.append(Fragment(e.index, pos, pos + ln, degenerate))
            pos += ln
    return FragmentedPolygon(poly, fragments, segged)


@dataclass
class PlacedClip:
    """A clip with its fragmentation and the control points the RL acts on."""

    clip: LayoutClip
    policy: FragmentPolicy
    fragmented: list  # FragmentedPolygon per clip polygon
    points: list  # ControlPoint, canonical clockwise order

    def point_by_id(self, pid: int) -> ControlPoint:
        return self.points[pid]

    def with_offsets(self, offsets: dict) -> "PlacedClip":
        """New PlacedClip with absolute tangential offsets applied per point id."""
        new_points = []
        for pt in self.points:
            tgt = offsets.get(pt.id)
            if tgt is None or tgt == pt.tangential_offset_nm:
                new_points.append(pt)
            else:
                base = replace(pt, tangential_offset_nm=0.0, clamped=False)
                new_points.append(move_point_tangential(base, tgt))
        return PlacedClip(self.clip, self.policy, self.fragmented, new_points)

    def point_position(self, pt: ControlPoint) -> tuple:
        edge = self.fragmented[pt.polygon_index].polygon.edges[pt.edge_index]
        return edge.point_at(pt.position_arc)

    def point_normal(self, pt: ControlPoint) -> tuple:
        return self.fragmented[pt.polygon_index].polygon.edges[pt.edge_index].outward_normal

    def epe_points(self) -> list:
        return [p for p in self.points if p.kind is PointKind.EPE]

    def frag_points(self) -> list:
        return [p for p in self.points if p.kind is PointKind.FRAG]

    def effective_spans(self, polygon_index: int) -> list:
        """Fragment spans per edge after FRAG boundary moves.

        Moved boundaries are clamped to keep ordering with >= 1 nm gaps, so
        fragment counts never change.
        """
        fp = self.fragmented[polygon_index]
        frag_moves = {}
        for p in self.points:
            if p.kind is PointKind.FRAG and p.polygon_index == polygon_index:
                frag_moves[(p.edge_index, p.fragment_index)] = p.position_arc
        spans = []
        for e in fp.polygon.edges:
            frs = fp.fragments_of_edge(e.index)
            bounds = []
            for k in range(len(frs) - 1):
                bounds.append(frag_moves.get((e.index, k), frs[k].end_nm))
            length = frs[-1].end_nm
            fixed = []
            lo = 0.0
            for k, b in enumerate(bounds):
                hi = length - (len(bounds) - k)
                fixed.append(min(max(b, lo + 1.0), hi))
                lo = fixed[-1]
            cuts = [0.0] + fixed + [length]
            spans.append([(cuts[k], cuts[k + 1]) for k in range(len(cuts) - 1)])
        return spans


def place_control_points(clip: LayoutClip, policy: FragmentPolicy) -> PlacedClip:
    """Fragment every polygon and place one EPE point per fragment midpoint
    plus one FRAG point per interior fragment boundary, ids in clockwise order.
    """
    fragmented = [fragment(p, policy) for p in clip.polygons]
    points = []
    pid = 0
    for poly_idx, fp in enumerate(fragmented):
        for e in fp.polygon.edges:
            frs = fp.fragments_of_edge(e.index)
            for k, fr in enumerate(frs):
                points.append(ControlPoint(
                    pid, PointKind.EPE, poly_idx, e.index,
                    fr.midpoint, e.length, fragment_index=k))
                pid += 1
                if k < len(frs) - 1:
                    points.append(ControlPoint(
                        pid, PointKind.FRAG, poly_idx, e.index,
                        fr.end_nm, e.length, fragment_index=k))
                    pid += 1
    return PlacedClip(clip, policy, fragmented, points)


# ---------------------------------------------------------------------------
# Fragment moves along outward normals
# ---------------------------------------------------------------------------


class MoveError(GeometryError):
    """Fragment moves produced an unrecoverable invalid polygon."""


def build_moved_polygon(poly: Polygon, spans_per_edge: list, moves: list) -> Polygon:
    """Translate each fragment span along its edge's outward normal and stitch
    the loop back together: jogs between same-edge neighbours with different
    moves, shifted corner vertices between perpendicular neighbours.
    """
    items = []
    mi = 0
    for e in poly.edges:
        for (s, t) in spans_per_edge[e.index]:
            items.append((e, s, t, moves[mi]))
            mi += 1
    if mi != len(moves):
        raise MoveError(f"expected {mi} moves, got {len(moves)}")
    verts = []
    n = len(items)
    for i in range(n):
        pe, ps, pt_, pm = items[i - 1]
        ce, cs, ct, cm = items[i]
        if pe.index == ce.index:
            # same edge: jog at the shared boundary when moves differ
            nx, ny = ce.outward_normal
            bx, by = ce.point_at(cs)
            a = (bx + nx * pm, by + ny * pm)
            b = (bx + nx * cm, by + ny * cm)
            verts.append(a)
            if a != b:
                verts.append(b)
        else:
            # polygon corner: each edge contributes its displaced line
            if pe.orientation == "H":
                y = pe.p0[1] + pe.outward_normal[1] * pm
                x = ce.p0[0] + ce.outward_normal[0] * cm
            else:
                x = pe.p0[0] + pe.outward_normal[0] * pm
                y = ce.p0[1] + ce.outward_normal[1] * cm
            verts.append((x, y))
    return Polygon(verts, validate=False, normalize=False)


def apply_fragment_normal_moves(poly: Polygon, fragments: list, moves_nm: list,
                                validate: bool = True, max_halvings: int = 6):
    """Move fragments along outward normals; returns (polygon, reduced_flag).

    ``fragments`` is a list of (edge_index, start, end) or Fragment covering
    the polygon in clockwise order.  On self-intersection the moves are
    halved (all together) until the result is valid, and the reduction is
    flagged; all-zero moves reproduce the input polygon exactly.
    """
    spans = [[] for _ in poly.edges]
    for fr in fragments:
        if isinstance(fr, Fragment):
            spans[fr.edge_index].append((fr.start_nm, fr.end_nm))
        else:
            spans[fr[0]].append((fr[1], fr[2]))
    moves = list(moves_nm)
    reduced = False
    for attempt in range(max_halvings + 1):
        cand = build_moved_polygon(poly, spans, moves)
        if not validate or not _self_intersects(cand.edges):
            return cand, reduced
        moves = [m / 2.0 for m in moves]
        reduced = True
    raise MoveError("fragment moves self-intersect even after reduction")


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def rect_decompose(poly: Polygon) -> list:
    """Half-open axis-aligned rectangles [x0,x1)x[y0,y1) tiling the interior."""
    ys = sorted({v[1] for v in poly.vertices})
    rects = []
    for yi in range(len(ys) - 1):
        y0, y1 = ys[yi], ys[yi + 1]
        xs = []
        for e in poly.edges:
            if e.orientation != "V":
                continue
            elo, ehi = sorted((e.p0[1], e.p1[1]))
            if elo <= y0 and ehi >= y1:
                xs.append(e.p0[0])
        xs.sort()
        for k in range(0, len(xs) - 1, 2):
            rects.append((xs[k], y0, xs[k + 1], y1))
    return rects


class RasterConfigError(GeometryError):
    pass


def rasterize(clip: LayoutClip, pixel_nm: int) -> np.ndarray:
    """Binary grid; cell = 1 iff the cell center falls inside a polygon.

    Centers exactly on a covered span's min-x/min-y boundary count as inside
    (half-open tie-break). Grid is indexed [row=y, col=x], y-up.
    """
    if clip.width_nm % pixel_nm or clip.height_nm % pixel_nm:
        raise RasterConfigError(
            f"clip {clip.width_nm}x{clip.height_nm} nm not divisible by "
            f"{pixel_nm} nm pixels")
    nx, ny = clip.width_nm // pixel_nm, clip.height_nm // pixel_nm
    grid = np.zeros((ny, nx), dtype=bool)
    for poly in clip.polygons:
        for (x0, y0, x1, y1) in rect_decompose(poly):
            j0 = max(0, ceil_div(2 * x0 - pixel_nm, 2 * pixel_nm))
            j1 = min(nx, ceil_div(2 * x1 - pixel_nm, 2 * pixel_nm))
            i0 = max(0, ceil_div(2 * y0 - pixel_nm, 2 * pixel_nm))
            i1 = min(ny, ceil_div(2 * y1 - pixel_nm, 2 * pixel_nm))
            if j0 < j1 and i0 < i1:
                grid[i0:i1, j0:j1] = True
    return grid


def _span_weights(lo: float, hi: float, p: float, n_cells: int):
    """Per-cell overlap fractions of [lo, hi) with the pixel row/column grid."""
    j0 = max(0, int(math.floor(lo / p)))
    j1 = min(n_cells, int(math.ceil(hi / p)))
    if j0 >= j1:
        return j0, j0, None
    w = np.ones(j1 - j0)
    w[0] = (min(hi, (j0 + 1) * p) - max(lo, j0 * p)) / p
    if j1 - j0 > 1:
        w[-1] = (min(hi, j1 * p) - max(lo, (j1 - 1) * p)) / p
    return j0, j1, w


def rasterize_coverage(polygons, width_nm: int, height_nm: int, pixel_nm: int) -> np.ndarray:
    """Area-coverage raster in [0, 1]; exact for rectilinear polygons."""
    nx, ny = width_nm // pixel_nm, height_nm // pixel_nm
    grid = np.zeros((ny, nx), dtype=np.float64)
    p = float(pixel_nm)
    for poly in polygons:
        for (x0, y0, x1, y1) in rect_decompose(poly):
            j0, j1, ox = _span_weights(x0, x1, p, nx)
            i0, i1, oy = _span_weights(y0, y1, p, ny)
            if ox is None or oy is None:
                continue
            grid[i0:i1, j0:j1] += np.outer(oy, ox)
    return grid


# ---------------------------------------------------------------------------
# Synthetic clip generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    width_nm: int = 1024
    height_nm: int = 1024
    min_feature_nm: int = 60
    max_feature_nm: int = 104
    min_space_nm: int = 76
    margin_nm: int = 140
    snap_nm: int = 4
    min_shapes: int = 3
    max_shapes: int = 5
    jog_min_nm: int = 16
    jog_max_nm: int = 40
    allow_jogs: bool = True

    def validate(self):
        problems = []
        if self.min_feature_nm <= 0 or self.min_space_nm <= 0:
            problems.append("min feature width and space must be positive")
        if self.min_feature_nm > self.max_feature_nm:
            problems.append("min_feature_nm must be <= max_feature_nm")
        if self.margin_nm * 2 + self.max_feature_nm >= min(self.width_nm, self.height_nm):
            problems.append("clip too small for margin and feature sizes")
        if problems:
            raise SynthesisError("; ".join(problems))
        return self


def _bar(x, y, length, width, horizontal):
    if horizontal:
        return [(x, y), (x, y + width), (x + length, y + width), (x + length, y)]
    return [(x, y), (x, y + length), (x + width, y + length), (x + width, y)]


def _l_shape(x, y, w, h, t):
    return [(x, y), (x, y + h), (x + t, y + h), (x + t, y + t), (x + w, y + t), (x + w, y)]


def _u_shape(x, y, w, h, t):
    a, b = x + t, x + w - t
    return [(x, y), (x, y + h), (a, y + h), (a, y + t), (b, y + t), (b, y + h),
            (x + w, y + h), (x + w, y)]


def _t_shape(x, y, w, h, cap, stem_w):
    x0 = x + (w - stem_w) // 2
    x1 = x0 + stem_w
    yc = y + h - cap
    return [(x0, y), (x0, yc), (x, yc), (x, y + h), (x + w, y + h), (x + w, yc),
            (x1, yc), (x1, y)]


def _z_bar(x, y, length, width, jog, step_at):
    s = x + step_at
    xe = x + length
    return [(x, y), (x, y + width), (s, y + width), (s, y + width + jog),
            (xe, y + width + jog), (xe, y + jog), (s, y + jog), (s, y)]


def synth_clip(seed: int, params: SynthParams = SynthParams()) -> LayoutClip:
    """Deterministic random clip containing bars, L/U/T shapes and, when
    allowed, at least one jogged bar; all pairwise clearances respect
    min_space_nm (checked on bounding boxes, hence conservatively)."""
    params.validate()
    rng = np.random.default_rng(seed)
    snap = params.snap_nm

    def ri(lo, hi):
        lo_s, hi_s = ceil_div(lo, snap), hi // snap
        if hi_s < lo_s:
            hi_s = lo_s
        return int(rng.integers(lo_s, hi_s + 1)) * snap

    placed = []  # (bbox, vertices)

    def try_place(builder, tries=200):
        for _ in range(tries):
            verts, bbox = builder()
            x0, y0, x1, y1 = bbox
            if x0 < params.margin_nm or y0 < params.margin_nm:
                continue
            if x1 > params.width_nm - params.margin_nm or y1 > params.height_nm - params.margin_nm:
                continue
            ok = True
            for (ob, _) in placed:
                if (x0 - params.min_space_nm < ob[2] and ob[0] - params.min_space_nm < x1
                        and y0 - params.min_space_nm < ob[3] and ob[1] - params.min_space_nm < y1):
                    ok = False
                    break
            if ok:
                placed.append((bbox, verts))
                return True
        return False

    def rand_origin(w, h):
        x = ri(params.margin_nm, params.width_nm - params.margin_nm - w)
        y = ri(params.margin_nm, params.height_nm - params.margin_nm - h)
        return x, y

    def make_z():
        width = ri(params.min_feature_nm, params.max_feature_nm)
        length = ri(3 * params.min_feature_nm, params.width_nm // 2)
        jog = ri(params.jog_min_nm, params.jog_max_nm)
        step_at = ri(params.min_feature_nm, length - params.min_feature_nm)
        x, y = rand_origin(length, width + jog)
        return _z_bar(x, y, length, width, jog, step_at), (x, y, x + length, y + width + jog)

    def make_bar():
        width = ri(params.min_feature_nm, params.max_feature_nm)
        length = ri(3 * params.min_feature_nm, params.width_nm // 2)
        horizontal = bool(rng.integers(0, 2))
        w, h = (length, width) if horizontal else (width, length)
        x, y = rand_origin(w, h)
        return _bar(x, y, length, width, horizontal), (x, y, x + w, y + h)

    def make_l():
        t = ri(params.min_feature_nm, params.max_feature_nm)
        w = ri(2 * t + 48, max(2 * t + 48, params.width_nm // 3))
        h = ri(2 * t + 48, max(2 * t + 48, params.height_nm // 3))
        x, y = rand_origin(w, h)
        return _l_shape(x, y, w, h, t), (x, y, x + w, y + h)

    def make_u():
        t = ri(params.min_feature_nm, params.max_feature_nm)
        w = ri(3 * t + 2 * 48, max(3 * t + 96, params.width_nm // 3 + 2 * t))
        h = ri(t + 64, max(t + 64, params.height_nm // 4))
        x, y = rand_origin(w, h)
        return _u_shape(x, y, w, h, t), (x, y, x + w, y + h)

    def make_t():
        stem = ri(params.min_feature_nm, params.max_feature_nm)
        cap = ri(params.min_feature_nm, params.max_feature_nm)
        w = ri(stem + 2 * 48, max(stem + 96, params.width_nm // 3))
        h = ri(cap + 64, max(cap + 64, params.height_nm // 3))
        x, y = rand_origin(w, h)
        return _t_shape(x, y, w, h, cap, stem), (x, y, x + w, y + h)

    n_shapes = int(rng.integers(params.min_shapes, params.max_shapes + 1))
    builders = [make_bar, make_l, make_u, make_t] + ([make_z] if params.allow_jogs else [])
    forced = ([make_z] if params.allow_jogs else []) + [make_bar]
    for b in forced:
        if not try_place(b):
            raise SynthesisError(f"could not place required shape within constraints (seed {seed})")
    while len(placed) < n_shapes:
        b = builders[int(rng.integers(0, len(builders)))]
        if not try_place(b, tries=60):
            break
    polygons = tuple(Polygon(v) for (_, v) in placed)
    clip = LayoutClip(f"synth-{seed}", params.width_nm, params.height_nm, polygons)
    return clip.validate()
