import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry import Point as ShapelyPoint

from opcrecipe.geometry import (
    CornerKind,
    FragmentPolicy,
    GeometryError,
    LayoutClip,
    LayoutParseError,
    OffsetCapError,
    PointKind,
    Polygon,
    SynthParams,
    apply_fragment_normal_moves,
    classify_corners,
    detect_jogs,
    fragment,
    fragment_edge_lengths,
    layout_to_text,
    move_point_tangential,
    parse_layout,
    place_control_points,
    point_in_polygon,
    rasterize,
    rasterize_coverage,
    rect_decompose,
    synth_clip,
)

L_SHAPE = [(0, 0), (0, 200), (100, 200), (100, 100), (200, 100), (200, 0)]
U_SHAPE = [(0, 0), (0, 200), (60, 200), (60, 60), (140, 60), (140, 200),
           (200, 200), (200, 0)]


def shapely_of(poly):
    return ShapelyPolygon(list(poly.vertices))


class TestParse:
    def test_rectangle(self):
        clip = parse_layout("CLIP t 2048 2048\nPOLY 0 0 0 100 60 100 60 0\n")
        assert len(clip.polygons) == 1
        poly = clip.polygons[0]
        assert len(poly.vertices) == 4
        assert poly.area == 6000

    def test_ccw_normalizes_to_same_polygon(self):
        cw = parse_layout("CLIP t 512 512\nPOLY 0 0 0 100 60 100 60 0\n")
        ccw = parse_layout("CLIP t 512 512\nPOLY 0 0 60 0 60 100 0 100\n")
        assert cw.polygons[0].vertices == ccw.polygons[0].vertices

    def test_l_shape_one_concave(self):
        text = "CLIP t 512 512\nPOLY 0 0 0 200 100 200 100 100 200 100 200 0\n"
        poly = parse_layout(text).polygons[0]
        kinds = [c.kind for c in classify_corners(poly)]
        assert len(poly.vertices) == 6
        assert kinds.count(CornerKind.CONCAVE) == 1

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(LayoutParseError, match="line 2"):
            parse_layout("CLIP t 512 512\nPOLY 0 0 0 100 60\n")

    def test_non_rectilinear_rejected(self):
        with pytest.raises(LayoutParseError):
            parse_layout("CLIP t 512 512\nPOLY 0 0 50 100 100 0 0 50\n")

    def test_missing_header(self):
        with pytest.raises(LayoutParseError):
            parse_layout("POLY 0 0 0 100 60 100 60 0\n")

    def test_roundtrip(self):
        clip = synth_clip(3)
        text = layout_to_text(clip)
        again = parse_layout(text)
        assert layout_to_text(again) == text


class TestCorners:
    def test_rectangle_all_convex(self):
        poly = Polygon([(0, 0), (0, 100), (60, 100), (60, 0)])
        kinds = [c.kind for c in classify_corners(poly)]
        assert kinds == [CornerKind.CONVEX] * 4

    def test_l_shape(self):
        kinds = [c.kind for c in classify_corners(Polygon(L_SHAPE))]
        assert kinds.count(CornerKind.CONVEX) == 5
        assert kinds.count(CornerKind.CONCAVE) == 1

    def test_u_shape(self):
        kinds = [c.kind for c in classify_corners(Polygon(U_SHAPE))]
        assert kinds.count(CornerKind.CONVEX) == 6
        assert kinds.count(CornerKind.CONCAVE) == 2

    def test_convex_minus_concave_is_4_over_suite(self):
        for seed in range(12):
            for poly in synth_clip(seed).polygons:
                kinds = [c.kind for c in classify_corners(poly)]
                assert kinds.count(CornerKind.CONVEX) - kinds.count(CornerKind.CONCAVE) == 4


class TestFragmentation:
    def test_corner_segments_and_interior(self):
        lengths, degenerate = fragment_edge_lengths(200, FragmentPolicy(40, 60, 20))
        assert lengths == [40, 60, 60, 40]
        assert not degenerate

    def test_degenerate_short_edge(self):
        lengths, degenerate = fragment_edge_lengths(30, FragmentPolicy(40, 60, 20))
        assert lengths == [30]
        assert degenerate

    def test_square_edges(self):
        lengths, _ = fragment_edge_lengths(100, FragmentPolicy(30, 40, 20))
        assert lengths == [30, 40, 30]

    def test_lengths_cover_edges_exactly(self):
        policy = FragmentPolicy()
        for seed in range(8):
            for poly in synth_clip(seed).polygons:
                fp = fragment(poly, policy)
                for e in poly.edges:
                    frs = fp.fragments_of_edge(e.index)
                    assert frs[0].start_nm == 0
                    assert frs[-1].end_nm == e.length
                    for a, b in zip(frs, frs[1:]):
                        assert a.end_nm == b.start_nm
                    assert all(f.length >= 1 for f in frs)

    def test_one_epe_per_fragment_one_frag_per_interior_boundary(self):
        clip = synth_clip(1)
        placed = place_control_points(clip, FragmentPolicy())
        for poly_idx, fp in enumerate(placed.fragmented):
            n_frags = len(fp.fragments)
            n_edges = len(fp.polygon.edges)
            epe = [p for p in placed.points
                   if p.polygon_index == poly_idx and p.kind is PointKind.EPE]
            frag = [p for p in placed.points
                    if p.polygon_index == poly_idx and p.kind is PointKind.FRAG]
            assert len(epe) == n_frags
            assert len(frag) == n_frags - n_edges  # interior boundaries only


class TestMovePoint:
    def _point(self, arc=50.0, length=100.0, offset=0.0):
        from opcrecipe.geometry import ControlPoint

        return ControlPoint(0, PointKind.EPE, 0, 0, arc, length, offset)

    def test_simple_move(self):
        pt = move_point_tangential(self._point(), 10)
        assert pt.tangential_offset_nm == 10
        assert not pt.clamped

    def test_cap_rejection(self):
        with pytest.raises(OffsetCapError):
            move_point_tangential(self._point(offset=35.0), 10)

    def test_clamped_to_edge_start(self):
        pt = move_point_tangential(self._point(arc=5.0), -10)
        assert pt.clamped
        assert pt.position_arc == 0.0

    def test_kind_and_edge_preserved(self):
        pt = move_point_tangential(self._point(), -17)
        assert pt.kind is PointKind.EPE
        assert pt.edge_index == 0


class TestFragmentMoves:
    def _rect_fragments(self, poly):
        return [(e.index, 0.0, e.length) for e in poly.edges]

    def test_zero_moves_identity(self):
        poly = Polygon([(0, 0), (0, 100), (60, 100), (60, 0)])
        moved, reduced = apply_fragment_normal_moves(
            poly, self._rect_fragments(poly), [0, 0, 0, 0])
        assert set(moved.vertices) == set(poly.vertices)
        assert not reduced

    def test_grow_one_side(self):
        poly = Polygon([(0, 0), (0, 100), (60, 100), (60, 0)])
        # edge 0 runs (0,0)->(0,100): outward normal is -x
        moved, _ = apply_fragment_normal_moves(
            poly, self._rect_fragments(poly), [5, 0, 0, 0])
        assert set(moved.vertices) == {(-5, 0), (-5, 100), (60, 100), (60, 0)}

    def test_jog_inserts_two_vertices(self):
        poly = Polygon([(0, 0), (0, 100), (60, 100), (60, 0)])
        frags = [(0, 0.0, 50.0), (0, 50.0, 100.0),
                 (1, 0.0, 60.0), (2, 0.0, 100.0), (3, 0.0, 60.0)]
        moved, _ = apply_fragment_normal_moves(poly, frags, [4, 0, 0, 0, 0])
        assert len(moved.vertices) == len(poly.vertices) + 2

    def test_plus_then_minus_restores(self):
        poly = Polygon([(0, 0), (0, 100), (60, 100), (60, 0)])
        frags = [(0, 0.0, 50.0), (0, 50.0, 100.0),
                 (1, 0.0, 60.0), (2, 0.0, 100.0), (3, 0.0, 60.0)]
        d = [7, 0, 0, 0, 0]
        moved, _ = apply_fragment_normal_moves(poly, frags, d)
        back, _ = apply_fragment_normal_moves(poly, frags, [0, 0, 0, 0, 0])
        assert set(back.vertices) == set(poly.vertices)
        assert set(moved.vertices) != set(poly.vertices)

    def test_self_intersection_reduced(self):
        poly = Polygon([(0, 0), (0, 40), (200, 40), (200, 0)])
        frags = [(e.index, 0.0, e.length) for e in poly.edges]
        # pushing both long sides inward by 30 nm would invert the 40 nm bar
        moves = [0, -30, 0, -30]
        moved, reduced = apply_fragment_normal_moves(poly, frags, moves, validate=True)
        assert reduced


class TestRasterize:
    def test_empty_clip(self):
        clip = LayoutClip("e", 512, 512, ())
        assert rasterize(clip, 4).sum() == 0

    def test_full_clip(self):
        clip = LayoutClip("f", 256, 256,
                          (Polygon([(0, 0), (0, 256), (256, 256), (256, 0)]),))
        assert rasterize(clip, 4).all()

    def test_rect_popcount(self):
        clip = LayoutClip("t", 2048, 2048,
                          (Polygon([(0, 0), (0, 100), (60, 100), (60, 0)]),))
        grid = rasterize(clip, 4)
        assert grid.sum() == 15 * 25

    def test_non_divisible_dims(self):
        clip = LayoutClip("t", 1022, 1024, ())
        with pytest.raises(GeometryError):
            rasterize(clip, 4)

    def test_area_bound_over_suite(self):
        for seed in range(6):
            clip = synth_clip(seed)
            grid = rasterize(clip, 4)
            area = sum(p.area for p in clip.polygons)
            perimeter = sum(p.perimeter for p in clip.polygons)
            assert abs(int(grid.sum()) * 16 - area) <= perimeter * 4

    def test_coverage_matches_area_exactly(self):
        for seed in range(6):
            clip = synth_clip(seed)
            cov = rasterize_coverage(clip.polygons, clip.width_nm, clip.height_nm, 4)
            area = sum(p.area for p in clip.polygons)
            assert cov.sum() * 16 == pytest.approx(area, rel=1e-12)
            assert cov.max() <= 1.0 + 1e-12

    def test_rect_decompose_matches_shoelace_area(self):
        for verts in (L_SHAPE, U_SHAPE):
            poly = Polygon(verts)
            rect_area = sum((x1 - x0) * (y1 - y0)
                            for x0, y0, x1, y1 in rect_decompose(poly))
            assert rect_area == poly.area

    def test_point_in_polygon_against_shapely(self):
        rng = np.random.default_rng(0)
        for verts in (L_SHAPE, U_SHAPE):
            poly = Polygon(verts)
            sp = shapely_of(poly)
            for _ in range(200):
                pt = (float(rng.integers(-20, 220)), float(rng.integers(-20, 220)))
                expected = sp.contains(ShapelyPoint(pt))
                boundary = sp.boundary.distance(ShapelyPoint(pt)) == 0
                if not boundary:
                    assert point_in_polygon(pt, poly) == expected


class TestSynth:
    def test_deterministic(self):
        assert layout_to_text(synth_clip(7)) == layout_to_text(synth_clip(7))

    def test_clearance_brute_force(self):
        params = SynthParams()
        for seed in (0, 5, 9):
            clip = synth_clip(seed, params)
            polys = [shapely_of(p) for p in clip.polygons]
            for i in range(len(polys)):
                for j in range(i + 1, len(polys)):
                    assert polys[i].distance(polys[j]) >= params.min_space_nm

    def test_contains_jog_and_line_end(self):
        clip = synth_clip(11)
        assert any(detect_jogs(p) for p in clip.polygons)

    def test_no_jogs_when_forbidden(self):
        clip = synth_clip(11, SynthParams(allow_jogs=False))
        assert all(not detect_jogs(p) for p in clip.polygons)

    def test_validation_passes(self):
        for seed in range(10):
            synth_clip(seed).validate()

    def test_infeasible_params_raise(self):
        with pytest.raises(GeometryError):
            synth_clip(0, SynthParams(width_nm=256, height_nm=256,
                                      margin_nm=120, max_feature_nm=200)).validate()


class TestEffectiveSpans:
    def test_frag_offset_moves_boundary(self):
        clip = synth_clip(0)
        placed = place_control_points(clip, FragmentPolicy())
        frag_pts = placed.frag_points()
        pt = frag_pts[0]
        moved = placed.with_offsets({pt.id: 8.0})
        spans0 = placed.effective_spans(pt.polygon_index)
        spans1 = moved.effective_spans(pt.polygon_index)
        before = spans0[pt.edge_index]
        after = spans1[pt.edge_index]
        assert before != after
        assert after[pt.fragment_index][1] == before[pt.fragment_index][1] + 8.0
        # total edge coverage is preserved
        assert after[0][0] == 0.0
        assert after[-1][1] == before[-1][1]


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_synth_convexity_invariant(seed):
    clip = synth_clip(seed % 50)
    for poly in clip.polygons:
        kinds = [c.kind for c in classify_corners(poly)]
        assert kinds.count(CornerKind.CONVEX) - kinds.count(CornerKind.CONCAVE) == 4
