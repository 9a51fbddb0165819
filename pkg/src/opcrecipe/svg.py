"""SVG overlay export: target polygons, control points, printed contour, and
the process-variation band."""

from __future__ import annotations

import numpy as np

from .geometry import PlacedClip, PointKind


def _marching_segments(grid: np.ndarray, level: float, pixel_nm: float):
    """Iso-contour line segments of a scalar grid (cell centers at
    (i+0.5)*pixel), as ((x0,y0),(x1,y1)) pairs in nm."""
    g = np.asarray(grid, dtype=np.float64)
    ny, nx = g.shape
    segs = []

    def interp(pa, pb, va, vb):
        t = 0.5 if vb == va else (level - va) / (vb - va)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    for i in range(ny - 1):
        for j in range(nx - 1):
            v = [g[i, j], g[i, j + 1], g[i + 1, j + 1], g[i + 1, j]]
            corners = [((j + 0.5) * pixel_nm, (i + 0.5) * pixel_nm),
                       ((j + 1.5) * pixel_nm, (i + 0.5) * pixel_nm),
                       ((j + 1.5) * pixel_nm, (i + 1.5) * pixel_nm),
                       ((j + 0.5) * pixel_nm, (i + 1.5) * pixel_nm)]
            idx = sum(1 << k for k in range(4) if v[k] >= level)
            if idx in (0, 15):
                continue
            pts = []
            for k in range(4):
                a, b = k, (k + 1) % 4
                if (v[a] >= level) != (v[b] >= level):
                    pts.append(interp(corners[a], corners[b], v[a], v[b]))
            for k in range(0, len(pts) - 1, 2):
                segs.append((pts[k], pts[k + 1]))
    return segs


def _band_rects(band: np.ndarray, pixel_nm: float):
    """Run-length merged rectangles (x, y, w, h in nm) of set band pixels."""
    rects = []
    for i in range(band.shape[0]):
        row = band[i]
        j = 0
        while j < len(row):
            if row[j]:
                j0 = j
                while j < len(row) and row[j]:
                    j += 1
                rects.append((j0 * pixel_nm, i * pixel_nm, (j - j0) * pixel_nm, pixel_nm))
            else:
                j += 1
    return rects


def write_overlay_svg(path, placed: PlacedClip, aerial=None, litho_cfg=None,
                      pvb_band=None):
    """Layout overlay: polygons gray, EPE points red, FRAG points blue,
    printed contour green, PVB band orange."""
    clip = placed.clip
    h = clip.height_nm
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {clip.width_nm} '
        f'{clip.height_nm}" width="800" height="800">',
        f'<rect width="{clip.width_nm}" height="{clip.height_nm}" fill="white"/>',
    ]
    for poly in clip.polygons:
        d = "M " + " L ".join(f"{x} {h - y}" for x, y in poly.vertices) + " Z"
        parts.append(f'<path d="{d}" fill="#c8c8c8" stroke="#555" stroke-width="2"/>')
    if pvb_band is not None and litho_cfg is not None:
        for (x, y, w, hh) in _band_rects(pvb_band, litho_cfg.pixel_nm):
            parts.append(f'<rect x="{x}" y="{h - y - hh}" width="{w}" height="{hh}" '
                         f'fill="orange" fill-opacity="0.5"/>')
    if aerial is not None and litho_cfg is not None:
        for (a, b) in _marching_segments(aerial, litho_cfg.resist_threshold,
                                         litho_cfg.pixel_nm):
            parts.append(f'<line x1="{a[0]:.1f}" y1="{h - a[1]:.1f}" '
                         f'x2="{b[0]:.1f}" y2="{h - b[1]:.1f}" '
                         f'stroke="green" stroke-width="2"/>')
    for pt in placed.points:
        x, y = placed.point_position(pt)
        color = "red" if pt.kind is PointKind.EPE else "blue"
        parts.append(f'<circle cx="{x:.1f}" cy="{h - y:.1f}" r="5" fill="{color}"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
