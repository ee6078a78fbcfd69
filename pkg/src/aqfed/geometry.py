"""Mask and contour geometry.

Masks are plain ``numpy`` boolean arrays of shape ``(H, W)`` with ``True``
marking foreground. Positions are ``(row, col)`` throughout, so "up" is
decreasing row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateComponent, EmptyMask, FullMask, TooFewPoints

MIN_SIDE = 8
MIN_CONTOUR = 8

# Moore neighbourhood, clockwise on screen starting from west.
_DIRS = np.array(
    [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)], dtype=int
)
_DIR_INDEX = {tuple(d): i for i, d in enumerate(_DIRS)}
_EIGHT = np.ones((3, 3), dtype=bool)


def as_mask(mask) -> np.ndarray:
    """Validate and return ``mask`` as a 2-D boolean array."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if m.shape[0] < MIN_SIDE or m.shape[1] < MIN_SIDE:
        raise ValueError(f"mask must be at least {MIN_SIDE}x{MIN_SIDE}, got {m.shape}")
    return m.astype(bool, copy=False)


@dataclass
class Contour:
    points: np.ndarray  # (l, 2) int, (row, col)
    normals: np.ndarray | None = None  # (l, 2) float, outward unit vectors
    origin_index: int = 0
    orientation: str = "clockwise"

    def __len__(self):
        return len(self.points)

    def to_json(self) -> str:
        return json.dumps([[int(r), int(c)] for r, c in self.points])


@dataclass
class BandRegions:
    inner: np.ndarray
    outer: np.ndarray
    d: int
    sizes: list = field(default_factory=list)  # (|inner|, |outer|) for d = 1..d


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labelling."""
    return ndimage.label(mask, structure=_EIGHT)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 8-neighbour.

    Pixels outside the image do not count as background, so an object cut by
    the image border has no boundary along the cut.
    """
    m = as_mask(mask)
    return m & ~ndimage.binary_erosion(m, structure=_EIGHT, border_value=1)


def _moore_trace(fg: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    # fg is padded by one background pixel on every side.
    s = start
    back_dir = 0  # backtrack pixel is the west neighbour of the start
    start_back = back_dir
    cur = s
    out = [s]
    limit = 4 * int(fg.sum()) + 16
    for _ in range(limit):
        for k in range(1, 9):
            d = (back_dir + k) % 8
            nb = (cur[0] + _DIRS[d][0], cur[1] + _DIRS[d][1])
            if fg[nb]:
                break
        else:
            return out  # isolated pixel
        prev_d = (d - 1) % 8
        prev = (cur[0] + _DIRS[prev_d][0], cur[1] + _DIRS[prev_d][1])
        new_back = _DIR_INDEX[(prev[0] - nb[0], prev[1] - nb[1])]
        if nb == s and new_back == start_back:
            return out
        out.append(nb)
        cur, back_dir = nb, new_back
    raise RuntimeError("contour tracing did not terminate")


def trace_contours(mask, drop_degenerate: bool = False) -> list[Contour]:
    """Outer boundary of every 8-connected foreground component.

    Moore neighbour tracing with Jacob's stopping criterion. Each contour
    starts at its component's topmost-then-leftmost pixel and runs clockwise.
    Components whose contour has fewer than ``MIN_CONTOUR`` distinct pixels
    raise :class:`DegenerateComponent` unless ``drop_degenerate`` is set.
    """
    m = as_mask(mask)
    if not m.any():
        raise EmptyMask("mask has no foreground pixels")
    labels, n = label_components(m)
    padded = np.pad(labels, 1)
    # first pixel of each label in row-major order is its topmost-leftmost one
    values, first = np.unique(labels.ravel(), return_index=True)
    starts = sorted(int(i) for i, lab in zip(first, values) if lab != 0)
    contours = []
    for idx in starts:
        r, c = divmod(idx, m.shape[1])
        fg = padded == labels[r, c]
        pts = _moore_trace(fg, (r + 1, c + 1))
        pts = np.asarray(pts, dtype=int) - 1
        if len({tuple(p) for p in pts}) < MIN_CONTOUR:
            if drop_degenerate:
                continue
            raise DegenerateComponent(
                f"component at ({r}, {c}) has only {len(pts)} boundary pixels"
            )
        contours.append(Contour(points=pts))
    return contours


def signed_distance(mask) -> np.ndarray:
    """Exact Euclidean distance to the nearest boundary pixel, negative inside."""
    m = as_mask(mask)
    if not m.any():
        raise EmptyMask("mask has no foreground pixels")
    if m.all():
        raise FullMask("mask has no background pixels")
    b = boundary_pixels(m)
    dist = ndimage.distance_transform_edt(~b)
    return np.where(m, -dist, dist)


def _sample(sdf: np.ndarray, pos) -> float:
    r = min(max(int(pos[0]), 0), sdf.shape[0] - 1)
    c = min(max(int(pos[1]), 0), sdf.shape[1] - 1)
    return sdf[r, c]


def compute_normals(contour: Contour, mask, window: int = 5, sdf=None) -> Contour:
    """Attach outward unit normals to ``contour``.

    The tangent at each point is the sum of central differences over
    ``1..window // 2`` neighbours along the closed sequence. It is rotated by
    90 degrees and the sign picked so a one-pixel step along the normal does
    not decrease the signed distance; ties reuse the previous point's sign.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if sdf is None:
        sdf = signed_distance(mask)
    pts = contour.points.astype(float)
    n = len(pts)
    half = window // 2
    tangent = np.zeros_like(pts)
    for k in range(1, half + 1):
        tangent += np.roll(pts, -k, axis=0) - np.roll(pts, k, axis=0)
    # clockwise traversal on screen: (dr, dc) -> (-dc, dr) points outward
    normals = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    length = np.hypot(normals[:, 0], normals[:, 1])
    if np.any(length == 0):
        # fall back to the one-step difference where the window cancels out
        alt = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
        bad = length == 0
        normals[bad] = np.stack([-alt[bad, 1], alt[bad, 0]], axis=1)
        length = np.hypot(normals[:, 0], normals[:, 1])
        length[length == 0] = 1.0
        normals[np.hypot(normals[:, 0], normals[:, 1]) == 0] = (-1.0, 0.0)
    normals /= length[:, None]

    sign = 1.0
    for i in range(n):
        p = contour.points[i]
        fwd = _sample(sdf, p + np.rint(normals[i]))
        bwd = _sample(sdf, p - np.rint(normals[i]))
        if fwd > bwd:
            sign = 1.0
        elif bwd > fwd:
            sign = -1.0
        normals[i] *= sign
    return Contour(
        points=contour.points,
        normals=normals,
        origin_index=contour.origin_index,
        orientation=contour.orientation,
    )


def _bands_at(sdf: np.ndarray, d: int):
    inner = (sdf > -d) & (sdf <= 0)
    outer = (sdf > 0) & (sdf < d)
    return inner, outer


def maximal_bands(mask, sdf=None) -> BandRegions:
    """Grow inner/outer bands around the contour until one stops growing."""
    if sdf is None:
        sdf = signed_distance(mask)
    inner, outer = _bands_at(sdf, 1)
    sizes = [(int(inner.sum()), int(outer.sum()))]
    limit = int(np.ceil(np.hypot(*sdf.shape))) + 2
    for d in range(2, limit + 1):
        inner, outer = _bands_at(sdf, d)
        ni, no = int(inner.sum()), int(outer.sum())
        prev_i, prev_o = sizes[-1]
        sizes.append((ni, no))
        if ni == prev_i or no == prev_o:
            return BandRegions(inner=inner, outer=outer, d=d, sizes=sizes)
    return BandRegions(inner=inner, outer=outer, d=limit, sizes=sizes)


def polygon_signed_area(points) -> float:
    """Shoelace area in (row, col) coordinates; clockwise on screen is negative."""
    p = np.asarray(points, dtype=float)
    r, c = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(r * np.roll(c, -1) - np.roll(r, -1) * c))


def rasterize_polygon(points, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon, edges included."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) < 3:
        raise TooFewPoints("a polygon needs at least 3 points")
    out = np.zeros((height, width), dtype=bool)
    r0, c0 = p[:, 0], p[:, 1]
    r1, c1 = np.roll(r0, -1), np.roll(c0, -1)
    eps = 1e-9
    lo = max(0, int(np.ceil(r0.min() - eps)))
    hi = min(height - 1, int(np.floor(r0.max() + eps)))
    cols = np.arange(width)
    for row in range(lo, hi + 1):
        y = float(row)
        # half-open crossing rule
        cross = (np.minimum(r0, r1) <= y) & (y < np.maximum(r0, r1))
        if cross.any():
            t = (y - r0[cross]) / (r1[cross] - r0[cross])
            xs = np.sort(c0[cross] + t * (c1[cross] - c0[cross]))
            for a, b in zip(xs[0::2], xs[1::2]):
                out[row, (cols >= a - eps) & (cols <= b + eps)] = True
        # pixels lying exactly on an edge
        horiz = (np.abs(r0 - y) < eps) & (np.abs(r1 - y) < eps)
        for a, b in zip(c0[horiz], c1[horiz]):
            out[row, (cols >= min(a, b) - eps) & (cols <= max(a, b) + eps)] = True
        span = (np.minimum(r0, r1) <= y + eps) & (y - eps <= np.maximum(r0, r1)) & ~horiz
        if span.any():
            dr = r1[span] - r0[span]
            t = (y - r0[span]) / dr
            xs = c0[span] + t * (c1[span] - c0[span])
            on = np.abs(xs - np.rint(xs)) < eps
            for x in np.rint(xs[on]).astype(int):
                if 0 <= x < width:
                    out[row, x] = True
    return out


def jaccard(a, b) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    union = (a | b).sum()
    return 1.0 if union == 0 else float((a & b).sum() / union)
