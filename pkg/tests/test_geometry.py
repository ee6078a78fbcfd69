import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqfed import geometry
from aqfed.errors import DegenerateComponent, EmptyMask, FullMask, TooFewPoints
from aqfed.learner import dice_score

from conftest import disk, square


def brute_boundary(m):
    h, w = m.shape
    b = np.zeros_like(m)
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                continue
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and not m[rr, cc]:
                        b[r, c] = True
    return b


def brute_sdf(m):
    b = np.argwhere(brute_boundary(m))
    rr, cc = np.mgrid[0 : m.shape[0], 0 : m.shape[1]]
    d = np.sqrt((rr[..., None] - b[:, 0]) ** 2 + (cc[..., None] - b[:, 1]) ** 2).min(axis=-1)
    return np.where(m, -d, d)


def random_mask(rng, max_side=32):
    h, w = rng.integers(8, max_side + 1, size=2)
    while True:
        m = rng.random((h, w)) < rng.uniform(0.1, 0.7)
        if m.any() and not m.all():
            return m


class TestAsMask:
    def test_rejects_3d(self):
        with pytest.raises(ValueError):
            geometry.as_mask(np.zeros((8, 8, 1)))

    def test_rejects_small(self):
        with pytest.raises(ValueError):
            geometry.as_mask(np.zeros((7, 9)))

    def test_casts_to_bool(self):
        assert geometry.as_mask(np.eye(8)).dtype == bool


class TestSignedDistance:
    def test_matches_brute_force(self, rng):
        for _ in range(50):
            m = random_mask(rng)
            np.testing.assert_array_equal(geometry.signed_distance(m), brute_sdf(m))

    def test_boundary_is_zero(self):
        m = disk(32, 8)
        sdf = geometry.signed_distance(m)
        assert np.all(sdf[geometry.boundary_pixels(m)] == 0)
        assert np.all(sdf[m & ~geometry.boundary_pixels(m)] < 0)
        assert np.all(sdf[~m] > 0)

    def test_empty_and_full(self):
        with pytest.raises(EmptyMask):
            geometry.signed_distance(np.zeros((8, 8), bool))
        with pytest.raises(FullMask):
            geometry.signed_distance(np.ones((8, 8), bool))

    def test_image_border_is_not_boundary(self):
        m = np.zeros((10, 10), bool)
        m[:, :5] = True
        b = geometry.boundary_pixels(m)
        assert b[:, 4].all() and not b[:, :4].any()


class TestTrace:
    def test_square_perimeter(self):
        (c,) = geometry.trace_contours(square(16, 4, 4))
        assert len(c) == 12
        assert tuple(c.points[0]) == (4, 4)
        # clockwise on screen: the second point is to the east
        assert tuple(c.points[1]) == (4, 5)
        assert geometry.polygon_signed_area(c.points) < 0

    def test_points_are_the_boundary(self):
        m = disk(40, 12)
        (c,) = geometry.trace_contours(m)
        traced = {tuple(p) for p in c.points}
        assert traced <= {tuple(p) for p in np.argwhere(geometry.boundary_pixels(m))}
        # on a disk the trace visits exactly the pixels with a background 4-neighbour
        pad = np.pad(m, 1)
        four = m & ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
        assert traced == {tuple(p) for p in np.argwhere(four)}

    def test_consecutive_points_are_neighbours(self):
        (c,) = geometry.trace_contours(disk(40, 12))
        step = np.abs(np.diff(np.vstack([c.points, c.points[:1]]), axis=0))
        assert step.max() == 1

    def test_one_contour_per_component_in_raster_order(self):
        m = np.zeros((32, 32), bool)
        m[20:28, 2:10] = True
        m[3:9, 15:25] = True
        cs = geometry.trace_contours(m)
        assert [tuple(c.points[0]) for c in cs] == [(3, 15), (20, 2)]

    def test_degenerate_component(self):
        m = np.zeros((16, 16), bool)
        m[5:7, 5:7] = True
        with pytest.raises(DegenerateComponent):
            geometry.trace_contours(m)
        assert geometry.trace_contours(m, drop_degenerate=True) == []

    def test_empty(self):
        with pytest.raises(EmptyMask):
            geometry.trace_contours(np.zeros((8, 8), bool))

    def test_json(self):
        (c,) = geometry.trace_contours(square(16, 4, 4))
        assert json.loads(c.to_json())[0] == [4, 4]


class TestNormals:
    def test_disk_normals_point_outward(self):
        m = disk(64, 15)
        (c,) = geometry.trace_contours(m)
        c = geometry.compute_normals(c, m)
        radial = c.points - 31.5
        radial /= np.linalg.norm(radial, axis=1, keepdims=True)
        dots = (c.normals * radial).sum(axis=1)
        assert dots.min() > 0.7
        np.testing.assert_allclose(np.linalg.norm(c.normals, axis=1), 1.0)

    def test_rightmost_point(self):
        m = disk(64, 15)
        (c,) = geometry.trace_contours(m)
        c = geometry.compute_normals(c, m)
        i = np.argmax(c.points[:, 1] * 100 - np.abs(c.points[:, 0] - 31.5))
        np.testing.assert_allclose(c.normals[i], (0.0, 1.0), atol=0.2)

    def test_bad_window(self):
        m = disk(32, 8)
        (c,) = geometry.trace_contours(m)
        with pytest.raises(ValueError):
            geometry.compute_normals(c, m, window=4)


class TestBands:
    def test_half_plane(self):
        m = np.zeros((16, 16), bool)
        m[:, :8] = True
        bands = geometry.maximal_bands(m)
        # the inner side is 8 columns wide and is used up at d = 8
        assert bands.d == 9
        assert bands.sizes[-2] == (16 * 8, 16 * 7)
        assert bands.outer.sum() == 16 * 8
        assert bands.inner.sum() == 16 * 8

    def test_stop_rule(self, rng):
        for _ in range(20):
            m = random_mask(rng)
            b = geometry.maximal_bands(m)
            ni, no = b.sizes[-1]
            pi, po = b.sizes[-2]
            assert ni == pi or no == po
            # every earlier step grew on both sides
            for (a, c), (a0, c0) in zip(b.sizes[1:-1], b.sizes[:-2]):
                assert a > a0 and c > c0
            assert not (b.inner & b.outer).any()
            assert np.all(m[b.inner]) and not np.any(m[b.outer])


class TestRasterize:
    def test_square(self):
        pts = np.array([(2, 2), (2, 7), (7, 7), (7, 2)], float)
        out = geometry.rasterize_polygon(pts, 12, 12)
        assert out.sum() == 36
        assert out[2:8, 2:8].all()

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            geometry.rasterize_polygon(np.zeros((2, 2)), 8, 8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_convex_polygon_matches_half_planes(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(3, 12)
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        if np.max(np.diff(np.r_[ang, ang[0] + 2 * np.pi])) >= np.pi:
            return  # not a convex polygon around the centre
        r = rng.uniform(3, 9)
        pts = np.column_stack([12 + r * np.sin(ang), 12 + r * np.cos(ang)])
        out = geometry.rasterize_polygon(pts, 24, 24)
        rr, cc = np.mgrid[0:24, 0:24]
        inside = np.ones((24, 24), bool)
        nxt = np.roll(pts, -1, axis=0)
        for (r0, c0), (r1, c1) in zip(pts, nxt):
            cross = (r1 - r0) * (cc - c0) - (c1 - c0) * (rr - r0)
            inside &= cross <= 1e-7
        # points far from every edge must agree; edge pixels may differ by rounding
        sdf_edge = np.full((24, 24), np.inf)
        for (r0, c0), (r1, c1) in zip(pts, nxt):
            d = np.array([r1 - r0, c1 - c0])
            t = np.clip(((rr - r0) * d[0] + (cc - c0) * d[1]) / (d @ d), 0, 1)
            sdf_edge = np.minimum(sdf_edge, np.hypot(rr - r0 - t * d[0], cc - c0 - t * d[1]))
        far = sdf_edge > 1e-6
        np.testing.assert_array_equal(out[far], inside[far])


class TestDice:
    def test_identical(self):
        m = square(16, 4, 6)
        assert dice_score(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8), bool)
        b = np.zeros((8, 8), bool)
        a[0:2, 0:2] = True
        b[5:7, 5:7] = True
        assert dice_score(a, b) == 0.0

    def test_shifted_block(self):
        a = np.zeros((8, 8), bool)
        b = np.zeros((8, 8), bool)
        a[2:4, 2:5] = True
        b[2:4, 3:6] = True
        assert dice_score(a, b) == pytest.approx(2 * 4 / 12, abs=1e-4)
        assert round(dice_score(a, b), 4) == 0.6667

    def test_jaccard(self):
        a = np.zeros((8, 8), bool)
        b = np.zeros((8, 8), bool)
        a[2:4, 2:5] = True
        b[2:4, 3:6] = True
        assert geometry.jaccard(a, b) == pytest.approx(4 / 8)
        assert geometry.jaccard(a & False, b & False) == 1.0
