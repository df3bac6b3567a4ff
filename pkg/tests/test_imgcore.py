import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from skimage.morphology import thin as sk_thin

from fmo import imgcore as ic


def flood_fill_count(b):
    b = np.asarray(b, dtype=bool)
    seen = np.zeros_like(b)
    n = 0
    for r0, c0 in zip(*np.nonzero(b)):
        if seen[r0, c0]:
            continue
        n += 1
        stack = [(r0, c0)]
        seen[r0, c0] = True
        while stack:
            r, c = stack.pop()
            for dr, dc in itertools.product((-1, 0, 1), repeat=2):
                q = (r + dr, c + dc)
                if 0 <= q[0] < b.shape[0] and 0 <= q[1] < b.shape[1] and b[q] and not seen[q]:
                    seen[q] = True
                    stack.append(q)
    return n


def brute_edt(mask):
    """Distance of every pixel to the nearest background pixel centre (padded by 1)."""
    m = np.pad(mask, 1)
    bg = np.argwhere(~m).astype(float)
    out = np.zeros(m.shape)
    for r, c in np.argwhere(m):
        out[r, c] = np.sqrt(((bg - (r, c)) ** 2).sum(axis=1)).min()
    return out[1:-1, 1:-1]


def component(mask):
    cs = ic.connected_components(mask)
    assert len(cs) == 1
    return cs[0]


def open_disc(r, size=None):
    size = size or 2 * int(r) + 5
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - c) ** 2 + (xx - c) ** 2 < r * r


# -- differences and binarization ------------------------------------------

def test_abs_diff_identity_and_extremes():
    a = np.random.default_rng(0).uniform(size=(5, 6, 3))
    assert np.all(ic.abs_diff(a, a) == 0)
    assert np.all(ic.abs_diff(np.ones((4, 4, 3)), np.zeros((4, 4, 3))) == 1)


def test_abs_diff_matches_per_pixel_recomputation():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(7, 9, 3)), rng.uniform(size=(7, 9, 3))
    g = ic.abs_diff(a, b)
    for r in range(7):
        for c in range(9):
            assert g[r, c] == max(abs(a[r, c, k] - b[r, c, k]) for k in range(3))


def test_abs_diff_dimension_mismatch():
    with pytest.raises(ic.DimensionMismatch):
        ic.abs_diff(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_binarize_is_strict():
    g = np.array([[0.0, 0.1, 0.1000001]])
    assert ic.binarize(g, 0.1).tolist() == [[False, False, True]]
    assert not ic.binarize(np.zeros((3, 3)), 0.1).any()
    step = np.concatenate([np.zeros((2, 2)), np.ones((2, 2))], axis=1)
    assert ic.binarize(step, 0.5).tolist() == [[False, False, True, True]] * 2


def test_binarize_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        ic.binarize(np.zeros((2, 2)), 0.0)


def test_combine_delta_exhaustive_2x2():
    for bits in itertools.product([False, True], repeat=12):
        a = np.array(bits, dtype=bool).reshape(3, 2, 2)
        out = ic.combine_delta(a[0], a[1], a[2])
        assert np.array_equal(out, a[0] & a[1] & ~a[2])


def test_combine_delta_special_cases():
    t, f = np.ones((3, 3), bool), np.zeros((3, 3), bool)
    assert ic.combine_delta(t, t, f).all()
    assert not ic.combine_delta(t, t, t).any()


# -- connected components ----------------------------------------------------

def test_components_empty_and_diagonal():
    assert ic.connected_components(np.zeros((4, 4), bool)) == []
    b = np.zeros((3, 3), bool)
    b[0, 0] = b[1, 1] = True
    cs = ic.connected_components(b)
    assert len(cs) == 1 and cs[0].area == 2


@settings(max_examples=60, deadline=None)
@given(arrays(bool, (12, 14)))
def test_components_match_flood_fill(b):
    cs = ic.connected_components(b)
    assert len(cs) == flood_fill_count(b)
    assert sorted(c.label for c in cs) == list(range(1, len(cs) + 1))
    assert sum(c.area for c in cs) == int(b.sum())
    for c in cs:
        r0, c0, r1, c1 = c.bbox
        full = c.full_mask(b.shape)
        rows, cols = np.nonzero(full)
        assert (r0, c0, r1, c1) == (rows.min(), cols.min(), rows.max() + 1, cols.max() + 1)
        assert c.area == full.sum()


# -- distance transform ------------------------------------------------------

def test_distance_single_pixel_and_line():
    d = ic.distance_transform(component(np.ones((1, 1), bool)))
    assert d.max == 1.0
    line = np.zeros((3, 9), bool)
    line[1, 1:8] = True
    d = ic.distance_transform(component(line))
    vals = d.values[d.values > 0]
    assert np.all(vals == 1.0)


def test_distance_disc_radius():
    yy, xx = np.mgrid[0:25, 0:25]
    disc = (yy - 12) ** 2 + (xx - 12) ** 2 <= 100
    d = ic.distance_transform(component(disc))
    assert 9 <= d.max <= 11


@settings(max_examples=40, deadline=None)
@given(arrays(bool, (10, 11)))
def test_distance_matches_brute_force(b):
    for c in ic.connected_components(b):
        d = ic.distance_transform(c)
        np.testing.assert_allclose(d.values, brute_edt(c.mask), atol=1e-12)


@pytest.mark.parametrize("use_numba", [False, True])
def test_edt_backends_agree(use_numba):
    rng = np.random.default_rng(3)
    m = rng.uniform(size=(30, 40)) > 0.3
    ref = ic.edt_squared(m, use_numba=False)
    np.testing.assert_array_equal(ic.edt_squared(m, use_numba=use_numba), ref)


# -- thinning ----------------------------------------------------------------

def test_thin_keeps_thin_line():
    line = np.zeros((5, 12), bool)
    line[2, 1:11] = True
    assert np.array_equal(ic.thin(line), line)


def test_thin_bar_matches_reference():
    bar = np.zeros((7, 24), bool)
    bar[2:5, 2:22] = True
    sk = ic.thin(bar)
    rows, cols = np.nonzero(sk)
    assert len(set(rows)) == 1 and cols.max() - cols.min() + 1 >= 16
    assert np.array_equal(sk, sk_thin(bar))


def test_thin_disc_to_at_most_two_pixels():
    for r in (3, 5.5, 8, 12):
        sk = ic.thin(open_disc(r))
        assert 1 <= sk.sum() <= 2


@settings(max_examples=60, deadline=None)
@given(arrays(bool, (14, 14)))
def test_thin_idempotent_and_topology(b):
    sk = ic.thin(b)
    assert np.array_equal(ic.thin(sk), sk)
    assert flood_fill_count(sk) == flood_fill_count(b)
    assert not (sk & ~b).any()


def test_thin_backends_agree():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = rng.uniform(size=(24, 24)) > 0.35
        assert np.array_equal(ic.thin(m, use_numba=True), ic.thin(m, use_numba=False))


# -- paths -------------------------------------------------------------------

def test_path_straight_run():
    s = np.zeros((3, 7), bool)
    s[1, 1:6] = True
    p = ic.path_from_skeleton(s)
    assert p.length == 4.0 and len(p.pixels) == 5


def test_path_diagonal_staircase():
    s = np.eye(5, dtype=bool)
    assert ic.path_from_skeleton(s).length == pytest.approx(4 * math.sqrt(2))


def test_path_single_pixel():
    p = ic.path_from_skeleton(np.ones((1, 1), bool))
    assert p.length == 0.0


def test_path_rejects_branch_and_split():
    y = np.zeros((7, 7), bool)
    y[0:4, 3] = True
    y[4, 2] = y[5, 1] = True
    y[4, 4] = y[5, 5] = True
    with pytest.raises(ic.NotAStroke):
        ic.path_from_skeleton(y)
    two = np.zeros((5, 9), bool)
    two[2, 0:3] = True
    two[2, 6:9] = True
    with pytest.raises(ic.NotAStroke):
        ic.path_from_skeleton(two)


def test_path_origin_offset_and_order():
    s = np.zeros((3, 5), bool)
    s[1, 0:5] = True
    p = ic.path_from_skeleton(s, origin=(10, 20))
    assert p.pixels[0].tolist() == [11, 20] and p.pixels[-1].tolist() == [11, 24]
    np.testing.assert_array_equal(p.xy[0], [20, 11])
    steps = np.abs(np.diff(p.pixels, axis=0)).max(axis=1)
    assert np.all(steps == 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([(0, 1), (1, 1), (1, 0), (-1, 1)]), min_size=1, max_size=12))
def test_path_length_bounds(moves):
    pts = [(15, 2)]
    for dr, dc in moves:
        pts.append((pts[-1][0] + dr, pts[-1][1] + dc))
    s = np.zeros((32, 32), bool)
    for p in pts:
        s[p] = True
    try:
        path = ic.path_from_skeleton(s)
    except ic.NotAStroke:
        return  # the walk may touch itself diagonally
    n = len(path.pixels) - 1
    assert n - 1e-9 <= path.length <= math.sqrt(2) * n + 1e-9


def test_prune_spurs_removes_short_branch_only():
    s = np.zeros((9, 20), bool)
    s[4, 1:19] = True
    s[3, 9] = s[2, 9] = True  # 2-px spur
    pruned = ic.prune_spurs(s, 3)
    assert ic.path_from_skeleton(pruned).length >= 16
    line = np.zeros((3, 6), bool)
    line[1, 1:5] = True
    assert np.array_equal(ic.prune_spurs(line, 10), line)


# -- regions -----------------------------------------------------------------

def square(x0, y0, s):
    return ic.PolyRegion(points=np.array([[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]], float))


def test_region_iou_examples():
    assert ic.region_iou(square(0, 0, 10), square(0, 0, 10)) == 1.0
    assert ic.region_iou(square(0, 0, 10), square(30, 30, 10)) == 0.0
    assert ic.region_iou(square(0, 0, 10), square(5, 0, 10)) == pytest.approx(1 / 3, abs=0.02)


def test_region_iou_degenerate_and_mask():
    line = ic.PolyRegion(points=np.array([[0, 0], [5, 0], [10, 0]], float))
    assert ic.region_iou(line, square(0, 0, 10)) == 0.0
    m = np.ones((10, 10), bool)
    assert ic.region_iou(ic.PolyRegion(mask=m, offset=(0, 0)), ic.PolyRegion(mask=m, offset=(0, 0))) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 20), st.integers(0, 20), st.integers(3, 15), st.integers(0, 20), st.integers(0, 20),
       st.integers(3, 15))
def test_region_iou_symmetric_bounded(x0, y0, s0, x1, y1, s1):
    a, b = square(x0, y0, s0), square(x1, y1, s1)
    v = ic.region_iou(a, b)
    assert 0 <= v <= 1
    assert v == ic.region_iou(b, a)
    assert ic.region_iou(a, a) == 1.0
