import logging

import numpy as np
import pytest
from scipy import ndimage

from fmo import stabilize as sb


def textured(h=96, w=128, seed=0):
    rng = np.random.default_rng(seed)
    g = ndimage.gaussian_filter(rng.uniform(size=(h, w)), 2.0)
    g = (g - g.min()) / (g.max() - g.min())
    return np.repeat(g[..., None], 3, axis=2)


def checkerboard(h=64, w=64, cell=8):
    yy, xx = np.mgrid[0:h, 0:w]
    g = ((yy // cell + xx // cell) % 2).astype(float)
    return np.repeat(g[..., None], 3, axis=2)


def test_corners_uniform_is_empty():
    assert len(sb.detect_corners(np.full((32, 32, 3), 0.4))) == 0


def test_corners_single_pixel():
    f = np.zeros((32, 32, 3))
    f[12, 20] = 1.0
    pts = sb.detect_corners(f)
    assert len(pts) >= 1
    assert np.abs(pts[0] - [20, 12]).max() <= 1


def test_corners_checkerboard_junctions():
    pts = sb.detect_corners(checkerboard(), max_n=100)
    inner = pts[(pts >= 6).all(axis=1) & (pts <= 57).all(axis=1)]
    assert len(inner) >= 20
    # junctions of 8-px cells sit between pixels 8k-1 and 8k
    off = np.minimum((inner + 0.5) % 8, 8 - (inner + 0.5) % 8)
    assert np.all(off <= 1.0)


def test_corners_spacing_and_small_frame():
    pts = sb.detect_corners(textured(), max_n=50, min_dist=8)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)) + np.eye(len(pts)) * 99
    assert d.min() >= 8
    with pytest.raises(ValueError):
        sb.detect_corners(np.zeros((10, 40, 3)))


def test_match_identity():
    f = textured()
    pts = sb.detect_corners(f)
    cs = sb.match_features(f, pts, f, pts)
    assert len(cs) == len(pts)
    for c in cs:
        assert np.array_equal(c.pa, c.pb) and c.score == pytest.approx(1.0)


def test_match_shift():
    f = textured(seed=1)
    g = np.roll(f, 5, axis=1)
    pa, pb = sb.detect_corners(f), sb.detect_corners(g)
    cs = sb.match_features(f, pa, g, pb, radius=30)
    interior = [c for c in cs if 10 < c.pa[0] < 110]
    assert len(interior) >= 5
    for c in interior:
        np.testing.assert_allclose(c.pb - c.pa, [5, 0])


def test_match_unrelated_noise_is_sparse():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(80, 80, 3)), rng.uniform(size=(80, 80, 3))
    pa, pb = sb.detect_corners(a, 100), sb.detect_corners(b, 100)
    cs = sb.match_features(a, pa, b, pb)
    assert len(cs) < 0.1 * len(pa)


def _cs(src, dst):
    return [sb.Correspondence(np.array(a), np.array(b), 1.0) for a, b in zip(src, dst)]


def test_ransac_exact_translation():
    rng = np.random.default_rng(3)
    src = rng.uniform(0, 100, size=(20, 2))
    t, inl = sb.ransac_affine(_cs(src, src + [5, -3]))
    np.testing.assert_allclose(t, [[1, 0, 5], [0, 1, -3]], atol=1e-6)
    assert inl.all()


def test_ransac_half_outliers():
    rng = np.random.default_rng(4)
    A = np.array([[1.02, 0.05, 3.0], [-0.04, 0.98, -2.0]])
    src = rng.uniform(0, 100, size=(40, 2))
    dst = src @ A[:, :2].T + A[:, 2]
    bad = np.arange(40) % 2 == 1
    dst[bad] += rng.uniform(20, 60, size=(bad.sum(), 2))
    t, inl = sb.ransac_affine(_cs(src, dst), iters=500, seed=1)
    assert np.array_equal(inl, ~bad)
    res = np.linalg.norm(src[~bad] @ t[:, :2].T + t[:, 2] - dst[~bad], axis=1)
    assert res.max() <= 0.1


def test_ransac_collinear_is_degenerate():
    src = np.array([[0, 0], [1, 1], [2, 2]], float)
    with pytest.raises(sb.Degenerate):
        sb.ransac_affine(_cs(src, src + 1))
    with pytest.raises(sb.Degenerate):
        sb.ransac_affine(_cs(src[:2], src[:2]))


def test_warp_identity_and_integer_shift():
    f = textured()
    w, valid = sb.warp(f, sb.identity())
    assert np.array_equal(w, f) and valid.all()
    t = np.array([[1.0, 0, 3], [0, 1.0, 2]])
    w, valid = sb.warp(f, t)
    np.testing.assert_allclose(w[2:, 3:], f[:-2, :-3], atol=1e-12)
    assert not valid[:2].any() and not valid[:, :3].any()
    assert np.all(w[~valid] == 0)


def test_warp_round_trip_and_composition():
    f = textured(seed=5)
    t1 = np.array([[np.cos(0.05), -np.sin(0.05), 2.3], [np.sin(0.05), np.cos(0.05), -1.7]])
    t2 = np.array([[1.01, 0.0, -0.6], [0.0, 0.99, 1.1]])
    back, _ = sb.warp(sb.warp(f, t1)[0], sb.invert(t1))
    inner = (slice(15, -15), slice(15, -15))
    assert np.sqrt(np.mean((back[inner] - f[inner]) ** 2)) <= 0.01
    two, _ = sb.warp(sb.warp(f, t1)[0], t2)
    one, _ = sb.warp(f, sb.compose(t2, t1))
    assert np.sqrt(np.mean((two[inner] - one[inner]) ** 2)) <= 0.02


def test_register_recovers_camera_shift():
    f = textured(seed=6)
    g, _ = sb.warp(f, np.array([[1.0, 0, 4.0], [0, 1.0, -2.0]]))
    t = sb.register(f, g)
    np.testing.assert_allclose(t[:, 2], [4.0, -2.0], atol=0.3)


def test_register_falls_back_to_identity(caplog):
    flat = np.full((40, 40, 3), 0.5)
    with caplog.at_level(logging.WARNING, logger="fmo.stabilize"):
        assert np.array_equal(sb.register(flat, flat), sb.identity())
    assert "identity" in caplog.text


def test_align_triplet_maps_coordinates():
    f = textured(seed=7)
    prev, _ = sb.warp(f, np.array([[1.0, 0, -3.0], [0, 1.0, 0.0]]))
    nxt, _ = sb.warp(f, np.array([[1.0, 0, 3.0], [0, 1.0, 0.0]]))
    a = sb.align_triplet(prev, f, nxt)
    p = sb.apply_affine(a.t_prev, [[50.0, 40.0]])
    np.testing.assert_allclose(p, [[53.0, 40.0]], atol=0.3)
    inner = (slice(10, -10), slice(10, -10))
    assert np.abs(a.prev[inner] - f[inner]).mean() < 0.01
