"""Camera-motion compensation by sparse matching and RANSAC affine fitting."""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)


class Degenerate(RuntimeError):
    pass


@dataclass
class Correspondence:
    pa: np.ndarray  # (x, y) in frame A
    pb: np.ndarray  # (x, y) in frame B
    score: float


def _gray(f):
    f = np.asarray(f, dtype=np.float64)
    return f.mean(axis=2) if f.ndim == 3 else f


def detect_corners(f, max_n=200, min_dist=8, rel_thresh=0.01, sigma=1.5):
    """Shi-Tomasi corners, strongest first, at least ``min_dist`` px apart.

    Returns an ``(n, 2)`` array of ``(x, y)`` integer pixel positions.
    """
    g = _gray(f)
    if g.shape[0] < 16 or g.shape[1] < 16:
        raise ValueError("frame must be at least 16x16")
    gy = ndimage.sobel(g, axis=0, mode="nearest") / 8.0
    gx = ndimage.sobel(g, axis=1, mode="nearest") / 8.0
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    tr = 0.5 * (sxx + syy)
    resp = tr - np.sqrt(np.maximum(tr * tr - (sxx * syy - sxy * sxy), 0.0))
    peak = resp.max()
    if peak <= 1e-10:
        return np.zeros((0, 2), dtype=np.int64)
    local_max = resp == ndimage.maximum_filter(resp, size=3, mode="nearest")
    cand = np.argwhere(local_max & (resp > rel_thresh * peak))
    order = np.argsort(-resp[cand[:, 0], cand[:, 1]], kind="stable")
    keep = []
    for rc in cand[order]:
        if all((rc[0] - k[0]) ** 2 + (rc[1] - k[1]) ** 2 >= min_dist * min_dist for k in keep):
            keep.append(rc)
            if len(keep) >= max_n:
                break
    if not keep:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(keep)[:, ::-1].copy()


def _patches(g, pts, half):
    p = np.pad(g, half, mode="reflect")
    out = np.empty((len(pts), (2 * half + 1) ** 2))
    for i, (x, y) in enumerate(np.asarray(pts, dtype=int)):
        patch = p[y:y + 2 * half + 1, x:x + 2 * half + 1].ravel()
        patch = patch - patch.mean()
        n = np.linalg.norm(patch)
        out[i] = patch / n if n > 1e-12 else 0.0
    return out


def match_features(a, pa, b, pb, radius=30.0, min_score=0.8, half=5):
    """Mutual-best NCC matching of 11x11 patches within ``radius`` px."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    if len(pa) == 0 or len(pb) == 0:
        return []
    da, db = _patches(_gray(a), pa, half), _patches(_gray(b), pb, half)
    ncc = da @ db.T
    dist2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    ncc = np.where(dist2 <= radius * radius, ncc, -np.inf)
    best_b = np.argmax(ncc, axis=1)
    best_a = np.argmax(ncc, axis=0)
    out = []
    for i, j in enumerate(best_b):
        s = ncc[i, j]
        if best_a[j] == i and s >= min_score:
            out.append(Correspondence(pa[i].copy(), pb[j].copy(), float(min(s, 1.0))))
    return out


def _fit_affine(src, dst):
    # least squares dst = A @ [x, y, 1]
    X = np.hstack([src, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(X, dst, rcond=None)
    return sol.T


def _residuals(t, src, dst):
    pred = src @ t[:, :2].T + t[:, 2]
    return np.linalg.norm(pred - dst, axis=1)


def ransac_affine(cs, iters=500, tol=2.0, seed=0):
    """Affine map A -> B maximizing the RANSAC inlier count.

    Returns ``(T, inliers)`` with ``T`` a 2x3 matrix and ``inliers`` a bool
    array over ``cs``.  Raises Degenerate when no valid model exists.
    """
    if len(cs) < 3:
        raise Degenerate("need at least 3 correspondences")
    src = np.array([c.pa for c in cs], dtype=np.float64)
    dst = np.array([c.pb for c in cs], dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(cs)
    best = None
    best_count = 0
    for _ in range(iters):
        idx = rng.choice(n, 3, replace=False)
        s = src[idx]
        area = (s[1, 0] - s[0, 0]) * (s[2, 1] - s[0, 1]) - (s[2, 0] - s[0, 0]) * (s[1, 1] - s[0, 1])
        if abs(area) < 1e-6:
            continue
        t = _fit_affine(s, dst[idx])
        inl = _residuals(t, src, dst) <= tol
        cnt = int(inl.sum())
        if cnt > best_count:
            best, best_count = inl, cnt
            if cnt == n:
                break
    if best is None or best_count < 3:
        raise Degenerate("no non-collinear sample with 3 inliers")
    s = src[best]
    centered = s - s.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-6) < 2:
        raise Degenerate("collinear inlier set")
    t = _fit_affine(s, dst[best])
    if abs(np.linalg.det(t[:, :2])) < 1e-9:
        raise Degenerate("singular model")
    inl = _residuals(t, src, dst) <= tol
    return t, inl


def identity():
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def invert(t):
    a = np.linalg.inv(t[:, :2])
    return np.hstack([a, -(a @ t[:, 2])[:, None]])


def compose(t2, t1):
    """Affine map applying ``t1`` then ``t2``."""
    return np.hstack([t2[:, :2] @ t1[:, :2], (t2[:, :2] @ t1[:, 2] + t2[:, 2])[:, None]])


def warp(f, t):
    """Resample ``f`` so that output(p) = f(t^-1 p), bilinear.

    Returns ``(frame, valid)``; pixels mapping outside ``f`` are 0 and
    marked False in ``valid``.
    """
    f = np.asarray(f, dtype=np.float64)
    h, w = f.shape[:2]
    inv = invert(np.asarray(t, dtype=np.float64))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.minimum(np.floor(sx).astype(int), w - 2) if w > 1 else np.zeros_like(sx, dtype=int)
    y0 = np.minimum(np.floor(sy).astype(int), h - 2) if h > 1 else np.zeros_like(sy, dtype=int)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if f.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    out = ((1 - fy) * ((1 - fx) * f[y0, x0] + fx * f[y0, x1])
           + fy * ((1 - fx) * f[y1, x0] + fx * f[y1, x1]))
    vm = valid[..., None] if f.ndim == 3 else valid
    return np.where(vm, out, 0.0), valid


def register(src, dst, max_corners=300, radius=40.0, iters=500, tol=2.0, seed=0,
             min_inliers=8):
    """Affine transform mapping ``src`` coordinates onto ``dst``.

    Falls back to the identity (with a warning) when estimation fails or
    is supported by fewer than ``min_inliers`` matches; a handful of
    matches is typically on the moving object itself.
    """
    pa = detect_corners(src, max_corners)
    pb = detect_corners(dst, max_corners)
    cs = match_features(src, pa, dst, pb, radius)
    try:
        t, inl = ransac_affine(cs, iters, tol, seed)
    except Degenerate as e:
        log.warning("stabilization failed (%s); using identity", e)
        return identity()
    if int(np.count_nonzero(inl)) < min_inliers:
        log.warning("stabilization failed (only %d inliers); using identity", int(np.count_nonzero(inl)))
        return identity()
    return t


@dataclass
class AlignedTriplet:
    prev: np.ndarray
    nxt: np.ndarray
    valid: np.ndarray
    t_prev: np.ndarray  # maps prev coordinates into cur coordinates
    t_next: np.ndarray


def align_triplet(prev, cur, nxt, seed=0):
    """Register ``prev`` and ``nxt`` onto ``cur`` and keep the transforms."""
    tp = register(prev, cur, seed=seed)
    tn = register(nxt, cur, seed=seed + 1)
    pw, vp = warp(prev, tp)
    nw, vn = warp(nxt, tn)
    return AlignedTriplet(pw, nw, vp & vn, tp, tn)


def stabilize_triplet(prev, cur, nxt, seed=0):
    """Warp ``prev`` and ``nxt`` into the coordinate frame of ``cur``.

    Returns ``(prev_w, nxt_w, valid)`` where ``valid`` marks pixels covered
    by both warped frames.
    """
    a = align_triplet(prev, cur, nxt, seed)
    return a.prev, a.nxt, a.valid


def apply_affine(t, xy):
    """Map (n, 2) x/y points through a 2x3 affine."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    return xy @ np.asarray(t)[:, :2].T + np.asarray(t)[:, 2]
