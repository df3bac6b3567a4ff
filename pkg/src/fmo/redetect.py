"""Window-restricted re-detection gated by similarity to the running model.

Unlike the generic detector, a streak may arrive here in several pieces
(for instance when part of it crosses background of a similar color).
Collinear pieces are merged back into one trajectory.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import detect
from . import imgcore as ic
from .track import LinearSegment


@dataclass
class RedetectConfig:
    window_factor: float = 4.0
    color_thresh: float = 0.3  # Euclidean RGB distance, [0, 1] scale
    radius_thresh: float = 0.4  # relative
    binarize_thresh: float = 0.08
    psi: float = 0.7
    refine: bool = True

    def __post_init__(self):
        if min(self.window_factor, self.color_thresh, self.radius_thresh) <= 0:
            raise ValueError("redetector parameters must be positive")


@dataclass
class _Piece:
    comp: ic.Component
    r: float
    mu: np.ndarray
    a: np.ndarray  # path endpoints, x/y
    b: np.ndarray
    path: ic.PixelPath


def search_window(prev_det, eps, factor, hw):
    """Square (row0, col0, row1, col1) of side ``factor / eps * |P|``, clipped."""
    side = factor / eps * prev_det.length
    cx, cy = prev_det.midpoint
    half = side / 2
    r0 = max(int(math.floor(cy - half)), 0)
    c0 = max(int(math.floor(cx - half)), 0)
    r1 = min(int(math.ceil(cy + half)) + 1, hw[0])
    c1 = min(int(math.ceil(cx + half)) + 1, hw[1])
    return r0, c0, max(r0, r1), max(c0, c1)


def _pieces(prev, cur, nxt, window, cfg, valid=None):
    r0, c0, r1, c1 = window
    crop = [np.asarray(f)[r0:r1, c0:c1] for f in (prev, cur, nxt)]
    v = None if valid is None else np.asarray(valid)[r0:r1, c0:c1]
    delta, _ = detect.delta_image(*crop, cfg.binarize_thresh, v)
    out = []
    for c in ic.connected_components(delta):
        c = ic.Component(c.label, c.mask, (c.bbox[0] + r0, c.bbox[1] + c0,
                                           c.bbox[2] + r0, c.bbox[3] + c0))
        dmap = ic.distance_transform(c)
        try:
            r, path = detect.stroke(c, dmap, cfg.psi, spur_factor=0.5)
        except ic.NotAStroke:
            continue
        mu = detect.path_color(cur, path)
        a, b = path.endpoints
        out.append(_Piece(c, r, mu, np.asarray(a, float), np.asarray(b, float), path))
    return out


def _similar(mu, r, mu0, r0, cfg):
    return (np.linalg.norm(np.asarray(mu) - np.asarray(mu0)) < cfg.color_thresh
            and abs(r - r0) / r0 < cfg.radius_thresh)


def _axis(p):
    d = p.b - p.a
    n = np.hypot(*d)
    if n < 1e-9:
        return None
    return d / n


def _lateral(x, origin, u):
    d = x - origin
    return abs(d[0] * u[1] - d[1] * u[0])


def merge_collinear(pieces, r0, max_gap):
    """Group pieces lying on one line; returns a list of groups.

    Groups grow from the largest piece.  A piece joins when both of its
    endpoints are within ``2 r0`` of the group axis and the gap to the
    group's extent along the axis is at most ``max_gap``.
    """
    left = sorted(pieces, key=lambda p: -p.comp.area)
    groups = []
    while left:
        seed = left.pop(0)
        group = [seed]
        u = _axis(seed)
        if u is None:
            groups.append(group)
            continue
        o = seed.a
        lo, hi = sorted((0.0, float(np.dot(seed.b - o, u))))
        grew = True
        while grew:
            grew = False
            for p in list(left):
                if max(_lateral(p.a, o, u), _lateral(p.b, o, u)) > 2 * r0:
                    continue
                ta, tb = sorted((float(np.dot(p.a - o, u)), float(np.dot(p.b - o, u))))
                gap = max(ta - hi, lo - tb, 0.0)
                if gap > max_gap:
                    continue
                group.append(p)
                left.remove(p)
                lo, hi = min(lo, ta), max(hi, tb)
                grew = True
        groups.append(group)
    return groups


def _rasterize_segment(a, b):
    n = max(int(math.ceil(np.hypot(*(b - a)))), 1)
    t = np.linspace(0, 1, n + 1)[:, None]
    xy = np.rint(a + t * (b - a)).astype(np.int64)
    keep = np.ones(len(xy), dtype=bool)
    keep[1:] = np.any(np.diff(xy, axis=0) != 0, axis=1)
    xy = xy[keep]
    return xy[:, ::-1].copy()


def _group_detection(group, cur):
    area = float(sum(p.comp.area for p in group))
    w = np.array([p.comp.area for p in group], dtype=np.float64)
    r = float(np.dot(w, [p.r for p in group]) / w.sum())
    mu = np.average(np.array([p.mu for p in group]), axis=0, weights=w)
    if len(group) == 1:
        p = group[0]
        return detect.Detection(p.path, r, mu, p.comp, area, detect.expected_area(r, p.path.length),
                                source="redetector")
    pts = np.concatenate([[p.a, p.b] for p in group])
    u = _axis(max(group, key=lambda p: p.comp.area))
    t = (pts - pts[0]) @ u
    a, b = pts[int(np.argmin(t))], pts[int(np.argmax(t))]
    pix = _rasterize_segment(a, b)
    path = ic.PixelPath(pix, float(np.hypot(*(b - a))))
    seg = LinearSegment.from_points(a, b)
    comp = max(group, key=lambda p: p.comp.area).comp
    return detect.Detection(path, r, mu, comp, area, detect.expected_area(r, seg.length),
                            source="redetector", segment=seg)


def _clip_segment(seg, window):
    r0, c0, r1, c1 = window
    lo = np.array([c0, r0], dtype=np.float64)
    hi = np.array([c1 - 1, r1 - 1], dtype=np.float64)
    return LinearSegment.from_points(np.clip(seg.start, lo, hi), np.clip(seg.end, lo, hi))


def redetect(prev, cur, nxt, prev_det, model, cfg=None, valid=None):
    """Look for the modelled object near its previous position.

    Returns a Detection or None.
    """
    cfg = cfg or RedetectConfig()
    eps = model.eps
    if eps is None or not 0 < eps <= 1:
        raise ValueError("model exposure fraction must lie in (0, 1]")
    if prev_det.length <= 0:
        return None
    ic._check_same_shape(prev, cur, nxt)
    cur = np.asarray(cur, dtype=np.float64)
    window = search_window(prev_det, eps, cfg.window_factor, cur.shape[:2])
    if window[2] <= window[0] or window[3] <= window[1]:
        return None
    mu0, r0 = np.asarray(model.mu), float(model.r)
    pieces = [p for p in _pieces(prev, cur, nxt, window, cfg, valid)
              if _similar(p.mu, p.r, mu0, r0, cfg)]
    if not pieces:
        return None
    groups = merge_collinear(pieces, r0, prev_det.length / eps)
    best = max(groups, key=lambda g: sum(p.comp.area for p in g))
    det = _group_detection(best, cur)
    if cfg.refine:
        r_core, seg_before, mu_path = det.r, det.segment, det.mu
        r_0, c_0, r_1, c_1 = window
        bg = np.array(cur)
        bg[r_0:r_1, c_0:c_1] = detect.triplet_background(
            *(np.asarray(f, dtype=np.float64)[r_0:r_1, c_0:c_1] for f in (prev, cur, nxt)))
        detect.refine_detection(det, cur, bg, limit=window)
        if not _similar(mu_path, det.r, mu0, r0, cfg):
            det.r, det.segment = r_core, seg_before
    if det.segment is not None:
        det.segment = _clip_segment(det.segment, window)
    return det
