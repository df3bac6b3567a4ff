"""Generic FMO detector working on a stabilized frame triplet."""

from dataclasses import dataclass
import math

import numpy as np

from . import imgcore as ic


@dataclass
class DetectorConfig:
    binarize_thresh: float = 0.08
    psi: float = 0.7
    gamma: float = 0.2
    min_path_len_factor: float = 1.0
    min_radius: float = 1.5  # components thinner than this are sensor noise
    spur_factor: float = 0.5  # prune skeleton side branches up to this * r
    refine: bool = True  # sub-pixel fit of endpoints, radius and color

    def __post_init__(self):
        if not 0 < self.psi < 1 or not 0 < self.gamma < 1:
            raise ValueError("psi and gamma must lie in (0, 1)")


@dataclass
class Detection:
    path: ic.PixelPath
    r: float
    mu: np.ndarray
    component: ic.Component = None
    area: float = 0.0
    model_area: float = 0.0
    source: str = "detector"
    segment: object = None  # refined LinearSegment, when available
    mu_object: np.ndarray = None  # color of the unblurred object
    r_core: float = None  # radius read off the distance map

    @property
    def polyline(self):
        """(n, 2) x, y vertices of the trajectory."""
        if self.segment is not None:
            return np.stack([self.segment.start, self.segment.end])
        return self.path.xy

    @property
    def length(self):
        if self.segment is not None:
            return self.segment.length
        return self.path.length

    @property
    def endpoints(self):
        p = self.polyline
        return p[0], p[-1]

    @property
    def midpoint(self):
        a, b = self.endpoints
        if self.segment is not None:
            return (a + b) / 2
        return self.path.midpoint


@dataclass
class ModelCheck:
    accepted: bool
    r: float
    path: ic.PixelPath
    area: float
    model_area: float
    reason: str = ""


def expected_area(r, length):
    """Area of a disc of radius ``r`` swept over ``length`` px."""
    return 2 * r * length + math.pi * r * r


def stroke(c, dmap, psi, spur_factor=0.0):
    """Radius and trajectory of a component: ``(r, path)``.

    Raises NotAStroke when the thinned core is not a single stroke.
    """
    r = dmap.max
    core = dmap.values > psi * r
    skel = ic.thin(core)
    if spur_factor > 0:
        skel = ic.prune_spurs(skel, max(2, int(math.ceil(spur_factor * r))))
    return r, ic.path_from_skeleton(skel, origin=dmap.origin)


def check_model(c, dmap, cfg):
    a = float(c.area)
    try:
        r, path = stroke(c, dmap, cfg.psi, cfg.spur_factor)
    except ic.NotAStroke as e:
        return ModelCheck(False, dmap.max, None, a, float("nan"), f"not a stroke: {e}")
    if r < cfg.min_radius:
        return ModelCheck(False, r, path, a, float("nan"), "radius below minimum")
    a_hat = expected_area(r, path.length)
    if path.length < cfg.min_path_len_factor * r:
        return ModelCheck(False, r, path, a, a_hat, "path shorter than radius")
    if abs(a / a_hat - 1) >= cfg.gamma:
        return ModelCheck(False, r, path, a, a_hat, "area mismatch")
    return ModelCheck(True, r, path, a, a_hat)


def path_color(frame, path):
    rows, cols = path.pixels[:, 0], path.pixels[:, 1]
    return np.asarray(frame, dtype=np.float64)[rows, cols].mean(axis=0)


def triplet_background(prev, cur, nxt):
    """Per-pixel median of the triplet.

    Each pixel shows the object in at most one of the three frames, so
    the median is the background wherever streaks do not overlap.
    """
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in (prev, cur, nxt)])
    return np.median(stack, axis=0)


def refine_detection(det, cur, bg, limit=None):
    """Fit endpoints, radius and object color of ``det`` to the frame.

    ``limit`` optionally restricts the fitting window (row0, col0, row1, col1).
    """
    from . import track

    a, b = det.endpoints
    if np.allclose(a, b):
        b = a + np.array([1.0, 0.0])
    seg0 = track.LinearSegment.from_points(a, b)
    window = seg0.bbox(2.5 * det.r + 2, cur.shape[:2])
    if limit is not None:
        window = (max(window[0], limit[0]), max(window[1], limit[1]),
                  min(window[2], limit[2]), min(window[3], limit[3]))
    fit = track.fit_streak(cur, bg, seg0, det.r, window)
    det.segment = fit.segment
    det.r_core = det.r
    det.r = fit.r
    det.mu_object = fit.mu
    return det


def delta_image(prev, cur, nxt, thresh, valid=None):
    """Binary image of content present in ``cur`` only."""
    dp = ic.binarize(ic.abs_diff(cur, prev), thresh)
    d0 = ic.binarize(ic.abs_diff(nxt, prev), thresh)
    dm = ic.binarize(ic.abs_diff(cur, nxt), thresh)
    delta = ic.combine_delta(dp, dm, d0)
    if valid is not None:
        delta &= valid
    return delta, d0


def detect_fmo(prev, cur, nxt, cfg=None, valid=None):
    """All components of the triplet's difference image that fit the FMO model.

    Detections are ordered by component label.
    """
    cfg = cfg or DetectorConfig()
    ic._check_same_shape(prev, cur, nxt)
    delta, _ = delta_image(prev, cur, nxt, cfg.binarize_thresh, valid)
    bg = None
    out = []
    for c in ic.connected_components(delta):
        dmap = ic.distance_transform(c)
        chk = check_model(c, dmap, cfg)
        if not chk.accepted:
            continue
        det = Detection(chk.path, chk.r, path_color(cur, chk.path), c,
                        chk.area, chk.model_area, "detector")
        if cfg.refine:
            if bg is None:
                bg = triplet_background(prev, cur, nxt)
            refine_detection(det, np.asarray(cur, dtype=np.float64), bg)
        out.append(det)
    return out
