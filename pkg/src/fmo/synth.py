"""Forward-model rendering: synthetic sequences, super-resolution, highlighting.

Frames are composited as ``I = (1 - H M) B + H F`` with the operators from
:mod:`fmo.deblur`, so the renderer and the appearance estimator share one
discretization.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import ndimage

from . import deblur as db
from . import imgcore as ic


class OutOfBounds(ValueError):
    pass


@dataclass
class SceneSpec:
    background: np.ndarray  # (H, W, 3)
    appearance: object  # FlatAppearance or SphereTexture
    points: np.ndarray  # (k, 2) control points at times linspace(0, n_frames, k)
    eps: float = 0.5
    n_frames: int = 5
    rotation: db.RotationParams = None  # omega in radians per exposure
    noise: float = 0.0
    jitter: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not 0 < self.eps <= 1:
            raise ValueError("exposure fraction must lie in (0, 1]")
        if len(self.points) < 1:
            raise ValueError("need at least one control point")

    @property
    def r(self):
        return self.appearance.r

    @property
    def knots(self):
        if len(self.points) == 1:
            return np.array([0.0])
        return np.linspace(0.0, float(self.n_frames), len(self.points))

    def position(self, t):
        if len(self.points) == 1:
            return self.points[0].copy()
        k = self.knots
        return np.array([np.interp(t, k, self.points[:, 0]), np.interp(t, k, self.points[:, 1])])

    def exposed_path(self, i, t0=0.0, t1=None):
        """Polyline of the object centre while frame ``i`` is exposed.

        ``t0``/``t1`` select a sub-interval as fractions of the exposure.
        """
        t1 = 1.0 if t1 is None else t1
        a = i + self.eps * t0
        b = i + self.eps * t1
        inner = [t for t in self.knots if a < t < b]
        ts = [a] + inner + [b]
        pts = np.array([self.position(t) for t in ts])
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
        pts = pts[keep]
        return pts

    def phase(self, i):
        if self.rotation is None:
            return 0.0
        return self.rotation.omega / self.eps * i


@dataclass
class FrameTruth:
    index: int
    path: np.ndarray  # (m, 2) xy polyline
    r: float
    mu: np.ndarray
    alpha: np.ndarray  # full-frame alpha
    polygon: np.ndarray  # ground-truth region outline

    @property
    def mask(self):
        return self.alpha > 0


def mean_color(appearance):
    if isinstance(appearance, db.FlatAppearance):
        return appearance.values[appearance.mask].mean(axis=0)
    v = appearance.values
    w = np.cos(-math.pi / 2 + (np.arange(v.shape[0]) + 0.5) * math.pi / v.shape[0])
    return (v * w[:, None, None]).sum(axis=(0, 1)) / (w.sum() * v.shape[1])


def operator_for(path, r, frame_hw, rotation=None, phase=0.0, n_lat=None, pad=2):
    pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    win = db.default_window(pts, r, frame_hw, margin=1.0)
    win = (max(0, win[0] - pad), max(0, win[1] - pad),
           min(frame_hw[0], win[2] + pad), min(frame_hw[1], win[3] + pad))
    return db.BlurOperator(pts, r, win, rotation=rotation, phase=phase, n_lat=n_lat)


def composite(frame_bg, op, appearance):
    """Formation-model composite of ``appearance`` through ``op`` over a background.

    Pixels with zero alpha are returned bit-identical.
    """
    out = np.array(frame_bg, dtype=np.float64, copy=True)
    img, alpha = op.apply(appearance)
    r0, c0, r1, c1 = op.window
    region = out[r0:r1, c0:c1]
    hit = alpha > 0
    region[hit] = (1 - alpha[hit])[:, None] * region[hit] + img[hit]
    return out, alpha


def stadium_polygon(path, r, n=32):
    """Outline of the discs of radius ``r`` swept along ``path`` (convex hull)."""
    pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    th = 2 * math.pi * np.arange(n) / n
    ring = r * np.stack([np.cos(th), np.sin(th)], axis=1)
    cloud = (pts[:, None, :] + ring[None, :, :]).reshape(-1, 2)
    return _round6(_convex_hull(cloud))


def _round6(a):
    return np.vectorize(lambda v: float(f"{v:.6g}"))(np.asarray(a, dtype=np.float64))


def _convex_hull(p):
    p = sorted(set(map(tuple, np.round(p, 9))))
    if len(p) <= 2:
        return np.array(p)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in reversed(p):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


def render_sequence(spec, seed=0):
    """Render all frames of a scene with their ground truth.

    Returns ``(frames, truths)``.
    """
    rng = np.random.default_rng(seed)
    B = np.asarray(spec.background, dtype=np.float64)
    hw = B.shape[:2]
    r = spec.r
    frames, truths = [], []
    mu = mean_color(spec.appearance)
    n_lat = spec.appearance.n_lat if isinstance(spec.appearance, db.SphereTexture) else None
    for i in range(spec.n_frames):
        path = spec.exposed_path(i)
        lo, hi = path.min(axis=0), path.max(axis=0)
        if lo[0] < r or lo[1] < r or hi[0] > hw[1] - 1 - r or hi[1] > hw[0] - 1 - r:
            raise OutOfBounds(f"frame {i}: trajectory leaves the frame")
        draw = path
        if spec.jitter:
            draw = path + rng.uniform(-0.5, 0.5, size=2)
        rot = spec.rotation
        if isinstance(spec.appearance, db.SphereTexture) and rot is None:
            rot = db.RotationParams([0.0, 0.0, 1.0], 0.0)
        op = operator_for(draw, r, hw, rotation=rot, phase=spec.phase(i), n_lat=n_lat)
        frame, alpha = composite(B, op, spec.appearance)
        if spec.noise > 0:
            frame = np.clip(frame + rng.normal(0.0, spec.noise, frame.shape), 0.0, 1.0)
        full_alpha = np.zeros(hw)
        r0, c0, r1, c1 = op.window
        full_alpha[r0:r1, c0:c1] = alpha
        frames.append(frame)
        truths.append(FrameTruth(i, path, r, mu, full_alpha, stadium_polygon(path, r)))
    return frames, truths


# --------------------------------------------------------------------------
# scene helpers used by tests and the CLI

def smooth_background(h, w, seed=0, base=(0.5, 0.5, 0.5), amplitude=0.1, sigma=6.0):
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(h, w, 3))
    noise = ndimage.gaussian_filter(noise, (sigma, sigma, 0))
    noise /= max(np.abs(noise).max(), 1e-12)
    return np.clip(np.asarray(base) + amplitude * noise, 0.0, 1.0)


def linear_scene(start, velocity, r, color, n_frames=5, eps=0.5, hw=(120, 160),
                 background=None, noise=0.0, seed=0):
    """Constant-velocity homogeneous ball.  ``velocity`` is px per frame period."""
    start = np.asarray(start, dtype=np.float64)
    end = start + n_frames * np.asarray(velocity, dtype=np.float64)
    bg = smooth_background(*hw, seed=seed) if background is None else background
    return SceneSpec(bg, db.FlatAppearance.constant(r, color), np.stack([start, end]),
                     eps=eps, n_frames=n_frames, noise=noise)


def checker_texture(r, colors=((0.9, 0.2, 0.1), (0.1, 0.3, 0.9)), n_lat=None, bands=4):
    """Sphere texture with a lat/long checker pattern."""
    n = n_lat or db.sphere_resolution(r)
    ii, jj = np.mgrid[0:n, 0:2 * n]
    cell = ((ii * bands // n) + (jj * 2 * bands // (2 * n))) % 2
    v = np.where(cell[..., None] == 0, np.asarray(colors[0]), np.asarray(colors[1]))
    return db.SphereTexture(v.astype(np.float64), r)


# --------------------------------------------------------------------------
# temporal super-resolution and highlighting

def _record_geometry(det):
    path = det.path if not hasattr(det, "polyline") else det.polyline
    return db.polyline_points(path), float(det.r)


def streak_mask(det, hw, dilate=1):
    pts, r = _record_geometry(det)
    return path_mask(pts, r, hw, dilate)


def path_mask(pts, r, hw, dilate=1):
    op = operator_for(pts, r, hw)
    m = np.zeros(hw, dtype=bool)
    r0, c0, r1, c1 = op.window
    m[r0:r1, c0:c1] = op.alpha() > 0
    if dilate:
        m = ndimage.binary_dilation(m, iterations=dilate)
    return m


def inpaint_background(frames, detections, t, radius=2):
    """Frame ``t`` with its streak replaced by a temporal median.

    The median runs over frames ``t-radius .. t+radius`` and ignores pixels
    covered by any frame's own streak.  Pixels without a clean sample keep
    their original value.
    """
    hw = frames[t].shape[:2]
    idx = [k for k in range(t - radius, t + radius + 1) if 0 <= k < len(frames)]
    stack = np.stack([frames[k] for k in idx]).astype(np.float64)
    ok = np.ones((len(idx),) + hw, dtype=bool)
    for n, k in enumerate(idx):
        if detections[k] is not None:
            ok[n] = ~streak_mask(detections[k], hw)
    masked = np.where(ok[..., None], stack, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        med = np.nanmedian(masked, axis=0)
    out = np.array(frames[t], dtype=np.float64, copy=True)
    if detections[t] is None:
        return out
    region = streak_mask(detections[t], hw)
    fill = region & np.all(np.isfinite(med), axis=2)
    out[fill] = med[fill]
    return out


@dataclass
class SuperResResult:
    frames: list
    flags: list  # per input frame: True if re-rendered
    subpaths: list = field(default_factory=list)  # per output frame (or None)


def sub_path(pts, j, n):
    """Part of a polyline between arc fractions j/n and (j+1)/n."""
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 2:
        return pts.copy()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    a, b = cum[-1] * j / n, cum[-1] * (j + 1) / n
    inner = [p for p, c in zip(pts, cum) if a < c < b]
    ends = db.sample_polyline(pts, [j / n, (j + 1) / n])
    return np.array([ends[0]] + inner + [ends[1]])


def temporal_superres(frames, detections, appearances, rotation=None, factor=1):
    """Replace every frame by ``factor`` frames covering equal path fractions.

    ``detections`` and ``appearances`` are per-frame lists (None when the
    frame has no localization); such frames are repeated unchanged and
    flagged False.  ``rotation`` may be a single RotationParams or a list.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out, flags, subpaths = [], [], []
    for t, frame in enumerate(frames):
        det = detections[t]
        app = appearances[t] if appearances is not None else None
        if det is None or app is None:
            out.extend([np.array(frame, copy=True) for _ in range(factor)])
            subpaths.extend([None] * factor)
            flags.append(False)
            continue
        rot = rotation[t] if isinstance(rotation, (list, tuple)) else rotation
        hw = frame.shape[:2]
        bg = inpaint_background(frames, detections, t)
        pts, r = _record_geometry(det)
        for j in range(factor):
            sp = sub_path(pts, j, factor)
            if isinstance(app, db.SphereTexture):
                rj = rot or db.RotationParams([0.0, 0.0, 1.0], 0.0)
                op = operator_for(sp, r, hw, db.RotationParams(rj.axis, rj.omega / factor),
                                  phase=rj.omega * j / factor, n_lat=app.n_lat)
            else:
                op = operator_for(sp, r, hw)
            img, _ = composite(bg, op, app)
            out.append(img)
            subpaths.append(sp)
        flags.append(True)
    return SuperResResult(out, flags, subpaths)


def highlight(frames, detections, recolor=None, scale=None):
    """Re-render each localized streak with a new color or a scaled radius.

    Pixels outside the (original or scaled) streak are left bit-identical.
    """
    if (recolor is None) == (scale is None):
        raise ValueError("give exactly one of recolor or scale")
    out = []
    for t, frame in enumerate(frames):
        det = detections[t]
        if det is None:
            out.append(np.array(frame, copy=True))
            continue
        hw = frame.shape[:2]
        pts, r = _record_geometry(det)
        base = getattr(det, "mu_object", None)
        base = det.mu if base is None else base
        color = np.asarray(base if recolor is None else recolor, dtype=np.float64)
        r_new = r if scale is None else r * float(scale)
        bg = inpaint_background(frames, detections, t)
        if scale is not None and scale > 1:
            # the enlarged streak covers pixels outside the inpainted region
            big = path_mask(pts, r_new, hw)
            bg = np.where(big[..., None] & ~streak_mask(det, hw)[..., None], frame, bg)
        op = operator_for(pts, r_new, hw)
        app = db.FlatAppearance.constant(r_new, color)
        img, alpha = composite(bg, op, app)
        res = np.array(frame, dtype=np.float64, copy=True)
        r0, c0, r1, c1 = op.window
        hit = np.zeros(hw, dtype=bool)
        hit[r0:r1, c0:c1] = alpha > 0
        if scale is not None and scale < 1:
            hit |= streak_mask(det, hw, dilate=0)
        res[hit] = img[hit]
        out.append(res)
    return out
