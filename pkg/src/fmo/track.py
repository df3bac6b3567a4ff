"""Synthesis-based tracker: fit a linear streak by coordinate descent.

The object is approximated by a homogeneous disc (color, radius) swept
along a straight segment.  Candidates are scored by how well the
composite of that streak over the background explains the current frame.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._accel import njit, pick


class ZeroLength(ValueError):
    pass


def _wrap_angle(b):
    b = math.fmod(b + math.pi, 2 * math.pi)
    if b <= 0:
        b += 2 * math.pi
    return b - math.pi


@dataclass
class LinearSegment:
    start: np.ndarray  # (x, y)
    angle: float  # radians, (-pi, pi]
    length: float

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.float64)
        self.angle = _wrap_angle(float(self.angle))
        if self.length < 0:
            raise ValueError("negative length")

    @classmethod
    def from_points(cls, start, end):
        start = np.asarray(start, dtype=np.float64)
        d = np.asarray(end, dtype=np.float64) - start
        L = float(np.hypot(*d))
        ang = math.atan2(d[1], d[0]) if L > 0 else 0.0
        return cls(start, ang, L)

    @property
    def direction(self):
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    @property
    def end(self):
        return self.start + self.length * self.direction

    def bbox(self, pad, frame_hw=None):
        """Pixel window (row0, col0, row1, col1) around the segment."""
        p = np.stack([self.start, self.end])
        x0, y0 = p.min(axis=0) - pad
        x1, y1 = p.max(axis=0) + pad
        r0, c0 = int(math.floor(y0)), int(math.floor(x0))
        r1, c1 = int(math.ceil(y1)) + 1, int(math.ceil(x1)) + 1
        if frame_hw is not None:
            r0, c0 = max(r0, 0), max(c0, 0)
            r1, c1 = min(r1, frame_hw[0]), min(c1, frame_hw[1])
        return r0, c0, max(r0, r1), max(c0, c1)


@dataclass
class TrackerConfig:
    orientation_range: float = 15.0  # degrees
    orientation_step: float = 1.0
    start_radius_factor: float = 0.5
    start_step: float = 1.0
    length_range_factor: float = 0.5
    length_step: float = 2.0
    max_start_candidates: int = 1000
    accept_loss: float = 0.05
    # the streak must also explain the frame better than no object at all:
    # loss <= null_ratio * (loss of the bare background), same window
    null_ratio: float = 0.5
    matte: str = "swept"  # "swept" (exact disc sweep) or "linear" (closed form)

    def __post_init__(self):
        if self.matte not in ("swept", "linear"):
            raise ValueError(f"unknown matte {self.matte!r}")
        if min(self.orientation_range, self.orientation_step, self.start_radius_factor,
               self.start_step, self.length_range_factor, self.length_step, self.null_ratio) <= 0:
            raise ValueError("tracker steps and ranges must be positive")


def _seg_dist2(xs, ys, sx, sy, ex, ey):
    dx, dy = ex - sx, ey - sy
    L2 = dx * dx + dy * dy
    if L2 > 0:
        t = np.clip(((xs - sx) * dx + (ys - sy) * dy) / L2, 0.0, 1.0)
    else:
        t = 0.0
    px = sx + t * dx - xs
    py = sy + t * dy - ys
    return px * px + py * py


def alpha_matte_linear(seg, r, window):
    """Closed-form alpha of a disc swept along a segment, at pixel centres.

    ``A = (2 / L) sqrt(max(r^2 - D^2, 0))`` clamped to 1, where ``D`` is the
    distance to the segment.
    """
    if seg.length <= 0:
        raise ZeroLength("segment has zero length")
    r0, c0, r1, c1 = window
    ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    e = seg.end
    d2 = _seg_dist2(xs, ys, seg.start[0], seg.start[1], e[0], e[1])
    return np.minimum(2.0 / seg.length * np.sqrt(np.maximum(r * r - d2, 0.0)), 1.0)


def _swept_alpha(xs, ys, sx, sy, ex, ey, r):
    dx, dy = ex - sx, ey - sy
    L = math.hypot(dx, dy)
    if L < 1e-9:
        return ((xs - sx) ** 2 + (ys - sy) ** 2 <= r * r).astype(np.float64)
    ux, uy = dx / L, dy / L
    t = (xs - sx) * ux + (ys - sy) * uy
    h2 = ((xs - sx) * uy - (ys - sy) * ux) ** 2
    c = np.sqrt(np.maximum(r * r - h2, 0.0))
    overlap = np.minimum(t + c, L) - np.maximum(t - c, 0.0)
    return np.clip(overlap, 0.0, None) / L


def alpha_matte_swept(seg, r, window):
    """Exact fraction of the exposure a swept disc covers each pixel centre.

    Agrees with :func:`alpha_matte_linear` away from the endpoints and
    tapers correctly around them.
    """
    r0, c0, r1, c1 = window
    ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    e = seg.end
    return _swept_alpha(xs, ys, seg.start[0], seg.start[1], e[0], e[1], r)


def disc_alpha(center, r, window):
    r0, c0, r1, c1 = window
    ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    return ((xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= r * r).astype(np.float64)


def synthesize(bg, A, mu, window):
    """Composite a homogeneous streak with alpha ``A`` over ``bg`` in ``window``."""
    out = np.array(bg, dtype=np.float64, copy=True)
    r0, c0, r1, c1 = window
    a = np.asarray(A, dtype=np.float64)[..., None]
    out[r0:r1, c0:c1] = (1 - a) * out[r0:r1, c0:c1] + a * np.asarray(mu, dtype=np.float64)
    return out


def _color(model):
    return np.asarray(getattr(model, "render_color", model.mu), dtype=np.float64)


def _alpha_any(seg, r, window, matte="swept"):
    if seg.length <= 0:
        return disc_alpha(seg.start, r, window)
    if matte == "swept":
        return alpha_matte_swept(seg, r, window)
    return alpha_matte_linear(seg, r, window)


def loss(cur, bg, seg, model, window=None, matte="swept"):
    """RMS difference between the synthesized and observed frame in a window.

    The default window is the segment bbox dilated by ``2 r``.
    """
    cur = np.asarray(cur, dtype=np.float64)
    if window is None:
        window = seg.bbox(2 * model.r, cur.shape[:2])
    r0, c0, r1, c1 = window
    if r1 <= r0 or c1 <= c0:
        return float("inf")
    A = _alpha_any(seg, model.r, window, matte)[..., None]
    b = np.asarray(bg, dtype=np.float64)[r0:r1, c0:c1]
    synth = (1 - A) * b + A * _color(model)
    return float(np.sqrt(np.mean((synth - cur[r0:r1, c0:c1]) ** 2)))


# --------------------------------------------------------------------------
# candidate scoring kernels: sum over the candidate's support of
# (synth - cur)^2 - (bg - cur)^2, i.e. the change against a blank streak

def _delta_numpy(cur, bg, cands, r, mu, h, w, swept):
    out = np.empty(len(cands))
    for i, (sx, sy, ex, ey) in enumerate(cands):
        r0 = max(int(math.floor(min(sy, ey) - r)), 0)
        r1 = min(int(math.ceil(max(sy, ey) + r)) + 1, h)
        c0 = max(int(math.floor(min(sx, ex) - r)), 0)
        c1 = min(int(math.ceil(max(sx, ex) + r)) + 1, w)
        if r1 <= r0 or c1 <= c0:
            out[i] = 0.0
            continue
        ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
        L = math.hypot(ex - sx, ey - sy)
        d2 = _seg_dist2(xs, ys, sx, sy, ex, ey)
        if swept:
            A = _swept_alpha(xs, ys, sx, sy, ex, ey, r)
        elif L > 0:
            A = np.minimum(2.0 / L * np.sqrt(np.maximum(r * r - d2, 0.0)), 1.0)
        else:
            A = (d2 <= r * r).astype(np.float64)
        A = np.where(d2 < r * r, A, 0.0)[..., None]
        b = bg[r0:r1, c0:c1]
        c = cur[r0:r1, c0:c1]
        s = (1 - A) * b + A * mu
        out[i] = float(((s - c) ** 2 - (b - c) ** 2).sum())
    return out


@njit
def _delta_nb(cur, bg, cands, r, mu, h, w, swept):
    n = cands.shape[0]
    out = np.empty(n)
    for i in range(n):
        sx, sy, ex, ey = cands[i, 0], cands[i, 1], cands[i, 2], cands[i, 3]
        r0 = max(int(math.floor(min(sy, ey) - r)), 0)
        r1 = min(int(math.ceil(max(sy, ey) + r)) + 1, h)
        c0 = max(int(math.floor(min(sx, ex) - r)), 0)
        c1 = min(int(math.ceil(max(sx, ex) + r)) + 1, w)
        dx = ex - sx
        dy = ey - sy
        L2 = dx * dx + dy * dy
        L = math.sqrt(L2)
        acc = 0.0
        for y in range(r0, r1):
            for x in range(c0, c1):
                if L2 > 0:
                    t = ((x - sx) * dx + (y - sy) * dy) / L2
                    t = min(max(t, 0.0), 1.0)
                else:
                    t = 0.0
                px = sx + t * dx - x
                py = sy + t * dy - y
                d2 = px * px + py * py
                if d2 >= r * r:
                    continue
                if L < 1e-9:
                    a = 1.0
                elif swept:
                    ta = ((x - sx) * dx + (y - sy) * dy) / L
                    hh = ((x - sx) * dy - (y - sy) * dx) / L
                    c = math.sqrt(max(r * r - hh * hh, 0.0))
                    a = max(min(ta + c, L) - max(ta - c, 0.0), 0.0) / L
                else:
                    a = min(2.0 / L * math.sqrt(r * r - d2), 1.0)
                for ch in range(cur.shape[2]):
                    b = bg[y, x, ch]
                    c = cur[y, x, ch]
                    s = (1 - a) * b + a * mu[ch]
                    acc += (s - c) * (s - c) - (b - c) * (b - c)
        out[i] = acc
    return out


class _Scorer:
    """Window-normalized RMS loss for many candidates against one window."""

    def __init__(self, cur, bg, model, window, use_numba=None, matte="swept"):
        self.swept = matte == "swept"
        self.cur = np.ascontiguousarray(cur, dtype=np.float64)
        self.bg = np.ascontiguousarray(bg, dtype=np.float64)
        self.r = float(model.r)
        self.mu = _color(model)
        r0, c0, r1, c1 = window
        self.window = window
        self.count = max((r1 - r0) * (c1 - c0) * self.cur.shape[2], 1)
        self.base = float(((self.bg[r0:r1, c0:c1] - self.cur[r0:r1, c0:c1]) ** 2).sum())
        self.kernel = pick(_delta_nb, _delta_numpy, use_numba)

    def __call__(self, segs):
        cands = np.array([np.concatenate([s.start, s.end]) for s in segs], dtype=np.float64)
        r0, c0, r1, c1 = self.window
        # restrict the synthesized support to the window by clipping the frame
        sub_cur = self.cur[r0:r1, c0:c1]
        sub_bg = self.bg[r0:r1, c0:c1]
        shifted = cands - np.array([c0, r0, c0, r0], dtype=np.float64)
        h, w = r1 - r0, c1 - c0
        d = self.kernel(np.ascontiguousarray(sub_cur), np.ascontiguousarray(sub_bg),
                        shifted, self.r, self.mu, h, w, self.swept)
        return np.sqrt(np.maximum(self.base + d, 0.0) / self.count)


@dataclass
class TrackResult:
    segment: LinearSegment
    loss: float  # default-window loss of the final segment
    stage_losses: list = field(default_factory=list)  # incumbent after stages 1..3
    window: tuple = None
    null_loss: float = None  # same window, background only

    def accepted(self, cfg):
        if not self.loss <= cfg.accept_loss:
            return False
        return self.null_loss is None or self.loss <= cfg.null_ratio * self.null_loss


def _argmin(values):
    return int(np.argmin(values))  # first minimum on ties -> incumbent wins


def track_step(cur, bg, model, prev_seg, cfg=None, use_numba=None):
    """Coordinate-descent search for the segment best explaining ``cur``.

    Stage 1 searches orientation with the start extrapolated from the
    previous segment, stage 2 the start point on a square grid, stage 3
    the length.  Each stage keeps its incumbent among the candidates, so
    the loss never increases between stages.
    """
    cfg = cfg or TrackerConfig()
    cur = np.asarray(cur, dtype=np.float64)
    hw = cur.shape[:2]
    eps = model.eps
    if eps is None or not 0 < eps <= 1:
        raise ValueError("model exposure fraction must lie in (0, 1]")
    Lp = prev_seg.length
    gap = (1.0 / eps - 1.0) * Lp
    e_prev = prev_seg.end

    rng_o = math.radians(cfg.orientation_range)
    st_o = math.radians(cfg.orientation_step)
    n_o = int(math.floor(rng_o / st_o + 1e-9))
    betas = prev_seg.angle + st_o * np.arange(-n_o, n_o + 1)
    betas = betas[np.argsort(np.abs(betas - prev_seg.angle), kind="stable")]

    def start_for(beta):
        return e_prev + gap * np.array([math.cos(beta), math.sin(beta)])

    rad = cfg.start_radius_factor * Lp
    step = cfg.start_step
    side = 2 * rad / step + 1
    if side * side > cfg.max_start_candidates:
        step = 2 * rad / (math.sqrt(cfg.max_start_candidates) - 1)
    n_s = int(math.floor(rad / step + 1e-9))
    lengths = np.arange(Lp * (1 - cfg.length_range_factor),
                        Lp * (1 + cfg.length_range_factor) + 1e-9, cfg.length_step)

    # one common window holding every candidate keeps losses comparable
    reach = gap + rad + Lp * (1 + cfg.length_range_factor) + 2 * model.r
    x0, y0 = e_prev - reach
    x1, y1 = e_prev + reach
    window = (max(0, int(math.floor(y0))), max(0, int(math.floor(x0))),
              min(hw[0], int(math.ceil(y1)) + 1), min(hw[1], int(math.ceil(x1)) + 1))
    score = _Scorer(cur, bg, model, window, use_numba, cfg.matte)

    # stage 1: orientation
    segs = [LinearSegment(start_for(b), b, Lp) for b in betas]
    vals = score(segs)
    i = _argmin(vals)
    best, best_val = segs[i], float(vals[i])
    stages = [best_val]

    # stage 2: start point
    offs = step * np.arange(-n_s, n_s + 1)
    ox, oy = np.meshgrid(offs, offs)
    order = np.argsort(ox.ravel() ** 2 + oy.ravel() ** 2, kind="stable")
    deltas = np.stack([ox.ravel()[order], oy.ravel()[order]], axis=1)
    segs = [LinearSegment(best.start + d, best.angle, best.length) for d in deltas]
    vals = score(segs)
    i = _argmin(vals)
    if vals[i] < best_val:
        best, best_val = segs[i], float(vals[i])
    stages.append(best_val)

    # stage 3: length
    segs = [best] + [LinearSegment(best.start, best.angle, float(L)) for L in lengths]
    vals = score(segs)
    i = _argmin(vals)
    best, best_val = segs[i], float(vals[i])
    stages.append(best_val)

    final = loss(cur, bg, best, model, matte=cfg.matte)
    r0, c0, r1, c1 = best.bbox(2 * model.r, hw)
    diff = np.asarray(bg, dtype=np.float64)[r0:r1, c0:c1] - cur[r0:r1, c0:c1]
    null = float(np.sqrt(np.mean(diff ** 2))) if diff.size else float("inf")
    return TrackResult(best, final, stages, window, null)


# --------------------------------------------------------------------------
# free-form fit of one streak, used to refine detections

def object_color(cur, bg, A):
    """Least-squares color of the object under alpha ``A``, clipped to [0, 1]."""
    a = np.asarray(A, dtype=np.float64)[..., None]
    den = float((a * a).sum())
    if den <= 0:
        return np.zeros(cur.shape[-1])
    num = (a * (cur - (1 - a) * bg)).sum(axis=(0, 1))
    return np.clip(num / den, 0.0, 1.0)


@dataclass
class StreakFit:
    segment: LinearSegment
    r: float
    mu: np.ndarray  # object color
    rms: float


def fit_streak(cur, bg, seg0, r0, window, iters=400):
    """Refine a segment and radius so the composited streak matches ``cur``.

    The object color is solved in closed form for every candidate.  The
    search itself is Nelder-Mead over (start, end, radius), using the exact
    swept-disc matte so the endpoints are not biased inwards.
    """
    from scipy.optimize import minimize

    r_0, c_0, r_1, c_1 = window
    I = np.asarray(cur, dtype=np.float64)[r_0:r_1, c_0:c_1]
    B = np.asarray(bg, dtype=np.float64)[r_0:r_1, c_0:c_1]
    ys, xs = np.mgrid[r_0:r_1, c_0:c_1].astype(np.float64)
    n = max(I.size, 1)

    def matte(p):
        return _swept_alpha(xs, ys, *p)

    def f(p):
        if p[4] <= 0.5:
            return 1e3
        A = matte(p)
        mu = object_color(I, B, A)
        a = A[..., None]
        return float(np.sum(((1 - a) * B + a * mu - I) ** 2)) / n

    e0 = seg0.end
    p0 = np.array([seg0.start[0], seg0.start[1], e0[0], e0[1], r0], dtype=np.float64)
    simplex = [p0]
    for k, step in enumerate((2.0, 2.0, 2.0, 2.0, 0.2 * r0)):
        q = p0.copy()
        q[k] += step
        simplex.append(q)
    res = minimize(f, p0, method="Nelder-Mead",
                   options={"initial_simplex": np.array(simplex), "maxiter": iters,
                            "xatol": 0.05, "fatol": 1e-9})
    p = res.x if res.fun <= f(p0) else p0
    seg = LinearSegment.from_points(p[:2], p[2:4])
    A = matte(p)
    return StreakFit(seg, float(p[4]), object_color(I, B, A), math.sqrt(min(res.fun, f(p0))))
