"""Per-frame cascade: detector, then re-detector, then tracker.

Frame ``t`` needs ``t + 1``, so results come out one frame behind the
input.  The first and last frames are never localized.
"""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from . import detect, fmomodel, redetect, stabilize, track
from . import imgcore as ic

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    stabilize: bool = True
    exposure_fraction: float = None  # fixed value; estimated when None
    lam: float = 0.5  # model forgetting factor
    eps_freeze_after: int = 20
    tracker_expiry: int = 5  # consecutive failures before the segment is dropped
    seed: int = 0
    skip_detection: frozenset = frozenset()  # frames where both detectors are bypassed

    def __post_init__(self):
        if self.exposure_fraction is not None and not 0 < self.exposure_fraction <= 1:
            raise ValueError("exposure fraction must lie in (0, 1]")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")


@dataclass
class PipelineState:
    model: fmomodel.FmoModel = None
    last_det: object = None  # Detection, in the coordinates of frame last_t
    last_seg: track.LinearSegment = None
    last_t: int = None
    misses: int = 0  # frames since the last localization
    oriented: bool = False  # last_seg points along the motion

    def tracker_ready(self):
        return self.model is not None and self.last_seg is not None


@dataclass
class FrameRecord:
    t: int
    detections: list = field(default_factory=list)
    loss: float = None  # tracker loss when the tracker ran
    stage_losses: list = None  # tracker incumbent loss after each stage

    @property
    def source(self):
        return self.detections[0].source if self.detections else None


def _segment_of(det):
    if det.segment is not None:
        return det.segment
    a, b = det.endpoints
    return track.LinearSegment.from_points(a, b)


def _flipped(seg):
    return track.LinearSegment(seg.end, seg.angle + math.pi, seg.length)


def _along(seg, ref_dir):
    return _flipped(seg) if np.dot(seg.direction, ref_dir) < 0 else seg


def _orient(det, direction):
    """Reverse ``det`` in place if it points against ``direction``."""
    if np.dot(_segment_of(det).direction, direction) >= 0:
        return
    if det.segment is not None:
        det.segment = _flipped(det.segment)
    det.path = ic.PixelPath(det.path.pixels[::-1].copy(), det.path.length)


def _moved(det, t_aff):
    """Copy of ``det`` with its geometry mapped through an affine."""
    seg = _segment_of(det)
    pts = stabilize.apply_affine(t_aff, np.stack([seg.start, seg.end]))
    new_seg = track.LinearSegment.from_points(pts[0], pts[1])
    px = stabilize.apply_affine(t_aff, det.path.xy)
    path = ic.PixelPath(np.rint(px[:, ::-1]).astype(np.int64), det.path.length)
    return replace(det, path=path, segment=new_seg)


def _segment_pixels(seg, hw):
    n = max(int(math.ceil(seg.length)), 1)
    t = np.linspace(0, 1, n + 1)[:, None]
    xy = np.rint(seg.start + t * (seg.end - seg.start)).astype(np.int64)
    rc = xy[:, ::-1]
    ok = (rc[:, 0] >= 0) & (rc[:, 0] < hw[0]) & (rc[:, 1] >= 0) & (rc[:, 1] < hw[1])
    rc = rc[ok]
    if len(rc) == 0:
        return None
    keep = np.ones(len(rc), dtype=bool)
    keep[1:] = np.any(np.diff(rc, axis=0) != 0, axis=1)
    return ic.PixelPath(rc[keep], seg.length)


def _pick(dets, model):
    """Detection that feeds the model: closest to it, else the largest."""
    if model is None:
        return max(dets, key=lambda d: d.area)
    mu0, r0 = np.asarray(model.mu), model.r
    return min(dets, key=lambda d: np.linalg.norm(np.asarray(d.mu) - mu0) + abs(d.r - r0) / r0)


class Pipeline:
    """Stateful cascade; feed frames with :meth:`push`."""

    def __init__(self, cfg=None, det_cfg=None, redet_cfg=None, track_cfg=None):
        self.cfg = cfg or PipelineConfig()
        self.det_cfg = det_cfg or detect.DetectorConfig()
        self.redet_cfg = redet_cfg or redetect.RedetectConfig()
        self.track_cfg = track_cfg or track.TrackerConfig()
        self.state = PipelineState()
        self._buf = []  # last three frames
        self._n = 0

    # -- model -----------------------------------------------------------

    def _eps(self):
        if self.cfg.exposure_fraction is not None:
            return self.cfg.exposure_fraction
        return self.state.model.eps if self.state.model is not None else None

    def _model_with_eps(self):
        m = self.state.model
        eps = self._eps()
        if m is None or eps is None:
            return None
        return replace(m, eps=eps)

    def _accept(self, t, det, prev_in_cur):
        s = self.state
        m = fmomodel.update_model(s.model, det, self.cfg.lam)
        if (self.cfg.exposure_fraction is None and prev_in_cur is not None
                and s.last_t == t - 1):
            m = fmomodel.observe_exposure(m, prev_in_cur, det, self.cfg.eps_freeze_after)
        s.model = m
        seg = _segment_of(det)
        if det.source == "tracker":
            s.oriented = True  # the tracker keeps the direction it was given
        elif prev_in_cur is not None or s.last_seg is not None:
            # detector paths have no direction; take it from the displacement
            old = _segment_of(prev_in_cur) if prev_in_cur is not None else s.last_seg
            motion = (seg.start + seg.end - old.start - old.end) / 2
            if np.any(motion):
                _orient(det, motion)
                seg = _segment_of(det)
                if not s.oriented and s.last_det is not None:
                    _orient(s.last_det, motion)  # fix the first localization too
                s.oriented = True
            else:
                s.oriented = False
        else:
            s.oriented = False
        s.last_det = det
        s.last_seg = seg
        s.last_t = t
        s.misses = 0

    # -- one frame ---------------------------------------------------------

    def _step(self, t, prev, cur, nxt):
        s = self.state
        valid = None
        t_prev = None
        if self.cfg.stabilize:
            a = stabilize.align_triplet(prev, cur, nxt, seed=self.cfg.seed + 2 * t)
            prev, nxt, valid, t_prev = a.prev, a.nxt, a.valid, a.t_prev
        prev_in_cur = None
        if s.last_det is not None and s.last_t == t - 1:
            prev_in_cur = s.last_det if t_prev is None else _moved(s.last_det, t_prev)
        rec = FrameRecord(t)

        skip = t in self.cfg.skip_detection
        dets = [] if skip else detect.detect_fmo(prev, cur, nxt, self.det_cfg, valid)
        if dets:
            rec.detections = dets
            self._accept(t, _pick(dets, s.model), prev_in_cur)
            return rec

        m = self._model_with_eps()
        if m is not None and prev_in_cur is not None and not skip:
            d = redetect.redetect(prev, cur, nxt, prev_in_cur, m, self.redet_cfg, valid)
            if d is not None:
                rec.detections = [d]
                self._accept(t, d, prev_in_cur)
                return rec

        if m is not None and s.last_seg is not None:
            seg = s.last_seg
            if prev_in_cur is not None:
                seg = _along(_segment_of(prev_in_cur), s.last_seg.direction)
            elif s.misses > 0:
                # extrapolate over the frames without a localization
                seg = track.LinearSegment(seg.start + s.misses * seg.length / m.eps * seg.direction,
                                          seg.angle, seg.length)
            if seg.length > 0:
                bg = self._tracker_background(prev, cur, nxt, seg, m.r)
                res = track.track_step(cur, bg, m, seg, self.track_cfg)
                if not s.oriented:
                    # direction unknown after a single localization: try both
                    alt = track.track_step(cur, bg, m, _flipped(seg), self.track_cfg)
                    if alt.loss < res.loss:
                        res = alt
                rec.loss = res.loss
                rec.stage_losses = list(res.stage_losses)
                if res.accepted(self.track_cfg) and res.segment.length > 0:
                    d = self._tracker_detection(cur, res.segment, m)
                    if d is not None:
                        rec.detections = [d]
                        self._accept(t, d, prev_in_cur)
                        return rec

        s.misses += 1
        if s.misses >= self.cfg.tracker_expiry:
            s.last_seg = None
        return rec

    def _tracker_background(self, prev, cur, nxt, seg, r):
        """Previous frame, except around the previous streak.

        There the previous frame still shows the object, so the next frame
        (already aligned with the current one) stands in.
        """
        hw = cur.shape[:2]
        win = seg.bbox(r + 2, hw)
        bg = np.array(prev, dtype=np.float64)
        r0, c0, r1, c1 = win
        if r1 > r0 and c1 > c0:
            near = track.alpha_matte_swept(seg, r + 2, win) > 0
            sub = bg[r0:r1, c0:c1]
            sub[near] = np.asarray(nxt, dtype=np.float64)[r0:r1, c0:c1][near]
        return bg

    def _tracker_detection(self, cur, seg, m):
        path = _segment_pixels(seg, cur.shape[:2])
        if path is None:
            return None
        return detect.Detection(path, float(m.r), detect.path_color(cur, path), None, 0.0,
                                detect.expected_area(m.r, seg.length), source="tracker",
                                segment=seg, mu_object=None if m.mu_object is None else np.array(m.mu_object))

    # -- streaming -----------------------------------------------------------

    def push(self, frame):
        """Add the next frame; returns the record for the previous one, if any."""
        frame = np.asarray(frame, dtype=np.float64)
        if self._buf and frame.shape != self._buf[-1].shape:
            raise ic.DimensionMismatch("frame size changed within the sequence")
        self._buf.append(frame)
        self._buf = self._buf[-3:]
        self._n += 1
        if len(self._buf) < 3:
            return None
        return self._step(self._n - 2, *self._buf)


def run_pipeline(frames, cfg=None, det_cfg=None, redet_cfg=None, track_cfg=None):
    """Localize the object in every interior frame of ``frames``.

    Returns a list of FrameRecord for frames 1 .. n-2.
    """
    p = Pipeline(cfg, det_cfg, redet_cfg, track_cfg)
    out = []
    n = 0
    for f in frames:
        n += 1
        rec = p.push(f)
        if rec is not None:
            out.append(rec)
    if n < 3:
        raise ValueError("need at least three frames")
    return out


def summarize(records):
    counts = {"detector": 0, "redetector": 0, "tracker": 0, "none": 0}
    for r in records:
        counts[r.source or "none"] += 1
    return counts
