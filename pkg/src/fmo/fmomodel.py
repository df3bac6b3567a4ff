"""Running object intrinsics and the sequence exposure fraction."""

from dataclasses import dataclass, replace

import numpy as np


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class FmoModel:
    mu: tuple  # RGB in [0, 1], mean color along the streak
    r: float
    eps: float = None  # exposure fraction, once estimated
    n_obs: int = 0
    eps_samples: tuple = ()
    eps_frozen: bool = False
    mu_object: tuple = None  # color of the unblurred object, when known

    @property
    def render_color(self):
        """Color used when compositing a synthetic streak."""
        return self.mu if self.mu_object is None else self.mu_object

    @classmethod
    def from_detection(cls, det):
        mo = getattr(det, "mu_object", None)
        mo = None if mo is None else tuple(float(c) for c in mo)
        return cls(tuple(float(c) for c in det.mu), float(det.r), n_obs=1, mu_object=mo)


def update_model(m, det, lam=0.5):
    """Exponential forgetting: ``new = (1 - lam) * old + lam * detected``."""
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    if m is None:
        return FmoModel.from_detection(det)
    mu = (1 - lam) * np.asarray(m.mu) + lam * np.asarray(det.mu, dtype=np.float64)
    r = (1 - lam) * m.r + lam * float(det.r)
    mo = m.mu_object
    dmo = getattr(det, "mu_object", None)
    if dmo is not None:
        old = np.asarray(mo if mo is not None else dmo, dtype=np.float64)
        mo = tuple(float(c) for c in np.clip((1 - lam) * old + lam * np.asarray(dmo, dtype=np.float64), 0, 1))
    return replace(m, mu=tuple(float(c) for c in np.clip(mu, 0, 1)), r=float(r),
                   n_obs=m.n_obs + 1, mu_object=mo)


def exposure_fraction_from_timing(fps, exposure_s):
    """Exposure time over frame period, e.g. 25 fps at 1/50 s gives 0.5."""
    return exposure_s * fps


def _polyline(obj):
    """Vertices of a detection, PixelPath, segment or raw (n, 2) array."""
    if hasattr(obj, "polyline"):
        return np.asarray(obj.polyline, dtype=np.float64)
    if hasattr(obj, "xy"):
        return np.asarray(obj.xy, dtype=np.float64)
    if hasattr(obj, "start") and hasattr(obj, "end"):
        return np.stack([obj.start, obj.end]).astype(np.float64)
    return np.asarray(obj, dtype=np.float64)


def _length(obj, xy):
    if hasattr(obj, "length"):
        return float(obj.length)
    return float(np.linalg.norm(np.diff(xy, axis=0), axis=1).sum())


def estimate_exposure_fraction(d1, d2):
    """Exposure fraction from detections in consecutive frames.

    Both paths are oriented along the motion direction (centroid of ``d2``
    minus centroid of ``d1``); the trailing endpoints are the starts.  The
    estimate is the exposed length of ``d1`` over the start-to-start
    distance.
    """
    x1, x2 = _polyline(d1), _polyline(d2)
    a1, b1, c1 = x1[0], x1[-1], x1.mean(axis=0)
    a2, b2, c2 = x2[0], x2[-1], x2.mean(axis=0)
    motion = c2 - c1
    if not np.any(motion):
        raise DegenerateGeometry("detections share a centroid")
    s1 = a1 if np.dot(a1 - b1, motion) <= 0 else b1
    s2 = a2 if np.dot(a2 - b2, motion) <= 0 else b2
    length = _length(d1, x1)
    dist = float(np.linalg.norm(s2 - s1))
    if length <= 0 or dist <= 0:
        raise DegenerateGeometry("degenerate path")
    if dist < length:
        raise DegenerateGeometry("start gap shorter than the exposed path")
    return length / dist


def observe_exposure(m, d1, d2, freeze_after=20):
    """Fold one exposure-fraction observation into the model's running mean."""
    if m.eps_frozen:
        return m
    try:
        e = estimate_exposure_fraction(d1, d2)
    except DegenerateGeometry:
        return m
    samples = m.eps_samples + (e,)
    return replace(m, eps=float(np.mean(samples)), eps_samples=samples,
                   eps_frozen=len(samples) >= freeze_after)
