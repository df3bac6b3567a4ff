"""Synthetic scene builders shared by the tests."""

import math

import numpy as np

from fmo import deblur as db
from fmo import synth


def contrast_colors(rng, c):
    """Background base and object color with per-channel contrast ``c``."""
    s = rng.choice([-1.0, 1.0], size=3)
    return 0.5 - s * c / 2, 0.5 + s * c / 2


def streak_scene(rng, r, L, color, base, n_frames=3, eps=0.5, noise=0.0, angle=None,
                 amplitude=0.0, margin=12, seed=0, appearance=None, rotation=None):
    """Constant-velocity ball; the frame is just big enough for the motion.

    Returns ``(spec, frames, truths)``.
    """
    if angle is None:
        angle = rng.uniform(-math.pi, math.pi)
    u = np.array([math.cos(angle), math.sin(angle)])
    v = L / eps * u
    travel = v * n_frames
    pad = r + margin
    w = int(math.ceil(abs(travel[0]) + 2 * pad)) + 1
    h = int(math.ceil(abs(travel[1]) + 2 * pad)) + 1
    w, h = max(w, 32), max(h, 32)
    x0 = pad if travel[0] >= 0 else w - 1 - pad
    y0 = pad if travel[1] >= 0 else h - 1 - pad
    start = np.array([x0, y0], dtype=np.float64)
    bg = synth.smooth_background(h, w, seed=seed, base=tuple(base), amplitude=amplitude)
    app = appearance if appearance is not None else db.FlatAppearance.constant(r, color)
    spec = synth.SceneSpec(bg, app, np.stack([start, start + travel]), eps=eps,
                           n_frames=n_frames, noise=noise, rotation=rotation)
    frames, truths = synth.render_sequence(spec, seed=seed)
    return spec, frames, truths


def endpoint_error(a, b, ta, tb):
    """Worst endpoint distance under the better of the two orientations."""
    a, b, ta, tb = (np.asarray(x, dtype=np.float64) for x in (a, b, ta, tb))
    same = max(np.linalg.norm(a - ta), np.linalg.norm(b - tb))
    swap = max(np.linalg.norm(a - tb), np.linalg.norm(b - ta))
    return min(same, swap)


def psnr(x, y, peak=1.0):
    mse = float(np.mean((np.asarray(x, float) - np.asarray(y, float)) ** 2))
    return float("inf") if mse == 0 else 10 * math.log10(peak * peak / mse)
