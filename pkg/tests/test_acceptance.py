"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import hashlib
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import ndimage

from fmo import cli, detect, evaluation, fmomodel, pipeline, redetect, synth, track
from fmo import deblur as db
from fmo.imgcore import PolyRegion
from scenes import contrast_colors, endpoint_error, psnr, streak_scene

pytestmark = pytest.mark.acceptance


def verdict(report, n, ok, detail):
    report(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- 1: closed-form alpha against a supersampled sweep ------------------------

def brute_alpha(seg, r, window, ss=4):
    """Fraction of the exposure a disc covers each pixel, by brute force.

    Every pixel is split into ss x ss sub-pixels and the exposure into
    4 L + 8 instants.
    """
    r0, c0, r1, c1 = window
    nt = int(4 * seg.length) + 8
    ts = (np.arange(nt) + 0.5) / nt
    centers = seg.start + ts[:, None] * seg.length * seg.direction
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    acc = np.zeros(ys.shape)
    for oy in offs:
        for ox in offs:
            X, Y = xs + ox, ys + oy
            for cx, cy in centers:
                acc += (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
    return acc / (ss * ss * nt)


def test_criterion_01_alpha_closed_form(report):
    t0 = time.perf_counter()
    worst = 0.0
    for r, L in [(4, 20), (8, 60), (15, 90)]:
        seg = track.LinearSegment((r + 5.3, r + 7.1), 0.3, L)
        win = seg.bbox(r + 3)
        a = track.alpha_matte_linear(seg, r, win)
        b = brute_alpha(seg, r, win)
        ys, xs = np.mgrid[win[0]:win[2], win[1]:win[3]]
        d_end = np.minimum(np.hypot(xs - seg.start[0], ys - seg.start[1]),
                           np.hypot(xs - seg.end[0], ys - seg.end[1]))
        # RMS over the streak support only, so empty background does not dilute it
        keep = (d_end > r) & ((a > 0) | (b > 0))
        worst = max(worst, float(np.sqrt(np.mean((a - b)[keep] ** 2))))
    dt = time.perf_counter() - t0
    verdict(report, 1, worst <= 0.03 and dt < 10, f"worst RMS {worst:.4f} (<= 0.03), {dt:.1f} s (< 10 s)")


# -- 2: detector on random streaks --------------------------------------------

def test_criterion_02_detector(report):
    t0 = time.perf_counter()
    total = evaluation.MatchCounts()
    r_err, e_err = [], []
    for k in range(50):
        rng = np.random.default_rng(1000 + k)
        r = rng.uniform(4, 20)
        L = rng.uniform(3, 12) * r
        base, col = contrast_colors(rng, rng.uniform(0.3, 1.0))
        spec, frames, truths = streak_scene(rng, r, L, col, base, noise=0.01, seed=k)
        dets = detect.detect_fmo(*frames)
        tr = truths[1]
        regions = [PolyRegion(points=synth.stadium_polygon(d.polyline, d.r)) for d in dets]
        m = evaluation.match_frame(regions, [PolyRegion(points=tr.polygon)])
        total = total + m.counts
        for i, _, _ in m.pairs:
            d = dets[i]
            r_err.append(abs(d.r - r) / r)
            a, b = d.endpoints
            e_err.append(endpoint_error(a, b, tr.path[0], tr.path[-1]))
    dt = time.perf_counter() - t0
    p, rc, _ = evaluation.prf(total)
    worst_r = max(r_err) if r_err else float("nan")
    worst_e = max(e_err) if e_err else float("nan")
    ok = (p >= 95 and rc >= 95 and r_err and worst_r <= 0.15 and worst_e <= 3 and dt < 60)
    verdict(report, 2, ok, f"precision {p:.1f}% recall {rc:.1f}% (>= 95), worst radius err "
            f"{100 * worst_r:.1f}% (<= 15), worst endpoint err {worst_e:.2f} px (<= 3), {dt:.1f} s")


# -- 3: re-detector merges a fragmented streak ----------------------------------

def test_criterion_03_redetector_fragments(report):
    good = 0
    for k in range(20):
        rng = np.random.default_rng(2000 + k)
        r = rng.uniform(5, 9)
        L = rng.uniform(5, 8) * r
        base, col = contrast_colors(rng, rng.uniform(0.5, 0.9))
        angle = rng.uniform(-math.pi, math.pi)
        _, frames0, truths = streak_scene(rng, r, L, col, base, n_frames=4, angle=angle, seed=k)
        # a stripe of the object's color across the middle of frame 2's streak
        tr = truths[2]
        mid = tr.path.mean(axis=0)
        u = (tr.path[-1] - tr.path[0]) / np.linalg.norm(tr.path[-1] - tr.path[0])
        hw = frames0[0].shape[:2]
        ys, xs = np.mgrid[0:hw[0], 0:hw[1]]
        stripe = np.abs((xs - mid[0]) * u[0] + (ys - mid[1]) * u[1]) <= rng.uniform(0.5, 1.0) * r
        bg = np.where(stripe[..., None], col, base).astype(np.float64)
        bg = np.broadcast_to(bg, hw + (3,)).copy()
        spec = synth.SceneSpec(bg, db.FlatAppearance.constant(r, col),
                               np.stack([truths[0].path[0], truths[0].path[0] + 4 / 0.5 * L * u]),
                               eps=0.5, n_frames=4)
        frames, truths = synth.render_sequence(spec, seed=k)
        first = detect.detect_fmo(frames[0], frames[1], frames[2])
        if not first:
            continue
        prev_det = max(first, key=lambda d: d.area)
        model = fmomodel.FmoModel.from_detection(prev_det)
        model = fmomodel.FmoModel(model.mu, model.r, eps=0.5, mu_object=model.mu_object)
        det = redetect.redetect(frames[1], frames[2], frames[3], prev_det, model)
        if det is not None and det.length >= 0.8 * L:
            good += 1
    verdict(report, 3, good >= 18, f"{good}/20 merged detections cover >= 80% of the length (need 18)")


# -- 4: tracker fills a frame without detections -------------------------------

def test_criterion_04_tracker(report):
    good = mono = 0
    for k in range(20):
        rng = np.random.default_rng(100 + k)
        r = rng.uniform(4, 10)
        L = rng.uniform(4, 8) * r
        base, col = contrast_colors(rng, rng.uniform(0.4, 0.9))
        spec, frames, truths = streak_scene(rng, r, L, col, base, n_frames=6, noise=0.005,
                                            amplitude=0.05, seed=k)
        # stage monotonicity on a direct call, started from the true previous streak
        prev_seg = track.LinearSegment.from_points(truths[2].path[0], truths[2].path[-1])
        model = fmomodel.FmoModel(tuple(col), r, eps=0.5)
        s = track.track_step(frames[3], spec.background, model, prev_seg).stage_losses
        if all(s[i + 1] <= s[i] for i in range(len(s) - 1)):
            mono += 1
        recs = pipeline.run_pipeline(frames, pipeline.PipelineConfig(skip_detection=frozenset({3}), seed=k))
        rec = next(x for x in recs if x.t == 3)
        if rec.source != "tracker":
            continue
        a, b = rec.detections[0].endpoints
        ta, tb = truths[3].path[0], truths[3].path[-1]
        d_ang = math.degrees(math.atan2(*(b - a)[::-1]) - math.atan2(*(tb - ta)[::-1])) % 360
        d_ang = min(d_ang, 360 - d_ang)
        if d_ang <= 2 and endpoint_error(a, b, ta, tb) <= 3:
            good += 1
    verdict(report, 4, good >= 18 and mono == 20,
            f"{good}/20 within 2 deg and 3 px (need 18), stages non-increasing in {mono}/20 (need 20)")


# -- 5: exposure fraction -------------------------------------------------------

def test_criterion_05_exposure_fraction(report):
    worst = 0.0
    for eps in (0.3, 0.5, 0.8):
        for k in range(3):
            rng = np.random.default_rng(k)
            _, frames, _ = streak_scene(rng, 5.0, 30.0, (0.9, 0.2, 0.1), (0.3, 0.5, 0.6), n_frames=7,
                                        eps=eps, noise=0.005, amplitude=0.05, seed=k)
            p = pipeline.Pipeline(pipeline.PipelineConfig(seed=k))
            for f in frames:
                p.push(f)
            est = p.state.model.eps if p.state.model is not None else None
            worst = max(worst, abs(est - eps) if est is not None else float("inf"))
    timing = fmomodel.exposure_fraction_from_timing(25, 1 / 50)
    ok = worst <= 0.02 and timing == 0.5
    verdict(report, 5, ok, f"worst |eps error| {worst:.4f} (<= 0.02), 25 fps at 1/50 s -> {timing!r}")


# -- 6: appearance estimation, translation only ----------------------------------

def _textured_disc(rng, r):
    R = db.grid_radius(r)
    tex = ndimage.gaussian_filter(rng.uniform(size=(2 * R + 1, 2 * R + 1, 3)), (3, 3, 0))
    tex = (tex - tex.min()) / (tex.max() - tex.min()) * 0.8 + 0.1
    return db.FlatAppearance(np.where(db.disc_mask(r)[..., None], tex, 0.0), r)


def _solve(frames, spec, truths, r):
    tr = truths[1]
    op = db.BlurOperator(tr.path, r, db.default_window(tr.path, r, frames[1].shape[:2]))
    return op, db.estimate_appearance(frames[1], spec.background, op)


def test_criterion_06_deblur_translation(report):
    rng = np.random.default_rng(6)
    r = 15.0
    color = (0.9, 0.3, 0.1)
    spec, frames, truths = streak_scene(rng, r, 60.0, color, (0.4, 0.4, 0.4), amplitude=0.1, angle=0.3)
    _, res = _solve(frames, spec, truths, r)
    inner = np.pad(db.disc_mask(r - 1), 1)
    rms = float(np.sqrt(np.mean((res.appearance.values[inner] - color) ** 2)))
    monotone = bool(np.all(np.diff(res.history) <= 1e-12))

    app = _textured_disc(rng, r)
    spec, frames, truths = streak_scene(rng, r, 60.0, None, (0.4, 0.4, 0.4), appearance=app,
                                        amplitude=0.1, angle=0.3)
    op, res = _solve(frames, spec, truths, r)
    m = db.disc_mask(r)
    tex_psnr = psnr(res.appearance.values[m], app.values[m])
    monotone &= bool(np.all(np.diff(res.history) <= 1e-12))

    x = rng.normal(size=(op.n_unknowns, 3))
    y = rng.normal(size=op.window_shape + (3,))
    lhs = float(np.sum(op.H @ x * y.reshape(-1, 3)))
    rhs = float(np.sum(x * op.adjoint(y)))
    adj = abs(lhs - rhs) / abs(lhs)

    r = 30.0
    spec, frames, truths = streak_scene(rng, r, 120.0, color, (0.4, 0.4, 0.4), amplitude=0.1, angle=0.3)
    t0 = time.perf_counter()
    _solve(frames, spec, truths, r)
    dt = time.perf_counter() - t0
    ok = rms <= 0.02 and tex_psnr >= 25 and adj <= 1e-6 and monotone and dt <= 5
    verdict(report, 6, ok, f"flat RMS {rms:.2e} (<= 0.02), texture PSNR {tex_psnr:.1f} dB (>= 25), "
            f"adjoint err {adj:.1e} (<= 1e-6), monotone {monotone}, r=30 solve {dt:.2f} s (<= 5)")


# -- 7: rotation search -----------------------------------------------------------

def _random_sphere(rng, r):
    n = db.sphere_resolution(r)
    v = ndimage.gaussian_filter(rng.uniform(size=(n, 2 * n, 3)), (2, 2, 0), mode=("nearest", "wrap", "nearest"))
    return db.SphereTexture((v - v.min()) / (v.max() - v.min()) * 0.8 + 0.1, r)


def test_criterion_07_rotation_search(report):
    cfg = db.DeblurConfig()
    step = cfg.omega_max / (cfg.omega_steps - 1)
    r = 12.0
    good = 0
    for k in range(10):
        rng = np.random.default_rng(700 + k)
        th, ph = rng.uniform(0, math.radians(80)), rng.uniform(0, 2 * math.pi)
        axis = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
        omega = rng.uniform(0.5, 2.5)
        spec, frames, truths = streak_scene(rng, r, 36.0, None, (0.5, 0.5, 0.5),
                                            appearance=_random_sphere(rng, r),
                                            rotation=db.RotationParams(axis, omega), amplitude=0.1, seed=k)
        res = db.search_rotation(frames[1], spec.background, truths[1].path, r, cfg)
        gc = math.degrees(math.acos(min(1.0, float(res.rotation.axis @ axis))))
        if gc <= 15 and abs(res.rotation.omega - omega) <= step:
            good += 1

    rng = np.random.default_rng(77)
    spec, frames, truths = streak_scene(rng, r, 36.0, None, (0.5, 0.5, 0.5),
                                        appearance=db.SphereTexture.constant(r, (0.8, 0.3, 0.2)),
                                        rotation=db.RotationParams([0, 0, 1], 1.0), amplitude=0.1,
                                        noise=0.01, seed=0)
    res = db.search_rotation(frames[1], spec.background, truths[1].path, r, cfg)
    obj = np.array([row[2] for row in res.table])
    spread = (obj.max() - obj.min()) / obj.min()
    verdict(report, 7, good >= 8 and spread <= 0.01,
            f"{good}/10 axis within 15 deg and omega within one step (need 8), "
            f"homogeneous spread {100 * spread:.2f}% (<= 1)")


# -- 8: temporal super-resolution ---------------------------------------------------

def test_criterion_08_superres(report):
    n = 10
    r, L = 6.0, 50.0
    worst_len, worst_psnr = 0.0, float("inf")
    for k in range(3):
        rng = np.random.default_rng(800 + k)
        spec, frames, truths = streak_scene(rng, r, L, (0.9, 0.3, 0.1), (0.35, 0.45, 0.5), n_frames=7,
                                            amplitude=0.1, seed=k)
        per = [None] * len(frames)
        for rec in pipeline.run_pipeline(frames, pipeline.PipelineConfig(seed=k)):
            if rec.detections:
                per[rec.t] = rec.detections[0]
        apps, _, _ = cli.estimate_appearances(frames, per, db.DeblurConfig())
        res = synth.temporal_superres(frames, per, apps, factor=n)
        hw = frames[0].shape[:2]
        for t in range(len(frames)):
            if not res.flags[t]:
                continue
            r0, c0, r1, c1 = db.default_window(truths[t].path, r, hw, margin=1.5)
            for j in range(n):
                sp = res.subpaths[t * n + j]
                worst_len = max(worst_len, abs(db.polyline_length(sp) - L / n))
                gt, _ = synth.composite(spec.background,
                                        synth.operator_for(spec.exposed_path(t, j / n, (j + 1) / n), r, hw),
                                        spec.appearance)
                worst_psnr = min(worst_psnr, psnr(res.frames[t * n + j][r0:r1, c0:c1], gt[r0:r1, c0:c1]))
    ok = worst_len <= 1 and worst_psnr >= 22
    verdict(report, 8, ok, f"worst sub-frame length error {worst_len:.2f} px (<= 1), "
            f"worst streak-window PSNR {worst_psnr:.1f} dB (>= 22)")


# -- 9: metrics arithmetic ------------------------------------------------------------

def test_criterion_09_metrics(report):
    rows = [((100.0, 45.5), 62.5), ((100.0, 88.7), 94.0), ((12.1, 7.3), 9.1)]
    got = [round(evaluation.f_from_pr(p, r), 1) for (p, r), _ in rows]
    ok = got == [f for _, f in rows]
    sq = PolyRegion(points=np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float))
    c = evaluation.match_frame([sq, sq], [sq]).counts
    ok &= (c.tp, c.fp, c.fn) == (1, 1, 0)
    verdict(report, 9, ok, f"F from P/R {got}, duplicate detections -> tp={c.tp} fp={c.fp} fn={c.fn}")


# -- 10: end-to-end determinism ---------------------------------------------------------

SCENE = """\
width=160
height=96
r=6
color=0.9,0.3,0.1
background=0.3,0.45,0.5
background_amplitude=0.1
eps=0.5
frames=6
noise=0.005
point=20,30
point=140,66
"""


def test_criterion_10_determinism(tmp_path, report):
    (tmp_path / "scene.txt").write_text(SCENE)
    fr = tmp_path / "frames"

    def fmo(*args):
        return subprocess.run([sys.executable, "-m", "fmo", *args], capture_output=True, text=True)

    assert fmo("synth", str(tmp_path / "scene.txt"), "--seed", "3", "--out", str(fr)).returncode == 0
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        p = fmo("detect", str(fr), "--seed", "3", "--out", str(out))
        assert p.returncode == 0, p.stderr
        digests.append(hashlib.sha256((out / "detections.txt").read_bytes()).hexdigest())
    n = len((tmp_path / "a" / "detections.txt").read_text().splitlines())
    verdict(report, 10, digests[0] == digests[1] and n > 0,
            f"two detect runs byte-identical: {digests[0] == digests[1]} ({n} detection lines)")
