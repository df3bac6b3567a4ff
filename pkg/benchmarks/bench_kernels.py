"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is run once untimed (numba compile / cache load), then
``repeat`` times per backend; the best time is reported along with the
largest difference between the two outputs.
"""

import argparse
import time

import numpy as np

from fmo import _accel
from fmo import deblur as db
from fmo import imgcore as ic
from fmo import track
from fmo.fmomodel import FmoModel


def _blob(rng, h=256, w=256):
    yy, xx = np.mgrid[0:h, 0:w]
    m = np.zeros((h, w), dtype=bool)
    for _ in range(12):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(5, 30)
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
    return m


def case_edt(rng):
    m = _blob(rng)
    return lambda nb: ic.edt_squared(m, use_numba=nb)


def case_thin(rng):
    m = _blob(rng, 192, 192)
    return lambda nb: ic.thin(m, use_numba=nb).astype(np.float64)


def case_splat(rng):
    path = np.array([[40.0, 50.0], [160.0, 90.0]])
    r = 12.0
    win = db.default_window(path, r, (200, 220))

    def run(nb):
        op = db.BlurOperator(path, r, win)
        return db.build_matrix(op, use_numba=nb).toarray()
    return run


def case_track_scoring(rng):
    h, w = 160, 240
    bg = rng.uniform(0.2, 0.6, size=(h, w, 3))
    model = FmoModel((0.9, 0.8, 0.1), 6.0, eps=0.5)
    seg = track.LinearSegment((60.0, 80.0), 0.1, 40.0)
    cur = track.synthesize(bg, track.alpha_matte_swept(seg, 6.0, (0, 0, h, w)), model.mu, (0, 0, h, w))
    segs = [track.LinearSegment(seg.start + rng.normal(size=2), seg.angle + 0.02 * rng.normal(), 40.0)
            for _ in range(400)]

    def run(nb):
        return track._Scorer(cur, bg, model, (0, 0, h, w), use_numba=nb)(segs)
    return run


CASES = {"edt_squared": case_edt, "thin": case_thin, "blur_matrix": case_splat,
         "tracker_scoring": case_track_scoring}


def best_time(fn, repeat):
    out, ts = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba unavailable or disabled (FMO_NO_NUMBA); timing numpy only")
    print(f"{'kernel':<18}{'numpy s':>10}{'numba s':>10}{'speedup':>9}{'max diff':>11}")
    for name, make in CASES.items():
        run = make(np.random.default_rng(0))
        t_np, out_np = best_time(lambda: run(False), args.repeat)
        if _accel.HAVE_NUMBA:
            run(True)  # compile
            t_nb, out_nb = best_time(lambda: run(True), args.repeat)
            diff = float(np.max(np.abs(np.asarray(out_np, float) - np.asarray(out_nb, float))))
            print(f"{name:<18}{t_np:10.4f}{t_nb:10.4f}{t_np / t_nb:9.1f}{diff:11.2e}")
        else:
            print(f"{name:<18}{t_np:10.4f}{'-':>10}{'-':>9}{'-':>11}")


if __name__ == "__main__":
    main()
