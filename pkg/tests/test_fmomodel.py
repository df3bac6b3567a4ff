import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmo import fmomodel as fm
from fmo import track


class Det:
    def __init__(self, mu, r, a=(0, 0), b=(10, 0), mu_object=None):
        self.mu, self.r, self.mu_object = mu, r, mu_object
        self.polyline = np.array([a, b], float)
        self.length = float(np.linalg.norm(np.subtract(b, a)))


def test_update_lambda_one_copies_detection():
    m = fm.FmoModel((0.1, 0.2, 0.3), 10.0)
    out = fm.update_model(m, Det((0.7, 0.6, 0.5), 4.0), lam=1.0)
    assert out.mu == pytest.approx((0.7, 0.6, 0.5)) and out.r == 4.0
    assert out.n_obs == 1


def test_update_half():
    m = fm.FmoModel((0.2, 0.2, 0.2), 10.0)
    assert fm.update_model(m, Det((0.2, 0.2, 0.2), 14.0), lam=0.5).r == 12.0


def test_update_converges_geometrically():
    m = fm.FmoModel((0.0, 0.0, 0.0), 2.0)
    d = Det((1.0, 0.5, 0.25), 10.0)
    errs = []
    for _ in range(10):
        m = fm.update_model(m, d, 0.5)
        errs.append(abs(m.r - 10.0))
    np.testing.assert_allclose(np.array(errs[1:]) / np.array(errs[:-1]), 0.5)


def test_update_first_detection_and_bad_lambda():
    m = fm.update_model(None, Det((0.3, 0.3, 0.3), 5.0, mu_object=(0.9, 0.1, 0.1)))
    assert m.r == 5.0 and m.mu_object == (0.9, 0.1, 0.1)
    assert m.render_color == (0.9, 0.1, 0.1)
    with pytest.raises(ValueError):
        fm.update_model(m, Det((0, 0, 0), 1.0), lam=0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.lists(st.floats(0, 1), min_size=6, max_size=6), st.floats(1, 30), st.floats(1, 30))
def test_update_stays_in_range(lam, cols, r0, r1):
    m = fm.FmoModel(tuple(cols[:3]), r0)
    out = fm.update_model(m, Det(tuple(cols[3:]), r1), lam)
    assert all(0 <= c <= 1 for c in out.mu)
    assert min(r0, r1) - 1e-9 <= out.r <= max(r0, r1) + 1e-9


def test_timing_formula():
    assert fm.exposure_fraction_from_timing(25, 1 / 50) == 0.5


def test_exposure_from_gap():
    d1 = Det(None, 5, (0, 0), (40, 0))
    d2 = Det(None, 5, (80, 0), (120, 0))
    assert fm.estimate_exposure_fraction(d1, d2) == pytest.approx(0.5)
    # endpoint order does not matter
    d2r = Det(None, 5, (120, 0), (80, 0))
    d1r = Det(None, 5, (40, 0), (0, 0))
    assert fm.estimate_exposure_fraction(d1r, d2r) == pytest.approx(0.5)


def test_exposure_accepts_segments_and_arrays():
    s1 = track.LinearSegment((0.0, 0.0), 0.0, 30.0)
    s2 = np.array([[100.0, 0.0], [130.0, 0.0]])
    assert fm.estimate_exposure_fraction(s1, s2) == pytest.approx(0.3)


def test_exposure_degenerate_cases():
    d = Det(None, 5, (0, 0), (40, 0))
    with pytest.raises(fm.DegenerateGeometry):
        fm.estimate_exposure_fraction(d, d)
    with pytest.raises(fm.DegenerateGeometry):
        fm.estimate_exposure_fraction(d, Det(None, 5, (20, 0), (60, 0)))


def test_running_mean_and_freeze():
    m = fm.FmoModel((0, 0, 0), 5.0)
    gaps = [80, 100, 80]
    for g in gaps:
        m = fm.observe_exposure(m, Det(None, 5, (0, 0), (40, 0)), Det(None, 5, (g, 0), (g + 40, 0)),
                                freeze_after=2)
    assert m.eps_frozen
    assert m.eps == pytest.approx(np.mean([0.5, 0.4]))
    # degenerate observations are dropped
    m2 = fm.observe_exposure(fm.FmoModel((0, 0, 0), 5.0), Det(None, 5), Det(None, 5))
    assert m2.eps is None
