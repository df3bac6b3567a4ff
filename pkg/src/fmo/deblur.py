"""Appearance estimation for blurred, possibly rotating, ball-like objects.

The forward operator ``H`` averages ``K`` sub-exposure snapshots of the
object.  Each snapshot projects the appearance onto a ``(2R+1)^2`` grid
around the object centre (identity for flat appearances, an orthographic
view of the rotated sphere texture otherwise) and splats that grid
bilinearly into the output window at the sub-exposure position.  ``H`` is
assembled once as a sparse matrix, so the adjoint is its exact transpose.

Appearance recovery minimizes the robust objective

    sum |(1 - H M) B + H F - I|  +  alpha * sum |grad F|

by iteratively reweighted least squares with conjugate-gradient inner
solves.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import optimize, sparse

from ._accel import njit, pick

log = logging.getLogger(__name__)


class NonFinite(RuntimeError):
    pass


@dataclass
class RotationParams:
    axis: np.ndarray
    omega: float  # radians per exposure

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("rotation axis must be non-zero")
        self.axis = a / n
        if self.omega < 0:
            self.axis = -self.axis
            self.omega = -self.omega


@dataclass
class FlatAppearance:
    values: np.ndarray  # (2R+1, 2R+1, 3)
    r: float

    @property
    def mask(self):
        return disc_mask(self.r)

    @classmethod
    def constant(cls, r, color):
        R = grid_radius(r)
        v = np.zeros((2 * R + 1, 2 * R + 1, 3))
        v[disc_mask(r)] = np.asarray(color, dtype=np.float64)
        return cls(v, r)


@dataclass
class SphereTexture:
    values: np.ndarray  # (n_lat, 2 n_lat, 3), row 0 at the south pole
    r: float

    @property
    def n_lat(self):
        return self.values.shape[0]

    @classmethod
    def constant(cls, r, color, n_lat=None):
        n = n_lat or sphere_resolution(r)
        v = np.empty((n, 2 * n, 3))
        v[:] = np.asarray(color, dtype=np.float64)
        return cls(v, r)


@dataclass
class DeblurConfig:
    alpha: float = 0.01
    irls_iters: int = 10
    irls_delta: float = 1e-4
    cg_iters: int = 50
    cg_tol: float = 1e-6
    axis_spacing_deg: float = 15.0
    omega_max: float = math.pi
    omega_steps: int = 16
    # solver effort for each grid cell of the rotation search, then for the
    # local refinement of the best few cells; the winner is re-solved with
    # the full settings above
    search_irls_iters: int = 2
    search_cg_iters: int = 12
    search_refine_top: int = 8
    refine_irls_iters: int = 4
    refine_cg_iters: int = 25
    refine_evals: int = 40  # Nelder-Mead evaluations per refined cell; 0 = grid only
    # bilinear texel lookup makes the objective insensitive to the texture's
    # unknown starting orientation; nearest lookup is not
    bilinear_texture: bool = True


def grid_radius(r):
    return int(math.ceil(r))


def disc_mask(r):
    R = grid_radius(r)
    yy, xx = np.mgrid[-R:R + 1, -R:R + 1]
    return xx * xx + yy * yy <= r * r


def sphere_resolution(r):
    return max(16, int(math.ceil(2 * r)))


def rotation_matrix(axis, angle):
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def polyline_points(path):
    """Accept a LinearSegment, PixelPath, or ``(n, 2)`` xy array."""
    if hasattr(path, "start") and hasattr(path, "end"):
        return np.array([path.start, path.end], dtype=np.float64)
    if hasattr(path, "xy"):
        return path.xy
    p = np.asarray(path, dtype=np.float64)
    return p.reshape(-1, 2)


def polyline_length(pts):
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def sample_polyline(pts, fractions):
    """Points at the given arc-length fractions of a polyline."""
    if len(pts) == 1:
        return np.repeat(pts, len(fractions), axis=0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return np.repeat(pts[:1], len(fractions), axis=0)
    s = np.asarray(fractions) * total
    x = np.interp(s, cum, pts[:, 0])
    y = np.interp(s, cum, pts[:, 1])
    return np.stack([x, y], axis=1)


@dataclass
class BlurOperator:
    path: object
    r: float
    window: tuple  # (row0, col0, row1, col1), end-exclusive
    rotation: RotationParams = None
    substeps: int = None
    phase: float = 0.0  # rotation angle at the start of the exposure
    n_lat: int = None
    bilinear_texture: bool = False
    _H: object = field(default=None, repr=False)
    _HT: object = field(default=None, repr=False)

    def __post_init__(self):
        self.points = polyline_points(self.path)
        L = polyline_length(self.points)
        if self.substeps is None:
            if self.rotation is not None:
                self.substeps = max(8, int(math.ceil(2 * L / self.r)))
            else:
                self.substeps = max(1, int(math.ceil(2 * L)))
        if self.rotation is not None:
            if self.substeps < 8:
                raise ValueError("rotation operators need at least 8 substeps")
            if self.n_lat is None:
                self.n_lat = sphere_resolution(self.r)
        self.window = tuple(int(v) for v in self.window)

    @property
    def length(self):
        return polyline_length(self.points)

    @property
    def window_shape(self):
        r0, c0, r1, c1 = self.window
        return r1 - r0, c1 - c0

    @property
    def n_unknowns(self):
        if self.rotation is None:
            return int(disc_mask(self.r).sum())
        return self.n_lat * 2 * self.n_lat

    def positions(self):
        K = self.substeps
        return sample_polyline(self.points, (np.arange(K) + 0.5) / K)

    def angles(self):
        K = self.substeps
        if self.rotation is None:
            return np.zeros(K)
        return self.phase + self.rotation.omega * (np.arange(K) + 0.5) / K

    @property
    def H(self):
        if self._H is None:
            self._H = build_matrix(self)
            self._HT = self._H.T.tocsr()
        return self._H

    @property
    def HT(self):
        self.H
        return self._HT

    def apply(self, F):
        """Render ``F`` (appearance object or unknown vector) into the window.

        Returns ``(image, alpha)`` with shapes ``(h, w, 3)`` and ``(h, w)``.
        """
        x = self.to_vector(F)
        h, w = self.window_shape
        img = (self.H @ x).reshape(h, w, -1)
        return img, self.alpha()

    def alpha(self):
        h, w = self.window_shape
        return np.asarray(self.H @ np.ones(self.n_unknowns)).reshape(h, w)

    def adjoint(self, y):
        """Exact adjoint: window image ``(h, w[, c])`` -> unknown space."""
        y = np.asarray(y, dtype=np.float64)
        h, w = self.window_shape
        return self.HT @ y.reshape(h * w, -1)

    def to_vector(self, F):
        if isinstance(F, FlatAppearance):
            return F.values[disc_mask(self.r)]
        if isinstance(F, SphereTexture):
            return F.values.reshape(-1, F.values.shape[-1])
        F = np.asarray(F, dtype=np.float64)
        return F.reshape(self.n_unknowns, -1)

    def from_vector(self, x):
        x = np.asarray(x).reshape(self.n_unknowns, -1)
        if self.rotation is None:
            R = grid_radius(self.r)
            v = np.zeros((2 * R + 1, 2 * R + 1, x.shape[1]))
            v[disc_mask(self.r)] = x
            return FlatAppearance(v, self.r)
        return SphereTexture(x.reshape(self.n_lat, 2 * self.n_lat, -1), self.r)


# --------------------------------------------------------------------------
# operator assembly

def _grid_offsets(r):
    R = grid_radius(r)
    yy, xx = np.mgrid[-R:R + 1, -R:R + 1]
    m = disc_mask(r)
    return np.stack([xx[m], yy[m]], axis=1).astype(np.float64)


def _texel_sources(op):
    """Per snapshot and grid point, texel indices and weights. (K, G, S)."""
    g = _grid_offsets(op.r)
    K = op.substeps
    n = op.n_lat
    r = op.r
    z = np.sqrt(np.maximum(r * r - (g ** 2).sum(axis=1), 0.0))
    q = np.stack([g[:, 0], g[:, 1], z], axis=1) / r  # camera frame, unit sphere
    cols, wts = [], []
    for ang in op.angles():
        R = rotation_matrix(op.rotation.axis, ang)
        v = q @ R  # rows are R^T q
        lat = np.arcsin(np.clip(v[:, 1], -1.0, 1.0))
        lon = np.arctan2(v[:, 0], v[:, 2])
        fi = (lat + math.pi / 2) / math.pi * n - 0.5
        fj = (lon + math.pi) / (2 * math.pi) * (2 * n) - 0.5
        if op.bilinear_texture:
            i0 = np.floor(fi).astype(np.int64)
            j0 = np.floor(fj).astype(np.int64)
            ai = fi - i0
            aj = fj - j0
            ii = np.stack([i0, i0, i0 + 1, i0 + 1], axis=1)
            jj = np.stack([j0, j0 + 1, j0, j0 + 1], axis=1)
            ww = np.stack([(1 - ai) * (1 - aj), (1 - ai) * aj, ai * (1 - aj), ai * aj], axis=1)
            ii = np.clip(ii, 0, n - 1)
            jj = np.mod(jj, 2 * n)
        else:
            ii = np.clip(np.round(fi).astype(np.int64), 0, n - 1)[:, None]
            jj = np.mod(np.round(fj).astype(np.int64), 2 * n)[:, None]
            ww = np.ones_like(ii, dtype=np.float64)
        cols.append(ii * (2 * n) + jj)
        wts.append(ww)
    return np.stack(cols), np.stack(wts)


def _splat_numpy(pos, offs, src_cols, src_w, window, frame_hw):
    r0, c0, r1, c1 = window
    h, w = r1 - r0, c1 - c0
    K = pos.shape[0]
    qx = pos[:, None, 0] + offs[None, :, 0]  # (K, G)
    qy = pos[:, None, 1] + offs[None, :, 1]
    x0 = np.floor(qx).astype(np.int64)
    y0 = np.floor(qy).astype(np.int64)
    fx = qx - x0
    fy = qy - y0
    rows, cols, vals = [], [], []
    for dy, dx, wb in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy = y0 + dy
        xx = x0 + dx
        ok = (yy >= r0) & (yy < r1) & (xx >= c0) & (xx < c1) & (wb > 0)
        if frame_hw is not None:
            ok &= (yy >= 0) & (yy < frame_hw[0]) & (xx >= 0) & (xx < frame_hw[1])
        pix = (yy - r0) * w + (xx - c0)
        wt = wb[..., None] * src_w / K  # (K, G, S)
        sel = np.broadcast_to(ok[..., None], wt.shape)
        rows.append(np.broadcast_to(pix[..., None], wt.shape)[sel])
        cols.append(np.broadcast_to(src_cols, wt.shape)[sel])
        vals.append(wt[sel])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@njit
def _splat_nb(pos, offs, src_cols, src_w, window, frame_hw):
    r0, c0, r1, c1 = window[0], window[1], window[2], window[3]
    w = c1 - c0
    K = pos.shape[0]
    G = offs.shape[0]
    S = src_cols.shape[2]
    KS = src_cols.shape[0]
    cap = K * G * 4 * S
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap)
    n = 0
    for k in range(K):
        ks = k if KS > 1 else 0
        for g in range(G):
            qx = pos[k, 0] + offs[g, 0]
            qy = pos[k, 1] + offs[g, 1]
            x0 = int(math.floor(qx))
            y0 = int(math.floor(qy))
            fx = qx - x0
            fy = qy - y0
            for c in range(4):
                dy = c // 2
                dx = c % 2
                wb = (fy if dy else 1.0 - fy) * (fx if dx else 1.0 - fx)
                if wb <= 0.0:
                    continue
                yy = y0 + dy
                xx = x0 + dx
                if yy < r0 or yy >= r1 or xx < c0 or xx >= c1:
                    continue
                if frame_hw[0] > 0 and (yy < 0 or yy >= frame_hw[0] or xx < 0 or xx >= frame_hw[1]):
                    continue
                pix = (yy - r0) * w + (xx - c0)
                for s in range(S):
                    rows[n] = pix
                    cols[n] = src_cols[ks, g, s]
                    vals[n] = wb * src_w[ks, g, s] / K
                    n += 1
    return rows[:n], cols[:n], vals[:n]


def build_matrix(op, frame_hw=None, use_numba=None):
    pos = op.positions()
    offs = _grid_offsets(op.r)
    G = len(offs)
    if op.rotation is None:
        src_cols = np.arange(G, dtype=np.int64).reshape(1, G, 1)
        src_w = np.ones((1, G, 1))
    else:
        src_cols, src_w = _texel_sources(op)
    h, w = op.window_shape
    kern = pick(_splat_nb, None, use_numba)
    if kern is not None:
        fhw = np.array(frame_hw if frame_hw is not None else (-1, -1), dtype=np.int64)
        rows, cols, vals = kern(pos, offs, np.ascontiguousarray(src_cols),
                                np.ascontiguousarray(src_w), np.array(op.window, dtype=np.int64), fhw)
    else:
        if op.rotation is None:
            src_cols = np.broadcast_to(src_cols, (len(pos), G, 1))
            src_w = np.broadcast_to(src_w, (len(pos), G, 1))
        rows, cols, vals = _splat_numpy(pos, offs, src_cols, src_w, op.window, frame_hw)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(h * w, op.n_unknowns))


def apply_H_translate(F, op):
    if op.rotation is not None:
        raise ValueError("operator has rotation; use apply_H_rotate")
    return op.apply(F)


def apply_H_rotate(F, op):
    if op.rotation is None:
        raise ValueError("operator has no rotation")
    return op.apply(F)


def adjoint_H(y, op):
    return op.adjoint(y)


def project_front(tex, axis=(0.0, 0.0, 1.0), angle=0.0, bilinear=False):
    """Orthographic view of a sphere texture, rotated by ``angle`` about ``axis``."""
    op = BlurOperator(np.zeros((1, 2)), tex.r, (0, 0, 1, 1), rotation=RotationParams(axis, 0.0),
                      substeps=8, phase=angle, n_lat=tex.n_lat, bilinear_texture=bilinear)
    cols, wts = _texel_sources(op)
    flat = tex.values.reshape(-1, tex.values.shape[-1])
    vals = (flat[cols[0]] * wts[0][..., None]).sum(axis=1)
    R = grid_radius(tex.r)
    out = np.zeros((2 * R + 1, 2 * R + 1, vals.shape[1]))
    out[disc_mask(tex.r)] = vals
    return FlatAppearance(out, tex.r)


# --------------------------------------------------------------------------
# gradient operators

def _flat_gradient(r):
    m = disc_mask(r)
    idx = -np.ones(m.shape, dtype=np.int64)
    idx[m] = np.arange(m.sum())
    n = int(m.sum())
    mats = []
    for dy, dx in ((0, 1), (1, 0)):
        a = idx
        b = np.full_like(idx, -1)
        hh, ww = m.shape
        b[:hh - dy, :ww - dx] = idx[dy:, dx:]
        ok = (a >= 0) & (b >= 0)
        rows = a[ok]
        data = np.concatenate([-np.ones(ok.sum()), np.ones(ok.sum())])
        mats.append(sparse.csr_matrix((data, (np.concatenate([rows, rows]),
                                              np.concatenate([a[ok], b[ok]]))), shape=(n, n)))
    return mats


def _sphere_gradient(n_lat):
    n_lon = 2 * n_lat
    N = n_lat * n_lon
    idx = np.arange(N).reshape(n_lat, n_lon)
    lat = -math.pi / 2 + (np.arange(n_lat) + 0.5) * math.pi / n_lat
    # latitude differences, scaled by cos(lat) (area weight)
    a = idx[:-1].ravel()
    b = idx[1:].ravel()
    c = np.repeat(np.cos(lat[:-1]), n_lon)
    d_lat = sparse.csr_matrix((np.concatenate([-c, c]), (np.concatenate([a, a]), np.concatenate([a, b]))),
                              shape=(N, N))
    a = idx.ravel()
    b = np.roll(idx, -1, axis=1).ravel()
    d_lon = sparse.csr_matrix((np.concatenate([-np.ones(N), np.ones(N)]),
                               (np.concatenate([a, a]), np.concatenate([a, b]))), shape=(N, N))
    return [d_lat, d_lon]


def gradient_ops(op):
    if op.rotation is None:
        return _flat_gradient(op.r)
    return _sphere_gradient(op.n_lat)


def total_variation(x, grads):
    """Sum over unknowns and channels of the gradient magnitude."""
    x = np.asarray(x).reshape(grads[0].shape[1], -1)
    mag = np.sqrt(sum((D @ x) ** 2 for D in grads))
    return float(mag.sum())


# --------------------------------------------------------------------------
# solver

def _huber(t, delta):
    a = np.abs(t)
    return np.where(a < delta, t * t / (2 * delta) + delta / 2, a)


@dataclass
class AppearanceResult:
    appearance: object
    objective: float  # exact L1 + alpha * TV value
    history: list  # delta-smoothed objective, initial value first
    visibility: np.ndarray  # per-unknown count of contributing samples
    vector: np.ndarray = None


class _Problem:
    def __init__(self, I, B, op, cfg):
        r0, c0, r1, c1 = op.window
        Iw = np.asarray(I, dtype=np.float64)[r0:r1, c0:c1]
        Bw = np.asarray(B, dtype=np.float64)[r0:r1, c0:c1]
        if Iw.shape[:2] != op.window_shape:
            raise ValueError("operator window exceeds the frame")
        self.H = op.H
        self.HT = op.HT
        self.alpha_map = np.asarray(self.H @ np.ones(op.n_unknowns))
        nch = Iw.shape[2] if Iw.ndim == 3 else 1
        self.b = Iw.reshape(-1, nch) - (1 - self.alpha_map)[:, None] * Bw.reshape(-1, nch)
        self.grads = gradient_ops(op)
        self.gradsT = [D.T.tocsr() for D in self.grads]
        self.reg = cfg.alpha
        self.delta = cfg.irls_delta

    def residual(self, x):
        return self.H @ x - self.b

    def grad_mag(self, x):
        return np.sqrt(sum((D @ x) ** 2 for D in self.grads))

    def smoothed(self, x):
        return float(_huber(self.residual(x), self.delta).sum()
                     + self.reg * _huber(self.grad_mag(x), self.delta).sum())

    def exact(self, x):
        return float(np.abs(self.residual(x)).sum() + self.reg * self.grad_mag(x).sum())

    def normal_apply(self, p, wd, wt):
        out = self.HT @ (wd * (self.H @ p))
        if self.reg > 0:
            for D, DT in zip(self.grads, self.gradsT):
                out += self.reg * (DT @ (wt * (D @ p)))
        return out


def conjugate_gradient(apply_A, rhs, x0, iters, tol):
    """Column-wise CG for a batch of SPD systems sharing one operator.

    ``apply_A`` maps an ``(n, c)`` block to ``(n, c)``; each column is an
    independent system with its own step sizes.
    """
    x = x0.copy()
    r = rhs - apply_A(x)
    p = r.copy()
    rs = (r * r).sum(axis=0)
    stop = (tol * np.linalg.norm(rhs, axis=0)) ** 2
    for _ in range(iters):
        active = rs > stop
        if not active.any():
            break
        Ap = apply_A(p)
        pAp = (p * Ap).sum(axis=0)
        step = np.where(active & (pAp > 0), rs / np.where(pAp > 0, pAp, 1.0), 0.0)
        x += step * p
        r -= step * Ap
        rs_new = (r * r).sum(axis=0)
        beta = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta * p
        rs = rs_new
    return x


def _initial_guess(prob, n):
    a = prob.alpha_map
    denom = float((a * a).sum())
    if denom <= 0:
        mu = np.full(prob.b.shape[1], 0.5)
    else:
        mu = np.clip((a[:, None] * prob.b).sum(axis=0) / denom, 0.0, 1.0)
    return np.tile(mu, (n, 1))


def estimate_appearance(I, B, op, cfg=None, x0=None, irls_iters=None, cg_iters=None):
    """Recover the object appearance behind a blurred streak.

    Returns an AppearanceResult with a FlatAppearance (translation operator)
    or SphereTexture (rotation operator) clamped to [0, 1].
    """
    cfg = cfg or DeblurConfig()
    irls_iters = cfg.irls_iters if irls_iters is None else irls_iters
    cg_iters = cfg.cg_iters if cg_iters is None else cg_iters
    prob = _Problem(I, B, op, cfg)
    n = op.n_unknowns
    x = _initial_guess(prob, n) if x0 is None else np.array(x0, dtype=np.float64).reshape(n, -1)
    f = prob.smoothed(x)
    history = [f]
    delta = prob.delta
    for _ in range(irls_iters):
        wd = 1.0 / np.maximum(np.abs(prob.residual(x)), delta)
        wt = 1.0 / np.maximum(prob.grad_mag(x), delta)
        rhs = prob.HT @ (wd * prob.b)
        cand = conjugate_gradient(lambda p: prob.normal_apply(p, wd, wt), rhs, x, cg_iters, cfg.cg_tol)
        if not np.all(np.isfinite(cand)):
            raise NonFinite("conjugate gradients diverged")
        cand = np.clip(cand, 0.0, 1.0)
        # projected step: backtrack towards the incumbent until the
        # smoothed objective does not increase
        step = 1.0
        accepted = False
        for _ in range(8):
            trial = x + step * (cand - x)
            ft = prob.smoothed(trial)
            if ft <= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            history.append(f)
            break
        improvement = f - ft
        x, f = trial, ft
        history.append(f)
        if improvement <= 1e-12 * max(f, 1.0):
            break
    visibility = np.asarray((op.H != 0).sum(axis=0)).ravel()
    return AppearanceResult(op.from_vector(x), prob.exact(x), history, visibility, x)


# --------------------------------------------------------------------------
# rotation search

def axis_grid(spacing_deg=15.0, hemisphere=True):
    """Unit axes on the camera-facing hemisphere (z >= 0) at ~uniform spacing."""
    step = math.radians(spacing_deg)
    n_rings = int(round((math.pi / 2 if hemisphere else math.pi) / step))
    axes = []
    for i in range(n_rings + 1):
        theta = i * step
        st = math.sin(theta)
        n_az = 1 if st < 1e-9 else max(1, int(round(2 * math.pi * st / step)))
        for j in range(n_az):
            phi = 2 * math.pi * j / n_az
            axes.append((st * math.cos(phi), st * math.sin(phi), math.cos(theta)))
    return np.array(axes)


def omega_grid(cfg):
    return np.linspace(0.0, cfg.omega_max, cfg.omega_steps)


@dataclass
class RotationSearchResult:
    rotation: RotationParams
    texture: SphereTexture
    objective: float
    table: list  # (axis, omega, objective) per grid cell
    visibility: np.ndarray = None


def default_window(path, r, frame_hw, margin=2.0):
    pts = polyline_points(path)
    pad = margin * r
    x0, y0 = pts.min(axis=0) - pad
    x1, y1 = pts.max(axis=0) + pad
    h, w = frame_hw
    return (max(0, int(math.floor(y0))), max(0, int(math.floor(x0))),
            min(h, int(math.ceil(y1)) + 1), min(w, int(math.ceil(x1)) + 1))


def _axis_angles(axis):
    return math.acos(max(-1.0, min(1.0, float(axis[2])))), math.atan2(float(axis[1]), float(axis[0]))


def _axis_from(theta, phi):
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def _refine_cell(I, B, path, r, window, cfg, rot, x0):
    """Nelder-Mead over (axis polar, axis azimuth, omega) from a grid cell.

    Each evaluation solves for the texture at refine effort, warm-started
    from the previous solution.  Returns (objective, RotationParams, op, result).
    """
    best = {}
    warm = [x0]

    def params(p):
        om = min(abs(float(p[2])), cfg.omega_max)
        return RotationParams(_axis_from(p[0], p[1]), om)

    def f(p):
        rp = params(p)
        op = BlurOperator(path, r, window, rotation=rp, bilinear_texture=cfg.bilinear_texture)
        res = estimate_appearance(I, B, op, cfg, x0=warm[0], irls_iters=cfg.refine_irls_iters,
                                  cg_iters=cfg.refine_cg_iters)
        warm[0] = res.vector
        if not best or res.objective < best["obj"]:
            best.update(obj=res.objective, rot=rp, op=op, res=res)
        op._H = op._HT = None
        return res.objective

    th, ph = _axis_angles(rot.axis)
    p0 = np.array([th, ph, rot.omega])
    da = math.radians(cfg.axis_spacing_deg) / 2
    dw = cfg.omega_max / max(cfg.omega_steps - 1, 1) / 2
    simplex = [p0, p0 + [da, 0, 0], p0 + [0, da / max(math.sin(th), 0.25), 0], p0 + [0, 0, dw]]
    optimize.minimize(f, p0, method="Nelder-Mead",
             options={"maxfev": cfg.refine_evals, "initial_simplex": np.array(simplex)})
    return best["obj"], best["rot"], best["op"], best["res"]


def search_rotation(I, B, path, r, cfg=None, window=None):
    """Exhaustive search over rotation axis and angular speed.

    Every grid cell builds its operator and solves for the texture at low
    effort.  The best few cells then seed a local search over the axis and
    speed, and the winner is solved once more with the full settings.
    The ``table`` holds the grid-cell objectives.
    """
    cfg = cfg or DeblurConfig()
    I = np.asarray(I, dtype=np.float64)
    if window is None:
        window = default_window(path, r, I.shape[:2])
    table = []
    cells = []
    zero_done = False
    for omega in omega_grid(cfg):
        for axis in axis_grid(cfg.axis_spacing_deg):
            if omega == 0.0:
                if zero_done:
                    continue
                zero_done = True
            rot = RotationParams(axis, float(omega))
            op = BlurOperator(path, r, window, rotation=rot, bilinear_texture=cfg.bilinear_texture)
            res = estimate_appearance(I, B, op, cfg, irls_iters=cfg.search_irls_iters,
                                      cg_iters=cfg.search_cg_iters)
            table.append((np.asarray(axis), float(omega), res.objective))
            cells.append((res.objective, len(cells), rot, op, res))
            op._H = op._HT = None  # keep memory flat over the grid
    cells.sort(key=lambda c: (c[0], c[1]))
    best = None
    for _, _, rot, op, res in cells[:max(1, cfg.search_refine_top)]:
        if rot.omega == 0.0 or cfg.refine_evals <= 0:
            # no axis to refine for a still object
            res = estimate_appearance(I, B, op, cfg, x0=res.vector, irls_iters=cfg.refine_irls_iters,
                                      cg_iters=cfg.refine_cg_iters)
            cand = (res.objective, rot, op, res)
        else:
            cand = _refine_cell(I, B, path, r, window, cfg, rot, res.vector)
        if best is None or cand[0] < best[0]:
            best = cand
    _, rot, op, res = best
    final = estimate_appearance(I, B, op, cfg, x0=res.vector)
    return RotationSearchResult(rot, final.appearance, final.objective, table, final.visibility)
