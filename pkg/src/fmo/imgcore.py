"""Raster primitives used by every localization stage.

Conventions: a frame is an ``(H, W, 3)`` float array in [0, 1], gray images
are ``(H, W)`` floats and binary images ``(H, W)`` bools.  Pixel ``(row, col)``
has its center at image coordinates ``(x, y) = (col, row)``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import ndimage

from ._accel import njit, pick

SQRT2 = math.sqrt(2.0)
_EIGHT = np.ones((3, 3), dtype=bool)


class DimensionMismatch(ValueError):
    pass


class NotAStroke(ValueError):
    """The skeleton is not a single unbranched stroke."""


@dataclass
class Component:
    label: int
    mask: np.ndarray  # bool, over bbox
    bbox: tuple  # (row0, col0, row1, col1), end-exclusive

    @property
    def area(self):
        return int(self.mask.sum())

    @property
    def origin(self):
        return self.bbox[0], self.bbox[1]

    def full_mask(self, shape):
        out = np.zeros(shape, dtype=bool)
        r0, c0, r1, c1 = self.bbox
        out[r0:r1, c0:c1] = self.mask
        return out


@dataclass
class DistanceMap:
    values: np.ndarray  # over the component bbox
    origin: tuple

    @property
    def max(self):
        return float(self.values.max()) if self.values.size else 0.0


@dataclass
class PixelPath:
    pixels: np.ndarray  # (n, 2) int rows/cols, in stroke order
    length: float = field(default=0.0)

    @property
    def xy(self):
        return self.pixels[:, ::-1].astype(np.float64)

    @property
    def endpoints(self):
        xy = self.xy
        return xy[0], xy[-1]

    @property
    def midpoint(self):
        a, b = self.endpoints
        return 0.5 * (a + b)

    def __len__(self):
        return len(self.pixels)


def _check_same_shape(*arrays):
    shape = arrays[0].shape[:2]
    for a in arrays[1:]:
        if a.shape[:2] != shape:
            raise DimensionMismatch(f"shape {a.shape[:2]} != {shape}")


def abs_diff(a, b):
    """Channel-max absolute difference of two frames."""
    _check_same_shape(a, b)
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    if d.ndim == 3:
        d = d.max(axis=2)
    return d


def binarize(g, thresh):
    if thresh <= 0:
        raise ValueError("threshold must be positive")
    return np.asarray(g) > thresh


def combine_delta(dp, dm, d0):
    _check_same_shape(dp, dm, d0)
    return dp & dm & ~d0


def connected_components(b):
    """8-connected components of a binary image, labels dense from 1."""
    labels, n = ndimage.label(np.asarray(b, dtype=bool), structure=_EIGHT)
    comps = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        mask = labels[sl] == lab
        bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
        comps.append(Component(lab, mask, bbox))
    return comps


# --------------------------------------------------------------------------
# exact Euclidean distance transform (squared distances, separable)

def _edt_sq_numpy(fg):
    # Brute separable min-plus: O(HW(H+W)), fine for component-sized patches.
    h, w = fg.shape
    inf = float(h * h + w * w + 1)
    ys = np.arange(h, dtype=np.float64)
    colcost = np.where(fg, inf, 0.0)  # 0 at background rows
    # g[y, x] = min_y' (y - y')^2 over background y' in column x
    g = np.min((ys[:, None, None] - ys[None, :, None]) ** 2 + colcost[None, :, :], axis=1)
    xs = np.arange(w, dtype=np.float64)
    return np.min((xs[:, None] - xs[None, :])[None, :, :] ** 2 + g[:, None, :], axis=2)


@njit
def _edt_sq_nb(fg):
    h, w = fg.shape
    inf = float(h * h + w * w + 1)
    g = np.empty((h, w))
    f = np.empty(max(h, w))
    v = np.empty(max(h, w), dtype=np.int64)
    z = np.empty(max(h, w) + 1)
    out = np.empty((h, w))
    for pass_ in range(2):
        n = h if pass_ == 0 else w
        m = w if pass_ == 0 else h
        for j in range(m):
            for i in range(n):
                if pass_ == 0:
                    f[i] = inf if fg[i, j] else 0.0
                else:
                    f[i] = g[j, i]
            # lower envelope of parabolas (Felzenszwalb & Huttenlocher)
            k = 0
            v[0] = 0
            z[0] = -1e30
            z[1] = 1e30
            for q in range(1, n):
                s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
                while s <= z[k]:
                    k -= 1
                    s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = 1e30
            k = 0
            for q in range(n):
                while z[k + 1] < q:
                    k += 1
                d = (q - v[k]) * (q - v[k]) + f[v[k]]
                if pass_ == 0:
                    g[q, j] = d
                else:
                    out[j, q] = d
    return out


def edt_squared(fg, use_numba=None):
    """Squared Euclidean distance from each pixel to the nearest False pixel.

    ``fg`` must contain at least one background pixel.
    """
    fg = np.ascontiguousarray(fg, dtype=np.bool_)
    return pick(_edt_sq_nb, _edt_sq_numpy, use_numba)(fg)


def distance_transform(c, use_numba=None):
    """Exact EDT of a component, evaluated over its bbox padded by one pixel."""
    mask = c.mask if isinstance(c, Component) else np.asarray(c, dtype=bool)
    if not mask.any():
        raise ValueError("empty component")
    padded = np.pad(mask, 1)
    d = np.sqrt(edt_squared(padded, use_numba))[1:-1, 1:-1]
    d[~mask] = 0.0
    origin = c.origin if isinstance(c, Component) else (0, 0)
    return DistanceMap(d, origin)


# --------------------------------------------------------------------------
# thinning: two-subiteration parallel boundary peeling driven by a lookup
# table, followed by removal of redundant staircase corners

# neighbour order: E, NE, N, NW, W, SW, S, SE  (x1..x8), bit i -> x_{i+1}
_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def _build_luts():
    lut1 = np.zeros(256, dtype=np.bool_)
    lut2 = np.zeros(256, dtype=np.bool_)
    for code in range(256):
        x = [(code >> i) & 1 for i in range(8)] + [code & 1]  # x[8] wraps to x1
        crossings = sum(
            1 for i in range(4) if not x[2 * i] and (x[2 * i + 1] or x[2 * i + 2])
        )
        n1 = sum(1 for k in range(4) if x[2 * k] or x[2 * k + 1])
        n2 = sum(1 for k in range(4) if x[2 * k + 1] or x[2 * k + 2])
        g2 = 2 <= min(n1, n2) <= 3
        if crossings != 1 or not g2:
            continue
        x1, x2, x3, x4, x5, x6, x7, x8 = x[:8]
        if ((x2 or x3 or not x8) and x1) == 0:
            lut1[code] = True
        if ((x6 or x7 or not x4) and x5) == 0:
            lut2[code] = True
    # corner removal: a pixel with two orthogonal 4-neighbours that are
    # diagonal to each other, whose 8-neighbourhood stays connected
    corner = np.zeros(256, dtype=np.bool_)
    for code in range(256):
        x = [(code >> i) & 1 for i in range(8)]
        if sum(x) < 2:
            continue
        pairs = ((0, 2), (2, 4), (4, 6), (6, 0))
        if not any(x[a] and x[b] for a, b in pairs):
            continue
        if _neighbourhood_groups(x) == 1:
            corner[code] = True
    return lut1, lut2, corner


def _neighbourhood_groups(x):
    # connected groups among the set neighbours, 8-adjacency within the ring
    pos = [_OFFSETS[i] for i in range(8) if x[i]]
    seen = set()
    groups = 0
    for p in pos:
        if p in seen:
            continue
        groups += 1
        stack = [p]
        seen.add(p)
        while stack:
            q = stack.pop()
            for o in pos:
                if o not in seen and max(abs(o[0] - q[0]), abs(o[1] - q[1])) == 1:
                    seen.add(o)
                    stack.append(o)
    return groups


_LUT1, _LUT2, _CORNER = _build_luts()


def _codes_numpy(img):
    p = np.pad(img, 1)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.int64)
    for bit, (dr, dc) in enumerate(_OFFSETS):
        code |= p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w].astype(np.int64) << bit
    return code


def _thin_numpy(img, lut1, lut2, corner):
    img = img.copy()
    while True:
        changed = False
        for lut in (lut1, lut2):
            kill = img & lut[_codes_numpy(img)]
            if kill.any():
                img[kill] = False
                changed = True
        if not changed:
            break
    # sequential raster-order corner cleanup
    h, w = img.shape
    p = np.pad(img, 1)
    for r, c in zip(*np.nonzero(img)):
        code = 0
        for bit, (dr, dc) in enumerate(_OFFSETS):
            code |= int(p[1 + r + dr, 1 + c + dc]) << bit
        if corner[code]:
            p[1 + r, 1 + c] = False
    return p[1:-1, 1:-1].copy()


@njit
def _thin_nb(img, lut1, lut2, corner):
    h, w = img.shape
    p = np.zeros((h + 2, w + 2), dtype=np.bool_)
    p[1:-1, 1:-1] = img
    dr = np.array([0, -1, -1, -1, 0, 1, 1, 1])
    dc = np.array([1, 1, 0, -1, -1, -1, 0, 1])
    kill = np.zeros((h + 2, w + 2), dtype=np.bool_)
    changed = True
    while changed:
        changed = False
        for sub in range(2):
            for r in range(1, h + 1):
                for c in range(1, w + 1):
                    kill[r, c] = False
                    if not p[r, c]:
                        continue
                    code = 0
                    for b in range(8):
                        if p[r + dr[b], c + dc[b]]:
                            code |= 1 << b
                    if sub == 0:
                        kill[r, c] = lut1[code]
                    else:
                        kill[r, c] = lut2[code]
            for r in range(1, h + 1):
                for c in range(1, w + 1):
                    if kill[r, c]:
                        p[r, c] = False
                        changed = True
    for r in range(1, h + 1):
        for c in range(1, w + 1):
            if not p[r, c]:
                continue
            code = 0
            for b in range(8):
                if p[r + dr[b], c + dc[b]]:
                    code |= 1 << b
            if corner[code]:
                p[r, c] = False
    return p[1:-1, 1:-1].copy()


def thin(c, use_numba=None):
    """One-pixel-wide 8-connected skeleton of a mask (or Component)."""
    mask = c.mask if isinstance(c, Component) else c
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    return pick(_thin_nb, _thin_numpy, use_numba)(mask, _LUT1, _LUT2, _CORNER)


# --------------------------------------------------------------------------

def _neighbours(pix, r, c):
    out = []
    for dr, dc in _OFFSETS:
        q = (r + dr, c + dc)
        if q in pix:
            out.append(q)
    return out


def prune_spurs(s, max_len, rounds=3):
    """Remove side branches of at most ``max_len`` pixels from a skeleton.

    Only chains that run from an endpoint into a branch point are removed,
    so a simple stroke is returned unchanged however short it is.
    """
    s = np.asarray(s, dtype=bool).copy()
    for _ in range(rounds):
        rows, cols = np.nonzero(s)
        pix = set(zip(rows.tolist(), cols.tolist()))
        degree = {p: len(_neighbours(pix, *p)) for p in pix}
        if not any(d >= 3 for d in degree.values()):
            break
        doomed = []
        for p, d in degree.items():
            if d != 1:
                continue
            chain = [p]
            seen = {p}
            cur = p
            hit_branch = False
            while len(chain) <= max_len:
                nxt = [q for q in _neighbours(pix, *cur) if q not in seen]
                if len(nxt) != 1 or degree[nxt[0]] >= 3:
                    hit_branch = len(nxt) >= 1
                    break
                cur = nxt[0]
                seen.add(cur)
                chain.append(cur)
            if hit_branch and len(chain) <= max_len:
                doomed.extend(chain)
        if not doomed:
            break
        for r, c in doomed:
            s[r, c] = False
        s = thin(s)
    return s


def path_from_skeleton(s, origin=(0, 0)):
    """Order the pixels of a single-stroke skeleton into a PixelPath.

    Raises NotAStroke when the skeleton is empty, branched or split.
    """
    s = np.asarray(s, dtype=bool)
    rows, cols = np.nonzero(s)
    if rows.size == 0:
        raise NotAStroke("empty skeleton")
    pix = set(zip(rows.tolist(), cols.tolist()))
    degree = {p: len(_neighbours(pix, *p)) for p in pix}
    if any(d >= 3 for d in degree.values()):
        raise NotAStroke("branch point")
    ends = sorted(p for p, d in degree.items() if d <= 1)
    if len(pix) == 1:
        start = next(iter(pix))
    elif len(ends) == 2:
        start = ends[0]
    elif len(ends) == 0:
        start = min(pix)  # closed loop; open it at its first raster pixel
    else:
        raise NotAStroke("multiple strokes")
    order = [start]
    seen = {start}
    cur = start
    length = 0.0
    while True:
        nxt = [q for q in _neighbours(pix, *cur) if q not in seen]
        if not nxt:
            break
        q = nxt[0]
        length += SQRT2 if (q[0] != cur[0] and q[1] != cur[1]) else 1.0
        order.append(q)
        seen.add(q)
        cur = q
    if len(order) != len(pix):
        raise NotAStroke("multiple components")
    px = np.array(order, dtype=np.int64) + np.array(origin, dtype=np.int64)
    return PixelPath(px, length)


# --------------------------------------------------------------------------

@dataclass
class PolyRegion:
    """Either a polygon in image coordinates or a pixel mask at an offset."""

    points: np.ndarray = None  # (n, 2) x, y
    mask: np.ndarray = None
    offset: tuple = (0, 0)  # (row, col) of mask[0, 0]

    def bounds(self):
        """Pixel bounds (row0, col0, row1, col1), end-exclusive."""
        if self.points is not None:
            p = np.asarray(self.points, dtype=np.float64)
            c0, r0 = np.floor(p.min(axis=0)).astype(int)
            c1, r1 = np.ceil(p.max(axis=0)).astype(int) + 1
            return r0, c0, r1, c1
        r0, c0 = self.offset
        return r0, c0, r0 + self.mask.shape[0], c0 + self.mask.shape[1]

    def rasterize(self, bounds):
        r0, c0, r1, c1 = bounds
        if self.mask is not None:
            out = np.zeros((r1 - r0, c1 - c0), dtype=bool)
            mr0, mc0 = self.offset
            h, w = self.mask.shape
            a0, b0 = max(r0, mr0), max(c0, mc0)
            a1, b1 = min(r1, mr0 + h), min(c1, mc0 + w)
            if a0 < a1 and b0 < b1:
                out[a0 - r0:a1 - r0, b0 - c0:b1 - c0] = self.mask[a0 - mr0:a1 - mr0, b0 - mc0:b1 - mc0]
            return out
        ys, xs = np.mgrid[r0:r1, c0:c1]
        return points_in_polygon(xs.astype(np.float64), ys.astype(np.float64), self.points)

    @property
    def area(self):
        return int(self.rasterize(self.bounds()).sum())


def points_in_polygon(x, y, poly):
    """Even-odd test of points against a closed polygon (vectorized)."""
    poly = np.asarray(poly, dtype=np.float64)
    inside = np.zeros(np.shape(x), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        cond = (y1 <= y) != (y2 <= y)
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (x < xint)
    return inside


def region_iou(a, b):
    """Intersection over union of two regions on a shared 1-px raster."""
    ba, bb = a.bounds(), b.bounds()
    bounds = (min(ba[0], bb[0]), min(ba[1], bb[1]), max(ba[2], bb[2]), max(ba[3], bb[3]))
    ma, mb = a.rasterize(bounds), b.rasterize(bounds)
    if not ma.any() or not mb.any():
        return 0.0
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union
