"""Detection-to-ground-truth matching, precision/recall and dataset statistics."""

from dataclasses import dataclass, field

import numpy as np

from .imgcore import PolyRegion, region_iou


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class FrameMatch:
    counts: MatchCounts
    pairs: list = field(default_factory=list)  # (det index, gt index, iou)


def match_frame(dets, gts, iou_thresh=0.5):
    """Greedy one-to-one matching by descending IoU.

    A detection counts as TP only if its IoU with a ground truth exceeds
    ``iou_thresh`` and no other detection overlaps that ground truth more.
    Exact ties go to the earlier detection.
    """
    if not 0 < iou_thresh < 1:
        raise ValueError("iou threshold must lie in (0, 1)")
    cand = []
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            v = region_iou(d, g)
            if v > 0:
                cand.append((-v, i, j))
    cand.sort()
    used_d, used_g, pairs = set(), set(), []
    for nv, i, j in cand:
        if i in used_d or j in used_g:
            continue
        used_d.add(i)
        used_g.add(j)  # the best detection claims the gt even below threshold
        if -nv > iou_thresh:
            pairs.append((i, j, -nv))
    tp = len(pairs)
    return FrameMatch(MatchCounts(tp, len(dets) - tp, len(gts) - tp), pairs)


def prf(c):
    """(precision, recall, F-score) in percent; 0/0 counts as 0."""
    def pct(num, den):
        return 100.0 * num / den if den else 0.0
    return (pct(c.tp, c.tp + c.fp), pct(c.tp, c.tp + c.fn),
            pct(2 * c.tp, 2 * c.tp + c.fn + c.fp))


def f_from_pr(p, r):
    """Harmonic mean of precision and recall (both in percent)."""
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def evaluate_sequence(det_frames, gt_frames, iou_thresh=0.5):
    """Sum matches over all frames.  Both arguments map frame -> regions."""
    total = MatchCounts()
    for t in sorted(set(det_frames) | set(gt_frames)):
        total = total + match_frame(det_frames.get(t, []), gt_frames.get(t, []), iou_thresh).counts
    return total


def format_table(rows):
    """Plain-text metrics table; ``rows`` is a list of (name, MatchCounts).

    The average row is the per-sequence macro-average of the percentages.
    """
    lines = [f"{'#':<24}{'Pr.':>7}{'Rc.':>7}{'F-sc.':>7}"]
    scores = []
    for name, c in rows:
        p, r, f = prf(c)
        scores.append((p, r, f))
        lines.append(f"{name:<24}{p:7.1f}{r:7.1f}{f:7.1f}")
    if scores:
        p, r, f = np.mean(scores, axis=0)
        lines.append(f"{'Average':<24}{p:7.1f}{r:7.1f}{f:7.1f}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# dataset statistics

def region_bbox(g):
    r0, c0, r1, c1 = g.bounds()
    if g.points is not None:
        p = np.asarray(g.points, dtype=np.float64)
        x0, y0 = p.min(axis=0)
        x1, y1 = p.max(axis=0)
        return x0, y0, x1, y1
    return c0, r0, c1 - 1, r1 - 1


def region_center(g):
    x0, y0, x1, y1 = region_bbox(g)
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2])


def bbox_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = lambda q: max(q[2] - q[0], 0.0) * max(q[3] - q[1], 0.0)
    union = area(a) + area(b) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class DatasetStats:
    displacements: np.ndarray
    ious: np.ndarray
    disp_hist: np.ndarray
    disp_edges: np.ndarray
    iou_hist: np.ndarray
    iou_edges: np.ndarray


def _normalized_hist(v, edges):
    h, _ = np.histogram(v, bins=edges)
    s = h.sum()
    return h / s if s else h.astype(np.float64)


def dataset_stats(gt_frames, disp_edges=None, iou_edges=None):
    """Object speed and adjacent-frame bbox IoU over consecutive annotated frames.

    Only frame pairs ``(t, t + 1)`` with exactly one region each contribute.
    """
    ts = sorted(gt_frames)
    if len(ts) < 2:
        raise ValueError("need at least two annotated frames")
    disp, ious = [], []
    for t in ts:
        a, b = gt_frames.get(t, []), gt_frames.get(t + 1)
        if b is None or len(a) != 1 or len(b) != 1:
            continue
        disp.append(float(np.linalg.norm(region_center(b[0]) - region_center(a[0]))))
        ious.append(bbox_iou(region_bbox(a[0]), region_bbox(b[0])))
    disp, ious = np.array(disp), np.array(ious)
    if disp_edges is None:
        top = max(float(disp.max()) if disp.size else 1.0, 1.0)
        disp_edges = np.linspace(0.0, 10.0 * np.ceil(top / 10.0 + 1e-9), 11)
    if iou_edges is None:
        iou_edges = np.linspace(0.0, 1.0, 11)
    disp_edges, iou_edges = np.asarray(disp_edges, float), np.asarray(iou_edges, float)
    return DatasetStats(disp, ious, _normalized_hist(disp, disp_edges), disp_edges,
                        _normalized_hist(ious, iou_edges), iou_edges)


def polygon_regions(frames):
    """Turn ``{frame: [(n, 2) points, ...]}`` into PolyRegion lists."""
    return {t: [PolyRegion(points=np.asarray(p, dtype=np.float64)) for p in ps]
            for t, ps in frames.items()}
