"""File formats: raster frames, key=value configs, scene specs, annotations
and detection records.

Frames are float arrays in [0, 1] with shape (H, W, 3).  PPM/PGM (binary
and ASCII) are decoded here; other image types go through Pillow when it
is installed.
"""

from dataclasses import fields, is_dataclass
import math
import os
import re

import numpy as np


class BadInput(ValueError):
    """Malformed or unreadable input.  Messages carry file and line."""


RASTER_EXT = (".ppm", ".pgm", ".pnm")
PILLOW_EXT = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def fmt(v):
    """Canonical 6-significant-digit float text."""
    v = float(v)
    if v == 0:
        return "0"  # folds -0.0
    return format(v, ".6g")


# --------------------------------------------------------------------------
# netpbm

def _pnm_tokens(data, n, pos):
    out = []
    while len(out) < n:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise BadInput("truncated header")
        out.append(data[start:pos])
    return out, pos


def decode_pnm(data, name="<bytes>"):
    """Decode P2/P3/P5/P6 bytes to a float (H, W, 3) array in [0, 1]."""
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise BadInput(f"{name}: not a PGM/PPM file")
    try:
        (w, h, maxval), pos = _pnm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, BadInput) as e:
        raise BadInput(f"{name}: bad header ({e})") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise BadInput(f"{name}: bad dimensions or maxval")
    ch = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * ch
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace after maxval
        dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = data[pos:pos + count * dt.itemsize]
        if len(raw) < count * dt.itemsize:
            raise BadInput(f"{name}: truncated pixel data")
        px = np.frombuffer(raw, dtype=dt).astype(np.float64)
    else:
        try:
            toks, _ = _pnm_tokens(data, count, pos)
        except BadInput:
            raise BadInput(f"{name}: truncated pixel data") from None
        px = np.array([int(t) for t in toks], dtype=np.float64)
    img = (px / maxval).reshape(h, w, ch)
    if ch == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def encode_ppm(img, maxval=255):
    """Binary PPM bytes of a float image in [0, 1] (gray images are expanded)."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if not np.all(np.isfinite(a)):
        raise ValueError("image has non-finite values")
    q = np.rint(np.clip(a, 0, 1) * maxval)
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    h, w = a.shape[:2]
    return f"P6\n{w} {h}\n{maxval}\n".encode() + q.astype(dt).tobytes()


def read_image(path):
    ext = os.path.splitext(path)[1].lower()
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise BadInput(f"{path}: {e.strerror}") from None
    if ext in RASTER_EXT or data[:1] == b"P":
        return decode_pnm(data, path)
    try:
        from PIL import Image
    except ImportError:
        raise BadInput(f"{path}: unsupported format (install Pillow for {ext} files)") from None
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise BadInput(f"{path}: {e}") from None


def write_image(path, img):
    ext = os.path.splitext(path)[1].lower()
    if ext in RASTER_EXT or ext == "":
        with open(path, "wb") as fh:
            fh.write(encode_ppm(img))
        return
    from PIL import Image  # optional adapter
    q = np.rint(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(q).save(path)


def list_frames(directory):
    """Image files of a directory in lexicographic order."""
    try:
        names = sorted(os.listdir(directory))
    except OSError as e:
        raise BadInput(f"{directory}: {e.strerror}") from None
    ok = RASTER_EXT + PILLOW_EXT
    files = [os.path.join(directory, n) for n in names if os.path.splitext(n)[1].lower() in ok]
    if not files:
        raise BadInput(f"{directory}: no image files")
    return files


def iter_frames(directory):
    shape = None
    for p in list_frames(directory):
        f = read_image(p)
        if shape is not None and f.shape != shape:
            raise BadInput(f"{p}: frame size {f.shape[:2]} differs from {shape[:2]}")
        shape = f.shape
        yield f


def write_frames(directory, frames, prefix="frame", start=0):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = os.path.join(directory, f"{prefix}_{i + start:05d}.ppm")
        write_image(p, f)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# key=value text

def parse_key_values(text, name="<config>"):
    """Ordered ``[(key, value, line_no)]`` from key=value text.

    Blank lines and ``#`` comments are skipped.
    """
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadInput(f"{name}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise BadInput(f"{name}:{n}: empty key")
        out.append((k, v, n))
    return out


def read_key_values(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise BadInput(f"{path}: {e.strerror}") from None
    return parse_key_values(text, path)


def _coerce(value, like, where):
    try:
        if isinstance(like, bool):
            v = value.lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, frozenset):
            return frozenset(int(p) for p in re.split(r"[,\s]+", value.strip()) if p)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float) or like is None:
            return float(value)
        return type(like)(value)
    except ValueError:
        raise BadInput(f"{where}: cannot parse {value!r}") from None


def apply_config(entries, targets, name="<config>"):
    """Set dataclass fields from parsed entries.

    A key may belong to several targets (e.g. the binarization threshold
    shared by detector and re-detector); it is set on all of them.
    Unknown keys are errors.
    """
    for k, v, n in entries:
        hit = False
        for t in targets:
            if not is_dataclass(t) or k not in {f.name for f in fields(t)}:
                continue
            setattr(t, k, _coerce(v, getattr(t, k), f"{name}:{n}"))
            hit = True
        if not hit:
            raise BadInput(f"{name}:{n}: unknown config key {k!r}")
    for t in targets:
        post = getattr(t, "__post_init__", None)
        if post is not None:
            try:
                post()
            except ValueError as e:
                raise BadInput(f"{name}: {e}") from None
    return targets


# --------------------------------------------------------------------------
# scene specs

def _floats(v, n, where):
    parts = [p for p in re.split(r"[,\s]+", v.strip()) if p]
    try:
        out = [float(p) for p in parts]
    except ValueError:
        raise BadInput(f"{where}: expected numbers, got {v!r}") from None
    if n is not None and len(out) != n:
        raise BadInput(f"{where}: expected {n} values, got {len(out)}")
    return out


SCENE_KEYS = ("width", "height", "r", "color", "color2", "texture", "eps", "frames",
              "noise", "background", "background_amplitude", "axis", "omega", "point",
              "jitter", "seed")


def parse_scene(text, name="<scene>"):
    """Build a SceneSpec from key=value text.

    Keys: width, height, r, color=r,g,b, texture=flat|checker (with
    color2), eps, frames, noise, background=r,g,b, background_amplitude,
    axis=x,y,z, omega (radians per exposure), jitter, seed, and one
    ``point=x,y`` line per control point.
    """
    from . import deblur as db
    from . import synth

    kv = {"width": "160", "height": "120", "r": "6", "color": "0.9,0.2,0.1",
          "texture": "flat", "eps": "0.5", "frames": "5", "noise": "0",
          "background": "0.5,0.5,0.5", "background_amplitude": "0.1",
          "jitter": "0", "seed": "0"}
    lines = {}
    points = []
    for k, v, n in parse_key_values(text, name):
        where = f"{name}:{n}"
        if k not in SCENE_KEYS:
            raise BadInput(f"{where}: unknown scene key {k!r}")
        if k == "point":
            points.append(_floats(v, 2, where))
        else:
            kv[k] = v
            lines[k] = where
    where = lambda k: lines.get(k, name)
    if not points:
        raise BadInput(f"{name}: scene needs at least one point=x,y line")
    w, h = int(_floats(kv["width"], 1, where("width"))[0]), int(_floats(kv["height"], 1, where("height"))[0])
    r = _floats(kv["r"], 1, where("r"))[0]
    if w < 16 or h < 16 or r <= 0:
        raise BadInput(f"{name}: need width, height >= 16 and r > 0")
    seed = int(_floats(kv["seed"], 1, where("seed"))[0])
    base = _floats(kv["background"], 3, where("background"))
    amp = _floats(kv["background_amplitude"], 1, where("background_amplitude"))[0]
    bg = synth.smooth_background(h, w, seed=seed, base=tuple(base), amplitude=amp)
    color = _floats(kv["color"], 3, where("color"))
    if kv["texture"] == "flat":
        app = db.FlatAppearance.constant(r, color)
    elif kv["texture"] == "checker":
        c2 = _floats(kv.get("color2", "0.1,0.3,0.9"), 3, where("color2"))
        app = synth.checker_texture(r, (tuple(color), tuple(c2)))
    else:
        raise BadInput(f"{where('texture')}: texture must be flat or checker")
    rot = None
    if "axis" in kv or "omega" in kv:
        rot = db.RotationParams(_floats(kv.get("axis", "0,0,1"), 3, where("axis")),
                                _floats(kv.get("omega", "0"), 1, where("omega"))[0])
    try:
        return synth.SceneSpec(bg, app, np.array(points), eps=_floats(kv["eps"], 1, where("eps"))[0],
                               n_frames=int(_floats(kv["frames"], 1, where("frames"))[0]),
                               rotation=rot, noise=_floats(kv["noise"], 1, where("noise"))[0],
                               jitter=kv["jitter"].lower() in ("1", "true", "yes")), seed
    except ValueError as e:
        raise BadInput(f"{name}: {e}") from None


def read_scene(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_scene(fh.read(), path)
    except OSError as e:
        raise BadInput(f"{path}: {e.strerror}") from None


# --------------------------------------------------------------------------
# annotations: frame_idx,x1,y1,...,xn,yn

def format_annotations(frames):
    """``{frame: [(n, 2) points, ...]}`` to annotation text."""
    out = []
    for t in sorted(frames):
        for pts in frames[t]:
            p = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
            out.append(",".join([str(int(t))] + [fmt(v) for v in p.ravel()]))
    return "".join(line + "\n" for line in out)


def parse_annotations(text, name="<annotations>"):
    frames = {}
    last = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        where = f"{name}:{n}"
        try:
            t = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError:
            raise BadInput(f"{where}: malformed annotation line") from None
        if len(vals) < 6 or len(vals) % 2:
            raise BadInput(f"{where}: need at least three x,y pairs")
        if not all(math.isfinite(v) for v in vals):
            raise BadInput(f"{where}: non-finite coordinate")
        if last is not None and t < last:
            raise BadInput(f"{where}: frame indices must not decrease")
        last = t
        frames.setdefault(t, []).append(np.array(vals).reshape(-1, 2))
    return frames


# --------------------------------------------------------------------------
# detections: frame_idx,source,r,mu_r,mu_g,mu_b,n,x1,y1,...,xn,yn

SOURCES = ("detector", "redetector", "tracker")


def detection_line(t, det):
    pts = np.asarray(det.polyline, dtype=np.float64).reshape(-1, 2)
    head = [str(int(t)), det.source, fmt(det.r)] + [fmt(c) for c in det.mu] + [str(len(pts))]
    return ",".join(head + [fmt(v) for v in pts.ravel()])


def format_detections(records):
    """``[(frame, [Detection, ...]), ...]`` to detection-file text."""
    return "".join(detection_line(t, d) + "\n" for t, ds in records for d in ds)


class DetectionRecord:
    """A parsed detection line; quacks like a Detection for rendering."""

    def __init__(self, frame, source, r, mu, polyline):
        self.frame = frame
        self.source = source
        self.r = r
        self.mu = np.asarray(mu, dtype=np.float64)
        self.polyline = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
        self.mu_object = None

    @property
    def path(self):
        return self.polyline

    @property
    def length(self):
        return float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())

    @property
    def endpoints(self):
        return self.polyline[0], self.polyline[-1]


def parse_detections(text, name="<detections>"):
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        where = f"{name}:{n}"
        if len(parts) < 7:
            raise BadInput(f"{where}: too few fields")
        try:
            t = int(parts[0])
            src = parts[1]
            r = float(parts[2])
            mu = [float(v) for v in parts[3:6]]
            k = int(parts[6])
            vals = [float(v) for v in parts[7:]]
        except ValueError:
            raise BadInput(f"{where}: malformed detection line") from None
        if src not in SOURCES:
            raise BadInput(f"{where}: unknown source {src!r}")
        if k < 1 or len(vals) != 2 * k:
            raise BadInput(f"{where}: point count {k} does not match {len(vals) // 2} pairs")
        if r <= 0 or not all(math.isfinite(v) for v in vals + mu + [r]):
            raise BadInput(f"{where}: bad radius or coordinates")
        out.setdefault(t, []).append(DetectionRecord(t, src, r, mu, np.array(vals).reshape(-1, 2)))
    return out


def read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise BadInput(f"{path}: {e.strerror}") from None
    except UnicodeDecodeError:
        raise BadInput(f"{path}: not UTF-8 text") from None
