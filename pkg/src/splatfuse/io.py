"""Scene directory reading/writing: PNG images, poses.txt and binary PLY clouds.

Layout::

    images/NNNN.png        8-bit RGB
    masks/NNNN.png         optional 8-bit grayscale, >= 128 means dynamic
    poses.txt              name stamp fx fy cx cy r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
    static.ply             binary_little_endian, x y z red green blue
    dynamic_NNNN.ply       per-frame dynamic cloud; NNNN is the frame index after
                           sorting frames by stamp

Poses are world-to-camera, +z forward, +y down.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingAsset, ParseError
from .pointcloud import PointCloud
from .scene import Camera, Frame, Scene

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def read_image(path):
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"missing image {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path):
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"missing mask {path}")
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)


def write_mask(path, mask):
    write_image(path, np.asarray(mask, np.float64))


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def read_ply(path, frame_index=None) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"missing point cloud {path}")
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError(path, 1, "not a PLY file")
    nl = data.find(b"\n", end)
    header = data[:nl].decode("ascii", "replace").splitlines()
    body = data[nl + 1:]

    fmt = None
    count = None
    props = []
    in_vertex = False
    for lineno, line in enumerate(header, 1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError(path, lineno, f"bad element line {line!r}")
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
            elif count is None:
                raise ParseError(path, lineno, "elements before 'vertex' are not supported")
        elif tok[0] == "property" and in_vertex:
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise ParseError(path, lineno, f"unsupported property {line!r}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] != "property":
            raise ParseError(path, lineno, f"unexpected header line {line!r}")
    if fmt not in ("binary_little_endian", "ascii"):
        raise ParseError(path, 2, f"unsupported format {fmt!r}")
    if count is None:
        raise ParseError(path, len(header), "no vertex element")
    names = [p[0] for p in props]
    for need in ("x", "y", "z", "red", "green", "blue"):
        if need not in names:
            raise ParseError(path, len(header), f"missing property {need!r}")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        if len(body) < count * dtype.itemsize:
            raise ParseError(path, len(header) + 1, "truncated vertex data")
        arr = np.frombuffer(body, dtype=dtype, count=count)
        cols = {n: arr[n].astype(np.float64) for n in names}
    else:
        lines = body.decode("ascii", "replace").splitlines()
        rows = []
        for i in range(count):
            lineno = len(header) + 1 + i
            if i >= len(lines):
                raise ParseError(path, lineno, "truncated vertex data")
            try:
                vals = [float(v) for v in lines[i].split()]
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric vertex {lines[i]!r}") from None
            if len(vals) != len(props):
                raise ParseError(path, lineno, "wrong number of vertex values")
            rows.append(vals)
        arr = np.array(rows, dtype=np.float64).reshape(count, len(props))
        cols = {n: arr[:, i] for i, n in enumerate(names)}

    points = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1)
    color_type = dict(props)["red"]
    if color_type.startswith("u") or color_type.startswith("i"):
        colors = colors / 255.0
    return PointCloud(points, np.clip(colors, 0.0, 1.0), frame_index)


def write_ply(path, cloud: PointCloud):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(cloud.points)
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {n}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\n"
              "end_header\n")
    dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                      ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    arr = np.empty(n, dtype)
    for i, k in enumerate("xyz"):
        arr[k] = cloud.points[:, i]
    c = to_uint8(cloud.colors)
    arr["red"], arr["green"], arr["blue"] = c[:, 0], c[:, 1], c[:, 2]
    path.write_bytes(header.encode("ascii") + arr.tobytes())


# ---------------------------------------------------------------------------
# poses / scenes
# ---------------------------------------------------------------------------

def read_poses(path):
    """Parse poses.txt into a list of (name, stamp, intrinsics(4), R(3x3), t(3), lineno)."""
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"missing pose file {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        tok = s.split()
        if len(tok) != 18:
            raise ParseError(path, lineno, f"expected 18 fields, got {len(tok)}")
        try:
            vals = [float(v) for v in tok[1:]]
        except ValueError:
            raise ParseError(path, lineno, "non-numeric pose field") from None
        if not np.all(np.isfinite(vals)):
            raise ParseError(path, lineno, "non-finite pose field")
        ext = np.array(vals[5:]).reshape(3, 4)
        entries.append((tok[0], vals[0], vals[1:5], ext[:, :3], ext[:, 3], lineno))
    if not entries:
        raise ParseError(path, 1, "no poses")
    return entries


def format_pose_line(name, stamp, cam: Camera):
    ext = np.concatenate([cam.R, cam.t[:, None]], axis=1).ravel()
    nums = [stamp, cam.fx, cam.fy, cam.cx, cam.cy, *ext]
    return name + " " + " ".join(repr(float(v)) for v in nums)


def load_frames(path):
    """Frames (sorted by stamp) and the raw stamps; images/masks are loaded eagerly."""
    root = Path(path)
    pose_path = root / "poses.txt"
    entries = read_poses(pose_path)
    for name, *_, lineno in entries:
        if not (root / "images" / name).exists():
            raise MissingAsset(f"{pose_path}:{lineno}: image {name!r} not found")
    entries.sort(key=lambda e: e[1])
    stamps = np.array([e[1] for e in entries])
    t0, t1 = float(stamps.min()), float(stamps.max())
    frames = []
    for name, stamp, (fx, fy, cx, cy), R, t, lineno in entries:
        image = read_image(root / "images" / name)
        h, w = image.shape[:2]
        try:
            cam = Camera(fx, fy, cx, cy, w, h, R, t)
        except ValueError as exc:
            raise ParseError(pose_path, lineno, str(exc)) from None
        mask_path = root / "masks" / name
        ref = read_mask(mask_path) if mask_path.exists() else None
        tn = 0.0 if t1 == t0 else (stamp - t0) / (t1 - t0)
        frames.append(Frame(cam, tn, image, ref, name=name, stamp=stamp))
    return frames, (t0, t1)


_DYN_RE = re.compile(r"dynamic_(\d+)\.ply$")


def load_clouds(path):
    root = Path(path)
    static = read_ply(root / "static.ply")
    dynamic = []
    for p in sorted(root.glob("dynamic_*.ply")):
        m = _DYN_RE.search(p.name)
        if m:
            dynamic.append(read_ply(p, frame_index=int(m.group(1))))
    dynamic.sort(key=lambda c: c.frame_index)
    return static, dynamic


def load_scene(path, sh_degree=0, dtype=np.float64) -> Scene:
    """Read a scene directory and initialize Gaussians from its point clouds."""
    from .trainer import init_gaussians

    frames, time_range = load_frames(path)
    static, dynamic = load_clouds(path)
    for c in dynamic:
        if not 0 <= c.frame_index < len(frames):
            raise ParseError(Path(path) / f"dynamic_{c.frame_index:04d}.ply", 1,
                             f"frame index {c.frame_index} out of range")
    stamps = [f.stamp for f in frames]
    static_g, dynamic_g = init_gaussians(static, dynamic, stamps=stamps, sh_degree=sh_degree,
                                         dtype=dtype)
    return Scene(static_g, dynamic_g, frames, time_range, static, dynamic)


def save_scene(path, frames, static_cloud, dynamic_clouds=(), stamps=None):
    """Write frames and clouds in the layout :func:`load_scene` reads."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, f in enumerate(frames):
        name = f.name or f"{i:04d}.png"
        stamp = f.stamp if f.stamp is not None else (stamps[i] if stamps is not None else f.t)
        write_image(root / "images" / name, f.image)
        if f.ref_mask is not None:
            write_mask(root / "masks" / name, f.ref_mask)
        lines.append(format_pose_line(name, stamp, f.camera))
    (root / "poses.txt").write_text("\n".join(lines) + "\n")
    write_ply(root / "static.ply", static_cloud)
    for c in dynamic_clouds:
        write_ply(root / f"dynamic_{c.frame_index:04d}.ply", c)
