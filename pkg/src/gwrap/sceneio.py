"""File formats: scenes, meshes, point clouds, and image maps.

The scene format is a versioned, line-oriented text file (one record per
line, floats printed with up to 17 significant digits) so fixtures diff
cleanly and round-trip bit-exactly.  Meshes go to ASCII OBJ or binary PLY;
point clouds to binary PLY; rendered maps to PNG (sRGB) or a raw float32
container with a 16-byte header.
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

from .core import GaussianScene, OrientedGaussian, PinholeCamera, TriangleMesh
from .errors import ParseError, VersionMismatch

SCENE_MAGIC = "gwrap-scene"
SCENE_VERSION = 1
RAW_MAGIC = b"GWRF"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _vals(*arrays) -> str:
    out = []
    for a in arrays:
        out.extend(_fmt(v) for v in np.atleast_1d(a))
    return " ".join(out)


# ---------------------------------------------------------------------------
# scene text format
# ---------------------------------------------------------------------------

def save_scene(scene: GaussianScene, path: str) -> None:
    lines = [f"{SCENE_MAGIC} v{SCENE_VERSION}", f"gaussians {len(scene.gaussians)}"]
    for g in scene.gaussians:
        lines.append("g " + _vals(g.mean, g.scales, g.rotation, g.opacity,
                                  g.normal_sign, g.normal_dir, g.color))
    lines.append(f"cameras {len(scene.cameras)}")
    for c in scene.cameras:
        pose = np.concatenate([c.rotation, c.center[:, None]], axis=1).ravel()
        lines.append("c " + _vals(c.fx, c.fy, c.cx, c.cy) + f" {c.width} {c.height} " + _vals(pose))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path: str) -> GaussianScene:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{path}: empty scene file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != SCENE_MAGIC:
        raise ParseError(f"{path}: not a scene file (bad header {lines[0]!r})")
    if head[1] != f"v{SCENE_VERSION}":
        raise VersionMismatch(f"{path}: unsupported scene version {head[1]}")
    pos = 1

    def expect_count(tag: str, where: str):
        nonlocal pos
        if pos >= len(lines):
            return None
        parts = lines[pos].split()
        if parts[0] != tag:
            raise ParseError(f"{path}: expected '{tag} <count>' {where}, got {lines[pos]!r}")
        pos += 1
        try:
            return int(parts[1])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}: bad {tag} count") from exc

    n_g = expect_count("gaussians", "after header")
    gaussians = []
    for i in range(n_g):
        if pos >= len(lines):
            raise ParseError(f"{path}: truncated after {i} gaussian records")
        parts = lines[pos].split()
        pos += 1
        if parts[0] != "g" or len(parts) != 18:
            raise ParseError(f"{path}: gaussian record {i}: expected 'g' + 17 numbers")
        try:
            v = np.array([float(x) for x in parts[1:]])
            gaussians.append(OrientedGaussian(
                mean=v[0:3], scales=v[3:6], rotation=v[6:10], opacity=v[10],
                normal_sign=v[11], normal_dir=v[12:15], color=v[15:18]))
        except ValueError as exc:
            raise ParseError(f"{path}: gaussian record {i}: {exc}") from exc
    cameras = []
    n_c = expect_count("cameras", "after gaussian records")
    if n_c is None:
        warnings.warn(f"{path}: no camera block; vacancy queries will fail until cameras are set")
        n_c = 0
    for i in range(n_c):
        if pos >= len(lines):
            raise ParseError(f"{path}: truncated after {i} camera records")
        parts = lines[pos].split()
        pos += 1
        if parts[0] != "c" or len(parts) != 19:
            raise ParseError(f"{path}: camera record {i}: expected 'c' + 18 numbers")
        try:
            fx, fy, cx, cy = (float(x) for x in parts[1:5])
            width, height = int(parts[5]), int(parts[6])
            pose = np.array([float(x) for x in parts[7:19]]).reshape(3, 4)
            cameras.append(PinholeCamera(fx, fy, cx, cy, width, height, pose[:, :3], pose[:, 3]))
        except ValueError as exc:
            raise ParseError(f"{path}: camera record {i}: {exc}") from exc
    return GaussianScene(gaussians, cameras)


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

def save_mesh_obj(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_mesh_obj(path: str) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{ln}: short vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) < 3:
                    raise ParseError(f"{path}:{ln}: face needs >= 3 vertices")
                for k in range(1, len(idx) - 1):   # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise ParseError(f"{path}: no vertices found")
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh_ply(mesh: TriangleMesh, path: str) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        if mesh.n_faces:
            block = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", 3)])
            block["n"] = 3
            block["idx"] = mesh.faces.astype("<i4")
            fh.write(block.tobytes())


def save_points_ply(points: np.ndarray, path: str) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(points.astype("<f4").tobytes())


def _parse_ply_header(fh, path):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError(f"{path}: not a PLY file")
    fmt = None
    elements = []   # (name, count, [(prop_type, prop_name) or ('list', ...)])
    while True:
        line = fh.readline()
        if not line:
            raise ParseError(f"{path}: unterminated PLY header")
        parts = line.decode("ascii", "replace").split()
        if not parts:
            continue
        if parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(tuple(parts[1:]))
        elif parts[0] == "end_header":
            break
    return fmt, elements


_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
              "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
              "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
              "short": "<i2", "ushort": "<u2", "int16": "<i2", "uint16": "<u2"}


def load_points_ply(path: str) -> np.ndarray:
    """Vertex positions from an ASCII or binary-little-endian PLY file."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        verts = next((e for e in elements if e[0] == "vertex"), None)
        if verts is None:
            raise ParseError(f"{path}: PLY has no vertex element")
        name, count, props = verts
        if any(p[0] == "list" for p in props):
            raise ParseError(f"{path}: list properties on vertices are unsupported")
        if elements[0][0] != "vertex":
            raise ParseError(f"{path}: vertex element must come first")
        names = [p[1] for p in props]
        for ax in ("x", "y", "z"):
            if ax not in names:
                raise ParseError(f"{path}: vertex element lacks '{ax}'")
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                rows.append([float(t) for t in fh.readline().split()])
            data = np.array(rows)
            xyz = data[:, [names.index("x"), names.index("y"), names.index("z")]]
        elif fmt == "binary_little_endian":
            try:
                dtype = np.dtype([(p[1], _PLY_TYPES[p[0]]) for p in props])
            except KeyError as exc:
                raise ParseError(f"{path}: unsupported vertex property type {exc}") from exc
            data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            xyz = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
        else:
            raise ParseError(f"{path}: unsupported PLY format {fmt!r}")
        return xyz


def load_mesh_ply(path: str) -> TriangleMesh:
    """Mesh from a binary-little-endian PLY as written by save_mesh_ply."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        if fmt != "binary_little_endian":
            raise ParseError(f"{path}: mesh PLY must be binary little endian")
        by_name = {e[0]: e for e in elements}
        if "vertex" not in by_name or "face" not in by_name:
            raise ParseError(f"{path}: PLY must have vertex and face elements")
        _, n_v, vprops = by_name["vertex"]
        vdtype = np.dtype([(p[1], _PLY_TYPES[p[0]]) for p in vprops])
        vdata = np.frombuffer(fh.read(vdtype.itemsize * n_v), dtype=vdtype, count=n_v)
        verts = np.stack([vdata["x"], vdata["y"], vdata["z"]], axis=1).astype(np.float64)
        _, n_f, fprops = by_name["face"]
        if n_f == 0:
            return TriangleMesh(verts, np.zeros((0, 3), dtype=np.int64))
        fdtype = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
        fdata = np.frombuffer(fh.read(fdtype.itemsize * n_f), dtype=fdtype, count=n_f)
        if not np.all(fdata["n"] == 3):
            raise ParseError(f"{path}: only triangle faces are supported")
        return TriangleMesh(verts, fdata["idx"].astype(np.int64))


def load_mesh(path: str) -> TriangleMesh:
    if path.endswith(".obj"):
        return load_mesh_obj(path)
    if path.endswith(".ply"):
        return load_mesh_ply(path)
    raise ParseError(f"unknown mesh extension: {path}")


def save_mesh(mesh: TriangleMesh, path: str) -> None:
    if path.endswith(".obj"):
        save_mesh_obj(mesh, path)
    elif path.endswith(".ply"):
        save_mesh_ply(mesh, path)
    else:
        raise ParseError(f"unknown mesh extension: {path}")


# ---------------------------------------------------------------------------
# image maps
# ---------------------------------------------------------------------------

def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def save_png(image: np.ndarray, path: str, srgb: bool = True) -> None:
    """8-bit PNG; color images get a linear-to-sRGB transfer."""
    from PIL import Image

    img = np.asarray(image, dtype=np.float64)
    if srgb and img.ndim == 3:
        img = linear_to_srgb(img)
    data = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path)


def save_raw_map(data: np.ndarray, path: str) -> None:
    """Raw float32 map: 16-byte header (magic, width, height, channels)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(arr.astype("<f4").tobytes())


def load_raw_map(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RAW_MAGIC:
            raise ParseError(f"{path}: bad raw-map magic {magic!r}")
        w, h, c = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(), dtype="<f4", count=w * h * c)
        out = data.reshape(h, w, c).astype(np.float32)
        return out[:, :, 0] if c == 1 else out
