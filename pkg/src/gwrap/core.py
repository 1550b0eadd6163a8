"""Domain types and per-Gaussian math shared by every other module.

An oriented Gaussian is an anisotropic 3D Gaussian blob carrying a learnable
surface normal stored as an unbounded sign scalar plus a direction vector;
the effective normal is ``tanh(sign) * dir/|dir|`` and therefore always has
norm below one.  All values here are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .config import ALPHA_MAX
from .errors import ZeroNormal

_QUAT_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z convention)
# ---------------------------------------------------------------------------

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of one or many unit quaternions in (w, x, y, z) order."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m[0] if single else m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrientedGaussian:
    """One primitive: position, anisotropic shape, opacity, oriented normal, flat color."""

    mean: np.ndarray
    scales: np.ndarray          # per-axis standard deviations, > 0
    rotation: np.ndarray        # unit quaternion (w, x, y, z)
    opacity: float
    normal_sign: float = 0.0
    normal_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    color: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5]))

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4))
        object.__setattr__(self, "normal_dir", np.asarray(self.normal_dir, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "normal_sign", float(self.normal_sign))
        if not np.all(self.scales > 0):
            raise ValueError("scales must be componentwise positive")
        if abs(np.linalg.norm(self.rotation) - 1.0) > _QUAT_TOL:
            raise ValueError("rotation quaternion must have unit norm")
        if not (0.0 <= self.opacity <= ALPHA_MAX):
            raise ValueError(f"opacity must lie in [0, {ALPHA_MAX}]")
        if np.linalg.norm(self.normal_dir) <= 0:
            raise ValueError("normal_dir must be nonzero")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color channels must lie in [0, 1]")

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def replace(self, **kw) -> "OrientedGaussian":
        data = {
            "mean": self.mean, "scales": self.scales, "rotation": self.rotation,
            "opacity": self.opacity, "normal_sign": self.normal_sign,
            "normal_dir": self.normal_dir, "color": self.color,
        }
        data.update(kw)
        return OrientedGaussian(**data)


@dataclass(frozen=True)
class Ray:
    """Origin plus unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64).reshape(3))
        if abs(np.linalg.norm(self.direction) - 1.0) > _QUAT_TOL:
            raise ValueError("ray direction must be unit length")

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass(frozen=True)
class PinholeCamera:
    """Intrinsics plus a world-from-camera rigid pose.

    Camera convention: +z forward, +x right, +y down; pixel (row i, col j)
    has its center at (j + 0.5, i + 0.5).  Depth maps store Euclidean ray
    length, not z-depth.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray   # 3x3, world-from-camera
    center: np.ndarray     # camera center in world coordinates

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        for v in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, v, float(getattr(self, v)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > _QUAT_TOL * 100:
            raise ValueError("pose rotation must be orthonormal")

    def pixel_directions(self) -> np.ndarray:
        """Unit world-space ray directions through all pixel centers, (H*W, 3)."""
        j, i = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([
            (j.ravel() + 0.5 - self.cx) / self.fx,
            (i.ravel() + 0.5 - self.cy) / self.fy,
            np.ones(self.width * self.height),
        ], axis=1)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d @ self.rotation.T

    def ray(self, i: int, j: int) -> Ray:
        d = np.array([(j + 0.5 - self.cx) / self.fx, (i + 0.5 - self.cy) / self.fy, 1.0])
        d /= np.linalg.norm(d)
        return Ray(self.center, self.rotation @ d)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    @staticmethod
    def look_at(center, target, fx, fy, cx, cy, width, height, up=(0.0, 0.0, 1.0)) -> "PinholeCamera":
        center = np.asarray(center, dtype=np.float64)
        f = np.asarray(target, dtype=np.float64) - center
        f = f / np.linalg.norm(f)
        up = np.asarray(up, dtype=np.float64)
        if np.linalg.norm(np.cross(f, up)) < 1e-8:
            up = np.array([1.0, 0.0, 0.0])
        r = np.cross(f, up)
        r /= np.linalg.norm(r)
        d = np.cross(f, r)  # image-down axis; [r, d, f] is right-handed
        rot = np.stack([r, d, f], axis=1)
        return PinholeCamera(fx, fy, cx, cy, width, height, rot, center)


@dataclass(frozen=True)
class AABB:
    """Axis-aligned box used for crops and meshing regions of interest."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64).reshape(3))
        if np.any(self.hi < self.lo):
            raise ValueError("box hi must be componentwise >= lo")

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @staticmethod
    def of_points(points: np.ndarray) -> "AABB":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return AABB(pts.min(axis=0), pts.max(axis=0))


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle set. ``edge_points`` optionally records, per vertex,
    the pair of bracketing points the vertex was interpolated between."""

    vertices: np.ndarray                 # (V, 3)
    faces: np.ndarray                    # (F, 3) int
    edge_points: np.ndarray | None = None  # (V, 2, 3) interpolation brackets

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")
        if self.edge_points is not None:
            object.__setattr__(self, "edge_points", np.asarray(self.edge_points, dtype=np.float64).reshape(-1, 2, 3))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def cleanup(self, area_eps: float = 1e-12) -> "TriangleMesh":
        """Weld coincident vertices, drop degenerate faces and unused vertices."""
        if self.n_faces == 0:
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        # weld exactly coincident vertices (they arise when two crossing edges
        # interpolate to the same point)
        order = np.lexsort(self.vertices.T)
        sv = self.vertices[order]
        same = np.concatenate([[False], np.all(sv[1:] == sv[:-1], axis=1)])
        group = np.cumsum(~same) - 1
        remap = np.empty(self.n_vertices, dtype=np.int64)
        remap[order] = group
        first = np.zeros(group[-1] + 1, dtype=np.int64)
        first[group[::-1]] = order[::-1]
        verts = self.vertices[first]
        faces = remap[self.faces]
        # drop collapsed / near-zero-area faces
        keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        faces = faces[keep]
        if len(faces):
            cross = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
            faces = faces[0.5 * np.linalg.norm(cross, axis=1) > area_eps]
        # drop unreferenced vertices
        used = np.unique(faces)
        lut = np.full(len(verts), -1, dtype=np.int64)
        lut[used] = np.arange(len(used))
        return TriangleMesh(verts[used], lut[faces])


class GaussianScene:
    """All Gaussians plus the training cameras, with packed arrays for math.

    The packed representation is derived once at construction and read-only
    afterwards; batch kernels in other modules work directly on the arrays.
    """

    def __init__(self, gaussians: Sequence[OrientedGaussian], cameras: Sequence[PinholeCamera] = ()):
        self.gaussians: list[OrientedGaussian] = list(gaussians)
        self.cameras: list[PinholeCamera] = list(cameras)
        n = len(self.gaussians)
        self.means = np.array([g.mean for g in self.gaussians]).reshape(n, 3)
        self.scales = np.array([g.scales for g in self.gaussians]).reshape(n, 3)
        self.quats = np.array([g.rotation for g in self.gaussians]).reshape(n, 4)
        self.opacities = np.array([g.opacity for g in self.gaussians]).reshape(n)
        self.normal_signs = np.array([g.normal_sign for g in self.gaussians]).reshape(n)
        self.normal_dirs = np.array([g.normal_dir for g in self.gaussians]).reshape(n, 3)
        self.colors = np.array([g.color for g in self.gaussians]).reshape(n, 3)
        if n:
            self.rotations = quat_to_matrix(self.quats)
            # whitener W = diag(1/s) R^T maps world offsets to unit-ball coords
            self.whiteners = (1.0 / self.scales)[:, :, None] * np.transpose(self.rotations, (0, 2, 1))
            dir_norm = np.linalg.norm(self.normal_dirs, axis=1, keepdims=True)
            self.normals = np.tanh(self.normal_signs)[:, None] * self.normal_dirs / dir_norm
            self.max_scales = self.scales.max(axis=1)
        else:
            self.rotations = np.zeros((0, 3, 3))
            self.whiteners = np.zeros((0, 3, 3))
            self.normals = np.zeros((0, 3))
            self.max_scales = np.zeros(0)
        self.spatial_index = cKDTree(self.means) if n else None
        if n:
            pad = 3.0 * float(self.max_scales.max())
            self.bbox = np.stack([self.means.min(axis=0) - pad, self.means.max(axis=0) + pad])
        else:
            self.bbox = np.zeros((2, 3))

    def __len__(self) -> int:
        return len(self.gaussians)

    @property
    def n_gaussians(self) -> int:
        return len(self.gaussians)

    def knn(self, points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the k nearest Gaussian means per query point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        k = min(k, len(self))
        if k == 0 or self.spatial_index is None:
            p = len(points)
            return np.zeros((p, 0), dtype=np.int64), np.zeros((p, 0))
        dist, idx = self.spatial_index.query(points, k=k, workers=1)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        return idx.astype(np.int64), dist

    def with_orientations(self, signs: np.ndarray, dirs: np.ndarray) -> "GaussianScene":
        """New scene with replaced normal parameters; geometry untouched."""
        gs = [g.replace(normal_sign=float(s), normal_dir=d)
              for g, s, d in zip(self.gaussians, signs, dirs)]
        return GaussianScene(gs, self.cameras)

    def with_appended(self, extra: Iterable[OrientedGaussian]) -> "GaussianScene":
        return GaussianScene(self.gaussians + list(extra), self.cameras)


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------

def covariance_of(g: OrientedGaussian) -> tuple[np.ndarray, np.ndarray]:
    """Covariance and its inverse, both from the factored form R diag(s^2) R^T."""
    rot = g.rotation_matrix
    cov = rot @ np.diag(g.scales**2) @ rot.T
    prec = rot @ np.diag(g.scales**-2) @ rot.T
    return cov, prec


def eval_gaussian(g: OrientedGaussian, x: np.ndarray) -> float | np.ndarray:
    """alpha * exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)); accepts (3,) or (P, 3)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    delta = np.atleast_2d(x) - g.mean
    w = (1.0 / g.scales)[:, None] * g.rotation_matrix.T
    u = delta @ w.T
    val = g.opacity * np.exp(-0.5 * np.einsum("pi,pi->p", u, u))
    return float(val[0]) if single else val


def grad_log_one_minus_g(g: OrientedGaussian, x: np.ndarray) -> np.ndarray:
    """Gradient of log(1 - G(x)): G/(1-G) * Sigma^-1 (x - mu)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    delta = np.atleast_2d(x) - g.mean
    _, prec = covariance_of(g)
    val = eval_gaussian(g, np.atleast_2d(x))
    out = (val / (1.0 - val))[:, None] * (delta @ prec.T)
    return out[0] if single else out


def oriented_normal(g: OrientedGaussian) -> np.ndarray:
    """tanh(sign) * dir/|dir|; odd in the sign parameter, norm <= 1."""
    d = g.normal_dir / np.linalg.norm(g.normal_dir)
    return np.tanh(g.normal_sign) * d


def normal_scale_along(g: OrientedGaussian) -> float:
    """Ellipsoid scaling along the unit oriented normal: |diag(s) R^T n_hat|."""
    n = oriented_normal(g)
    norm = np.linalg.norm(n)
    if norm < 1e-9:
        raise ZeroNormal("oriented normal is numerically zero")
    n_hat = n / norm
    return float(np.linalg.norm(g.scales * (g.rotation_matrix.T @ n_hat)))
