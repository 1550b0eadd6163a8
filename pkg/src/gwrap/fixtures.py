"""Synthetic, fully deterministic test scenes.

Each fixture realizes an analytically known surface wrapped by oriented
Gaussians: tangent-flattened blobs whose normals point out of the occupied
region, plus a ring of training cameras.  Gaussian tangent scale equals the
measured lattice spacing so the shell is sealed; thickness is a tenth of
that.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .config import substream
from .core import GaussianScene, OrientedGaussian, PinholeCamera, matrix_to_quat
from .errors import BadParams

FIXTURE_KINDS = ("sphere_shell", "plane_patch", "two_plane", "cube_shell")


def fibonacci_sphere(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors."""
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _mean_spacing(points: np.ndarray) -> float:
    d, _ = cKDTree(points).query(points, k=2, workers=1)
    return float(d[:, 1].mean())


def _tangent_rotation(normals: np.ndarray) -> np.ndarray:
    """Rotation matrices whose third column equals the given unit normals."""
    n = normals
    a = np.where(np.abs(n[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=2)


def _orient_params(normals: np.ndarray, orientation: str, seed: int):
    """(sign, dir) arrays realizing either the outward normals or random ones."""
    n = len(normals)
    if orientation == "outward":
        return np.full(n, 3.5), normals.copy()
    if orientation == "random":
        rng = substream(seed, "fixture-random-orientation")
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        signs = rng.uniform(-1.5, 1.5, size=n)
        signs[np.abs(signs) < 0.05] = 0.05  # keep normals away from exactly zero
        return signs, dirs
    raise BadParams(f"unknown orientation {orientation!r} (use 'outward' or 'random')")


def _gaussians(points, normals, tangent_scale, opacity, signs, dirs,
               thickness: float = 0.1) -> list[OrientedGaussian]:
    rots = _tangent_rotation(normals)
    colors = np.clip(0.5 + 0.5 * normals, 0.0, 1.0)
    scales = np.array([tangent_scale, tangent_scale, thickness * tangent_scale])
    out = []
    for i in range(len(points)):
        out.append(OrientedGaussian(
            mean=points[i], scales=scales, rotation=matrix_to_quat(rots[i]),
            opacity=opacity, normal_sign=signs[i], normal_dir=dirs[i], color=colors[i],
        ))
    return out


def _ring_cameras(dirs: np.ndarray, distance: float, target, cover_radius: float,
                  resolution) -> list[PinholeCamera]:
    width, height = int(resolution[0]), int(resolution[1])
    target = np.asarray(target, dtype=np.float64)
    # focal length chosen so a sphere of cover_radius at `distance` fills the image
    focal = 0.5 * min(width, height) * distance / cover_radius
    cams = []
    for d in dirs:
        cams.append(PinholeCamera.look_at(
            center=target + distance * d, target=target,
            fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
            width=width, height=height,
        ))
    return cams


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise BadParams(msg)


def make_fixture(kind: str, **params) -> GaussianScene:
    """Build one of the synthetic scenes; identical params give identical scenes."""
    if kind == "sphere_shell":
        return _sphere_shell(**params)
    if kind == "plane_patch":
        return _plane_patch(**params)
    if kind == "two_plane":
        return _two_plane(**params)
    if kind == "cube_shell":
        return _cube_shell(**params)
    raise BadParams(f"unknown fixture kind {kind!r}; choose from {FIXTURE_KINDS}")


def _sphere_shell(radius: float = 1.0, count: int = 400, n_cams: int = 20,
                  opacity: float = 0.95, camera_distance: float = 3.0,
                  resolution=(64, 64), orientation: str = "outward",
                  spacing_scale: float = 1.0, seed: int = 0) -> GaussianScene:
    _check(radius > 0 and count >= 1 and n_cams >= 0, "sphere_shell: radius/count/n_cams out of range")
    dirs = fibonacci_sphere(count)
    points = radius * dirs
    spacing = _mean_spacing(points) * spacing_scale if count > 1 else 0.3 * radius
    signs, ndirs = _orient_params(dirs, orientation, seed)
    gs = _gaussians(points, dirs, spacing, opacity, signs, ndirs)
    cam_dirs = fibonacci_sphere(n_cams) if n_cams else np.zeros((0, 3))
    cams = _ring_cameras(cam_dirs, camera_distance * radius, (0.0, 0.0, 0.0),
                         cover_radius=1.4 * radius, resolution=resolution)
    return GaussianScene(gs, cams)


def _grid_patch(extent: float, per_side: int, seed: int = 0):
    """Regular grid with a tiny deterministic in-plane jitter.

    Perfectly regular lattices put downstream Delaunay/marching-tetrahedra
    vertices in exactly degenerate (collinear) positions; the jitter keeps
    the construction generic without changing the geometry meaningfully.
    """
    step = extent / per_side
    u = (np.arange(per_side) + 0.5) * step - extent / 2.0
    xx, yy = np.meshgrid(u, u)
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(per_side * per_side)], axis=1)
    rng = substream(seed, "fixture-grid-jitter")
    pts[:, :2] += rng.uniform(-0.03, 0.03, size=(len(pts), 2)) * step
    return pts, step


def _plane_patch(extent: float = 2.0, per_side: int = 16, n_cams: int = 1,
                 opacity: float = 0.95, camera_distance: float = 3.0,
                 resolution=(64, 64), orientation: str = "outward",
                 seed: int = 0) -> GaussianScene:
    _check(extent > 0 and per_side >= 1 and n_cams >= 0, "plane_patch: bad extent/per_side/n_cams")
    pts, spacing = _grid_patch(extent, per_side)
    normals = np.tile(np.array([0.0, 0.0, 1.0]), (len(pts), 1))
    signs, ndirs = _orient_params(normals, orientation, seed)
    gs = _gaussians(pts, normals, spacing, opacity, signs, ndirs)
    cams = []
    if n_cams:
        cam_dirs = [np.array([0.0, 0.0, 1.0])]
        for j in range(1, n_cams):
            ang = 2.0 * np.pi * (j - 1) / max(n_cams - 1, 1)
            cam_dirs.append(np.array([0.5 * np.cos(ang), 0.5 * np.sin(ang), 1.0]) / np.sqrt(1.25))
        cams = _ring_cameras(np.array(cam_dirs), camera_distance * extent / 2.0,
                             (0.0, 0.0, 0.0), cover_radius=0.8 * extent, resolution=resolution)
    return GaussianScene(gs, cams)


def _two_plane(extent: float = 2.0, per_side: int = 16, opacity: float = 0.95,
               resolution=(64, 64), back_distance_scale: float = 0.3,
               seed: int = 0) -> GaussianScene:
    """One-sided plane watched from both sides.

    All normals face camera A (front, sees the whole patch); camera B sits
    behind and closer, so it sees only the central part of the patch.  The
    pair exercises error-driven densification of the hidden side.
    """
    _check(extent > 0 and per_side >= 1, "two_plane: bad extent/per_side")
    _check(0 < back_distance_scale < 1, "two_plane: back_distance_scale must lie in (0, 1)")
    pts, spacing = _grid_patch(extent, per_side)
    normals = np.tile(np.array([0.0, 0.0, 1.0]), (len(pts), 1))
    signs, ndirs = _orient_params(normals, "outward", seed)
    gs = _gaussians(pts, normals, spacing, opacity, signs, ndirs)
    d_front = 1.5 * extent
    d_back = back_distance_scale * d_front
    cams = _ring_cameras(np.array([[0.0, 0.0, 1.0]]), d_front, (0, 0, 0),
                         0.8 * extent, resolution)
    # the back camera keeps the front camera's angular field of view, so at
    # its shorter distance it sees only the central part of the patch
    cams += _ring_cameras(np.array([[0.0, 0.0, -1.0]]), d_back, (0, 0, 0),
                          0.8 * extent * back_distance_scale, resolution)
    return GaussianScene(gs, cams)


def _cube_shell(side: float = 2.0, per_side: int = 30, n_cams: int = 20,
                opacity: float = 0.95, camera_distance: float = 2.0,
                resolution=(64, 64), fillet_scale: float = 0.2,
                thickness: float = 0.25, seed: int = 0) -> GaussianScene:
    """Closed wrapping of a filleted cube.

    Flat face grids, quarter-cylinder edge fillets, and sphere-octant
    corners form a complete oriented shell; a sharp cube cannot be sealed by
    a finite Gaussian lattice because its edge curvature is unbounded.  The
    normal-direction scale is thicker than the sphere fixture's so the
    offset pivots clear the vacancy bias on the relatively coarse fillets.
    """
    _check(side > 0 and per_side >= 4 and n_cams >= 0, "cube_shell: bad side/per_side/n_cams")
    _check(0.0 < fillet_scale < 0.5, "cube_shell: fillet_scale must lie in (0, 0.5)")
    spacing = side / per_side
    rho = fillet_scale * side
    inner = side / 2.0 - rho
    _check(inner > 0, "cube_shell: fillet leaves no flat face")
    pts, nrm = [], []
    rng = substream(seed, "fixture-cube-jitter")

    def jit(n):
        return rng.uniform(-0.03, 0.03, size=n) * spacing

    n_flat = max(1, int(round(2.0 * inner / spacing)))
    u = (np.arange(n_flat) + 0.5) * (2.0 * inner / n_flat) - inner
    uu, vv = np.meshgrid(u, u)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            p = np.zeros((n_flat * n_flat, 3))
            p[:, axis] = sign * side / 2.0
            p[:, (axis + 1) % 3] = uu.ravel() + jit(n_flat * n_flat)
            p[:, (axis + 2) % 3] = vv.ravel() + jit(n_flat * n_flat)
            n = np.zeros_like(p)
            n[:, axis] = sign
            pts.append(p)
            nrm.append(n)

    q = max(2, int(round(0.5 * np.pi * rho / spacing)))
    for axis in range(3):
        a1, a2 = (axis + 1) % 3, (axis + 2) % 3
        for s1 in (-1.0, 1.0):
            for s2 in (-1.0, 1.0):
                for k in range(q):
                    th = (k + 0.5) * (0.5 * np.pi / q) + jit(n_flat) / rho
                    p = np.zeros((n_flat, 3))
                    p[:, axis] = u + jit(n_flat)
                    p[:, a1] = s1 * (inner + rho * np.cos(th))
                    p[:, a2] = s2 * (inner + rho * np.sin(th))
                    n = np.zeros_like(p)
                    n[:, a1] = s1 * np.cos(th)
                    n[:, a2] = s2 * np.sin(th)
                    pts.append(p)
                    nrm.append(n)

    n_oct = max(3, int(round(0.5 * np.pi * rho * rho / spacing**2)))
    octant = fibonacci_sphere(8 * n_oct)
    octant = octant[np.all(octant > 0, axis=1)]
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                sgn = np.array([sx, sy, sz])
                d = octant * sgn
                pts.append(sgn * inner + rho * d)
                nrm.append(d)

    pts = np.concatenate(pts)
    nrm = np.concatenate(nrm)
    signs, ndirs = _orient_params(nrm, "outward", seed)
    gs = _gaussians(pts, nrm, spacing, opacity, signs, ndirs, thickness=thickness)
    cam_dirs = fibonacci_sphere(n_cams) if n_cams else np.zeros((0, 3))
    cams = _ring_cameras(cam_dirs, camera_distance * side, (0.0, 0.0, 0.0),
                         cover_radius=1.2 * side, resolution=resolution)
    return GaussianScene(gs, cams)
