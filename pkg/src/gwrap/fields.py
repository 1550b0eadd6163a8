"""Closed-form geometric fields of an oriented-Gaussian scene.

Along any ray each Gaussian is exactly a 1-D Gaussian in the ray parameter:
with whitened direction u_w and whitened origin offset u_d the squared
Mahalanobis distance is the quadratic  m^2(t) = a t^2 - 2 b t + c  where
a = |u_w|^2, b = u_w . u_d, c = |u_d|^2.  Every kernel here reduces to that
quadratic.  A Gaussian is treated as exactly zero beyond Mahalanobis
``support_sigma`` so all sums and products have finite support.

Public functions accept either a single point/ray or a batch; batch kernels
chunk internally to bound memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import DEFAULTS, RunConfig, substream
from .core import GaussianScene, OrientedGaussian, Ray
from .errors import NoCameras

_CHUNK_PAIRS = 2_000_000  # max dense (ray, gaussian) entries per chunk


@dataclass(frozen=True)
class FieldSample:
    """Bundle of all field values at one query point."""

    vacancy: float
    occupancy: float
    vector: np.ndarray
    normal: np.ndarray
    support_count: int


# ---------------------------------------------------------------------------
# ray/Gaussian quadratic helpers
# ---------------------------------------------------------------------------

def _pair_quadratic(scene: GaussianScene, deltas: np.ndarray, dirs: np.ndarray, gi: np.ndarray):
    """Quadratic coefficients (a, b, c) for per-pair Mahalanobis along rays.

    deltas: (P, 3) mean - origin per pair; dirs: (P, 3); gi: (P,) indices.
    """
    w = scene.whiteners[gi]
    uw = np.einsum("pij,pj->pi", w, dirs)
    ud = np.einsum("pij,pj->pi", w, deltas)
    a = np.einsum("pi,pi->p", uw, uw)
    b = np.einsum("pi,pi->p", uw, ud)
    c = np.einsum("pi,pi->p", ud, ud)
    return a, b, c


def _dense_candidates(scene: GaussianScene, origin: np.ndarray, dirs: np.ndarray,
                      t_end, bound: np.ndarray):
    """(ray_idx, g_idx) pairs whose bounding sphere meets each ray segment.

    One shared origin, many directions; t_end is a scalar, an (R,) array, or
    None for unbounded rays.  Conservative: based on Euclidean distance from
    the Gaussian mean to the segment.
    """
    delta = scene.means - origin                      # (N, 3)
    d2 = np.einsum("ni,ni->n", delta, delta)
    n = len(scene)
    r = len(dirs)
    bound2 = bound * bound
    out_r, out_g = [], []
    step = max(1, _CHUNK_PAIRS // max(n, 1))
    for lo in range(0, r, step):
        hi = min(r, lo + step)
        b0 = dirs[lo:hi] @ delta.T                    # (Rc, N) projection of mean onto ray
        if t_end is None:
            t_cl = np.clip(b0, 0.0, None)
        else:
            te = t_end if np.isscalar(t_end) else t_end[lo:hi, None]
            t_cl = np.clip(b0, 0.0, te)
        # squared distance from mean to nearest point of the segment [0, t_end]
        seg2 = d2[None, :] + t_cl * (t_cl - 2.0 * b0)
        rr, gg = np.nonzero(seg2 <= bound2[None, :])
        out_r.append(rr + lo)
        out_g.append(gg)
    if not out_r:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(out_r), np.concatenate(out_g)


class _OriginIndex:
    """Angular cube-map index of Gaussians as seen from one ray origin.

    Bins unit directions onto a 6-face grid; each Gaussian is inserted into
    every bin its padded angular cone can touch, so a bin lookup returns a
    conservative superset of the Gaussians within ``bound`` of any ray cast
    from the origin through that bin.  Built once per (scene, origin) and
    reused by every vacancy/render query from that origin.
    """

    def __init__(self, scene: GaussianScene, origin: np.ndarray, bound: np.ndarray):
        n = len(scene)
        self.k = k = int(np.clip(np.sqrt(max(n, 1) / 6.0) * 1.6, 4, 40))
        centers, bin_rad = self._bin_geometry(k)
        self.rel = np.ascontiguousarray(scene.means - origin)
        self.d2 = np.einsum("ni,ni->n", self.rel, self.rel)
        self.bound2 = bound * bound
        dist = np.sqrt(self.d2)
        inside = dist <= bound
        safe_dist = np.where(dist > 0, dist, 1.0)
        dhat = self.rel / safe_dist[:, None]
        pad = np.arcsin(np.clip(bound / safe_dist, 0.0, 1.0)) + bin_rad
        cos_pad = np.cos(np.minimum(pad, np.pi))
        cos_pad[inside | (dist == 0)] = -1.1          # overlaps everything
        entries_bin, entries_g = [], []
        step = max(1, _CHUNK_PAIRS // centers.shape[0])
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            hit = dhat[lo:hi] @ centers.T >= cos_pad[lo:hi, None]
            gg, bb = np.nonzero(hit)
            entries_g.append(gg + lo)
            entries_bin.append(bb)
        gidx = np.concatenate(entries_g) if entries_g else np.zeros(0, dtype=np.int64)
        bidx = np.concatenate(entries_bin) if entries_bin else np.zeros(0, dtype=np.int64)
        order = np.argsort(bidx, kind="stable")
        self.items = gidx[order].astype(np.int64)
        self.ptr = np.zeros(centers.shape[0] + 1, dtype=np.int64)
        np.add.at(self.ptr, bidx + 1, 1)
        np.cumsum(self.ptr, out=self.ptr)

    @staticmethod
    def _bin_geometry(k: int):
        """Bin center directions and the worst-case center-to-corner angle."""
        edges = np.linspace(-1.0, 1.0, k + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        uu, vv = np.meshgrid(mids, mids, indexing="ij")
        centers = []
        for axis in range(3):
            for sign in (1.0, -1.0):
                d = np.empty((k * k, 3))
                d[:, axis] = sign
                d[:, (axis + 1) % 3] = uu.ravel()
                d[:, (axis + 2) % 3] = vv.ravel()
                centers.append(d)
        centers = np.concatenate(centers)
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        # exact max center-to-corner angle over one face (faces are congruent)
        worst = 1.0
        mid = np.stack([np.ones(k * k), uu.ravel(), vv.ravel()], axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        for du in (0, 1):
            for dv in (0, 1):
                gu, gv = np.meshgrid(edges[du:k + du], edges[dv:k + dv], indexing="ij")
                c = np.stack([np.ones(k * k), gu.ravel(), gv.ravel()], axis=1)
                c /= np.linalg.norm(c, axis=1, keepdims=True)
                worst = min(worst, float(np.einsum("bi,bi->b", mid, c).min()))
        return centers, float(np.arccos(np.clip(worst, -1.0, 1.0)))

    def bin_of(self, dirs: np.ndarray) -> np.ndarray:
        k = self.k
        ax = np.argmax(np.abs(dirs), axis=1)
        rows = np.arange(len(dirs))
        dom = dirs[rows, ax]
        face = ax * 2 + (dom < 0)
        u = dirs[rows, (ax + 1) % 3] / np.abs(dom)
        v = dirs[rows, (ax + 2) % 3] / np.abs(dom)
        iu = np.clip(((u + 1.0) * 0.5 * k).astype(np.int64), 0, k - 1)
        iv = np.clip(((v + 1.0) * 0.5 * k).astype(np.int64), 0, k - 1)
        return face * k * k + iu * k + iv

    def pairs(self, dirs: np.ndarray, t_end):
        """Trimmed (ray_idx, g_idx) sorted by ray: bounding sphere meets segment."""
        bins = self.bin_of(dirs)
        starts = self.ptr[bins]
        counts = self.ptr[bins + 1] - starts
        total = int(counts.sum())
        if total == 0:
            z = np.zeros(0, dtype=np.int64)
            return z, z
        ri = np.repeat(np.arange(len(dirs)), counts)
        offs = np.concatenate([[0], np.cumsum(counts)])[:-1]
        flat = np.arange(total) - np.repeat(offs, counts) + np.repeat(starts, counts)
        gi = self.items[flat]
        b0 = (dirs[ri] * self.rel[gi]).sum(axis=1)
        if t_end is None:
            t_cl = np.clip(b0, 0.0, None)
        else:
            te = t_end if np.isscalar(t_end) else t_end[ri]
            t_cl = np.clip(b0, 0.0, te)
        seg2 = self.d2[gi] + t_cl * (t_cl - 2.0 * b0)
        keep = seg2 <= self.bound2[gi]
        return ri[keep], gi[keep]


def _origin_index(scene: GaussianScene, origin: np.ndarray, bound: np.ndarray,
                  config: RunConfig) -> _OriginIndex:
    cache = getattr(scene, "_origin_index_cache", None)
    if cache is None:
        cache = {}
        scene._origin_index_cache = cache
    key = (origin.tobytes(), float(config.support_sigma))
    idx = cache.get(key)
    if idx is None:
        idx = _OriginIndex(scene, origin, bound)
        cache[key] = idx
    return idx


def _candidates_single_origin(scene: GaussianScene, origin: np.ndarray, dirs: np.ndarray,
                              t_end, bound: np.ndarray, config: RunConfig | None = None):
    """Dispatch between the dense test and the cached angular index."""
    if config is None or len(scene) < 256 or len(dirs) * len(scene) < _CHUNK_PAIRS // 4:
        return _dense_candidates(scene, origin, dirs, t_end, bound)
    idx = _origin_index(scene, origin, bound, config)
    return idx.pairs(dirs, t_end)


def _segment_sum(values: np.ndarray, ray_idx: np.ndarray, n_rays: int) -> np.ndarray:
    """Sum `values` per ray; ray_idx must be sorted ascending."""
    out = np.zeros(n_rays)
    if len(values) == 0:
        return out
    starts = np.flatnonzero(np.diff(ray_idx, prepend=-1))
    out[ray_idx[starts]] = np.add.reduceat(values, starts)
    return out


def _support_bound(scene: GaussianScene, config: RunConfig) -> np.ndarray:
    return config.support_sigma * scene.max_scales


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def max_contribution_t(ray: Ray, g: OrientedGaussian) -> float:
    """Ray parameter (clamped to >= 0) where G(o + t w) is maximal."""
    w = (1.0 / g.scales)[:, None] * g.rotation_matrix.T
    uw = w @ ray.direction
    ud = w @ (g.mean - ray.origin)
    a = float(uw @ uw)
    b = float(uw @ ud)
    return max(0.0, b / a)


def transmittance(scene: GaussianScene, ray: Ray, t, config: RunConfig = DEFAULTS):
    """Product of clamped per-Gaussian factors along one ray, at one or many t."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    bound = _support_bound(scene, config)
    if len(scene) == 0:
        out = np.ones_like(t_arr)
        return float(out[0]) if np.isscalar(t) or np.ndim(t) == 0 else out
    dirs = ray.direction[None, :]
    ri, gi = _candidates_single_origin(scene, ray.origin, dirs, float(t_arr.max()), bound, config)
    a, b, c = _pair_quadratic(scene, scene.means[gi] - ray.origin, np.repeat(dirs, len(gi), axis=0), gi)
    t_star = np.maximum(0.0, b / a)
    te = np.minimum(t_arr[:, None], t_star[None, :])
    m2 = a[None, :] * te * te - 2.0 * b[None, :] * te + c[None, :]
    val = scene.opacities[gi][None, :] * np.exp(-0.5 * m2)
    val[m2 > config.support_sigma**2] = 0.0
    log_t = np.log1p(-val).sum(axis=1)
    out = np.exp(log_t)
    return float(out[0]) if np.ndim(t) == 0 else out


def transmittance_batch(scene: GaussianScene, origin: np.ndarray, dirs: np.ndarray,
                        t_end: np.ndarray, config: RunConfig = DEFAULTS) -> np.ndarray:
    """Transmittance at t_end for a batch of rays sharing one origin."""
    dirs = np.ascontiguousarray(np.atleast_2d(np.asarray(dirs, dtype=np.float64)))
    t_end = np.ascontiguousarray(np.broadcast_to(np.asarray(t_end, dtype=np.float64), (len(dirs),)))
    if len(scene) == 0:
        return np.ones(len(dirs))
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    bound = _support_bound(scene, config)
    use_index = len(scene) >= 256 and len(dirs) * len(scene) >= _CHUNK_PAIRS // 4
    if use_index and _kernels.HAVE_NUMBA:
        idx = _origin_index(scene, origin, bound, config)
        bins = idx.bin_of(dirs)
        log_t = _kernels.log_transmittance_binned(
            bins, idx.ptr, idx.items, idx.rel, idx.d2, idx.bound2,
            scene.whiteners, scene.opacities, dirs, t_end, config.support_sigma**2)
        return np.exp(log_t)
    ri, gi = _candidates_single_origin(scene, origin, dirs, t_end, bound, config)
    if not len(ri):
        return np.ones(len(dirs))
    a, b, c = _pair_quadratic(scene, scene.means[gi] - origin, dirs[ri], gi)
    t_star = np.maximum(0.0, b / a)
    te = np.minimum(t_end[ri], t_star)
    m2 = a * te * te - 2.0 * b * te + c
    val = scene.opacities[gi] * np.exp(-0.5 * m2)
    val[m2 > config.support_sigma**2] = 0.0
    return np.exp(_segment_sum(np.log1p(-val), ri, len(dirs)))


def _camera_list(scene: GaussianScene, config: RunConfig):
    if not scene.cameras:
        raise NoCameras("vacancy needs at least one training camera")
    cams = scene.cameras
    k = config.vacancy_camera_subset
    if k and k < len(cams):
        rng = substream(config.seed, "vacancy-camera-subset")
        idx = rng.choice(len(cams), size=k, replace=False)
        cams = [cams[i] for i in sorted(idx)]
    return cams


def vacancy_lower_bound(scene: GaussianScene, x: np.ndarray, config: RunConfig = DEFAULTS):
    """Max transmittance over camera rays through x: a lower bound on vacancy."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    v = vacancy_lower_bound_batch(scene, np.atleast_2d(x), config)
    return float(v[0]) if single else v


def vacancy_lower_bound_batch(scene: GaussianScene, points: np.ndarray,
                              config: RunConfig = DEFAULTS) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cams = _camera_list(scene, config)
    best = np.full(len(points), -np.inf)
    for cam in cams:
        diff = points - cam.center
        t = np.linalg.norm(diff, axis=1)
        safe = t > 1e-12
        dirs = np.where(safe[:, None], diff / np.where(safe, t, 1.0)[:, None], np.array([1.0, 0.0, 0.0]))
        tr = transmittance_batch(scene, cam.center, dirs, t, config)
        tr[~safe] = 1.0  # a point at the camera center is trivially reachable
        np.maximum(best, tr, out=best)
    return np.clip(best, 0.0, 1.0)


def _attenuation_terms(scene: GaussianScene, points: np.ndarray, dirs: np.ndarray,
                       config: RunConfig, oriented: bool) -> np.ndarray:
    """Per-point attenuation sum; `oriented` switches indicator+|.| form."""
    points = np.atleast_2d(points)
    dirs = np.atleast_2d(dirs)
    n = len(scene)
    out = np.zeros(len(points))
    if n == 0:
        return out
    s2 = config.support_sigma**2
    step = max(1, _CHUNK_PAIRS // n)
    valid_n = np.linalg.norm(scene.normals, axis=1) > 0.0
    for lo in range(0, len(points), step):
        hi = min(len(points), lo + step)
        delta = points[lo:hi, None, :] - scene.means[None, :, :]        # (P, N, 3)
        u = np.einsum("nij,pnj->pni", scene.whiteners, delta)
        m2 = np.einsum("pni,pni->pn", u, u)
        g = scene.opacities[None, :] * np.exp(-0.5 * m2)
        g[m2 > s2] = 0.0
        uw = np.einsum("nij,pj->pni", scene.whiteners, dirs[lo:hi])
        dot = np.einsum("pni,pni->pn", uw, u)                           # w . Sigma^-1 (x - mu)
        term = dot * g / (1.0 - g)                                      # w . grad log(1 - G)
        if oriented:
            side = np.einsum("pni,ni->pn", delta, scene.normals) >= 0.0
            term = np.abs(term) * side * valid_n[None, :]
        else:
            term = np.maximum(0.0, -term)
        out[lo:hi] = term.sum(axis=1)
    return out


def attenuation(scene: GaussianScene, x: np.ndarray, w: np.ndarray, config: RunConfig = DEFAULTS):
    """View-dependent attenuation: sum_i max(0, -w . grad log(1 - G_i(x)))."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = _attenuation_terms(scene, np.atleast_2d(x), np.atleast_2d(np.asarray(w, dtype=np.float64)),
                             config, oriented=False)
    return float(out[0]) if single else out


def oriented_attenuation(scene: GaussianScene, x: np.ndarray, w: np.ndarray,
                         config: RunConfig = DEFAULTS):
    """Half-space gated, reciprocal attenuation: identical for w and -w."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = _attenuation_terms(scene, np.atleast_2d(x), np.atleast_2d(np.asarray(w, dtype=np.float64)),
                             config, oriented=True)
    return float(out[0]) if single else out


def _vector_terms(scene: GaussianScene, points: np.ndarray, k: int, config: RunConfig):
    """Vector-field sum and in-support neighbor count per point."""
    points = np.atleast_2d(points)
    p = len(points)
    vec = np.zeros((p, 3))
    count = np.zeros(p, dtype=np.int64)
    if len(scene) == 0 or k < 1:
        return vec, count
    s2 = config.support_sigma**2
    idx, _ = scene.knn(points, k)
    kk = idx.shape[1]
    valid_n = np.linalg.norm(scene.normals, axis=1) > 0.0
    step = max(1, _CHUNK_PAIRS // max(kk, 1))
    for lo in range(0, p, step):
        hi = min(p, lo + step)
        gi = idx[lo:hi]                                                  # (P, k)
        delta = points[lo:hi, None, :] - scene.means[gi]                 # (P, k, 3)
        w = scene.whiteners[gi]
        u = np.einsum("pkij,pkj->pki", w, delta)
        m2 = np.einsum("pki,pki->pk", u, u)
        g = scene.opacities[gi] * np.exp(-0.5 * m2)
        support = m2 <= s2
        g[~support] = 0.0
        side = np.einsum("pki,pki->pk", delta, scene.normals[gi]) >= 0.0
        coef = g / (1.0 - g) * (side & valid_n[gi])
        grad = np.einsum("pkji,pki->pkj", w, u)                          # Sigma^-1 (x - mu)
        vec[lo:hi] = np.einsum("pk,pkj->pj", coef, grad)
        count[lo:hi] = support.sum(axis=1)
    return vec, count


def vector_field(scene: GaussianScene, x: np.ndarray, k: int | None = None,
                 config: RunConfig = DEFAULTS):
    """Gradient of log-vacancy: oriented sum over the k nearest Gaussians."""
    if k is None:
        k = config.knn
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    vec, _ = _vector_terms(scene, np.atleast_2d(x), k, config)
    return vec[0] if single else vec


def normal_field(scene: GaussianScene, x: np.ndarray, k: int | None = None,
                 config: RunConfig = DEFAULTS):
    """Normalized vector field, or zero where its norm is below threshold."""
    if k is None:
        k = config.knn
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    vec, _ = _vector_terms(scene, np.atleast_2d(x), k, config)
    out = normalize_field(vec, config)
    return out[0] if single else out


def normalize_field(vec: np.ndarray, config: RunConfig = DEFAULTS) -> np.ndarray:
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    safe = norm >= config.vector_zero_eps
    return np.where(safe, vec / np.where(safe, norm, 1.0), 0.0)


def field_sample(scene: GaussianScene, x: np.ndarray, k: int | None = None,
                 config: RunConfig = DEFAULTS) -> FieldSample:
    """Vacancy, occupancy, vector and normal fields, and support count at x."""
    if k is None:
        k = config.knn
    x = np.asarray(x, dtype=np.float64).reshape(3)
    v = vacancy_lower_bound(scene, x, config)
    vec, count = _vector_terms(scene, x[None, :], k, config)
    nrm = normalize_field(vec, config)
    return FieldSample(vacancy=v, occupancy=1.0 - v, vector=vec[0], normal=nrm[0],
                       support_count=int(count[0]))


def field_sample_batch(scene: GaussianScene, points: np.ndarray, k: int | None = None,
                       config: RunConfig = DEFAULTS):
    """Vectorized field_sample: returns (vacancy, vector, normal, support_count) arrays."""
    if k is None:
        k = config.knn
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = vacancy_lower_bound_batch(scene, points, config)
    vec, count = _vector_terms(scene, points, k, config)
    return v, vec, normalize_field(vec, config), count
