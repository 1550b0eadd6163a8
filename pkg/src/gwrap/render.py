"""Per-ray rendering: alpha compositing of sorted Gaussian contributions.

Each Gaussian contributes its value at the point of maximum contribution
along the ray; contributions are sorted by that ray parameter (ties broken
front-facing first, then by index) and alpha-composited.  Depth is the ray
parameter where transmittance crosses 0.5, refined by bisection.  The
ray-marching integrator at the bottom is the slow reference used to verify
that compositing and attenuation-based volume rendering agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import DEFAULTS, RunConfig
from .core import GaussianScene, PinholeCamera, Ray
from .fields import _candidates_single_origin, _pair_quadratic, _support_bound

_MEDIAN_TOL = 1e-6
_MEDIAN_MAX_ITERS = 60


class Contribution(NamedTuple):
    index: int      # Gaussian index
    t_star: float   # ray parameter of maximum contribution
    peak: float     # Gaussian value there
    weight: float   # blend weight


@dataclass(frozen=True)
class RenderedMaps:
    color: np.ndarray    # (H, W, 3) in [0, 1]
    alpha: np.ndarray    # (H, W) accumulated opacity
    depth: np.ndarray    # (H, W) ray-length depth, NaN where alpha < 0.5
    normal: np.ndarray   # (H, W, 3) composited oriented normals, |.| <= 1


@dataclass
class RayBatch:
    """Sorted per-ray contribution lists plus derived per-ray quantities.

    Pair arrays are sorted by (ray, t*, facing, index); ``weight`` is zero
    for entries dropped by early termination.  Kept weights telescope with
    the final transmittance.
    """

    n_rays: int
    ray_idx: np.ndarray
    g_idx: np.ndarray
    t_star: np.ndarray
    peak: np.ndarray
    weight: np.ndarray
    quad_a: np.ndarray
    quad_b: np.ndarray
    quad_c: np.ndarray
    alpha: np.ndarray    # (R,) sum of kept weights
    depth: np.ndarray    # (R,) median depth, NaN where alpha < 0.5


def _segments(ray_idx: np.ndarray):
    starts = np.flatnonzero(np.diff(ray_idx, prepend=-1))
    return starts


def _bincount3(idx: np.ndarray, weights: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, 3))
    for c in range(3):
        out[:, c] = np.bincount(idx, weights=weights * vals[:, c], minlength=n)
    return out


def trace_rays(scene: GaussianScene, origin: np.ndarray, dirs: np.ndarray,
               config: RunConfig = DEFAULTS, with_depth: bool = True) -> RayBatch:
    """Find, sort, and composite all ray/Gaussian contributions for a batch."""
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    dirs = np.ascontiguousarray(np.atleast_2d(np.asarray(dirs, dtype=np.float64)))
    n_rays = len(dirs)
    bound = _support_bound(scene, config)
    s2 = config.support_sigma**2
    if len(scene) == 0:
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return RayBatch(n_rays, zi, zi, z, z, z, z, z, z,
                        np.zeros(n_rays), np.full(n_rays, np.nan))
    ri, gi = _candidates_single_origin(scene, origin, dirs, None, bound, config)
    a, b, c = _pair_quadratic(scene, scene.means[gi] - origin, dirs[ri], gi)
    t_star = np.maximum(0.0, b / a)
    m2 = a * t_star * t_star - 2.0 * b * t_star + c
    keep = m2 <= s2
    ri, gi, a, b, c, t_star, m2 = ri[keep], gi[keep], a[keep], b[keep], c[keep], t_star[keep], m2[keep]
    peak = scene.opacities[gi] * np.exp(-0.5 * m2)
    facing = np.einsum("pi,pi->p", scene.normals[gi], dirs[ri])
    order = np.lexsort((gi, facing, t_star, ri))
    ri, gi, a, b, c, t_star, peak = (arr[order] for arr in (ri, gi, a, b, c, t_star, peak))

    # blend weights: w_i = peak_i * prod_{j<i} (1 - peak_j), early-stopped
    lp = np.log1p(-peak)
    starts = _segments(ri)
    cum = np.cumsum(lp)
    seg_base = np.zeros(len(lp))
    if len(starts):
        counts = np.diff(np.append(starts, len(lp)))
        seg_base = np.repeat(cum[starts] - lp[starts], counts)
    t_before = np.exp(cum - lp - seg_base)
    weight = peak * t_before
    weight[t_before < config.early_stop_t] = 0.0
    alpha = np.bincount(ri, weights=weight, minlength=n_rays)

    depth = np.full(n_rays, np.nan)
    if with_depth and len(ri):
        depth = _median_depth(scene, ri, gi, a, b, c, t_star, alpha, n_rays, config)
    return RayBatch(n_rays, ri, gi, t_star, peak, weight, a, b, c, alpha, depth)


def _median_depth(scene, ri, gi, a, b, c, t_star, alpha, n_rays, config) -> np.ndarray:
    """Bisection for the 0.5-transmittance crossing on rays with alpha >= 0.5."""
    depth = np.full(n_rays, np.nan)
    active_rays = np.flatnonzero(alpha >= 0.5)
    if not len(active_rays):
        return depth
    sel = np.isin(ri, active_rays)
    ri_s, gi_s = ri[sel], gi[sel]
    a_s, b_s, c_s, ts_s = a[sel], b[sel], c[sel], t_star[sel]
    opac = scene.opacities[gi_s]
    # compact ray ids
    lut = np.full(n_rays, -1, dtype=np.int64)
    lut[active_rays] = np.arange(len(active_rays))
    rc = lut[ri_s]
    t_last = np.zeros(len(active_rays))
    np.maximum.at(t_last, rc, ts_s)
    lo = np.zeros(len(active_rays))
    hi = t_last + 3.0 * float(scene.max_scales.max())
    s2 = config.support_sigma**2
    for _ in range(_MEDIAN_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        te = np.minimum(mid[rc], ts_s)
        m2 = a_s * te * te - 2.0 * b_s * te + c_s
        val = opac * np.exp(-0.5 * m2)
        val[m2 > s2] = 0.0
        t_mid = np.exp(np.bincount(rc, weights=np.log1p(-val), minlength=len(active_rays)))
        err = t_mid - 0.5
        if np.all(np.abs(err) < _MEDIAN_TOL):
            break
        above = err > 0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    depth[active_rays] = 0.5 * (lo + hi)
    return depth


# ---------------------------------------------------------------------------
# single-ray operations
# ---------------------------------------------------------------------------

def ray_contributions(scene: GaussianScene, ray: Ray, config: RunConfig = DEFAULTS) -> list[Contribution]:
    """Depth-ordered contributions along one ray, truncated by early stopping."""
    batch = trace_rays(scene, ray.origin, ray.direction[None, :], config, with_depth=False)
    kept = batch.weight > 0.0
    return [Contribution(int(g), float(t), float(p), float(w))
            for g, t, p, w in zip(batch.g_idx[kept], batch.t_star[kept],
                                  batch.peak[kept], batch.weight[kept])]


def composite_ray(scene: GaussianScene, ray: Ray, config: RunConfig = DEFAULTS):
    """(color, alpha, median depth, composited normal) for one ray."""
    batch = trace_rays(scene, ray.origin, ray.direction[None, :], config)
    w = batch.weight
    color = np.asarray(config.background, dtype=np.float64) * (1.0 - batch.alpha[0])
    normal = np.zeros(3)
    if len(w):
        color = color + (w[:, None] * scene.colors[batch.g_idx]).sum(axis=0)
        normal = (w[:, None] * scene.normals[batch.g_idx]).sum(axis=0)
    return color, float(batch.alpha[0]), float(batch.depth[0]), normal


# ---------------------------------------------------------------------------
# camera rendering
# ---------------------------------------------------------------------------

@dataclass
class CameraBundle:
    """Everything per-camera that normal-only optimization can reuse.

    Blend weights, depth, and pseudo-normals depend only on Gaussian
    geometry, never on the normal parameters, so they stay valid while
    normals change.
    """

    camera: PinholeCamera
    ray_idx: np.ndarray      # kept contributions only
    g_idx: np.ndarray
    weight: np.ndarray
    alpha: np.ndarray        # (H*W,)
    depth: np.ndarray        # (H*W,)
    pseudo_normals: np.ndarray  # (H*W, 3) world space, zero where undefined

    @property
    def n_rays(self) -> int:
        return self.camera.width * self.camera.height

    def normal_map(self, normals: np.ndarray) -> np.ndarray:
        """Composited normal per ray for the given per-Gaussian normals."""
        return _bincount3(self.ray_idx, self.weight, normals[self.g_idx], self.n_rays)

    def loss_map(self, normals: np.ndarray):
        """Per-ray alignment loss, its mean over contributing rays, and the mask."""
        n_map = self.normal_map(normals)
        mask = (np.einsum("ri,ri->r", n_map, n_map) > 0.0) \
            & (np.einsum("ri,ri->r", self.pseudo_normals, self.pseudo_normals) > 0.0)
        losses = np.zeros(self.n_rays)
        losses[mask] = 1.0 - np.einsum("ri,ri->r", n_map[mask], self.pseudo_normals[mask])
        scalar = float(losses[mask].mean()) if mask.any() else 0.0
        return losses, scalar, mask


def render_bundle(scene: GaussianScene, camera: PinholeCamera,
                  config: RunConfig = DEFAULTS) -> CameraBundle:
    dirs = camera.pixel_directions()
    batch = trace_rays(scene, camera.center, dirs, config)
    kept = batch.weight > 0.0
    depth_map = batch.depth.reshape(camera.height, camera.width)
    pseudo = depth_to_pseudo_normals(depth_map, camera).reshape(-1, 3)
    return CameraBundle(camera, batch.ray_idx[kept], batch.g_idx[kept],
                        batch.weight[kept], batch.alpha, batch.depth, pseudo)


def render_maps(scene: GaussianScene, camera: PinholeCamera,
                config: RunConfig = DEFAULTS) -> RenderedMaps:
    """Color, alpha, median-depth, and normal maps for one camera."""
    bundle = render_bundle(scene, camera, config)
    h, w = camera.height, camera.width
    n = h * w
    bg = np.asarray(config.background, dtype=np.float64)
    color = _bincount3(bundle.ray_idx, bundle.weight, scene.colors[bundle.g_idx], n)
    color += (1.0 - bundle.alpha)[:, None] * bg
    normal = _bincount3(bundle.ray_idx, bundle.weight, scene.normals[bundle.g_idx], n)
    return RenderedMaps(
        color=np.clip(color, 0.0, 1.0).reshape(h, w, 3),
        alpha=bundle.alpha.reshape(h, w),
        depth=bundle.depth.reshape(h, w),
        normal=normal.reshape(h, w, 3),
    )


def depth_to_pseudo_normals(depth: np.ndarray, camera: PinholeCamera) -> np.ndarray:
    """Surface normals from a ray-length depth map, oriented toward the camera.

    Back-projects each pixel and its +x/+y neighbors and normalizes their
    cross product; pixels whose 3-point stencil touches a NaN depth (or the
    image border) get a zero normal.
    """
    h, w = depth.shape
    dirs = camera.pixel_directions().reshape(h, w, 3)
    pts = camera.center + depth[:, :, None] * dirs
    normals = np.zeros((h, w, 3))
    p0 = pts[:-1, :-1]
    px = pts[:-1, 1:]
    py = pts[1:, :-1]
    n = np.cross(px - p0, py - p0)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    good = np.isfinite(depth[:-1, :-1]) & np.isfinite(depth[:-1, 1:]) & np.isfinite(depth[1:, :-1]) \
        & (norm[..., 0] > 1e-30)
    n = np.where(good[..., None], n / np.where(norm > 0, norm, 1.0), 0.0)
    # orient toward the camera
    to_cam = camera.center - p0
    flip = np.einsum("ijk,ijk->ij", n, to_cam) < 0.0
    n[flip] *= -1.0
    normals[:-1, :-1] = n
    return normals


def normal_alignment_loss(scene: GaussianScene, camera: PinholeCamera,
                          config: RunConfig = DEFAULTS):
    """Mean and per-pixel map of 1 - N(p) . n_D(p) over contributing pixels."""
    bundle = render_bundle(scene, camera, config)
    losses, scalar, _ = bundle.loss_map(scene.normals)
    return scalar, losses.reshape(camera.height, camera.width)


# ---------------------------------------------------------------------------
# ray-marching reference
# ---------------------------------------------------------------------------

def ray_march_color(scene: GaussianScene, ray: Ray, step: float,
                    config: RunConfig = DEFAULTS) -> np.ndarray:
    """Trapezoid integration of attenuation * transmittance * color along a ray.

    Integrates only over the union of Gaussian support intervals (the
    attenuation vanishes elsewhere); transmittance comes from the cumulative
    attenuation integral, not from the closed-form product, so this routine
    is an independent check of the compositing path.
    """
    bg = np.asarray(config.background, dtype=np.float64)
    bound = _support_bound(scene, config)
    if len(scene) == 0:
        return bg.copy()
    dirs = ray.direction[None, :]
    ri, gi = _candidates_single_origin(scene, ray.origin, dirs, None, bound, config)
    if not len(gi):
        return bg.copy()
    a, b, c = _pair_quadratic(scene, scene.means[gi] - ray.origin, np.repeat(dirs, len(gi), axis=0), gi)
    s2 = config.support_sigma**2
    disc = b * b - a * (c - s2)
    ok = disc > 0
    gi, a, b, c, disc = gi[ok], a[ok], b[ok], c[ok], disc[ok]
    if not len(gi):
        return bg.copy()
    sq = np.sqrt(disc)
    t0 = np.maximum(0.0, (b - sq) / a)
    t1 = np.maximum(0.0, (b + sq) / a)
    keep = t1 > t0
    gi, a, b, c, t0, t1 = gi[keep], a[keep], b[keep], c[keep], t0[keep], t1[keep]
    if not len(gi):
        return bg.copy()

    # merge overlapping support intervals
    order = np.argsort(t0)
    merged = []
    for i in order:
        if merged and t0[i] <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], t1[i])
        else:
            merged.append([t0[i], t1[i]])

    color = np.zeros(3)
    log_t_carry = 0.0
    opac = scene.opacities[gi]
    for lo, hi in merged:
        n_samples = int(np.ceil((hi - lo) / step)) + 1
        ts = np.linspace(lo, hi, max(n_samples, 2))
        m2 = a[None, :] * ts[:, None] ** 2 - 2.0 * b[None, :] * ts[:, None] + c[None, :]
        g = opac[None, :] * np.exp(-0.5 * m2)
        g[m2 > s2] = 0.0
        sigma_terms = np.maximum(0.0, (b[None, :] - a[None, :] * ts[:, None]) * g / (1.0 - g))
        sigma = sigma_terms.sum(axis=1)
        # per-sample color: flat color of the nearest contributing Gaussian
        x = ray.origin[None, :] + ts[:, None] * ray.direction[None, :]
        dist2 = ((x[:, None, :] - scene.means[gi][None, :, :]) ** 2).sum(axis=2)
        dist2[g <= 0.0] = np.inf
        nearest = np.argmin(dist2, axis=1)
        has = np.isfinite(dist2[np.arange(len(ts)), nearest])
        cols = np.where(has[:, None], scene.colors[gi][nearest], 0.0)
        # cumulative attenuation integral -> transmittance
        seg = 0.5 * (sigma[1:] + sigma[:-1]) * np.diff(ts)
        cum = log_t_carry + np.concatenate([[0.0], np.cumsum(seg)])
        trans = np.exp(-cum)
        integrand = sigma[:, None] * trans[:, None] * cols
        color += np.trapezoid(integrand, ts, axis=0)
        log_t_carry = cum[-1]
    return color + np.exp(-log_t_carry) * bg
