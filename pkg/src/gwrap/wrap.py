"""Orientation training: align oriented normals with rendered geometry.

Only the normal parameters (sign scalar and direction vector) are mutable;
means, scales, opacities, and colors stay frozen.  Blend weights, depth maps,
and depth-derived pseudo-normals do not depend on the normal parameters, so
per-camera render bundles are computed once and reused across iterations;
they are rebuilt whenever densification changes the Gaussian set.

Gradients are central finite differences of the alignment loss with respect
to each normal parameter, evaluated through the cached bundles with the
contributing-pixel mask frozen within an iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS, RunConfig, substream
from .core import GaussianScene
from .errors import BadParams, Diverged, NoCameras
from .render import CameraBundle, render_bundle


@dataclass
class WrapReport:
    """Optimization trace plus densification bookkeeping."""

    loss_trace: list[float] = field(default_factory=list)
    clones_per_iteration: dict[int, int] = field(default_factory=dict)
    per_gaussian_error: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "clones_added"])
            for i, loss in enumerate(self.loss_trace):
                writer.writerow([i, repr(loss), self.clones_per_iteration.get(i, 0)])


def per_gaussian_error(scene: GaussianScene, cameras=None, config: RunConfig = DEFAULTS,
                       bundles: list[CameraBundle] | None = None) -> np.ndarray:
    """Blend-weighted mean alignment error per Gaussian across views."""
    if len(scene) == 0:
        raise BadParams("per_gaussian_error needs a non-empty scene")
    if bundles is None:
        if cameras is None:
            cameras = scene.cameras
        bundles = [render_bundle(scene, cam, config) for cam in cameras]
    num = np.zeros(len(scene))
    den = np.zeros(len(scene))
    for bundle in bundles:
        losses, _, _ = bundle.loss_map(scene.normals)
        num += np.bincount(bundle.g_idx, weights=bundle.weight * losses[bundle.ray_idx],
                           minlength=len(scene))
        den += np.bincount(bundle.g_idx, weights=bundle.weight, minlength=len(scene))
    out = np.zeros(len(scene))
    hit = den > 0
    out[hit] = num[hit] / den[hit]
    return out


def densify_flip(scene: GaussianScene, errors: np.ndarray, fraction: float) -> GaussianScene:
    """Clone the top-fraction Gaussians by error with negated normal signs.

    Existing Gaussians are untouched; clones are appended in ascending order
    of their source index.  Ties in error break by ascending index.
    """
    if not (0.0 < fraction <= 0.5):
        raise BadParams("densify fraction must lie in (0, 0.5]")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.shape != (len(scene),):
        raise BadParams("errors must have one entry per Gaussian")
    count = max(1, int(round(len(scene) * fraction)))
    order = np.lexsort((np.arange(len(scene)), -errors))
    chosen = np.sort(order[:count])
    clones = [scene.gaussians[i].replace(normal_sign=-scene.gaussians[i].normal_sign)
              for i in chosen]
    return scene.with_appended(clones)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


class _Optimizer:
    def __init__(self, scene: GaussianScene, config: RunConfig, seed: int):
        self.config = config
        self.wrap = config.wrap
        self.scene = scene
        self.signs = scene.normal_signs.copy()
        self.dirs = _unit(scene.normal_dirs.copy())
        self.bundles: dict[int, CameraBundle] = {}
        self.rng = substream(seed, "wrap-optimize")
        self.report = WrapReport()

    def bundle(self, ci: int) -> CameraBundle:
        if ci not in self.bundles:
            self.bundles[ci] = render_bundle(self.scene, self.scene.cameras[ci], self.config)
        return self.bundles[ci]

    def sync_scene(self) -> None:
        self.scene = self.scene.with_orientations(self.signs, self.dirs)
        self.bundles.clear()

    def densify(self, iteration: int) -> None:
        self.sync_scene()
        bundles = [self.bundle(i) for i in range(len(self.scene.cameras))]
        errors = per_gaussian_error(self.scene, config=self.config, bundles=bundles)
        before = len(self.scene)
        self.scene = densify_flip(self.scene, errors, self.wrap.densify_fraction)
        self.signs = self.scene.normal_signs.copy()
        self.dirs = _unit(self.scene.normal_dirs.copy())
        self.bundles.clear()
        self.report.clones_per_iteration[iteration] = len(self.scene) - before

    def step(self, iteration: int) -> float:
        w = self.wrap
        n_cams = len(self.scene.cameras)
        views = self.rng.choice(n_cams, size=min(w.views_per_step, n_cams), replace=False)
        views.sort()
        normals = np.tanh(self.signs)[:, None] * self.dirs
        n = len(self.scene)
        loss_total = 0.0
        grad_n = np.zeros((n, 3))      # dL/dn_i with the contributing mask frozen
        max_weight = np.zeros(n)
        for ci in views:
            # the optimization objective is the per-pixel sum of the alignment
            # loss (the reported per-view scalar is its mean)
            bundle = self.bundle(int(ci))
            losses, _, mask = bundle.loss_map(normals)
            loss_total += float(losses[mask].sum())
            if not mask.any():
                continue
            sel = mask[bundle.ray_idx]
            coeff = -bundle.weight[sel][:, None] * bundle.pseudo_normals[bundle.ray_idx[sel]]
            for axis in range(3):
                grad_n[:, axis] += np.bincount(bundle.g_idx[sel], weights=coeff[:, axis], minlength=n)
            np.maximum.at(max_weight, bundle.g_idx, bundle.weight)

        visible = max_weight > w.visibility_weight
        if visible.any():
            h = w.fd_step
            # central differences of the loss via its (linear) dependence on n_i
            dn_sign = (np.tanh(self.signs + h) - np.tanh(self.signs - h))[:, None] * self.dirs / (2.0 * h)
            grad_sign = np.einsum("ni,ni->n", grad_n, dn_sign)
            grad_dir = np.zeros((n, 3))
            tanh_s = np.tanh(self.signs)[:, None]
            for axis in range(3):
                e = np.zeros(3)
                e[axis] = h
                dn_axis = tanh_s * (_unit(self.dirs + e) - _unit(self.dirs - e)) / (2.0 * h)
                grad_dir[:, axis] = np.einsum("ni,ni->n", grad_n, dn_axis)
            self.signs[visible] -= w.learning_rate * grad_sign[visible]
            self.dirs[visible] = _unit(self.dirs[visible] - w.dir_learning_rate * grad_dir[visible])
        return loss_total

    def run(self) -> tuple[GaussianScene, WrapReport]:
        w = self.wrap
        for it in range(w.iterations):
            if it > 0 and it % w.densify_every == 0:
                self.densify(it)
            loss = self.step(it)
            self.report.loss_trace.append(loss)
            if loss > 4.0 * max(self.report.loss_trace[0], 1e-12):
                raise Diverged(f"loss {loss:.4g} exceeded 4x initial {self.report.loss_trace[0]:.4g}")
        self.sync_scene()
        if w.iterations > 0:
            bundles = [self.bundle(i) for i in range(len(self.scene.cameras))]
            self.report.per_gaussian_error = per_gaussian_error(self.scene, config=self.config,
                                                                bundles=bundles)
        else:
            self.report.per_gaussian_error = np.zeros(len(self.scene))
        return self.scene, self.report


def optimize_normals(scene: GaussianScene, config: RunConfig = DEFAULTS,
                     seed: int | None = None) -> tuple[GaussianScene, WrapReport]:
    """Gradient descent on the normal alignment loss over sampled views."""
    if not scene.cameras:
        raise NoCameras("normal optimization needs training cameras")
    if seed is None:
        seed = config.seed
    return _Optimizer(scene, config, seed).run()
