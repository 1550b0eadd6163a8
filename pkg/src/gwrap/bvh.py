"""Bounding-volume hierarchy for first-hit ray/triangle queries.

Median-split build over triangle centroids; traversal processes a whole ray
batch per node so the intersection math stays vectorized.  Used by the
virtual-scanning evaluation protocol.
"""

from __future__ import annotations

import numpy as np

from .core import TriangleMesh

_LEAF_SIZE = 8
_EPS = 1e-9


class TriangleBVH:
    def __init__(self, mesh: TriangleMesh):
        if mesh.n_faces == 0:
            raise ValueError("cannot build a BVH over an empty mesh")
        tri = mesh.vertices[mesh.faces]
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        centroids = tri.mean(axis=1)

        order = np.arange(mesh.n_faces)
        nodes_lo, nodes_hi, nodes_child, nodes_leaf = [], [], [], []

        def build(idx: np.ndarray) -> int:
            node = len(nodes_lo)
            nodes_lo.append(lo[idx].min(axis=0))
            nodes_hi.append(hi[idx].max(axis=0))
            nodes_child.append((-1, -1))
            nodes_leaf.append(None)
            if len(idx) <= _LEAF_SIZE:
                nodes_leaf[node] = idx
                return node
            ext = centroids[idx].max(axis=0) - centroids[idx].min(axis=0)
            axis = int(np.argmax(ext))
            half = len(idx) // 2
            part = idx[np.argsort(centroids[idx, axis], kind="stable")]
            left = build(part[:half])
            right = build(part[half:])
            nodes_child[node] = (left, right)
            return node

        import sys
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 10000))
        try:
            build(order)
        finally:
            sys.setrecursionlimit(old)
        self.node_lo = np.array(nodes_lo)
        self.node_hi = np.array(nodes_hi)
        self.children = np.array(nodes_child, dtype=np.int64)
        self.leaves = nodes_leaf

    def first_hit(self, origins: np.ndarray, dirs: np.ndarray):
        """Smallest positive hit parameter and triangle index per ray (-1 = miss)."""
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        if origins.shape[0] == 1 and dirs.shape[0] > 1:
            origins = np.broadcast_to(origins, dirs.shape)
        n = len(dirs)
        best_t = np.full(n, np.inf)
        best_tri = np.full(n, -1, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        stack = [(0, np.arange(n))]
        while stack:
            node, rays = stack.pop()
            t0 = (self.node_lo[node] - origins[rays]) * inv[rays]
            t1 = (self.node_hi[node] - origins[rays]) * inv[rays]
            t0, t1 = np.fmin(t0, t1), np.fmax(t0, t1)
            near = np.nanmax(t0, axis=1)
            far = np.nanmin(t1, axis=1)
            hit = (near <= far) & (far >= _EPS) & (near < best_t[rays])
            rays = rays[hit]
            if not len(rays):
                continue
            leaf = self.leaves[node]
            if leaf is not None:
                o = origins[rays]
                d = dirs[rays]
                for tri in leaf:
                    pv = np.cross(d, self.e2[tri])
                    det = pv @ self.e1[tri]
                    ok = np.abs(det) > 1e-14
                    with np.errstate(divide="ignore", invalid="ignore"):
                        inv_det = np.where(ok, 1.0 / det, 0.0)
                    tv = o - self.v0[tri]
                    u = np.einsum("ri,ri->r", tv, pv) * inv_det
                    qv = np.cross(tv, np.broadcast_to(self.e1[tri], o.shape))
                    v = np.einsum("ri,ri->r", d, qv) * inv_det
                    t = (qv @ self.e2[tri]) * inv_det
                    good = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > _EPS) & (t < best_t[rays])
                    upd = rays[good]
                    best_t[upd] = t[good]
                    best_tri[upd] = tri
            else:
                left, right = self.children[node]
                stack.append((int(right), rays))
                stack.append((int(left), rays))
        return best_t, best_tri
