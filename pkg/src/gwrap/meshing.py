"""Surface extraction from the vacancy field.

Two extraction routes share the same field machinery:

* marching tetrahedra over per-Gaussian pivot points (a center pivot plus a
  normal-offset pivot), with bisection refinement onto the 0.5-isosurface;
* an adaptive route that samples the first mesh, projects samples onto the
  isosurface with damped Newton steps, filters outliers, tetrahedralizes the
  survivors, classifies tetrahedra inside/outside by sampled vacancy, and
  extracts the separating faces.

The Delaunay tetrahedralization itself is delegated to Qhull via scipy;
orientation, adjacency, dedup, and degeneracy detection are normalized here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .config import DEFAULTS, RunConfig, substream
from .core import AABB, GaussianScene, TriangleMesh
from .errors import BadParams, DegenerateInput, InsufficientPoints
from .fields import normalize_field, vacancy_lower_bound_batch, _vector_terms

log = logging.getLogger(__name__)

_REFINE_TOL = 1e-3
_REFINE_MAX_ITERS = 30

# vertex triples of the four outward-oriented faces of a positively oriented
# tet (a, b, c, d); entry k is the face opposite vertex k
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
_TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


@dataclass(frozen=True)
class TetMesh:
    """Tetrahedralization with symmetric adjacency (-1 marks the hull)."""

    vertices: np.ndarray    # (V, 3)
    tets: np.ndarray        # (T, 4) positively oriented
    adjacency: np.ndarray   # (T, 4); entry k is the tet across the face opposite vertex k

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def signed_volumes(self) -> np.ndarray:
        v = self.vertices[self.tets]
        return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


@dataclass(frozen=True)
class PivotSet:
    """Delaunay seed points spawned from Gaussians."""

    points: np.ndarray          # (P, 3)
    is_center: np.ndarray       # (P,) bool
    gaussian_index: np.ndarray  # (P,) source Gaussian per pivot
    skipped: int                # Gaussians dropped for having a ~zero normal


@dataclass(frozen=True)
class WatertightReport:
    is_closed_manifold: bool
    boundary_edges: int
    non_manifold_edges: int


# ---------------------------------------------------------------------------
# Delaunay
# ---------------------------------------------------------------------------

def _dedup_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Indices of cluster representatives (first index wins) under `tol`."""
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(r=tol, output_type="ndarray")
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(points))])
    return np.flatnonzero(roots == np.arange(len(points)))


def delaunay_tetrahedralize(points: np.ndarray, dedup_tol: float = 1e-9) -> TetMesh:
    """Delaunay tetrahedralization with positive orientation and adjacency."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    reps = _dedup_points(points, dedup_tol)
    pts = points[reps]
    if len(pts) < 4:
        raise DegenerateInput(f"need at least 4 distinct points, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateInput("points are coplanar or collinear")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateInput(f"tetrahedralization failed: {exc}") from exc
    tets = tri.simplices.astype(np.int64)
    adj = tri.neighbors.astype(np.int64)
    v = pts[tets]
    vol = np.linalg.det(v[:, 1:] - v[:, :1])
    flip = vol < 0
    tets[flip, 0], tets[flip, 1] = tets[flip, 1], tets[flip, 0].copy()
    adj[flip, 0], adj[flip, 1] = adj[flip, 1], adj[flip, 0].copy()
    return TetMesh(pts, tets, adj)


# ---------------------------------------------------------------------------
# pivots
# ---------------------------------------------------------------------------

def generate_pivots(scene: GaussianScene, style: str = "pair") -> PivotSet:
    """Per-Gaussian Delaunay seeds: the center and normal-offset points.

    ``pair`` spawns the center and one offset at 3x the ellipsoid scale
    along the unit oriented normal.  ``dense`` is the test-support variant
    with offsets at -3..3 times the scale.
    """
    if style == "pair":
        offsets = np.array([0.0, 3.0])
    elif style == "dense":
        offsets = np.array([-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    else:
        raise BadParams(f"unknown pivot style {style!r}")
    norms = np.linalg.norm(scene.normals, axis=1)
    keep = norms >= 1e-6
    skipped = int((~keep).sum())
    if skipped:
        log.info("generate_pivots: skipped %d Gaussians with near-zero normals", skipped)
    idx = np.flatnonzero(keep)
    n_hat = scene.normals[idx] / norms[idx, None]
    # ellipsoid scale along the normal: |diag(s) R^T n_hat|
    local = np.einsum("nji,nj->ni", scene.rotations[idx], n_hat)
    s_along = np.linalg.norm(scene.scales[idx] * local, axis=1)
    pts = scene.means[idx, None, :] + offsets[None, :, None] * (s_along[:, None] * n_hat)[:, None, :]
    pts = pts.reshape(-1, 3)
    is_center = np.tile(offsets == 0.0, len(idx))
    gauss = np.repeat(idx, len(offsets))
    return PivotSet(pts, is_center, gauss, skipped)


# ---------------------------------------------------------------------------
# marching tetrahedra
# ---------------------------------------------------------------------------

def marching_tetrahedra(tm: TetMesh, values: np.ndarray, iso: float) -> TriangleMesh:
    """Extract the iso-crossing surface of per-vertex values over a tet mesh.

    Shared crossing edges produce shared vertices, so the surface is
    crack-free; triangle normals point toward the low-value side.  The
    returned mesh carries each vertex's bracketing edge endpoints, ordered
    (below iso, above iso).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(tm.vertices),):
        raise BadParams("values must match the tet-mesh vertices")
    inside = values > iso
    code = (inside[tm.tets] << np.arange(4)).sum(axis=1)
    crossing = (code > 0) & (code < 15)
    if not crossing.any():
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                            np.zeros((0, 2, 3)))
    tets = tm.tets[crossing]
    tet_codes = code[crossing]

    # global crossing-edge vertices
    n_v = len(tm.vertices)
    ev = tets[:, _TET_EDGES]                               # (T, 6, 2)
    cross_edge = inside[ev[..., 0]] != inside[ev[..., 1]]
    lo = np.minimum(ev[..., 0], ev[..., 1])
    hi = np.maximum(ev[..., 0], ev[..., 1])
    keys = lo * n_v + hi
    uniq_keys, inverse = np.unique(keys[cross_edge], return_inverse=True)
    edge_id = np.full(keys.shape, -1, dtype=np.int64)
    edge_id[cross_edge] = inverse
    ki = (uniq_keys // n_v).astype(np.int64)
    kj = (uniq_keys % n_v).astype(np.int64)
    t = (iso - values[ki]) / (values[kj] - values[ki])
    verts = tm.vertices[ki] + t[:, None] * (tm.vertices[kj] - tm.vertices[ki])
    below = values[ki] < values[kj]
    p_below = np.where(below[:, None], tm.vertices[ki], tm.vertices[kj])
    p_above = np.where(below[:, None], tm.vertices[kj], tm.vertices[ki])
    edge_points = np.stack([p_below, p_above], axis=1)

    # per-tet triangles from the case tables
    faces = []
    owner = []
    for c, tris in _case_table().items():
        rows = np.flatnonzero(tet_codes == c)
        if not len(rows):
            continue
        for tri in tris:
            faces.append(edge_id[rows][:, tri])
            owner.append(rows)
    faces = np.concatenate(faces)
    owner = np.concatenate(owner)
    if (faces < 0).any():
        raise AssertionError("case table referenced a non-crossing edge")

    # weld interpolated vertices that coincide exactly (cospherical slivers
    # produce them) so the orientation graph below sees the true adjacency
    vorder = np.lexsort(verts.T)
    sv = verts[vorder]
    same = np.concatenate([[False], np.all(sv[1:] == sv[:-1], axis=1)])
    group = np.cumsum(~same) - 1
    if group[-1] + 1 < len(verts):
        remap = np.empty(len(verts), dtype=np.int64)
        remap[vorder] = group
        first = np.zeros(group[-1] + 1, dtype=np.int64)
        first[group[::-1]] = vorder[::-1]
        verts = verts[first]
        edge_points = edge_points[first]
        faces = remap[faces]
        solid = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        faces = faces[solid]
        owner = owner[solid]

    # orient each triangle toward decreasing values using the (constant)
    # per-tet linear gradient
    # det * gradient via the adjugate, so sliver tets cannot blow up the
    # solve; tets are positively oriented, so the sign is the gradient's
    tv = tm.vertices[tets]
    vals = values[tets]
    e = tv[:, 1:] - tv[:, :1]
    dv = vals[:, 1:] - vals[:, :1]
    grads = (dv[:, 0, None] * np.cross(e[:, 1], e[:, 2])
             + dv[:, 1, None] * np.cross(e[:, 2], e[:, 0])
             + dv[:, 2, None] * np.cross(e[:, 0], e[:, 1]))
    g = grads[owner]
    n = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    # individual sliver-tet gradients are noisy; enforce consistency across
    # shared edges and let the gradients vote on each component's sign
    votes = -np.einsum("fi,fi->f", n, g)
    faces = _orient_consistently(faces, votes, len(verts))
    return TriangleMesh(verts, faces, edge_points)


def _orient_consistently(faces: np.ndarray, votes: np.ndarray, n_vertices: int) -> np.ndarray:
    """Flip faces so every shared edge is traversed in opposite directions.

    Connected components are oriented by breadth-first propagation; each
    component's global sign is set by the summed per-face votes (positive
    means keep the face as given).
    """
    n_f = len(faces)
    u = faces[:, [0, 1, 2]].ravel()
    v = faces[:, [1, 2, 0]].ravel()
    keys = np.minimum(u, v) * n_vertices + np.maximum(u, v)
    fwd = u < v
    face_of = np.repeat(np.arange(n_f), 3)
    order = np.argsort(keys, kind="stable")
    ks, fs, ds = keys[order], face_of[order], fwd[order]
    starts = np.flatnonzero(np.diff(ks, prepend=-1))
    counts = np.diff(np.append(starts, len(ks)))
    # neighbor lists over 2-face edges only
    nbr: list[list[tuple[int, bool]]] = [[] for _ in range(n_f)]
    for s, cnt in zip(starts, counts):
        if cnt != 2:
            continue
        f1, f2 = int(fs[s]), int(fs[s + 1])
        same_dir = ds[s] == ds[s + 1]
        nbr[f1].append((f2, same_dir))
        nbr[f2].append((f1, same_dir))
    flip = np.full(n_f, -1, dtype=np.int8)
    for seed in range(n_f):
        if flip[seed] >= 0:
            continue
        flip[seed] = 0
        component = [seed]
        stack = [seed]
        while stack:
            f = stack.pop()
            for f2, same_dir in nbr[f]:
                want = flip[f] ^ int(same_dir)
                if flip[f2] < 0:
                    flip[f2] = want
                    component.append(f2)
                    stack.append(f2)
        comp = np.array(component)
        score = float((votes[comp] * (1 - 2 * flip[comp])).sum())
        if score < 0:
            flip[comp] ^= 1
    out = faces.copy()
    swap = flip == 1
    out[swap, 1], out[swap, 2] = faces[swap, 2], faces[swap, 1]
    return out


def _case_table() -> dict[int, list[tuple[int, int, int]]]:
    """code -> list of triangles as triples of tet-edge indices (0..5)."""
    table = getattr(_case_table, "_cache", None)
    if table is not None:
        return table
    edge_of = {(min(a, b), max(a, b)): e for e, (a, b) in enumerate(_TET_EDGES.tolist())}
    table = {}
    for c in range(1, 15):
        ins = [k for k in range(4) if c >> k & 1]
        outs = [k for k in range(4) if not c >> k & 1]
        if len(ins) in (1, 3):
            lone = ins[0] if len(ins) == 1 else outs[0]
            others = [k for k in range(4) if k != lone]
            e = [edge_of[(min(lone, o), max(lone, o))] for o in others]
            table[c] = [(e[0], e[1], e[2])]
        else:
            p, q = ins
            r, s = outs
            quad = [edge_of[(min(p, r), max(p, r))], edge_of[(min(p, s), max(p, s))],
                    edge_of[(min(q, s), max(q, s))], edge_of[(min(q, r), max(q, r))]]
            table[c] = [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    _case_table._cache = table
    return table


def refine_to_isosurface(mesh: TriangleMesh, scene: GaussianScene,
                         config: RunConfig = DEFAULTS, tol: float = _REFINE_TOL,
                         max_iters: int = _REFINE_MAX_ITERS) -> TriangleMesh:
    """Bisect each vertex along its bracketing edge onto occupancy 0.5."""
    if mesh.edge_points is None:
        raise BadParams("mesh carries no edge brackets to refine along")
    below = mesh.edge_points[:, 0].copy()   # occupancy < 0.5 end
    above = mesh.edge_points[:, 1].copy()
    out = mesh.vertices.copy()
    active = np.arange(len(out))
    # besides the occupancy tolerance, bisect until the bracket is short:
    # stopping all vertices at the same dyadic parameter would leave
    # exactly-degenerate faces where tets span only two Gaussian columns
    len_tol = 1e-7 * max(float(np.linalg.norm(scene.bbox[1] - scene.bbox[0])), 1e-30)
    for _ in range(max_iters):
        if not len(active):
            break
        mid = 0.5 * (below[active] + above[active])
        occ = 1.0 - vacancy_lower_bound_batch(scene, mid, config)
        out[active] = mid
        conv = (np.abs(occ - 0.5) < tol) \
            & (np.linalg.norm(above[active] - below[active], axis=1) < len_tol)
        go_above = occ > 0.5
        above[active[go_above]] = mid[go_above]
        below[active[~go_above]] = mid[~go_above]
        active = active[~conv]
    return TriangleMesh(out, mesh.faces, mesh.edge_points)


def mesh_mtet(scene: GaussianScene, config: RunConfig = DEFAULTS,
              pivot_style: str = "pair") -> TriangleMesh:
    """Pivot-based marching tetrahedra: pivots -> Delaunay -> MT -> refinement."""
    piv = generate_pivots(scene, pivot_style)
    if len(piv.points) < 4:
        raise DegenerateInput("not enough pivot points to tetrahedralize")
    tm = delaunay_tetrahedralize(piv.points)
    occ = 1.0 - vacancy_lower_bound_batch(scene, tm.vertices, config)
    mesh = marching_tetrahedra(tm, occ, 0.5)
    if mesh.n_faces == 0:
        return mesh
    mesh = refine_to_isosurface(mesh, scene, config)
    return mesh.cleanup()


# ---------------------------------------------------------------------------
# adaptive (sample / project / filter) meshing
# ---------------------------------------------------------------------------

def pam_sample_faces(mesh: TriangleMesh, cameras, count: int,
                     rng: np.random.Generator | int = 0,
                     roi: AABB | None = None) -> np.ndarray:
    """Sample surface points, favoring faces close to the training cameras.

    Face selection probability is proportional to area / distance-to-nearest
    camera; points are uniform within each face.  With an ROI box, faces are
    restricted to those with a vertex or centroid inside, and points outside
    the box are rejected and redrawn.
    """
    if mesh.n_faces == 0 or count < 1:
        raise BadParams("need a non-empty mesh and count >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = substream(int(rng), "pam-sampling")
    areas = mesh.face_areas()
    centroids = mesh.face_centroids()
    if cameras:
        centers = np.array([c.center for c in cameras])
        d = np.sqrt(((centroids[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        d = np.maximum(d, 1e-12)
    else:
        d = np.ones(len(areas))
    weights = areas / d
    face_ok = np.ones(mesh.n_faces, dtype=bool)
    if roi is not None:
        inside_v = roi.contains(mesh.vertices)
        face_ok = inside_v[mesh.faces].any(axis=1) | roi.contains(centroids)
    weights = weights * face_ok
    total = weights.sum()
    if total <= 0:
        raise BadParams("no sampleable faces (empty ROI intersection?)")
    p = weights / total
    out = []
    need = count
    for _ in range(100):
        fi = rng.choice(mesh.n_faces, size=need, p=p)
        u = rng.uniform(size=need)
        v = rng.uniform(size=need)
        over = u + v > 1.0
        u[over] = 1.0 - u[over]
        v[over] = 1.0 - v[over]
        tri = mesh.vertices[mesh.faces[fi]]
        pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
        if roi is not None:
            pts = pts[roi.contains(pts)]
        out.append(pts)
        need = count - sum(len(o) for o in out)
        if need <= 0:
            break
    pts = np.concatenate(out)
    if len(pts) < count:
        raise BadParams("ROI rejection exhausted while sampling faces")
    return pts[:count]


def pam_newton_project(points: np.ndarray, scene: GaussianScene, steps: int,
                       config: RunConfig = DEFAULTS) -> np.ndarray:
    """Damped Newton steps onto the vacancy 0.5-isosurface.

    The update is x += (0.5 - v)/2 * grad(v)/|grad(v)|^2, restricted to the
    gradient direction; near the isosurface it halves the distance to the
    surface each step.  With the log-vacancy gradient V this reads
    x += (0.5 - v)/2 * V / (v |V|^2).  Points with no field support (or
    zero vacancy) stay in place.
    """
    if steps < 1:
        raise BadParams("steps must be >= 1")
    pts = np.array(points, dtype=np.float64).reshape(-1, 3)
    for _ in range(steps):
        v = vacancy_lower_bound_batch(scene, pts, config)
        vec, _ = _vector_terms(scene, pts, config.knn, config)
        norm2 = np.einsum("pi,pi->p", vec, vec)
        ok = (norm2 >= config.vector_zero_eps**2) & (v > 1e-300)
        scale = np.zeros(len(pts))
        scale[ok] = 0.5 * (0.5 - v[ok]) / (v[ok] * norm2[ok])
        pts = pts + scale[:, None] * vec
    return pts


def pam_filter(points: np.ndarray, scene: GaussianScene, eps: float,
               config: RunConfig = DEFAULTS):
    """Keep points with |0.5 - v| <= eps; returns (kept, removed_count)."""
    if eps <= 0:
        raise BadParams("eps must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    v = vacancy_lower_bound_batch(scene, pts, config)
    keep = np.abs(0.5 - v) <= eps
    return pts[keep], int((~keep).sum())


def _classify_scores(tm: TetMesh, scene: GaussianScene, samples_per_tet: int,
                     config: RunConfig, rng: np.random.Generator) -> np.ndarray:
    """Median vacancy of uniform interior samples, per tet."""
    n_t = tm.n_tets
    bary = rng.dirichlet(np.ones(4), size=(n_t, samples_per_tet))   # (T, S, 4)
    corners = tm.vertices[tm.tets]                                  # (T, 4, 3)
    pts = np.einsum("tsk,tki->tsi", bary, corners).reshape(-1, 3)
    v = vacancy_lower_bound_batch(scene, pts, config).reshape(n_t, samples_per_tet)
    return np.median(v, axis=1)


def pam_classify_tets(tm: TetMesh, scene: GaussianScene, samples_per_tet: int,
                      config: RunConfig = DEFAULTS,
                      rng: np.random.Generator | int = 0) -> np.ndarray:
    """Label each tet inside (True) iff the median vacancy of uniform interior
    samples is below 0.5."""
    if samples_per_tet < 1:
        raise BadParams("samples_per_tet must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = substream(int(rng), "pam-classify")
    return _classify_scores(tm, scene, samples_per_tet, config, rng) < 0.5


def _separating_faces(tm: TetMesh, inside: np.ndarray) -> np.ndarray:
    faces = []
    for k in range(4):
        nb = tm.adjacency[:, k]
        sep = inside & ((nb < 0) | ~inside[np.clip(nb, 0, None)])
        faces.append(tm.tets[np.flatnonzero(sep)][:, _TET_FACES[k]])
    return np.concatenate(faces) if faces else np.zeros((0, 3), dtype=np.int64)


def _repair_pinched_labels(tm: TetMesh, inside: np.ndarray, confidence: np.ndarray,
                           max_passes: int = 8) -> np.ndarray:
    """Flip low-confidence labels until the inside-set boundary is edge-manifold.

    Tets whose interior straddles the isosurface get near-coin-flip labels;
    where such labels alternate around a Delaunay edge the extracted surface
    pinches.  Each pass flips, per pinched edge, the least confident
    incident tet.  Deterministic; returns the repaired labels.
    """
    inside = inside.copy()
    n_v = len(tm.vertices)
    te = tm.tets[:, _TET_EDGES]
    keys = (np.minimum(te[..., 0], te[..., 1]) * n_v + np.maximum(te[..., 0], te[..., 1])).ravel()
    owner = np.repeat(np.arange(tm.n_tets), 6)
    order = np.argsort(keys, kind="stable")
    keys_s, owner_s = keys[order], owner[order]
    starts = np.flatnonzero(np.diff(keys_s, prepend=-1))
    counts = np.diff(np.append(starts, len(keys_s)))
    ukeys = keys_s[starts]
    for _ in range(max_passes):
        faces = _separating_faces(tm, inside)
        if not len(faces):
            break
        u = faces[:, [0, 1, 2]].ravel()
        v = faces[:, [1, 2, 0]].ravel()
        fkeys = np.minimum(u, v) * n_v + np.maximum(u, v)
        fu, fcounts = np.unique(fkeys, return_counts=True)
        bad = fu[fcounts > 2]
        if not len(bad):
            break
        flipped: set[int] = set()
        for key in bad:
            pos = int(np.searchsorted(ukeys, key))
            ring = owner_s[starts[pos]: starts[pos] + counts[pos]]
            cands = [int(t) for t in ring if int(t) not in flipped]
            if not cands:
                continue
            t_flip = min(cands, key=lambda t: (confidence[t], t))
            inside[t_flip] = not inside[t_flip]
            flipped.add(t_flip)
    return inside


def pam_extract(tm: TetMesh, inside: np.ndarray) -> TriangleMesh:
    """Outward-oriented faces separating inside tets from outside/hull."""
    inside = np.asarray(inside, dtype=bool)
    if inside.shape != (tm.n_tets,):
        raise BadParams("labels must match the tet count")
    faces = []
    for k in range(4):
        nb = tm.adjacency[:, k]
        sep = inside & ((nb < 0) | ~inside[np.clip(nb, 0, None)])
        rows = np.flatnonzero(sep)
        faces.append(tm.tets[rows][:, _TET_FACES[k]])
    faces = np.concatenate(faces)
    if not len(faces):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(tm.vertices, faces).cleanup()


def mesh_pam(scene: GaussianScene, config: RunConfig = DEFAULTS,
             roi: AABB | None = None, substrate: TriangleMesh | None = None,
             seed: int | None = None, samples: int | None = None) -> TriangleMesh:
    """Adaptive meshing: sample substrate faces, project to the isosurface,
    filter outliers (topping the pool back up each round), then Delaunay,
    inside/outside classification, and boundary extraction."""
    cfg = config.pam
    if seed is None:
        seed = config.seed
    if samples is None:
        samples = cfg.samples
    rng = substream(seed, "pam")
    if substrate is None:
        substrate = mesh_mtet(scene, config)
    if substrate.n_faces == 0:
        raise InsufficientPoints("substrate mesh is empty")
    survivors = np.zeros((0, 3))
    need = samples
    for _ in range(cfg.max_rounds):
        pts = pam_sample_faces(substrate, scene.cameras, need, rng, roi)
        pts = pam_newton_project(pts, scene, cfg.newton_steps, config)
        if roi is not None:
            pts = pts[roi.contains(pts)]
        kept, removed = pam_filter(pts, scene, cfg.eps, config)
        survivors = np.concatenate([survivors, kept])
        need = samples - len(survivors)
        if removed == 0 or need <= 0:
            break
    if len(survivors) < 4:
        raise InsufficientPoints(f"only {len(survivors)} points survived filtering")
    tm = delaunay_tetrahedralize(survivors)
    scores = _classify_scores(tm, scene, cfg.samples_per_tet, config, rng)
    inside = _repair_pinched_labels(tm, scores < 0.5, np.abs(scores - 0.5))
    return pam_extract(tm, inside)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def watertight_check(mesh: TriangleMesh) -> WatertightReport:
    """Closed manifold iff every edge is shared by exactly two faces with
    opposite orientation."""
    if mesh.n_faces == 0:
        return WatertightReport(False, 0, 0)
    f = mesh.faces
    u = f[:, [0, 1, 2]].ravel()
    v = f[:, [1, 2, 0]].ravel()
    n_v = mesh.n_vertices
    keys = np.minimum(u, v) * n_v + np.maximum(u, v)
    forward = (u < v).astype(np.int64)
    order = np.argsort(keys, kind="stable")
    keys_s = keys[order]
    fw_s = forward[order]
    starts = np.flatnonzero(np.diff(keys_s, prepend=-1))
    counts = np.diff(np.append(starts, len(keys_s)))
    fw_sum = np.add.reduceat(fw_s, starts)
    boundary = int((counts == 1).sum())
    mismatched = (counts == 2) & (fw_sum != 1)
    non_manifold = int((counts > 2).sum() + mismatched.sum())
    return WatertightReport(boundary == 0 and non_manifold == 0, boundary, non_manifold)
