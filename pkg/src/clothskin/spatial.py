"""Exact nearest-neighbor and closest-surface-point queries.

The KD-tree answers point queries identically to a linear scan (ties broken
by lowest index); closest_surface_point minimizes over all triangles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mesh import Mesh, vertex_normals


@dataclass(frozen=True)
class KdTree:
    points: np.ndarray        # (n, 3) original point order
    split_axis: np.ndarray    # (m,) axis per node, -1 for leaves
    split_index: np.ndarray   # (m,) point index stored at the node
    left: np.ndarray          # (m,) child node ids, -1 if absent
    right: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def build_kdtree(points: np.ndarray) -> KdTree:
    """Median-split KD-tree cycling axes; deterministic (ties by index)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("cannot build a KD-tree over zero points")
    axis_l, index_l, left_l, right_l = [], [], [], []

    def rec(idx: np.ndarray, depth: int) -> int:
        axis = depth % 3
        # stable sort on (coordinate, index) keeps construction deterministic
        order = np.lexsort((idx, pts[idx, axis]))
        idx = idx[order]
        mid = len(idx) // 2
        node = len(axis_l)
        axis_l.append(axis)
        index_l.append(int(idx[mid]))
        left_l.append(-1)
        right_l.append(-1)
        if mid > 0:
            left_l[node] = rec(idx[:mid], depth + 1)
        if mid + 1 < len(idx):
            right_l[node] = rec(idx[mid + 1:], depth + 1)
        return node

    rec(np.arange(len(pts)), 0)
    return KdTree(pts.copy(),
                  np.asarray(axis_l, dtype=np.int64),
                  np.asarray(index_l, dtype=np.int64),
                  np.asarray(left_l, dtype=np.int64),
                  np.asarray(right_l, dtype=np.int64))


def nearest_index(tree: KdTree, query: np.ndarray) -> tuple[int, float]:
    """Exact nearest stored point; equidistant candidates resolve to the
    lowest index."""
    q = np.asarray(query, dtype=np.float64).reshape(3)
    pts = tree.points
    best_idx = -1
    best_d2 = np.inf

    def consider(i: int):
        nonlocal best_idx, best_d2
        d = pts[i] - q
        d2 = float(d @ d)
        if d2 < best_d2 or (d2 == best_d2 and i < best_idx):
            best_idx, best_d2 = i, d2

    def rec(node: int):
        if node < 0:
            return
        axis = tree.split_axis[node]
        i = int(tree.split_index[node])
        consider(i)
        delta = q[axis] - pts[i, axis]
        near, far = (tree.left[node], tree.right[node]) if delta < 0 else \
                    (tree.right[node], tree.left[node])
        rec(near)
        if delta * delta <= best_d2:
            rec(far)

    rec(0)
    return best_idx, float(np.sqrt(best_d2))


def bind_cloth_to_body(cloth: Mesh, body: Mesh) -> np.ndarray:
    """Nearest body vertex index per cloth vertex, fixed at the canonical pose."""
    if body.n_vertices == 0:
        raise ValidationError("body mesh has no vertices")
    tree = build_kdtree(body.vertices)
    return np.array([nearest_index(tree, v)[0] for v in cloth.vertices],
                    dtype=np.int64)


def _closest_on_triangles(queries: np.ndarray, tri_verts: np.ndarray):
    """Closest point of each query on each triangle, plus barycentrics.

    queries: (q, 3); tri_verts: (t, 3, 3). Returns points (q, t, 3) and
    barycentric coordinates (q, t, 3). Vectorized region walk over the
    point-triangle distance cases.
    """
    a = tri_verts[None, :, 0, :]
    b = tri_verts[None, :, 1, :]
    c = tri_verts[None, :, 2, :]
    p = queries[:, None, :]

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    u = np.zeros_like(d1)
    v = np.zeros_like(d1)
    done = np.zeros(d1.shape, dtype=bool)

    def claim(mask, uu, vv):
        m = mask & ~done
        if np.isscalar(uu):
            u[m] = uu
        else:
            u[m] = uu[m]
        if np.isscalar(vv):
            v[m] = vv
        else:
            v[m] = vv[m]
        done[m] = True

    with np.errstate(invalid="ignore", divide="ignore"):
        # region order follows the standard point-triangle case walk
        claim((d1 <= 0) & (d2 <= 0), 0.0, 0.0)                          # vertex a
        claim((d3 >= 0) & (d4 <= d3), 1.0, 0.0)                         # vertex b
        claim((vc <= 0) & (d1 >= 0) & (d3 <= 0), d1 / (d1 - d3), 0.0)   # edge ab
        claim((d6 >= 0) & (d5 <= d6), 0.0, 1.0)                         # vertex c
        claim((vb <= 0) & (d2 >= 0) & (d6 <= 0), 0.0, d2 / (d2 - d6))   # edge ac
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        claim((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
              1.0 - t_bc, t_bc)                                          # edge bc
        denom = va + vb + vc
        claim(np.ones_like(done), vb / denom, vc / denom)                # interior

    # degenerate triangles can produce non-finite barycentrics; collapse to a
    bad = ~(np.isfinite(u) & np.isfinite(v))
    u[bad] = 0.0
    v[bad] = 0.0

    points = a + u[..., None] * ab + v[..., None] * ac
    bary = np.stack([1.0 - u - v, u, v], axis=-1)
    return points, bary


def closest_surface_points(mesh: Mesh, queries: np.ndarray,
                           normals: np.ndarray | None = None):
    """Batch closest-point query against every triangle of the mesh.

    Returns (points, normals_at_points, inside, distances). The surface
    normal is the barycentric blend of vertex normals at the closest point;
    ties across triangles resolve to the lowest triangle index.
    """
    if mesh.n_triangles == 0:
        raise ValidationError("mesh has no triangles")
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if normals is None:
        normals = vertex_normals(mesh)
    tri_verts = mesh.vertices[mesh.triangles]

    cp = np.empty_like(q)
    n = np.empty_like(q)
    dist = np.empty(len(q))
    # chunk queries so the (queries x triangles) temporaries stay bounded
    chunk = max(1, 4_000_000 // max(1, mesh.n_triangles))
    for lo in range(0, len(q), chunk):
        qs = q[lo:lo + chunk]
        pts, bary = _closest_on_triangles(qs, tri_verts)
        d2 = ((qs[:, None, :] - pts) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)
        rows = np.arange(len(qs))
        cb = bary[rows, best]
        tri = mesh.triangles[best]
        nb = (cb[:, :, None] * normals[tri]).sum(axis=1)
        lens = np.linalg.norm(nb, axis=1)
        safe = lens > 0
        nb[safe] /= lens[safe, None]
        nb[~safe] = (0.0, 0.0, 1.0)
        cp[lo:lo + chunk] = pts[rows, best]
        n[lo:lo + chunk] = nb
        dist[lo:lo + chunk] = np.sqrt(d2[rows, best])
    inside = np.einsum("ij,ij->i", q - cp, n) < 0.0
    return cp, n, inside, dist


def closest_surface_point(mesh: Mesh, p: np.ndarray):
    """Single-point closest surface query.

    Returns (point, unit normal, inside). inside is true when the query lies
    behind the interpolated surface normal (strict inequality, so points
    exactly on the surface count as outside).
    """
    cp, n, inside, _ = closest_surface_points(mesh, np.asarray(p).reshape(1, 3))
    return cp[0], n[0], bool(inside[0])
