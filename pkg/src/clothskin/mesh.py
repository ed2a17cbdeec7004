"""Triangle mesh core: OBJ I/O, adjacency, normals, smoothing, frequency split."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    vertices: (n, 3) float64 positions in meters.
    triangles: (t, 3) int64 vertex indices.
    edges: (e, 2) int64 unique unordered pairs, derived, lexicographically sorted.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if tris.size:
            if tris.min() < 0 or tris.max() >= len(verts):
                raise ValidationError(
                    f"triangle index out of range (vertex count {len(verts)})")
            degenerate = (
                (tris[:, 0] == tris[:, 1])
                | (tris[:, 1] == tris[:, 2])
                | (tris[:, 0] == tris[:, 2])
            )
            if degenerate.any():
                raise ValidationError(
                    f"triangle {int(np.flatnonzero(degenerate)[0])} repeats a vertex index")
        object.__setattr__(self, "edges", _unique_edges(tris))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same connectivity, new positions."""
        return Mesh(vertices, self.triangles)

    def bbox_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))


def _unique_edges(tris: np.ndarray) -> np.ndarray:
    if not tris.size:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


@dataclass(frozen=True)
class AdjacencyStructure:
    """Per-vertex sorted neighbor lists in flat CSR form."""

    starts: np.ndarray   # (n+1,) offsets into flat
    flat: np.ndarray     # concatenated neighbor indices, sorted per vertex

    def neighbors(self, i: int) -> np.ndarray:
        return self.flat[self.starts[i]:self.starts[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.starts)


def adjacency(mesh: Mesh) -> AdjacencyStructure:
    """Symmetric vertex adjacency from the edge set; no self entries."""
    n = mesh.n_vertices
    if not len(mesh.edges):
        return AdjacencyStructure(np.zeros(n + 1, dtype=np.int64),
                                  np.zeros(0, dtype=np.int64))
    both = np.concatenate([mesh.edges, mesh.edges[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n)
    starts = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return AdjacencyStructure(starts, both[:, 1].copy())


def load_obj(path) -> Mesh:
    """Read a Wavefront OBJ subset: `v` and `f` records, `#` comments.

    Polygon faces are fan-triangulated from the first vertex. Face entries may
    be `i`, `i/j`, or `i/j/k`; only the vertex index is used. Other record
    types are skipped.
    """
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad vertex coordinate: {exc}") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face needs at least 3 indices")
                idx = []
                for token in parts[1:]:
                    head = token.split("/", 1)[0]
                    try:
                        one_based = int(head)
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: bad face index {token!r}") from exc
                    if one_based < 1:
                        raise ParseError(f"{path}:{lineno}: face index must be >= 1")
                    idx.append(one_based - 1)
                for a, b in zip(idx[1:], idx[2:]):
                    tris.append((idx[0], a, b))
            # every other record type (vn, vt, o, ...) is outside the subset
    try:
        return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                    np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_obj(mesh: Mesh, path) -> None:
    """Write `v` lines at full float64 precision, then 1-based `f` lines.

    Output is byte-deterministic for a given mesh.
    """
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.17g} {y:.17g} {z:.17g}\n")
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals, unit length.

    Accumulates face cross products (proportional to area) per incident vertex.
    A zero-magnitude accumulation maps to (0, 0, 1).
    """
    if mesh.n_triangles == 0:
        raise ValidationError("mesh has no triangles")
    v = mesh.vertices
    t = mesh.triangles
    referenced = np.zeros(mesh.n_vertices, dtype=bool)
    referenced[t] = True
    if not referenced.all():
        raise ValidationError(
            f"vertex {int(np.flatnonzero(~referenced)[0])} is referenced by no face")
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, t[:, k], face_n)
    norms = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(acc)
    good = norms > 0.0
    out[good] = acc[good] / norms[good, None]
    out[~good] = (0.0, 0.0, 1.0)
    return out


def laplacian_smooth(mesh: Mesh, lam: float, iters: int) -> Mesh:
    """Uniform-weight Laplacian smoothing.

    Per iteration every vertex moves toward the mean of its neighbors:
    v <- (1 - lam) * v + lam * mean(neighbors). Connectivity is unchanged.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must be in [0, 1], got {lam}")
    if iters < 0:
        raise ValidationError("iteration count must be >= 0")
    adj = adjacency(mesh)
    if mesh.n_vertices and iters > 0 and lam > 0.0:
        if (adj.degrees == 0).any():
            raise ValidationError(
                f"vertex {int(np.flatnonzero(adj.degrees == 0)[0])} is isolated")
    verts = mesh.vertices.copy()
    deg = adj.degrees.astype(np.float64)
    owner = _neighbor_owner(adj)
    for _ in range(iters):
        if lam == 0.0:
            break
        sums = np.zeros_like(verts)
        np.add.at(sums, owner, verts[adj.flat])
        means = sums / deg[:, None]
        verts = (1.0 - lam) * verts + lam * means
    return mesh.with_vertices(verts)


def _neighbor_owner(adj: AdjacencyStructure) -> np.ndarray:
    """For each flat slot, the vertex that owns it."""
    return np.repeat(np.arange(len(adj.starts) - 1), np.diff(adj.starts))


def frequency_decompose(gt: Mesh, lam: float, iters: int) -> tuple[Mesh, np.ndarray]:
    """Split a mesh into a smoothed low-frequency part and a residual offset.

    Returns (low, high) with low.vertices + high == gt.vertices exactly; the
    residual is nudged by its own reconstruction error (at most a few ulp) so
    the sum is bitwise exact for meshes of sane coordinate magnitudes.
    """
    low = laplacian_smooth(gt, lam, iters)
    low_v = low.vertices.copy()
    high = gt.vertices - low_v
    for _ in range(4):
        err = gt.vertices - (low_v + high)
        if not err.any():
            break
        high = high + err
    else:
        low_v = gt.vertices - high
    return low.with_vertices(low_v), high
