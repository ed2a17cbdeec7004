"""Procedural rig assets and a quasi-static mass-spring relaxation oracle.

Assets are capsule-chain bodies with grid cloth (a cape on an arm chain, a
tube skirt on a biped, a blanket on a quadruped). Ground-truth cloth comes
from relaxing spring + gravity energy per pose with attachment pins and
collision pushout, interpolating between adjacent poses.
"""

from __future__ import annotations

import enum
import json
import os
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ValidationError
from .mesh import Mesh, save_obj, vertex_normals
from .skinning import Joint, Pose, RigAsset, Skeleton, center_pose, lbs_skin, save_pose, save_rig
from .spatial import bind_cloth_to_body, closest_surface_points
from .network import initial_cloth_weights


class AssetKind(str, enum.Enum):
    ARM_CAPE = "arm-cape"
    TUBE_SKIRT_BIPED = "tube-skirt-biped"
    QUAD_BLANKET = "quad-blanket"


@dataclass
class SimParams:
    """Relaxer knobs. Stiffnesses in N/m, gravity in m/s^2, tolerance is the
    max residual force in N, margin in meters."""

    stiffness_structural: float = 80.0
    stiffness_shear: float = 40.0
    stiffness_bend: float = 4.0
    gravity: tuple[float, float, float] = (0.0, -9.8, 0.0)
    step_size: float = 2e-3
    tolerance: float = 1e-4
    max_iterations: int = 3000
    collision_margin: float = 2e-3
    substeps: int = 8
    vertex_mass: float = 0.01

    def __post_init__(self):
        if min(self.stiffness_structural, self.stiffness_shear, self.stiffness_bend) <= 0:
            raise ValidationError("spring stiffness must be positive")
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")
        if self.collision_margin < 0:
            raise ValidationError("collision margin must be >= 0")
        if self.substeps < 1 or self.max_iterations < 1:
            raise ValidationError("substeps and max iterations must be >= 1")


@dataclass(frozen=True)
class ClothGrid:
    """Row-major grid layout of the cloth template; wrap closes the columns
    into a tube."""

    rows: int
    cols: int
    wrap: bool

    def index(self, r: int, c: int) -> int:
        return r * self.cols + (c % self.cols)


@dataclass(frozen=True)
class SpringSet:
    index_a: np.ndarray
    index_b: np.ndarray
    rest_length: np.ndarray
    stiffness: np.ndarray


CLIP_LENGTH = 16
GENERATOR_VERSION = 1


# ---------------------------------------------------------------------------
# Geometry builders

def _orthonormal_frame(axis: np.ndarray):
    z = axis / np.linalg.norm(axis)
    pick = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(z, pick)
    u /= np.linalg.norm(u)
    v = np.cross(z, u)
    return u, v, z


def capsule_mesh(p0, p1, radius: float, segments: int = 10,
                 body_rings: int = 3, cap_rings: int = 3) -> Mesh:
    """Lat-long capsule around the segment p0-p1 with outward winding."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    u, v, z = _orthonormal_frame(p1 - p0)
    profile = []  # (center, ring radius)
    for i in range(1, cap_rings + 1):
        phi = -np.pi / 2 + i * (np.pi / 2) / cap_rings
        profile.append((p0 + radius * np.sin(phi) * z, radius * np.cos(phi)))
    for i in range(1, body_rings + 1):
        t = i / (body_rings + 0.0)
        profile.append((p0 + t * (p1 - p0), radius))
    for i in range(1, cap_rings + 1):
        phi = i * (np.pi / 2) / cap_rings
        profile.append((p1 + radius * np.sin(phi) * z, radius * np.cos(phi)))

    verts = [p0 - radius * z]
    angles = np.arange(segments) * (2 * np.pi / segments)
    ring_dirs = np.outer(np.cos(angles), u) + np.outer(np.sin(angles), v)
    for center, r in profile[:-1]:
        verts.extend(center + r * ring_dirs)
    verts.append(profile[-1][0])  # top pole (radius 0)
    verts = np.asarray(verts)

    tris = []
    ring_start = lambda k: 1 + k * segments
    for s in range(segments):
        tris.append((0, ring_start(0) + (s + 1) % segments, ring_start(0) + s))
    n_rings = len(profile) - 1
    for k in range(n_rings - 1):
        a, b = ring_start(k), ring_start(k + 1)
        for s in range(segments):
            s2 = (s + 1) % segments
            tris.append((a + s, a + s2, b + s2))
            tris.append((a + s, b + s2, b + s))
    top = ring_start(n_rings)
    a = ring_start(n_rings - 1)
    for s in range(segments):
        tris.append((a + s, a + (s + 1) % segments, top))
    return Mesh(verts, np.asarray(tris, dtype=np.int64))


def merge_meshes(meshes: list[Mesh]) -> Mesh:
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    return Mesh(np.concatenate(verts), np.concatenate(tris))


def grid_cloth(points: np.ndarray, grid: ClothGrid) -> Mesh:
    """Triangulated grid; columns wrap when the grid is a tube."""
    tris = []
    cols_quads = grid.cols if grid.wrap else grid.cols - 1
    for r in range(grid.rows - 1):
        for c in range(cols_quads):
            a = grid.index(r, c)
            b = grid.index(r, c + 1)
            d = grid.index(r + 1, c)
            e = grid.index(r + 1, c + 1)
            tris.append((a, d, e))
            tris.append((a, e, b))
    return Mesh(points, np.asarray(tris, dtype=np.int64))


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


@dataclass(frozen=True)
class _CapsuleSpec:
    joint: int
    p0: np.ndarray
    p1: np.ndarray
    radius: float


def _falloff_weights(points: np.ndarray, capsules: list[_CapsuleSpec],
                     n_joints: int, sigma: float) -> np.ndarray:
    """Strictly positive distance-falloff weights, row-normalized."""
    scores = np.zeros((len(points), n_joints))
    for cap in capsules:
        d = _segment_distances(points, cap.p0, cap.p1) - cap.radius
        d = np.maximum(d, 0.0)
        scores[:, cap.joint] = np.maximum(scores[:, cap.joint],
                                          np.exp(-((d / sigma) ** 2)))
    scores = np.maximum(scores, 1e-12)
    return scores / scores.sum(axis=1, keepdims=True)


def _bind(position) -> np.ndarray:
    m = np.zeros((3, 4))
    m[:, :3] = np.eye(3)
    m[:, 3] = position
    return m


@dataclass(frozen=True)
class _KindSpec:
    joints: list[tuple[str, int, tuple]]          # (name, parent, position)
    capsules: list[tuple[int, tuple, tuple, float]]
    wiggle: dict[str, tuple[tuple, float]]        # joint name -> (axis, max angle)


def _tube_skirt_spec() -> _KindSpec:
    return _KindSpec(
        joints=[
            ("hip", -1, (0.0, 1.0, 0.0)),
            ("spine", 0, (0.0, 1.25, 0.0)),
            ("l_thigh", 0, (-0.09, 0.95, 0.0)),
            ("r_thigh", 0, (0.09, 0.95, 0.0)),
            ("l_shin", 2, (-0.09, 0.55, 0.0)),
            ("r_shin", 3, (0.09, 0.55, 0.0)),
            ("chest", 1, (0.0, 1.5, 0.0)),
        ],
        capsules=[
            (0, (0.0, 0.98, 0.0), (0.0, 1.25, 0.0), 0.13),
            (1, (0.0, 1.25, 0.0), (0.0, 1.5, 0.0), 0.12),
            (6, (0.0, 1.5, 0.0), (0.0, 1.72, 0.0), 0.09),
            (2, (-0.09, 0.95, 0.0), (-0.09, 0.55, 0.0), 0.065),
            (3, (0.09, 0.95, 0.0), (0.09, 0.55, 0.0), 0.065),
            (4, (-0.09, 0.55, 0.0), (-0.09, 0.14, 0.0), 0.05),
            (5, (0.09, 0.55, 0.0), (0.09, 0.14, 0.0), 0.05),
        ],
        wiggle={
            "spine": ((0.0, 0.0, 1.0), 0.12),
            "chest": ((0.0, 0.0, 1.0), 0.1),
            "l_thigh": ((1.0, 0.0, 0.0), 0.45),
            "r_thigh": ((1.0, 0.0, 0.0), 0.45),
            "l_shin": ((1.0, 0.0, 0.0), 0.3),
            "r_shin": ((1.0, 0.0, 0.0), 0.3),
        },
    )


def _arm_cape_spec() -> _KindSpec:
    return _KindSpec(
        joints=[
            ("shoulder", -1, (0.0, 1.4, 0.0)),
            ("elbow", 0, (0.3, 1.4, 0.0)),
            ("wrist", 1, (0.6, 1.4, 0.0)),
            ("hand", 2, (0.85, 1.4, 0.0)),
        ],
        capsules=[
            (0, (0.0, 1.4, 0.0), (0.3, 1.4, 0.0), 0.05),
            (1, (0.3, 1.4, 0.0), (0.6, 1.4, 0.0), 0.045),
            (2, (0.6, 1.4, 0.0), (0.85, 1.4, 0.0), 0.04),
            (3, (0.85, 1.4, 0.0), (0.97, 1.4, 0.0), 0.035),
        ],
        wiggle={
            "shoulder": ((0.0, 1.0, 0.0), 0.25),
            "elbow": ((0.0, 0.0, 1.0), 0.5),
            "wrist": ((0.0, 0.0, 1.0), 0.55),
            "hand": ((0.0, 0.0, 1.0), 0.5),
        },
    )


def _quad_blanket_spec() -> _KindSpec:
    legs = []
    caps = [(0, (-0.3, 0.6, 0.0), (0.3, 0.6, 0.0), 0.14)]
    wiggle = {"spine": ((1.0, 0.0, 0.0), 0.1)}
    joints = [("spine", -1, (0.0, 0.6, 0.0))]
    for i, (sx, sz, tag) in enumerate(
            [(0.22, 0.13, "fl"), (0.22, -0.13, "fr"),
             (-0.22, 0.13, "bl"), (-0.22, -0.13, "br")]):
        upper = len(joints)
        joints.append((f"{tag}_upper", 0, (sx, 0.55, sz)))
        caps.append((upper, (sx, 0.55, sz), (sx, 0.3, sz), 0.05))
        wiggle[f"{tag}_upper"] = ((0.0, 0.0, 1.0), 0.35)
    for i, (sx, sz, tag) in enumerate(
            [(0.22, 0.13, "fl"), (0.22, -0.13, "fr"),
             (-0.22, 0.13, "bl"), (-0.22, -0.13, "br")]):
        lower = len(joints)
        joints.append((f"{tag}_lower", 1 + i, (sx, 0.3, sz)))
        caps.append((lower, (sx, 0.3, sz), (sx, 0.06, sz), 0.04))
        wiggle[f"{tag}_lower"] = ((0.0, 0.0, 1.0), 0.3)
    return _KindSpec(joints=joints, capsules=caps, wiggle=wiggle)


_KIND_SPECS = {
    AssetKind.TUBE_SKIRT_BIPED: _tube_skirt_spec,
    AssetKind.ARM_CAPE: _arm_cape_spec,
    AssetKind.QUAD_BLANKET: _quad_blanket_spec,
}


def _skirt_cloth(resolution: int, rows: int) -> tuple[np.ndarray, ClothGrid, np.ndarray]:
    grid = ClothGrid(rows=rows, cols=resolution, wrap=True)
    pts = np.zeros((rows * resolution, 3))
    top_y, bottom_y = 1.02, 0.48
    top_r, bottom_r = 0.2, 0.3
    for r in range(rows):
        t = r / (rows - 1)
        y = top_y + t * (bottom_y - top_y)
        rad = top_r + t * (bottom_r - top_r)
        for c in range(resolution):
            ang = 2 * np.pi * c / resolution
            pts[grid.index(r, c)] = (rad * np.cos(ang), y, rad * np.sin(ang))
    attach = np.arange(resolution)  # waist ring
    return pts, grid, attach


def _cape_cloth(resolution: int, rows: int) -> tuple[np.ndarray, ClothGrid, np.ndarray]:
    grid = ClothGrid(rows=rows, cols=resolution, wrap=False)
    pts = np.zeros((rows * resolution, 3))
    top_y, bottom_y = 1.47, 1.05
    x0, x1 = -0.02, 0.92
    z = 0.08
    for r in range(rows):
        y = top_y + (r / (rows - 1)) * (bottom_y - top_y)
        for c in range(resolution):
            x = x0 + (c / (resolution - 1)) * (x1 - x0)
            pts[grid.index(r, c)] = (x, y, z)
    attach = np.arange(resolution)  # top edge
    return pts, grid, attach


def _blanket_cloth(resolution: int, rows: int) -> tuple[np.ndarray, ClothGrid, np.ndarray]:
    grid = ClothGrid(rows=rows, cols=resolution, wrap=False)
    pts = np.zeros((rows * resolution, 3))
    y = 0.78
    x0, x1 = -0.45, 0.45
    z0, z1 = -0.36, 0.36
    for r in range(rows):
        zz = z0 + (r / (rows - 1)) * (z1 - z0)
        for c in range(resolution):
            xx = x0 + (c / (resolution - 1)) * (x1 - x0)
            pts[grid.index(r, c)] = (xx, y, zz)
    mid = rows // 2
    attach = np.array([grid.index(mid, c) for c in range(resolution)])  # spine strip
    return pts, grid, attach


_CLOTH_BUILDERS = {
    AssetKind.TUBE_SKIRT_BIPED: _skirt_cloth,
    AssetKind.ARM_CAPE: _cape_cloth,
    AssetKind.QUAD_BLANKET: _blanket_cloth,
}


def make_asset(kind: AssetKind | str, resolution: int, seed: int = 0,
               rows: int | None = None) -> RigAsset:
    """Build a procedural rig: capsule-chain body, topologically sorted
    skeleton, smooth positive skinning weights, and a cloth grid with at
    least the collision margin of clearance at the bind pose.

    resolution sets the cloth grid width (and height unless rows is given).
    """
    kind = AssetKind(kind)
    if resolution < 4:
        raise ValidationError(f"resolution must be >= 4, got {resolution}")
    rows = resolution if rows is None else rows
    if rows < 2:
        raise ValidationError("cloth grid needs at least 2 rows")
    spec = _KIND_SPECS[kind]()
    joints = [Joint(name, None if parent < 0 else parent, _bind(pos))
              for name, parent, pos in spec.joints]
    skeleton = Skeleton(joints, hip_index=0)
    capsules = [_CapsuleSpec(j, np.asarray(p0, dtype=np.float64),
                             np.asarray(p1, dtype=np.float64), r)
                for j, p0, p1, r in spec.capsules]
    body = merge_meshes([capsule_mesh(c.p0, c.p1, c.radius) for c in capsules])
    body_weights = _falloff_weights(body.vertices, capsules, len(skeleton), sigma=0.06)

    cloth_pts, grid, attach = _CLOTH_BUILDERS[kind](resolution, rows)
    cloth = grid_cloth(cloth_pts, grid)

    binding = bind_cloth_to_body(cloth, body)
    return RigAsset(skeleton, body, cloth, body_weights,
                    cloth_weights_init=body_weights[binding],
                    attachment_indices=np.asarray(attach, dtype=np.int64),
                    kind=kind.value, cloth_grid=grid)


def cloth_springs(points: np.ndarray, grid: ClothGrid, params: SimParams) -> SpringSet:
    """Structural (grid edges), shear (quad diagonals), and bend (two-apart)
    springs with rest lengths from the template."""
    pairs: list[tuple[int, int, float]] = []
    r_max = grid.rows
    cols_q = grid.cols if grid.wrap else grid.cols - 1
    for r in range(r_max):
        for c in range(grid.cols):
            here = grid.index(r, c)
            if c + 1 < grid.cols or grid.wrap:
                pairs.append((here, grid.index(r, c + 1), params.stiffness_structural))
            if r + 1 < r_max:
                pairs.append((here, grid.index(r + 1, c), params.stiffness_structural))
    for r in range(r_max - 1):
        for c in range(cols_q):
            pairs.append((grid.index(r, c), grid.index(r + 1, c + 1), params.stiffness_shear))
            pairs.append((grid.index(r, c + 1), grid.index(r + 1, c), params.stiffness_shear))
    for r in range(r_max):
        for c in range(grid.cols):
            here = grid.index(r, c)
            if c + 2 < grid.cols or grid.wrap:
                pairs.append((here, grid.index(r, c + 2), params.stiffness_bend))
            if r + 2 < r_max:
                pairs.append((here, grid.index(r + 2, c), params.stiffness_bend))
    idx_a = np.array([p[0] for p in pairs], dtype=np.int64)
    idx_b = np.array([p[1] for p in pairs], dtype=np.int64)
    rest = np.linalg.norm(points[idx_b] - points[idx_a], axis=1)
    stiff = np.array([p[2] for p in pairs])
    return SpringSet(idx_a, idx_b, rest, stiff)


# ---------------------------------------------------------------------------
# Pose sampling

def _axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
    ])


def _rotation_about(point, rot: np.ndarray) -> np.ndarray:
    m = np.zeros((3, 4))
    m[:, :3] = rot
    m[:, 3] = point - rot @ np.asarray(point, dtype=np.float64)
    return m


def _compose34(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty((3, 4))
    out[:, :3] = a[:, :3] @ b[:, :3]
    out[:, 3] = a[:, :3] @ b[:, 3] + a[:, 3]
    return out


def sample_poses(asset: RigAsset, count: int, seed: int = 0) -> list[list[Pose]]:
    """Smooth per-joint sinusoid trajectories, grouped into clips of 16
    frames; frame 0 of every clip is the bind pose. Deterministic by seed."""
    if count < 1:
        raise ValidationError("pose count must be >= 1")
    try:
        spec = _KIND_SPECS[AssetKind(asset.kind)]()
    except ValueError as exc:
        raise ValidationError(
            f"pose sampling needs a procedural asset kind, got {asset.kind!r}") from exc
    rng = np.random.default_rng(seed)
    names = [j.name for j in asset.skeleton.joints]
    positions = [j.bind[:, 3] for j in asset.skeleton.joints]
    parents = [j.parent for j in asset.skeleton.joints]

    clips: list[list[Pose]] = []
    remaining = count
    while remaining > 0:
        length = min(CLIP_LENGTH, remaining)
        remaining -= length
        # per-clip trajectory parameters
        traj = {}
        for name, (axis, amp) in spec.wiggle.items():
            a1 = rng.uniform(0.4, 1.0) * amp * rng.choice([-1.0, 1.0])
            a2 = rng.uniform(0.0, 0.3) * amp * rng.choice([-1.0, 1.0])
            freq = rng.choice([1.0, 2.0])
            traj[name] = (axis, a1, a2, freq)
        frames = []
        for t in range(length):
            phase = 2 * np.pi * t / CLIP_LENGTH
            deform = []
            for j, name in enumerate(names):
                if name in traj:
                    axis, a1, a2, freq = traj[name]
                    angle = a1 * np.sin(freq * phase) + a2 * np.sin(2 * freq * phase)
                    local = _rotation_about(positions[j], _axis_angle(axis, angle))
                else:
                    local = _bind((0.0, 0.0, 0.0))
                if parents[j] is None:
                    deform.append(local)
                else:
                    deform.append(_compose34(deform[parents[j]], local))
            world = np.stack([_compose34(deform[j], asset.skeleton.joints[j].bind)
                              for j in range(len(names))])
            frames.append(center_pose(world, asset.skeleton))
        clips.append(frames)
    return clips


# ---------------------------------------------------------------------------
# Quasi-static relaxation

@dataclass
class RelaxResult:
    mesh: Mesh
    converged: bool
    iterations: int


def _spring_energy_grad(x: np.ndarray, springs: SpringSet, mass_gravity: np.ndarray):
    diff = x[springs.index_b] - x[springs.index_a]
    length = np.linalg.norm(diff, axis=1)
    safe = np.where(length > 0.0, length, 1.0)
    unit = diff / safe[:, None]
    stretch = length - springs.rest_length
    energy = 0.5 * float(springs.stiffness @ (stretch * stretch))
    per_spring = (springs.stiffness * stretch)[:, None] * unit
    grad = np.zeros_like(x)
    np.add.at(grad, springs.index_a, -per_spring)
    np.add.at(grad, springs.index_b, per_spring)
    # gravity potential: -m g . x per vertex
    energy -= float((x * mass_gravity).sum())
    grad -= mass_gravity
    return energy, grad


def _descend(x: np.ndarray, free: np.ndarray, springs: SpringSet,
             mass_gravity: np.ndarray, params: SimParams, budget: int):
    """Monotone gradient descent with backtracking on the free vertices.
    Returns (x, converged, iterations used)."""
    energy, grad = _spring_energy_grad(x, springs, mass_gravity)
    grad[~free] = 0.0
    eta = params.step_size
    used = 0
    while used < budget:
        residual = np.abs(grad).max() if grad.size else 0.0
        if residual < params.tolerance:
            return x, True, used
        accepted = False
        for _ in range(40):
            cand = x - eta * grad
            cand_energy, cand_grad = _spring_energy_grad(cand, springs, mass_gravity)
            if cand_energy <= energy:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            return x, False, used   # numerical floor reached
        assert cand_energy <= energy
        x, energy = cand, cand_energy
        grad = cand_grad
        grad[~free] = 0.0
        eta = min(eta * 1.25, params.step_size * 16.0)
        used += 1
    residual = np.abs(grad).max() if grad.size else 0.0
    return x, bool(residual < params.tolerance), used


def _push_out(x: np.ndarray, free: np.ndarray, body: Mesh,
              body_normals: np.ndarray, margin: float) -> int:
    """Project penetrating free vertices to the closest surface point plus
    the margin; returns how many moved."""
    free_idx = np.flatnonzero(free)
    if not free_idx.size:
        return 0
    cp, n, inside, _ = closest_surface_points(body, x[free_idx], body_normals)
    hit = np.flatnonzero(inside)
    if not hit.size:
        return 0
    x[free_idx[hit]] = cp[hit] + margin * n[hit]
    return int(hit.size)


def relax_cloth(asset: RigAsset, from_pose: Pose, to_pose: Pose,
                prev_cloth: Mesh, params: SimParams) -> RelaxResult:
    """Quasi-static relaxation from one pose to the next.

    The pose is linearly interpolated over the substeps; each substep pins
    attachment vertices to their skinned targets, descends spring + gravity
    energy monotonically until the residual force drops below tolerance, and
    projects penetrating vertices out of the posed body. The final state is
    penetration-free (last pass projects until clean).
    """
    grid = asset.cloth_grid
    if grid is None:
        raise ValidationError("asset has no cloth grid; relaxation needs a "
                              "procedural asset from make_asset")
    template = asset.cloth_mesh.vertices
    springs = cloth_springs(template, grid, params)
    w_init = asset.cloth_weights_init
    if w_init is None:
        w_init = initial_cloth_weights(
            asset, bind_cloth_to_body(asset.cloth_mesh, asset.body_mesh))
    free = np.ones(len(template), dtype=bool)
    free[asset.attachment_indices] = False
    mass_gravity = np.tile(params.vertex_mass * np.asarray(params.gravity), (len(template), 1))
    mass_gravity[~free] = 0.0   # pinned vertices carry no driving force

    x = prev_cloth.vertices.copy()
    converged = True
    total_iters = 0
    gamma_a = from_pose.joint_transforms
    gamma_b = to_pose.joint_transforms
    for s in range(1, params.substeps + 1):
        t = s / params.substeps
        pose_t = Pose(gamma_a + t * (gamma_b - gamma_a)) if t < 1.0 else to_pose
        posed_body = Mesh(lbs_skin(asset.body_mesh.vertices, pose_t,
                                   asset.body_weights),
                          asset.body_mesh.triangles)
        body_normals = vertex_normals(posed_body)
        x[~free] = lbs_skin(template[~free], pose_t, w_init[~free])
        budget = params.max_iterations
        for _ in range(6):
            x, ok, used = _descend(x, free, springs, mass_gravity, params,
                                   max(1, budget))
            total_iters += used
            budget -= used
            moved = _push_out(x, free, posed_body, body_normals,
                              params.collision_margin)
            if moved == 0 and ok:
                break
            if budget <= 0:
                converged = converged and ok and moved == 0
                break
        else:
            converged = False
        # final cleanup: nothing may stay inside the body
        for _ in range(10):
            if _push_out(x, free, posed_body, body_normals,
                         params.collision_margin) == 0:
                break
    if not converged:
        warnings.warn("relax_cloth stopped before reaching tolerance; "
                      "returning best iterate", RuntimeWarning)
    return RelaxResult(prev_cloth.with_vertices(x), converged, total_iters)


# ---------------------------------------------------------------------------
# Dataset generation

def generate_dataset(asset: RigAsset, pose_count: int, seed: int,
                     params: SimParams, out_dir):
    """Relax every pose frame-to-frame per clip and write the dataset layout:
    asset.json + body/cloth OBJs, clips/<clip>/<frame>.{pose.json,gt.obj},
    and meta.json. Returns the in-memory Dataset."""
    from .training import Clip, Dataset   # layout is owned by the trainer

    os.makedirs(out_dir, exist_ok=True)
    save_rig(asset, os.path.join(out_dir, "asset.json"))
    clips = sample_poses(asset, pose_count, seed)
    bind = Pose.identity(asset.n_joints)
    dataset_clips = []
    non_converged = []
    for ci, clip_poses in enumerate(clips):
        clip_name = f"clip{ci:03d}"
        clip_dir = os.path.join(out_dir, "clips", clip_name)
        os.makedirs(clip_dir, exist_ok=True)
        prev_pose = bind
        prev_cloth = asset.cloth_mesh
        gts = []
        for fi, pose in enumerate(clip_poses):
            result = relax_cloth(asset, prev_pose, pose, prev_cloth, params)
            if not result.converged:
                non_converged.append(f"{clip_name}/{fi:03d}")
            save_pose(pose, os.path.join(clip_dir, f"{fi:03d}.pose.json"))
            save_obj(result.mesh, os.path.join(clip_dir, f"{fi:03d}.gt.obj"))
            gts.append(result.mesh)
            prev_pose, prev_cloth = pose, result.mesh
        dataset_clips.append(Clip(clip_name, clip_poses, gts))
    meta = {
        "seed": seed,
        "params": asdict(params),
        "asset_kind": asset.kind,
        "generator_version": GENERATOR_VERSION,
        "non_converged": non_converged,
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return Dataset(asset, dataset_clips)
