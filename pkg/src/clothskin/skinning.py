"""Skeletons, poses, linear blend skinning, and the rig asset container."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .mesh import Mesh, load_obj, save_obj

WEIGHT_ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None          # None for the root
    bind: np.ndarray            # 3x4 affine, joint frame -> world at rest


@dataclass(frozen=True)
class Skeleton:
    joints: list[Joint]
    hip_index: int

    def __post_init__(self):
        roots = [i for i, j in enumerate(self.joints) if j.parent is None]
        if len(roots) != 1:
            raise ValidationError(f"skeleton must have exactly one root, found {len(roots)}")
        if roots[0] != self.hip_index:
            raise ValidationError(
                f"hip index {self.hip_index} is not the parentless joint {roots[0]}")
        for i, j in enumerate(self.joints):
            if j.parent is not None and not 0 <= j.parent < i:
                raise ValidationError(
                    f"joint {i} ({j.name!r}) has parent {j.parent}; "
                    "parents must precede children")
            if np.asarray(j.bind).shape != (3, 4):
                raise ValidationError(f"joint {i} ({j.name!r}) bind transform is not 3x4")

    def __len__(self) -> int:
        return len(self.joints)

    def bind_stack(self) -> np.ndarray:
        return np.stack([j.bind for j in self.joints])


@dataclass(frozen=True)
class Pose:
    """Per-joint 3x4 skinning transforms, hip-centered.

    Each transform maps a bind-pose point to its posed location; the hip
    joint's translation is exactly zero after centering.
    """

    joint_transforms: np.ndarray   # (J, 3, 4)

    def __post_init__(self):
        jt = np.ascontiguousarray(np.asarray(self.joint_transforms, dtype=np.float64))
        if jt.ndim != 3 or jt.shape[1:] != (3, 4):
            raise ValidationError(f"joint_transforms must be (J, 3, 4), got {jt.shape}")
        object.__setattr__(self, "joint_transforms", jt)

    def __len__(self) -> int:
        return len(self.joint_transforms)

    @staticmethod
    def identity(n_joints: int) -> "Pose":
        jt = np.zeros((n_joints, 3, 4))
        jt[:, :, :3] = np.eye(3)
        return Pose(jt)


def validate_weights(weights: np.ndarray, n_rows: int, n_joints: int,
                     what: str = "weights") -> np.ndarray:
    """Check shape, range, and row sums; renormalize rows within tolerance."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n_rows, n_joints):
        raise ValidationError(
            f"{what} shape {w.shape} does not match ({n_rows}, {n_joints})")
    if (w < 0.0).any() or (w > 1.0 + WEIGHT_ROW_SUM_TOL).any():
        bad = int(np.flatnonzero(((w < 0.0) | (w > 1.0 + WEIGHT_ROW_SUM_TOL)).any(axis=1))[0])
        raise ValidationError(f"{what} row {bad} has entries outside [0, 1]")
    sums = w.sum(axis=1)
    off = np.abs(sums - 1.0)
    if (off > WEIGHT_ROW_SUM_TOL).any():
        bad = int(np.argmax(off))
        raise ValidationError(
            f"{what} row {bad} sums to {sums[bad]:.9f}, outside 1 +/- {WEIGHT_ROW_SUM_TOL}")
    return w / sums[:, None]


@dataclass
class RigAsset:
    """A rigged character plus its cloth template.

    cloth_weights_init is the nearest-body-vertex copy of the body weights;
    None until computed (see network.initial_cloth_weights) or loaded.
    attachment_indices lists cloth vertices pinned to their skinned targets
    during data generation.
    """

    skeleton: Skeleton
    body_mesh: Mesh
    cloth_mesh: Mesh
    body_weights: np.ndarray
    cloth_weights_init: np.ndarray | None = None
    attachment_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    kind: str = "custom"
    cloth_grid: object | None = None   # procedural grid layout, not serialized

    @property
    def n_joints(self) -> int:
        return len(self.skeleton)


def load_rig(path) -> RigAsset:
    """Load a rig JSON file; mesh paths are resolved relative to it."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    try:
        joints_doc = doc["joints"]
        hip = int(doc["hip"])
        body_obj = doc["body_obj"]
        cloth_obj = doc["cloth_obj"]
        body_weights = doc["body_weights"]
    except KeyError as exc:
        raise ValidationError(f"rig file missing key {exc}") from exc
    joints = []
    for i, jd in enumerate(joints_doc):
        parent = int(jd["parent"])
        bind = np.asarray(jd["bind"], dtype=np.float64)
        if bind.shape != (12,):
            raise ValidationError(f"joint {i} ({jd.get('name')!r}) bind must be 12 floats")
        joints.append(Joint(str(jd["name"]),
                            None if parent < 0 else parent,
                            bind.reshape(3, 4)))
    skeleton = Skeleton(joints, hip)
    body = load_obj(os.path.join(base, body_obj))
    cloth = load_obj(os.path.join(base, cloth_obj))
    wb = validate_weights(np.asarray(body_weights), body.n_vertices, len(skeleton),
                          "body_weights")
    wc = None
    if doc.get("cloth_weights_init") is not None:
        wc = validate_weights(np.asarray(doc["cloth_weights_init"]),
                              cloth.n_vertices, len(skeleton), "cloth_weights_init")
    attach = np.asarray(doc.get("attachments", []), dtype=np.int64)
    if attach.size and (attach.min() < 0 or attach.max() >= cloth.n_vertices):
        raise ValidationError("attachment index out of range")
    return RigAsset(skeleton, body, cloth, wb, wc, attach, str(doc.get("kind", "custom")))


def save_rig(asset: RigAsset, path) -> None:
    """Write the rig JSON plus body.obj / cloth.obj next to it."""
    base = os.path.dirname(os.path.abspath(path))
    os.makedirs(base, exist_ok=True)
    save_obj(asset.body_mesh, os.path.join(base, "body.obj"))
    save_obj(asset.cloth_mesh, os.path.join(base, "cloth.obj"))
    doc = {
        "kind": asset.kind,
        "joints": [
            {"name": j.name,
             "parent": -1 if j.parent is None else j.parent,
             "bind": [float(x) for x in j.bind.reshape(-1)]}
            for j in asset.skeleton.joints
        ],
        "hip": asset.skeleton.hip_index,
        "body_obj": "body.obj",
        "cloth_obj": "cloth.obj",
        "body_weights": [[float(x) for x in row] for row in asset.body_weights],
        "attachments": [int(i) for i in asset.attachment_indices],
    }
    if asset.cloth_weights_init is not None:
        doc["cloth_weights_init"] = [[float(x) for x in row]
                                     for row in asset.cloth_weights_init]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _affine_inverse(m: np.ndarray) -> np.ndarray:
    h = np.eye(4)
    h[:3, :] = m
    try:
        inv = np.linalg.inv(h)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"bind transform is not invertible: {exc}") from exc
    if not np.isfinite(inv).all():
        raise ValidationError("bind transform is not invertible")
    return inv[:3, :]


def _compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x4 affine composition a after b."""
    out = np.empty((3, 4))
    out[:, :3] = a[:, :3] @ b[:, :3]
    out[:, 3] = a[:, :3] @ b[:, 3] + a[:, 3]
    return out


def center_pose(world_transforms: np.ndarray, skeleton: Skeleton) -> Pose:
    """Build hip-centered skinning transforms from per-joint world transforms.

    Each skinning transform is world composed with inverse bind; the hip's
    resulting translation is then subtracted from every joint so the hip maps
    to the origin (exactly zero by construction).
    """
    world = np.asarray(world_transforms, dtype=np.float64)
    if world.shape != (len(skeleton), 3, 4):
        raise ValidationError(
            f"expected {(len(skeleton), 3, 4)} world transforms, got {world.shape}")
    gam = np.empty_like(world)
    for j, joint in enumerate(skeleton.joints):
        gam[j] = _compose(world[j], _affine_inverse(joint.bind))
    hip_t = gam[skeleton.hip_index, :, 3].copy()
    gam[:, :, 3] -= hip_t
    return Pose(gam)


def lbs_skin(template_vertices: np.ndarray, pose: Pose,
             weights: np.ndarray) -> np.ndarray:
    """Linear blend skinning in displacement form.

    v' = v + sum_j w_ij * ((R_j - I) v + t_j), which equals the classic
    weighted-transform sum when weight rows sum to 1 and is exactly the
    identity map under the identity pose.
    """
    verts = np.asarray(template_vertices, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64)
    n_joints = len(pose)
    if w.shape != (len(verts), n_joints):
        raise ValidationError(
            f"weights shape {w.shape} does not match ({len(verts)}, {n_joints})")
    out = verts.copy()
    eye = np.eye(3)
    for j in range(n_joints):
        rot = pose.joint_transforms[j, :, :3]
        trans = pose.joint_transforms[j, :, 3]
        disp = verts @ (rot - eye).T + trans
        out += w[:, j:j + 1] * disp
    return out


def pose_to_feature(pose: Pose) -> np.ndarray:
    """Row-major flattening of all joint transforms; shape (1, 12 * J)."""
    return pose.joint_transforms.reshape(1, -1).copy()


def pose_to_json(pose: Pose) -> str:
    doc = {"transforms": [[float(x) for x in jt.reshape(-1)]
                          for jt in pose.joint_transforms]}
    return json.dumps(doc)


def pose_from_json(text: str) -> Pose:
    doc = json.loads(text)
    mats = np.asarray(doc["transforms"], dtype=np.float64)
    if mats.ndim != 2 or mats.shape[1] != 12:
        raise ValidationError("pose transforms must be rows of 12 floats")
    return Pose(mats.reshape(-1, 3, 4))


def save_pose(pose: Pose, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(pose_to_json(pose))
        fh.write("\n")


def load_pose(path) -> Pose:
    with open(path, "r", encoding="utf-8") as fh:
        return pose_from_json(fh.read())
