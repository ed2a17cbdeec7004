"""Penetration detection and resolution on predictions, plus error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mesh import Mesh, vertex_normals
from .spatial import closest_surface_points


@dataclass(frozen=True)
class PenetrationReport:
    """Penetrated cloth vertices with their closest character surface data."""

    indices: np.ndarray        # sorted unique vertex ids
    closest_points: np.ndarray
    normals: np.ndarray
    depths: np.ndarray         # > 0, meters

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class MetricsResult:
    e_dist: float                  # meters
    e_norm: float                  # degrees
    per_vertex_dist: np.ndarray
    per_vertex_norm: np.ndarray


def detect_penetrations(cloth: Mesh, character: Mesh) -> PenetrationReport:
    """A vertex penetrates when it lies strictly behind the interpolated
    normal at its closest character surface point."""
    cp, n, inside, dist = closest_surface_points(character, cloth.vertices)
    idx = np.flatnonzero(inside)
    return PenetrationReport(idx, cp[idx], n[idx], dist[idx])


def resolve_penetrations(cloth: Mesh, character: Mesh, epsilon: float,
                         max_iters: int = 10) -> tuple[Mesh, PenetrationReport]:
    """Pull penetrated vertices to their closest surface point plus epsilon
    along the normal, re-detect, and repeat until clean or out of iterations.

    Only vertices reported as penetrated ever move. Returns the adjusted mesh
    and the final (ideally empty) report.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    report = detect_penetrations(cloth, character)
    if not len(report):
        return cloth, report
    verts = cloth.vertices.copy()
    for _ in range(max_iters):
        if not len(report):
            break
        verts[report.indices] = report.closest_points + epsilon * report.normals
        cloth = cloth.with_vertices(verts)
        report = detect_penetrations(cloth, character)
    return cloth, report


def default_pullout_epsilon(character: Mesh) -> float:
    """1e-3 of the character bounding-box diagonal."""
    return 1e-3 * character.bbox_diagonal()


def eval_metrics(pred: Mesh, gt: Mesh) -> MetricsResult:
    """Mean per-vertex position error and mean normal angle error (degrees)."""
    if pred.triangles.shape != gt.triangles.shape or \
            (pred.triangles != gt.triangles).any():
        raise ValidationError("prediction and ground truth topologies differ")
    dist = np.linalg.norm(pred.vertices - gt.vertices, axis=1)
    n_p = vertex_normals(pred)
    n_g = vertex_normals(gt)
    cosine = np.clip(np.einsum("ij,ij->i", n_p, n_g), -1.0, 1.0)
    angles = np.degrees(np.arccos(cosine))
    return MetricsResult(float(dist.mean()), float(angles.mean()), dist, angles)
