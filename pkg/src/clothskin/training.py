"""Loss, dataset handling, and the two-stage training loop.

Stage one fits the pose-driven coarse stream (embedding MLP, skeleton basis,
weight residual) against Laplacian-smoothed targets; stage two freezes it and
fits the graph stream plus wrinkle basis against the full targets.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, gradients
from .errors import TrainingDiverged, ValidationError
from .mesh import Mesh, laplacian_smooth, load_obj
from .skinning import Pose, RigAsset, lbs_skin, load_pose, load_rig, pose_to_feature
from .spatial import bind_cloth_to_body
from .network import (MeshGraph, ModelParams, NetworkConfig, build_mesh_graph,
                      forward_tensor, init_model_params, initial_cloth_weights)


@dataclass
class Clip:
    name: str
    poses: list[Pose]
    gt_cloth: list[Mesh]

    def __post_init__(self):
        if not self.poses or len(self.poses) != len(self.gt_cloth):
            raise ValidationError(f"clip {self.name!r} is empty or misaligned")

    def __len__(self) -> int:
        return len(self.poses)


@dataclass
class Dataset:
    asset: RigAsset
    clips: list[Clip]

    def __post_init__(self):
        tris = self.asset.cloth_mesh.triangles
        for clip in self.clips:
            for gt in clip.gt_cloth:
                if gt.triangles.shape != tris.shape or (gt.triangles != tris).any():
                    raise ValidationError(
                        f"clip {clip.name!r} ground truth does not share the "
                        "cloth template topology")

    @property
    def n_samples(self) -> int:
        return sum(len(c) for c in self.clips)

    def samples(self):
        for clip in self.clips:
            for pose, gt in zip(clip.poses, clip.gt_cloth):
                yield pose, gt


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    epochs_stage_a: int = 500
    epochs_stage_b: int = 500
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    smooth_lambda: float = 0.5
    smooth_iters: int = 20

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")


def load_dataset(path) -> Dataset:
    """Read the on-disk layout written by the generator."""
    asset = load_rig(os.path.join(path, "asset.json"))
    clips_dir = os.path.join(path, "clips")
    if not os.path.isdir(clips_dir):
        raise ValidationError(f"{path}: missing clips/ directory")
    clips = []
    for clip_name in sorted(os.listdir(clips_dir)):
        clip_dir = os.path.join(clips_dir, clip_name)
        if not os.path.isdir(clip_dir):
            continue
        frames = sorted(f[:-10] for f in os.listdir(clip_dir)
                        if f.endswith(".pose.json"))
        poses = [load_pose(os.path.join(clip_dir, f + ".pose.json")) for f in frames]
        gts = [load_obj(os.path.join(clip_dir, f + ".gt.obj")) for f in frames]
        clips.append(Clip(clip_name, poses, gts))
    if not clips:
        raise ValidationError(f"{path}: no clips found")
    return Dataset(asset, clips)


def loss_arrays(pred_batch: list[np.ndarray], gt_batch: list[np.ndarray]) -> float:
    """Mean Euclidean distance over every vertex of every sample."""
    if len(pred_batch) != len(gt_batch) or not pred_batch:
        raise ValidationError("batch sizes differ or batch is empty")
    total = 0.0
    count = 0
    for p, g in zip(pred_batch, gt_batch):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ValidationError(f"sample shapes differ: {p.shape} vs {g.shape}")
        total += float(np.linalg.norm(p - g, axis=1).sum())
        count += len(p)
    return total / count


def loss_tensor(pred_batch: list[Tensor], gt_batch: list[np.ndarray]) -> Tensor:
    """Differentiable version of loss_arrays; samples must share a vertex
    count so the batch mean is the mean of sample means."""
    if len(pred_batch) != len(gt_batch) or not pred_batch:
        raise ValidationError("batch sizes differ or batch is empty")
    n = pred_batch[0].shape[0]
    acc = None
    for p, g in zip(pred_batch, gt_batch):
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ValidationError(f"sample shapes differ: {p.shape} vs {g.shape}")
        if p.shape[0] != n:
            raise ValidationError("batch samples must share a vertex count")
        term = ad.mean_all(ad.l2_norm_rows(p - ad.constant(g)))
        acc = term if acc is None else acc + term
    return ad.mul(acc, 1.0 / len(pred_batch))


def split_dataset(dataset: Dataset) -> tuple[Dataset, Dataset]:
    """Clip-level 90/10 split: the leading ceil(0.9 n) clips train, capped so
    at least one clip is held out."""
    n = len(dataset.clips)
    if n < 2:
        raise ValidationError("need at least 2 clips to split")
    train_n = min(math.ceil(0.9 * n), n - 1)
    return (Dataset(dataset.asset, dataset.clips[:train_n]),
            Dataset(dataset.asset, dataset.clips[train_n:]))


@dataclass
class _Sample:
    graph: MeshGraph
    pose: Pose
    feat: np.ndarray
    gt_full: np.ndarray
    gt_smooth: np.ndarray


def _prepare_samples(dataset: Dataset, config: TrainConfig,
                     binding: np.ndarray) -> list[_Sample]:
    asset = dataset.asset
    out = []
    for pose, gt in dataset.samples():
        posed_body = lbs_skin(asset.body_mesh.vertices, pose, asset.body_weights)
        graph = build_mesh_graph(binding, posed_body, asset.cloth_mesh)
        smooth = laplacian_smooth(gt, config.smooth_lambda, config.smooth_iters)
        out.append(_Sample(graph, pose, pose_to_feature(pose),
                           gt.vertices, smooth.vertices))
    return out


STAGE_A_GROUPS = ("phi", "skel_basis", "dwc")
STAGE_B_GROUPS = ("graph", "mesh_basis")


def _stage_params(params: ModelParams, groups) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for g in groups:
        out.update(params.group(g))
    return out


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    log: list[tuple[int, str, float]]     # (epoch, stage, loss)
    final_loss: float


def _run_stage(samples: list[_Sample], params: ModelParams, stage: str,
               config: TrainConfig, cloth_template: np.ndarray,
               w_init: np.ndarray, adam: AdamState, rng: np.random.Generator,
               log: list, baseline: float, epochs: int) -> None:
    trainable = _stage_params(params, STAGE_A_GROUPS if stage == "A" else STAGE_B_GROUPS)
    names = list(trainable.keys())
    use_mesh = stage != "A"
    order = np.arange(len(samples))
    for epoch in range(epochs):
        rng.shuffle(order)
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[lo:lo + config.batch_size]]
            preds = [forward_tensor(params, s.graph, s.pose, cloth_template,
                                    w_init, s.feat, use_mesh_stream=use_mesh)
                     for s in batch]
            gts = [s.gt_smooth if stage == "A" else s.gt_full for s in batch]
            loss = loss_tensor(preds, gts)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"stage {stage} epoch {epoch} step {lo // config.batch_size}: "
                    f"loss is {value}")
            grads = gradients(loss, list(trainable.values()))
            adam_step(trainable, dict(zip(names, grads)), adam, config.lr)
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses))
        if baseline > 0.0 and mean_loss > 2.0 * baseline:
            raise TrainingDiverged(
                f"stage {stage} epoch {epoch}: mean loss {mean_loss:.6g} "
                f"exceeded twice the starting loss {baseline:.6g}")
        log.append((epoch, stage, mean_loss))


def evaluate_loss(dataset: Dataset, params: ModelParams,
                  binding: np.ndarray | None = None) -> float:
    """Full-model training loss over a dataset with fixed parameters."""
    asset = dataset.asset
    if binding is None:
        binding = bind_cloth_to_body(asset.cloth_mesh, asset.body_mesh)
    w_init = initial_cloth_weights(asset, binding)
    template = asset.cloth_mesh.vertices
    preds = []
    gts = []
    for pose, gt in dataset.samples():
        posed_body = lbs_skin(asset.body_mesh.vertices, pose, asset.body_weights)
        graph = build_mesh_graph(binding, posed_body, asset.cloth_mesh)
        preds.append(forward_tensor(params, graph, pose, template, w_init))
        gts.append(gt.vertices)
    return loss_arrays([p.data for p in preds], gts)


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Two-stage training, deterministic for a fixed seed.

    Stage A optimizes the coarse stream and weight residual against smoothed
    targets with the wrinkle stream disabled; stage B freezes those tensors
    and optimizes the graph stream and wrinkle basis against the full
    targets. A final full-dataset evaluation with the finished parameters is
    appended to the log (stage 'final') and returned.
    """
    asset = dataset.asset
    if dataset.n_samples == 0:
        raise ValidationError("dataset has no samples")
    params = init_model_params(config.network, asset.cloth_mesh.n_vertices,
                               asset.n_joints, seed=config.seed)
    binding = bind_cloth_to_body(asset.cloth_mesh, asset.body_mesh)
    w_init = initial_cloth_weights(asset, binding)
    samples = _prepare_samples(dataset, config, binding)
    template = asset.cloth_mesh.vertices
    adam = AdamState.for_params(params.tensors)
    rng = np.random.default_rng(config.seed)
    log: list[tuple[int, str, float]] = []

    base_a = loss_arrays(
        [forward_tensor(params, s.graph, s.pose, template, w_init, s.feat,
                        use_mesh_stream=False).data for s in samples],
        [s.gt_smooth for s in samples])
    _run_stage(samples, params, "A", config, template, w_init, adam, rng,
               log, base_a, config.epochs_stage_a)
    base_b = loss_arrays(
        [forward_tensor(params, s.graph, s.pose, template, w_init, s.feat).data
         for s in samples],
        [s.gt_full for s in samples])
    _run_stage(samples, params, "B", config, template, w_init, adam, rng,
               log, base_b, config.epochs_stage_b)

    final = evaluate_loss(dataset, params, binding)
    log.append((-1, "final", final))
    return TrainResult(params, adam, log, final)


def checkpoint_tensors(result: TrainResult) -> dict[str, np.ndarray]:
    """Model parameters plus optimizer state, ready for the container."""
    out = result.params.as_arrays()
    for name, m in result.adam.m.items():
        out[f"adam.m.{name}"] = m.copy()
    for name, v in result.adam.v.items():
        out[f"adam.v.{name}"] = v.copy()
    out["adam.step"] = np.array([[float(result.adam.step)]])
    return out


def write_loss_log(log, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,stage,loss\n")
        for epoch, stage, value in log:
            fh.write(f"{epoch},{stage},{value:.17g}\n")
