"""Cloth deformation prediction for skeleton-rigged characters.

A two-stream skinning network (coarse pose-driven offsets plus graph-
transformer wrinkles over nearest posed-body points) predicts cloth from a
template, with a quasi-static mass-spring oracle generating ground truth.
"""

from .errors import NumericError, ParseError, TrainingDiverged, ValidationError
from .mesh import (AdjacencyStructure, Mesh, adjacency, frequency_decompose,
                   laplacian_smooth, load_obj, save_obj, vertex_normals)
from .skinning import (Joint, Pose, RigAsset, Skeleton, center_pose, lbs_skin,
                       load_pose, load_rig, pose_to_feature, save_pose, save_rig)
from .spatial import (KdTree, bind_cloth_to_body, build_kdtree,
                      closest_surface_point, closest_surface_points,
                      nearest_index)
from .autodiff import (AdamState, Tensor, adam_step, backward,
                       finite_diff_check, gradients, load_checkpoint,
                       parameter, save_checkpoint)
from .network import (GRAD_CHECK_CONFIG, MeshGraph, ModelParams, NetworkConfig,
                      build_mesh_graph, forward, forward_tensor, fuse_weights,
                      graph_transformer_layer, init_model_params,
                      initial_cloth_weights, mesh_residual,
                      model_params_from_arrays, pose_embedding,
                      skeleton_residual)
from .training import (Clip, Dataset, TrainConfig, TrainResult,
                       checkpoint_tensors, evaluate_loss, load_dataset,
                       loss_arrays, loss_tensor, split_dataset, train)
from .datagen import (AssetKind, RelaxResult, SimParams, generate_dataset,
                      make_asset, relax_cloth, sample_poses)
from .postprocess import (MetricsResult, PenetrationReport,
                          default_pullout_epsilon, detect_penetrations,
                          eval_metrics, resolve_penetrations)

__version__ = "0.1.0"
