"""The two-stream cloth skinning network.

Stream one turns a pose embedding into coarse per-vertex offsets through a
learned basis. Stream two runs gated multi-head graph attention over the
cloth-topology graph of nearest posed-body points and emits wrinkle offsets
through a second basis. A learned weight residual reshapes the skinning
weights, and the final cloth is the skinned sum of template plus offsets.

Parameters are stored stacked across heads and basis elements (one tensor
per projection kind per layer) for speed; checkpoints split them into the
documented per-head / per-basis-element names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .mesh import Mesh
from .skinning import Pose, RigAsset, lbs_skin, pose_to_feature

PAD_SCORE = -1e30   # additive mask; softmax underflows these slots to exact zero


@dataclass(frozen=True)
class NetworkConfig:
    pose_embed_size: int = 32    # width of the pose embedding
    mesh_coeff_size: int = 128   # per-vertex wrinkle coefficients
    gt_layers: int = 2
    gt_heads: int = 4
    gt_head_width: int = 16
    pose_hidden: int = 64
    vertex_hidden: int = 64

    def __post_init__(self):
        for name in ("pose_embed_size", "mesh_coeff_size", "gt_layers",
                     "gt_heads", "gt_head_width", "pose_hidden", "vertex_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"NetworkConfig.{name} must be >= 1")

    @property
    def gt_width(self) -> int:
        return self.gt_heads * self.gt_head_width


# Tiny configuration used by the gradient-check harness.
GRAD_CHECK_CONFIG = NetworkConfig(pose_embed_size=4, mesh_coeff_size=8,
                                  gt_layers=1, gt_heads=2, gt_head_width=4)


@lru_cache(maxsize=32)
def _block_expand(count: int, width: int) -> Tensor:
    """(count, count*width) selector: block j copies scalar j across width."""
    out = np.zeros((count, count * width))
    for j in range(count):
        out[j, width * j:width * (j + 1)] = 1.0
    return ad.constant(out)


@lru_cache(maxsize=32)
def _block_sum(count: int, width: int) -> Tensor:
    """(count*width, count) selector summing each width-block of columns."""
    return ad.constant(_block_expand(count, width).data.T.copy())


@lru_cache(maxsize=32)
def _axis_select(count: int) -> Tensor:
    """(3*count, 3) selector summing interleaved xyz blocks."""
    return ad.constant(np.tile(np.eye(3), (count, 1)))


@lru_cache(maxsize=32)
def _head_column(c: int, heads: int) -> Tensor:
    col = np.zeros((heads, 1))
    col[c, 0] = 1.0
    return ad.constant(col)


@dataclass
class ModelParams:
    """All trainable tensors, keyed by stable names.

    In memory: phi.l{i}.w/b, skel_basis (n, 3m), gt.l{l}.{wq,bq,wk,bk,wv,bv,
    we,be} stacked over heads, gt.l{l}.{wr,br,wg,ln.scale,ln.shift},
    vmlp.l{i}.w/b, mesh_basis (n, 3k), dwc (n, joints). Checkpoints use the
    documented per-head (gt.l1.h2.wq) and per-element (skel_basis.3,
    mesh_basis.17) names; see checkpoint_arrays / model_params_from_arrays.
    """

    config: NetworkConfig
    n_cloth: int
    n_joints: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    GROUPS = ("phi", "skel_basis", "graph", "mesh_basis", "dwc")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def group(self, group: str) -> dict[str, Tensor]:
        """One of: phi, skel_basis, graph, mesh_basis, dwc."""
        if group == "graph":
            return {k: v for k, v in self.tensors.items()
                    if k.startswith("gt.") or k.startswith("vmlp.")}
        if group in ("dwc", "skel_basis", "mesh_basis"):
            return {group: self.tensors[group]}
        return {k: v for k, v in self.tensors.items()
                if k.startswith(group + ".")}

    def skeleton_basis(self) -> list[np.ndarray]:
        """Per-element (n, 3) views of the coarse basis."""
        s = self.tensors["skel_basis"].data
        return [s[:, 3 * j:3 * j + 3] for j in range(self.config.pose_embed_size)]

    def mesh_basis(self) -> list[np.ndarray]:
        s = self.tensors["mesh_basis"].data
        return [s[:, 3 * j:3 * j + 3] for j in range(self.config.mesh_coeff_size)]

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        """Copyable arrays under the documented external names."""
        return split_stacked_arrays({k: v.data for k, v in self.tensors.items()},
                                    self.config)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def init_model_params(config: NetworkConfig, n_cloth: int, n_joints: int,
                      seed: int = 0) -> ModelParams:
    """Fresh parameters. MLP/attention weights are uniform(+-1/sqrt(fan_in));
    both bases and the weight residual start at zero so the untrained network
    reduces to plain LBS of the template.

    Per-head projections draw head by head so the values match a head-at-a-
    time construction of the same seed.
    """
    rng = np.random.default_rng(seed)
    cfg = config
    t: dict[str, Tensor] = {}
    feat = 12 * n_joints

    def lin(prefix, fan_in, fan_out):
        t[f"{prefix}.w"] = ad.parameter(_uniform(rng, fan_in, (fan_in, fan_out)))
        t[f"{prefix}.b"] = ad.parameter(np.zeros((1, fan_out)))

    lin("phi.l0", feat, cfg.pose_hidden)
    lin("phi.l1", cfg.pose_hidden, cfg.pose_hidden)
    lin("phi.l2", cfg.pose_hidden, cfg.pose_embed_size)
    t["skel_basis"] = ad.parameter(np.zeros((n_cloth, 3 * cfg.pose_embed_size)))

    width = cfg.gt_width
    d = cfg.gt_head_width
    for layer in range(cfg.gt_layers):
        fin = 3 if layer == 0 else width
        stacks = {kind: (np.zeros((fan_in, width)), np.zeros((1, width)))
                  for kind, fan_in in (("q", fin), ("k", fin), ("v", fin), ("e", 4))}
        for c in range(cfg.gt_heads):
            for kind, fan_in in (("q", fin), ("k", fin), ("v", fin), ("e", 4)):
                stacks[kind][0][:, c * d:(c + 1) * d] = _uniform(
                    rng, fan_in, (fan_in, d))
        for kind, (w, b) in stacks.items():
            t[f"gt.l{layer}.w{kind}"] = ad.parameter(w)
            t[f"gt.l{layer}.b{kind}"] = ad.parameter(b)
        t[f"gt.l{layer}.wr"] = ad.parameter(_uniform(rng, fin, (fin, width)))
        t[f"gt.l{layer}.br"] = ad.parameter(np.zeros((1, width)))
        t[f"gt.l{layer}.wg"] = ad.parameter(_uniform(rng, 3 * width, (3 * width, 1)))
        t[f"gt.l{layer}.ln.scale"] = ad.parameter(np.ones((1, width)))
        t[f"gt.l{layer}.ln.shift"] = ad.parameter(np.zeros((1, width)))

    lin("vmlp.l0", width, cfg.vertex_hidden)
    lin("vmlp.l1", cfg.vertex_hidden, cfg.mesh_coeff_size)
    t["mesh_basis"] = ad.parameter(np.zeros((n_cloth, 3 * cfg.mesh_coeff_size)))
    t["dwc"] = ad.parameter(np.zeros((n_cloth, n_joints)))
    return ModelParams(cfg, n_cloth, n_joints, t)


_HEAD_KINDS = ("q", "k", "v", "e")


def split_stacked_arrays(arrays: dict[str, np.ndarray],
                         config: NetworkConfig) -> dict[str, np.ndarray]:
    """Map in-memory stacked tensors to the documented external names."""
    d = config.gt_head_width
    out: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        base = name
        prefix = ""
        if base.startswith(("adam.m.", "adam.v.")):
            prefix, base = base[:7], base[7:]
        if base in ("skel_basis", "mesh_basis"):
            for j in range(arr.shape[1] // 3):
                out[f"{prefix}{base}.{j}"] = arr[:, 3 * j:3 * j + 3].copy()
        elif (m := re.match(r"gt\.l(\d+)\.([wb])([qkve])$", base)):
            layer, wb, kind = m.group(1), m.group(2), m.group(3)
            for c in range(config.gt_heads):
                out[f"{prefix}gt.l{layer}.h{c}.{wb}{kind}"] = \
                    arr[:, c * d:(c + 1) * d].copy()
        else:
            out[name] = np.array(arr, copy=True)
    return out


def join_stacked_arrays(external: dict[str, np.ndarray]):
    """Inverse of split_stacked_arrays; infers the architecture from names
    and shapes. Returns (internal arrays, NetworkConfig)."""
    names = [n for n in external if not n.startswith("adam.")]
    skel = sorted((n for n in names if re.fullmatch(r"skel_basis\.\d+", n)),
                  key=lambda s: int(s.split(".")[1]))
    meshb = sorted((n for n in names if re.fullmatch(r"mesh_basis\.\d+", n)),
                   key=lambda s: int(s.split(".")[1]))
    layers = {int(m.group(1)) for n in names
              if (m := re.match(r"gt\.l(\d+)\.", n))}
    heads = {int(m.group(1)) for n in names
             if (m := re.match(r"gt\.l0\.h(\d+)\.", n))}
    required = ("dwc", "phi.l0.w", "vmlp.l0.w", "gt.l0.h0.wq")
    missing = [r for r in required if r not in external]
    if missing or not skel or not meshb or not layers or not heads:
        raise ValidationError(f"checkpoint is missing model tensors (e.g. {missing})")
    config = NetworkConfig(
        pose_embed_size=len(skel),
        mesh_coeff_size=len(meshb),
        gt_layers=max(layers) + 1,
        gt_heads=max(heads) + 1,
        gt_head_width=external["gt.l0.h0.wq"].shape[1],
        pose_hidden=external["phi.l0.w"].shape[1],
        vertex_hidden=external["vmlp.l0.w"].shape[1],
    )
    d = config.gt_head_width

    def join(group: list[str]) -> np.ndarray:
        return np.concatenate([external[n] for n in group], axis=1)

    internal: dict[str, np.ndarray] = {}
    consumed = set()
    for prefix in ("", "adam.m.", "adam.v."):
        if prefix and f"{prefix}dwc" not in external:
            continue
        internal[f"{prefix}skel_basis"] = join([prefix + n for n in skel])
        internal[f"{prefix}mesh_basis"] = join([prefix + n for n in meshb])
        consumed.update(prefix + n for n in skel)
        consumed.update(prefix + n for n in meshb)
        for layer in sorted(layers):
            for wb in "wb":
                for kind in _HEAD_KINDS:
                    group = [f"{prefix}gt.l{layer}.h{c}.{wb}{kind}"
                             for c in range(config.gt_heads)]
                    if any(g not in external for g in group):
                        raise ValidationError(
                            f"checkpoint is missing {group[0]}-style tensors")
                    internal[f"{prefix}gt.l{layer}.{wb}{kind}"] = join(group)
                    consumed.update(group)
    for name, arr in external.items():
        if name not in consumed and name not in internal:
            internal[name] = np.array(arr, copy=True)
    return internal, config


def model_params_from_arrays(external: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild parameters from checkpoint tensors (external naming)."""
    internal, config = join_stacked_arrays(external)
    n_cloth, n_joints = internal["dwc"].shape
    params = init_model_params(config, n_cloth, n_joints, seed=0)
    for name in params.tensors:
        if name not in internal:
            raise ValidationError(f"checkpoint is missing tensor {name!r}")
        if internal[name].shape != params.tensors[name].data.shape:
            raise ValidationError(
                f"checkpoint tensor {name!r} has shape {internal[name].shape}, "
                f"expected {params.tensors[name].data.shape}")
        params.tensors[name].data[...] = internal[name]
    return params


# ---------------------------------------------------------------------------
# Mesh graph

@dataclass(frozen=True)
class MeshGraph:
    """Cloth-topology graph over nearest posed-body vertex positions.

    Directed edges hold both orientations of every cloth edge plus one
    self-loop per node, sorted by (receiver, sender). The slot arrays give a
    padded per-node layout for neighborhood softmax: slot_mask adds a large
    negative score to padding so those attention weights underflow to zero.
    """

    node_positions: np.ndarray   # (n, 3)
    edge_src: np.ndarray         # (M,) sender j
    edge_dst: np.ndarray         # (M,) receiver i
    edge_features: np.ndarray    # (M, 4): template rest vector + rest length
    slot_edge: np.ndarray        # (n * max_degree,) edge id per slot
    slot_mask: np.ndarray        # (n * max_degree, 1) additive score mask
    slot_node: np.ndarray        # (n * max_degree,) receiver per slot, sorted
    max_degree: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    @cached_property
    def node_tensor(self) -> Tensor:
        return ad.constant(self.node_positions)

    @cached_property
    def edge_tensor(self) -> Tensor:
        return ad.constant(self.edge_features)

    @cached_property
    def mask_tensor(self) -> Tensor:
        return ad.constant(self.slot_mask)


def build_mesh_graph(binding: np.ndarray, posed_body: np.ndarray,
                     cloth: Mesh) -> MeshGraph:
    """Node i carries the posed position of its bound body vertex; edges come
    from cloth connectivity (symmetric) plus self-loops with zero features."""
    binding = np.asarray(binding, dtype=np.int64).reshape(-1)
    posed = np.asarray(posed_body, dtype=np.float64).reshape(-1, 3)
    n = cloth.n_vertices
    if len(binding) != n:
        raise ValidationError(
            f"binding length {len(binding)} != cloth vertex count {n}")
    if binding.size and (binding.min() < 0 or binding.max() >= len(posed)):
        raise ValidationError("binding index out of body range")
    nodes = posed[binding]

    e = cloth.edges
    dst = np.concatenate([e[:, 0], e[:, 1], np.arange(n)])
    src = np.concatenate([e[:, 1], e[:, 0], np.arange(n)])
    order = np.lexsort((src, dst))
    dst, src = dst[order], src[order]

    rest = np.zeros((len(dst), 4))
    real = src != dst
    vec = cloth.vertices[src[real]] - cloth.vertices[dst[real]]
    rest[real, :3] = vec
    rest[real, 3] = np.linalg.norm(vec, axis=1)

    counts = np.bincount(dst, minlength=n)
    max_deg = int(counts.max()) if n else 0
    slot_edge = np.zeros(n * max_deg, dtype=np.int64)
    slot_mask = np.full((n * max_deg, 1), PAD_SCORE)
    starts = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    for i in range(n):
        lo, hi = starts[i], starts[i + 1]
        slot_edge[i * max_deg:i * max_deg + (hi - lo)] = np.arange(lo, hi)
        slot_mask[i * max_deg:i * max_deg + (hi - lo)] = 0.0
    slot_node = np.repeat(np.arange(n), max_deg)
    return MeshGraph(nodes, src, dst, rest, slot_edge, slot_mask, slot_node, max_deg)


# ---------------------------------------------------------------------------
# Streams

def pose_embedding(feat: np.ndarray | Tensor, params: ModelParams) -> Tensor:
    """Two hidden ReLU layers then a linear map to the embedding width."""
    x = feat if isinstance(feat, Tensor) else ad.constant(np.asarray(feat).reshape(1, -1))
    expected = 12 * params.n_joints
    if x.shape != (1, expected):
        raise ValidationError(f"pose feature must be (1, {expected}), got {x.shape}")
    h = ad.relu(x @ params["phi.l0.w"] + params["phi.l0.b"])
    h = ad.relu(h @ params["phi.l1.w"] + params["phi.l1.b"])
    return h @ params["phi.l2.w"] + params["phi.l2.b"]


def _basis_blend(coeffs: Tensor, basis: Tensor, count: int) -> Tensor:
    """Row-wise blend: out[i, :] = sum_j coeffs[i, j] * basis[i, 3j:3j+3].

    coeffs may be (n, count) or a broadcast row (1, count).
    """
    if coeffs.shape[1] != count or basis.shape[1] != 3 * count:
        raise ValidationError(
            f"basis blend: coeffs {coeffs.shape} / basis {basis.shape} "
            f"do not match count {count}")
    spread = coeffs @ _block_expand(count, 3)       # (rows, 3*count)
    return ad.mul(basis, spread) @ _axis_select(count)


def _as_stacked_basis(basis) -> tuple[Tensor, int]:
    if isinstance(basis, Tensor):
        return basis, basis.shape[1] // 3
    basis = list(basis)
    return ad.concat_last_dim(basis), len(basis)


def skeleton_residual(embedding: Tensor, basis) -> Tensor:
    """Coarse offsets: sum_j P_j * B_j, shape (n, 3). basis is the stacked
    (n, 3m) tensor or a list of m (n, 3) tensors."""
    if embedding.shape[0] != 1:
        raise ValidationError(f"embedding must be a row vector, got {embedding.shape}")
    stacked, count = _as_stacked_basis(basis)
    return _basis_blend(embedding, stacked, count)


def graph_transformer_layer(h: Tensor, graph: MeshGraph, params: ModelParams,
                            layer: int, collect_attention: list | None = None) -> Tensor:
    """One gated multi-head attention layer over graph neighborhoods.

    Scores q.(k+e)/sqrt(d) are softmaxed over each receiver's neighbors, the
    aggregated heads are concatenated, gated against a linear residual, then
    layer-normalized and ReLU'd. All heads run in one stacked pipeline.
    """
    cfg = params.config
    n, _ = h.shape
    if n != graph.n_nodes:
        raise ValidationError(f"feature rows {n} != graph nodes {graph.n_nodes}")
    d, heads = cfg.gt_head_width, cfg.gt_heads
    p = f"gt.l{layer}"
    q = h @ params[f"{p}.wq"] + params[f"{p}.bq"]            # (n, C*d)
    k = h @ params[f"{p}.wk"] + params[f"{p}.bk"]
    v = h @ params[f"{p}.wv"] + params[f"{p}.bv"]
    e = graph.edge_tensor @ params[f"{p}.we"] + params[f"{p}.be"]   # (M, C*d)

    ke = ad.gather_rows(k, graph.edge_src) + e
    qg = ad.gather_rows(q, graph.edge_dst)
    scores = ad.mul(ad.mul(qg, ke) @ _block_sum(heads, d), 1.0 / np.sqrt(d))
    slot_scores = ad.gather_rows(scores, graph.slot_edge) + graph.mask_tensor

    att_cols = []
    for c in range(heads):
        col = slot_scores @ _head_column(c, heads)           # (S, 1)
        att = ad.softmax_rows(ad.reshape(col, (n, graph.max_degree)))
        if collect_attention is not None:
            collect_attention.append(att.data.copy())
        att_cols.append(ad.reshape(att, (n * graph.max_degree, 1)))
    att_all = ad.concat_last_dim(att_cols)                   # (S, C)

    ve = ad.gather_rows(v, graph.edge_src) + e
    msg = ad.mul(ad.gather_rows(ve, graph.slot_edge),
                 att_all @ _block_expand(heads, d))
    hhat = ad.segment_sum_rows(msg, graph.slot_node, n)      # (n, C*d)

    r = h @ params[f"{p}.wr"] + params[f"{p}.br"]
    gate_in = ad.concat_last_dim([hhat, r, hhat - r])
    beta = ad.sigmoid(gate_in @ params[f"{p}.wg"])           # (n, 1)
    one = ad.constant(np.ones((n, 1)))
    mix = ad.mul(hhat, one - beta) + ad.mul(r, beta)
    normed = ad.layer_norm_rows(mix, params[f"{p}.ln.scale"],
                                params[f"{p}.ln.shift"])
    return ad.relu(normed)


def mesh_residual(graph: MeshGraph, params: ModelParams,
                  collect_attention: list | None = None) -> Tensor:
    """Wrinkle offsets from the graph stream, shape (n, 3).

    Node positions run through the transformer layers, a shared per-vertex
    MLP produces non-negative blend coefficients, and those weight the rows
    of the trainable wrinkle basis.
    """
    cfg = params.config
    h = graph.node_tensor
    for layer in range(cfg.gt_layers):
        h = graph_transformer_layer(h, graph, params, layer, collect_attention)
    hidden = ad.relu(h @ params["vmlp.l0.w"] + params["vmlp.l0.b"])
    coeffs = ad.relu(hidden @ params["vmlp.l1.w"] + params["vmlp.l1.b"])
    return _basis_blend(coeffs, params["mesh_basis"], cfg.mesh_coeff_size)


# ---------------------------------------------------------------------------
# Weight fusion and skinning

def fuse_weights(initial: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Add the learned residual, clamp negatives, renormalize rows to sum 1.

    Rows whose clamped sum is zero fall back to their initial row; passing a
    zero residual returns the initial weights unchanged.
    """
    initial = np.asarray(initial, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    if initial.shape != residual.shape:
        raise ValidationError(
            f"weights {initial.shape} and residual {residual.shape} differ")
    raw = np.maximum(initial + residual, 0.0)
    sums = raw.sum(axis=1, keepdims=True)
    dead = sums[:, 0] <= 0.0
    out = raw / np.where(sums > 0.0, sums, 1.0)
    out[dead] = initial[dead]
    return out


def fuse_weights_tensor(w_init: np.ndarray, dwc: Tensor) -> Tensor:
    """Differentiable fuse_weights; the all-zero-row fallback is a constant
    branch chosen from current values."""
    init_c = ad.constant(w_init)
    raw = ad.relu(init_c + dwc)
    n_joints = w_init.shape[1]
    row_sum = raw @ ad.constant(np.ones((n_joints, 1)))
    dead = (row_sum.data <= 0.0).astype(np.float64)
    denom = row_sum + ad.constant(dead)
    normalized = ad.div(raw, denom)
    return normalized + ad.mul(init_c, ad.constant(dead))


def lbs_tensor(template: Tensor, pose: Pose, weights: Tensor) -> Tensor:
    """Differentiable linear blend skinning in displacement form; matches
    skinning.lbs_skin. Joint displacements run stacked: one matmul builds
    all per-joint displaced copies, the weight matrix blends them."""
    n, _ = template.shape
    n_joints = len(pose)
    if weights.shape != (n, n_joints):
        raise ValidationError(
            f"weights {weights.shape} do not match ({n}, {n_joints})")
    eye = np.eye(3)
    rot_stack = np.concatenate(
        [(pose.joint_transforms[j, :, :3] - eye).T for j in range(n_joints)],
        axis=1)                                              # (3, 3*J)
    trans_row = pose.joint_transforms[:, :, 3].reshape(1, -1)  # (1, 3*J)
    disp = template @ ad.constant(rot_stack) + ad.constant(trans_row)
    w_spread = weights @ _block_expand(n_joints, 3)          # (n, 3*J)
    return template + ad.mul(disp, w_spread) @ _axis_select(n_joints)


def initial_cloth_weights(asset: RigAsset, binding: np.ndarray) -> np.ndarray:
    """Nearest-body-vertex copy of the body weights unless the rig ships its
    own initial cloth weights."""
    if asset.cloth_weights_init is not None:
        return asset.cloth_weights_init
    return asset.body_weights[np.asarray(binding, dtype=np.int64)]


# ---------------------------------------------------------------------------
# Full forward pass

def forward_tensor(params: ModelParams, graph: MeshGraph, pose: Pose,
                   cloth_template: np.ndarray, w_init: np.ndarray,
                   pose_feat: np.ndarray | None = None, *,
                   use_skeleton_stream: bool = True,
                   use_mesh_stream: bool = True,
                   use_weight_residual: bool = True) -> Tensor:
    """Differentiable prediction of posed cloth vertices, shape (n, 3).

    The stream switches exist for ablations: a disabled stream contributes
    exactly zero offset, and a disabled weight residual skins with the
    initial weights.
    """
    if pose_feat is None:
        pose_feat = pose_to_feature(pose)
    template_c = ad.constant(cloth_template)
    updated = template_c
    if use_skeleton_stream:
        emb = pose_embedding(pose_feat, params)
        updated = updated + skeleton_residual(emb, params["skel_basis"])
    if use_mesh_stream:
        updated = updated + mesh_residual(graph, params)
    if use_weight_residual:
        weights = fuse_weights_tensor(w_init, params["dwc"])
    else:
        weights = ad.constant(w_init)
    return lbs_tensor(updated, pose, weights)


def forward(asset: RigAsset, binding: np.ndarray, pose: Pose,
            params: ModelParams, *,
            use_skeleton_stream: bool = True,
            use_mesh_stream: bool = True,
            use_weight_residual: bool = True) -> Mesh:
    """Predict the deformed cloth mesh for one pose; topology is the cloth
    template's."""
    if params.n_cloth != asset.cloth_mesh.n_vertices:
        raise ValidationError(
            f"model built for {params.n_cloth} cloth vertices, "
            f"asset has {asset.cloth_mesh.n_vertices}")
    if params.n_joints != asset.n_joints:
        raise ValidationError(
            f"model built for {params.n_joints} joints, asset has {asset.n_joints}")
    posed_body = lbs_skin(asset.body_mesh.vertices, pose, asset.body_weights)
    graph = build_mesh_graph(binding, posed_body, asset.cloth_mesh)
    w_init = initial_cloth_weights(asset, binding)
    out = forward_tensor(params, graph, pose, asset.cloth_mesh.vertices, w_init,
                         use_skeleton_stream=use_skeleton_stream,
                         use_mesh_stream=use_mesh_stream,
                         use_weight_residual=use_weight_residual)
    return Mesh(out.data.copy(), asset.cloth_mesh.triangles)
