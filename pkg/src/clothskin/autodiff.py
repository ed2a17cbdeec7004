"""Dense float64 tensors with reverse-mode differentiation, Adam, and
gradient checking.

The compute vocabulary is a small closed set of 2D primitives; the network
and loss are compiled from these plus shape-only reshapes. Every primitive
verifies its output is finite and records an exact vector-Jacobian closure
on an implicit tape ordered by creation.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError

_uid_counter = itertools.count()


class Tensor:
    __slots__ = ("data", "parents", "vjp", "requires_grad", "uid", "op", "grad")

    def __init__(self, data, parents=(), vjp=None, requires_grad=False, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValidationError(f"tensors are 2D, got shape {arr.shape} from op {op!r}")
        self.data = arr
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents)
        self.uid = next(_uid_counter)
        self.op = op
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, grad={self.requires_grad})"

    # numpy-style sugar used sparingly in the network code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() on non-scalar shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; leaves get .grad set."""
        for leaf, g in backward(self).items():
            leaf.grad = g


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, op="param")


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), op="const")


def _check_finite(op: str, arr: np.ndarray) -> None:
    # a single reduction: any NaN/Inf makes the sum non-finite
    if not np.isfinite(arr.sum()):
        if np.isfinite(arr).all():
            raise NumericError(
                f"primitive {op!r} output overflowed during the finite check")
        raise NumericError(f"primitive {op!r} produced a non-finite value")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(x)


def _make(op, data, parents, vjp) -> Tensor:
    _check_finite(op, data)
    return Tensor(data, parents=parents, vjp=vjp, op=op)


def _reduce_to(shape, grad):
    """Sum a gradient over the axes that were broadcast."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ValidationError(f"cannot reduce gradient {grad.shape} to {shape}")
    return out


_BROADCAST_OK = "broadcast operand must be same shape, (n,1), (1,F), or (1,1)"


def _check_broadcast(op, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if (sb[0] in (1, sa[0])) and (sb[1] in (1, sa[1])):
        return
    if (sa[0] in (1, sb[0])) and (sa[1] in (1, sb[1])):
        return
    raise ValidationError(f"{op}: shapes {sa} and {sb} incompatible; {_BROADCAST_OK}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(a.shape, g), _reduce_to(b.shape, g)

    return _make("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(a.shape, g), _reduce_to(b.shape, -g)

    return _make("sub", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    """Scaling primitive: elementwise product with a full-shape, row, column,
    scalar-tensor, or plain-float second operand."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    _check_broadcast("mul", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(a.shape, g * bd), _reduce_to(b.shape, g * ad)

    return _make("mul", out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return (_reduce_to(a.shape, g / bd),
                _reduce_to(b.shape, -g * ad / (bd * bd)))

    return _make("div", out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _make("matmul", out, (a, b), vjp)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _make("relu", out, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make("sigmoid", out, (x,), vjp)


def softmax_rows(x) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _make("softmax_rows", out, (x,), vjp)


def layer_norm_rows(x, scale, shift, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean, unit variance, then apply the
    per-feature affine (scale, shift), both shaped (1, F)."""
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    n, f = x.shape
    if scale.shape != (1, f) or shift.shape != (1, f):
        raise ValidationError(
            f"layer_norm_rows: scale/shift must be (1, {f}), got {scale.shape}/{shift.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * scale.data + shift.data
    scale_d = scale.data

    def vjp(g):
        dxhat = g * scale_d
        term = f * dxhat - dxhat.sum(axis=1, keepdims=True) \
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        dx = inv / f * term
        dscale = (g * xhat).sum(axis=0, keepdims=True)
        dshift = g.sum(axis=0, keepdims=True)
        return dx, dscale, dshift

    return _make("layer_norm_rows", out, (x, scale, shift), vjp)


def concat_last_dim(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValidationError("concat_last_dim needs at least one tensor")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ValidationError("concat_last_dim: row counts differ")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(widths)))

    return _make("concat_last_dim", out, tuple(parts), vjp)


def _scatter_add_rows(idx: np.ndarray, g: np.ndarray, n_rows: int) -> np.ndarray:
    """Deterministic row scatter-add via one flat bincount."""
    cols = g.shape[1]
    flat = (idx[:, None] * cols + np.arange(cols)).ravel()
    return np.bincount(flat, weights=g.ravel(),
                       minlength=n_rows * cols).reshape(n_rows, cols)


def gather_rows(x, indices) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValidationError(
            f"gather_rows: index out of range for {x.shape[0]} rows")
    out = x.data[idx]
    shape = x.shape

    def vjp(g):
        return (_scatter_add_rows(idx, g, shape[0]),)

    return _make("gather_rows", out, (x,), vjp)


def segment_sum_rows(x, segment_ids, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id; ids must be sorted non-decreasing so
    the reduction order is fixed."""
    x = _as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64).reshape(-1)
    if seg.size != x.shape[0]:
        raise ValidationError("segment_sum_rows: one segment id per row required")
    if seg.size:
        if (np.diff(seg) < 0).any():
            raise ValidationError("segment_sum_rows: ids must be sorted non-decreasing")
        if seg[0] < 0 or seg[-1] >= num_segments:
            raise ValidationError("segment_sum_rows: id out of range")
    # uniform blocks (the padded-neighborhood layout) reduce by reshape
    block = seg.size // num_segments if num_segments else 0
    uniform = (block > 0 and seg.size == num_segments * block
               and np.array_equal(seg, np.repeat(np.arange(num_segments), block)))
    if uniform:
        out = x.data.reshape(num_segments, block, x.shape[1]).sum(axis=1)

        def vjp(g):
            return (np.repeat(g, block, axis=0),)
    else:
        out = _scatter_add_rows(seg, x.data, num_segments)

        def vjp(g):
            return (g[seg],)

    return _make("segment_sum_rows", out, (x,), vjp)


def l2_norm_rows(x) -> Tensor:
    x = _as_tensor(x)
    out = np.linalg.norm(x.data, axis=1, keepdims=True)
    xd = x.data

    def vjp(g):
        # subgradient 0 at exactly-zero rows
        safe = np.where(out > 0.0, out, 1.0)
        return (g * xd / safe * (out > 0.0),)

    return _make("l2_norm_rows", out, (x,), vjp)


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    out = np.array([[x.data.mean()]])
    shape = x.shape

    def vjp(g):
        return (np.full(shape, g.reshape(-1)[0] / (shape[0] * shape[1])),)

    return _make("mean_all", out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    """Shape-only view; not a compute primitive."""
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ValidationError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)
    orig = x.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _make("reshape", out, (x,), vjp)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Exact reverse-mode gradients of a scalar w.r.t. every reachable
    requires_grad leaf. Returns {leaf: gradient array}."""
    if loss.data.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    # collect the subgraph that influences the loss and requires gradients
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.uid in nodes or not t.requires_grad:
            continue
        nodes[t.uid] = t
        stack.extend(t.parents)
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for uid in sorted(nodes, reverse=True):
        t = nodes[uid]
        g = grads.pop(uid, None)
        if g is None:
            continue
        if t.vjp is None:
            leaves[t] = g
            continue
        for p, pg in zip(t.parents, t.vjp(g)):
            if not p.requires_grad:
                continue
            if p.uid in grads:
                grads[p.uid] = grads[p.uid] + pg
            else:
                grads[p.uid] = pg
    return leaves


def gradients(loss: Tensor, params) -> list[np.ndarray]:
    """Gradient per listed parameter; parameters the loss never touched get
    zeros."""
    leaf_grads = backward(loss)
    return [leaf_grads.get(p, np.zeros_like(p.data)) for p in params]


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: dict[str, Tensor]) -> "AdamState":
        return AdamState(m={k: np.zeros_like(t.data) for k, t in params.items()},
                         v={k: np.zeros_like(t.data) for k, t in params.items()})


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place. Parameters without an entry
    in grads are left untouched (their moments too)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ValidationError(
                f"adam_step: grad shape {g.shape} != param {name!r} shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# Gradient checking

def finite_diff_check(fn, params, h: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients of the scalar-valued fn() over every element of params.

    fn must rebuild its graph from the parameters' current data on each call.
    The step per element is h * max(1, |value|); the relative error uses
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    if isinstance(params, dict):
        params = list(params.values())
    analytic = gradients(fn(), params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            step = h * max(1.0, abs(orig))
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoint container

CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Versioned container: one JSON header line, then raw little-endian
    float64 blocks in header name order."""
    names = list(tensors.keys())
    header = {
        "version": CHECKPOINT_VERSION,
        "names": names,
        "shapes": [list(np.asarray(tensors[n]).shape) for n in names],
        "dtype": "f64",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            arr = np.ascontiguousarray(np.asarray(tensors[n], dtype="<f8"))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{path}: bad checkpoint header: {exc}") from exc
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"{path}: unsupported checkpoint version {header.get('version')}")
        if header.get("dtype") != "f64":
            raise ValidationError(f"{path}: unsupported dtype {header.get('dtype')}")
        out: dict[str, np.ndarray] = {}
        for name, shape in zip(header["names"], header["shapes"]):
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValidationError(f"{path}: truncated data block for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ValidationError(f"{path}: trailing bytes after last block")
    return out
