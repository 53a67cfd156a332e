"""Point-cloud completion and pose networks.

Two architectures over the same building blocks:
  - shared: one encoder whose 1024-dim code feeds both the shape decoder
    and the pose decoder; the completion stays in the input's frame.
  - baseline: a pose branch (own encoder + pose decoder) whose estimate is
    used to canonicalize the input before a second encoder + shape decoder
    complete it; the completion is re-posed into the input frame on return.

Encoder: per-point MLP 3-128-256, max-pool to a 256 global feature,
broadcast-concat back to 512 per point, MLP 512-512-1024, max-pool to the
1024 code. Shape decoder: coarse MLP 1024-1024-1024-(3*n_coarse), then a
folding MLP (1024+3+2)-512-512-3 over a u*u grid patch per coarse point.
Pose decoder: MLP 1024-512-512-3 producing raw (theta, x, y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, add, add_bias, concat_cols, matmul,
                       reduce_max_rows, relu, repeat_row, repeat_rows,
                       reshape)
from .geometry import Frame, PlanarPose, PointCloud, inverse_pose, transform_points

ENCODER_LAYERS = ((3, 128), (128, 256), (512, 512), (512, 1024))
POSE_LAYERS = ((1024, 512), (512, 512), (512, 3))
CODE_SIZE = 1024

_encode_calls = 0


@dataclass(frozen=True)
class NetConfig:
    """Completion-size knobs; layer widths are fixed by the architecture."""

    n_coarse: int = 64
    grid_size: int = 4
    grid_span: float = 0.05

    @property
    def n_fine(self):
        return self.n_coarse * self.grid_size ** 2

    def coarse_layers(self):
        return ((CODE_SIZE, 1024), (1024, 1024), (1024, 3 * self.n_coarse))

    def folding_layers(self):
        return ((CODE_SIZE + 3 + 2, 512), (512, 512), (512, 3))

    def folding_grid(self):
        """(grid_size^2, 2) uv offsets spanning [-span, span]^2."""
        lin = np.linspace(-self.grid_span, self.grid_span, self.grid_size)
        u, v = np.meshgrid(lin, lin, indexing="ij")
        return np.stack([u.ravel(), v.ravel()], axis=1)


@dataclass
class ModelParams:
    """Named parameter arrays for one architecture ("shared" or "baseline")."""

    arch: str
    net: NetConfig
    tensors: dict = field(default_factory=dict)

    def parameter_count(self):
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self):
        return ModelParams(self.arch, self.net,
                           {k: v.copy() for k, v in self.tensors.items()})

    def encoder_prefixes(self):
        if self.arch == "shared":
            return ("encoder",)
        return ("pose_encoder", "shape_encoder")


def _init_mlp(tensors, prefix, layers, rng, dtype):
    # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases
    for i, (fan_in, fan_out) in enumerate(layers, start=1):
        bound = 1.0 / np.sqrt(fan_in)
        tensors[f"{prefix}.w{i}"] = rng.uniform(
            -bound, bound, size=(fan_in, fan_out)).astype(dtype)
        tensors[f"{prefix}.b{i}"] = rng.uniform(
            -bound, bound, size=(fan_out,)).astype(dtype)


def init_model(arch, net=None, seed=0, dtype=np.float32):
    """Deterministically initialized ModelParams for either architecture."""
    if arch not in ("shared", "baseline"):
        raise ValueError(f"unknown architecture {arch!r}")
    net = net or NetConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    encoders = ("encoder",) if arch == "shared" else ("pose_encoder", "shape_encoder")
    for prefix in encoders:
        _init_mlp(tensors, prefix, ENCODER_LAYERS, rng, dtype)
    _init_mlp(tensors, "shape.coarse", net.coarse_layers(), rng, dtype)
    _init_mlp(tensors, "shape.fold", net.folding_layers(), rng, dtype)
    _init_mlp(tensors, "pose", POSE_LAYERS, rng, dtype)
    tensors["uncertainty.s_cd"] = np.zeros((), dtype=dtype)
    tensors["uncertainty.s_p"] = np.zeros((), dtype=dtype)
    return ModelParams(arch, net, tensors)


class Binding:
    """Leaf Tensors for a model's parameters on one tape (or none).

    Each parameter is wrapped at most once per binding so gradients
    accumulate onto a single node id per name.
    """

    def __init__(self, model, tape=None):
        self.model = model
        self.tape = tape
        self._leaves = {}

    def __getitem__(self, name):
        leaf = self._leaves.get(name)
        if leaf is None:
            leaf = Tensor(self.model.tensors[name], tape=self.tape)
            self._leaves[name] = leaf
        return leaf

    def named_grads(self, grads):
        """Map a Tape.backward result onto parameter names."""
        out = {}
        for name, leaf in self._leaves.items():
            g = grads.get(leaf.nid)
            if g is not None:
                out[name] = g
        return out


def _mlp(x, binding, prefix, n_layers, final_linear=True):
    for i in range(1, n_layers + 1):
        x = add_bias(matmul(x, binding[f"{prefix}.w{i}"]), binding[f"{prefix}.b{i}"])
        if i < n_layers or not final_linear:
            x = relu(x)
    return x


def encode(points, binding, prefix="encoder"):
    """Permutation-invariant 1024-dim code for an (n,3) cloud."""
    global _encode_calls
    _encode_calls += 1
    pts = points if isinstance(points, Tensor) else Tensor(points)
    if pts.data.ndim != 2 or pts.data.shape[1] != 3 or len(pts.data) == 0:
        raise ValueError("empty cloud" if len(pts.data) == 0 else
                         f"encode: expected (n,3), got {pts.data.shape}")
    n = pts.data.shape[0]
    feat = add_bias(matmul(relu(add_bias(matmul(pts, binding[f"{prefix}.w1"]),
                                         binding[f"{prefix}.b1"])),
                           binding[f"{prefix}.w2"]), binding[f"{prefix}.b2"])
    pooled = reduce_max_rows(feat)
    both = concat_cols(repeat_row(pooled, n), feat)
    h = add_bias(matmul(relu(add_bias(matmul(both, binding[f"{prefix}.w3"]),
                                      binding[f"{prefix}.b3"])),
                        binding[f"{prefix}.w4"]), binding[f"{prefix}.b4"])
    return reduce_max_rows(h)


def encode_call_count():
    return _encode_calls


def reset_encode_call_count():
    global _encode_calls
    _encode_calls = 0


def decode_shape(code, binding, net):
    """(coarse (n_coarse,3), fine (n_fine,3)) completions from a code."""
    if code.data.shape != (CODE_SIZE,):
        raise ValueError(f"decode_shape: code must be ({CODE_SIZE},), got {code.data.shape}")
    flat = _mlp(reshape(code, (1, CODE_SIZE)), binding, "shape.coarse", 3)
    coarse = reshape(flat, (net.n_coarse, 3))

    k = net.grid_size ** 2
    anchors = repeat_rows(coarse, k)
    codes = repeat_row(code, net.n_fine)
    grid = Tensor(np.tile(net.folding_grid(), (net.n_coarse, 1)).astype(code.data.dtype))
    offsets = _mlp(concat_cols(codes, anchors, grid), binding, "shape.fold", 3)
    return coarse, add(offsets, anchors)


def decode_pose(code, binding):
    """Raw (theta, x, y) pose regression from a code; no yaw wrapping here."""
    if code.data.shape != (CODE_SIZE,):
        raise ValueError(f"decode_pose: code must be ({CODE_SIZE},), got {code.data.shape}")
    return reshape(_mlp(reshape(code, (1, CODE_SIZE)), binding, "pose", 3), (3,))


def pose_from_raw(raw, tz=0.0):
    """Clamp a raw (theta, x, y) regression into a PlanarPose (yaw wrapped)."""
    arr = raw.data if isinstance(raw, Tensor) else np.asarray(raw)
    return PlanarPose(float(arr[0]), float(arr[1]), float(arr[2]), tz)


def shared_forward(partial, model, tape=None):
    """Single-encoding forward: (pose, completion in the input's frame)."""
    if model.arch != "shared":
        raise ValueError(f"shared_forward needs a shared model, got {model.arch!r}")
    binding = Binding(model, tape)
    code = encode(partial.points, binding)
    raw = decode_pose(code, binding)
    _, fine = decode_shape(code, binding, model.net)
    return pose_from_raw(raw), PointCloud(np.asarray(fine.data, dtype=np.float64),
                                          partial.frame)


def baseline_forward(partial, model, tape=None):
    """Sequential forward: estimate pose, canonicalize, complete, re-pose.

    The completion returned is in the same frame as the input so the two
    architectures are directly comparable.
    """
    if model.arch != "baseline":
        raise ValueError(f"baseline_forward needs a baseline model, got {model.arch!r}")
    binding = Binding(model, tape)
    raw = decode_pose(encode(partial.points, binding, "pose_encoder"), binding)
    est = pose_from_raw(raw)
    canonicalized = transform_points(partial.points, inverse_pose(est))
    code = encode(canonicalized.astype(partial.points.dtype), binding, "shape_encoder")
    _, fine = decode_shape(code, binding, model.net)
    completed = transform_points(np.asarray(fine.data, dtype=np.float64), est)
    return est, PointCloud(completed, partial.frame)
