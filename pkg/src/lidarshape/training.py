"""Staged training: shape, frozen-encoder pose, joint fine-tuning, and the
baseline's two independent branches; plus checkpointing and selection.

Stage semantics:
  - shape: encoder + shape decoder on unaligned partials, chamfer loss
    against the complete cloud posed into the sensor frame.
  - pose_frozen: pose decoder only, trained on codes from the frozen
    encoder (codes are cached once; the encoder never changes).
  - joint: everything unfrozen, uncertainty-weighted combined loss; the
    two log-variances are optimized only here.
  - baseline_pose / baseline_shape: the baseline's branches, trained
    independently (pose on raw partials, shape on gt-canonicalized ones).

Each epoch ends with a validation pass (tape off); the best-validation
parameter snapshot is what a stage returns.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, add, scale
from .dataset import canonicalize, resample_to
from .fileio import atomic_write, format_kv, parse_kv_text
from .geometry import Frame, PlanarPose, PointCloud, transform_points
from .losses import chamfer, joint_loss, pose_loss
from .networks import (Binding, ModelParams, NetConfig, decode_pose,
                       decode_shape, encode, init_model)

CHECKPOINT_MAGIC = b"LSCK"
CHECKPOINT_VERSION = 1


class Stage(str, Enum):
    SHAPE = "shape"
    POSE_FROZEN = "pose_frozen"
    JOINT = "joint"
    BASELINE_POSE = "baseline_pose"
    BASELINE_SHAPE = "baseline_shape"


_TRAINABLE = {
    Stage.SHAPE: ("encoder.", "shape."),
    Stage.POSE_FROZEN: ("pose.",),
    Stage.JOINT: ("encoder.", "shape.", "pose.", "uncertainty."),
    Stage.BASELINE_POSE: ("pose_encoder.", "pose."),
    Stage.BASELINE_SHAPE: ("shape_encoder.", "shape."),
}

_STAGE_ARCH = {
    Stage.SHAPE: "shared",
    Stage.POSE_FROZEN: "shared",
    Stage.JOINT: "shared",
    Stage.BASELINE_POSE: "baseline",
    Stage.BASELINE_SHAPE: "baseline",
}

PROTOCOLS = {
    "baseline": (Stage.BASELINE_POSE, Stage.BASELINE_SHAPE),
    "shared": (Stage.SHAPE, Stage.POSE_FROZEN),
    "joint_se": (Stage.SHAPE, Stage.POSE_FROZEN, Stage.JOINT),
}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 200
    seed: int = 0
    n_input: int = 256

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def to_kv(self):
        return {
            "train.lr": repr(self.lr),
            "train.batch_size": str(self.batch_size),
            "train.epochs": str(self.epochs),
            "train.seed": str(self.seed),
            "train.n_input": str(self.n_input),
        }


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, stage, epoch, step, batch_ids):
        self.stage, self.epoch, self.step, self.batch_ids = stage, epoch, step, batch_ids
        super().__init__(
            f"non-finite loss in stage {stage} at epoch {epoch}, step {step}, "
            f"batch {batch_ids}")


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState | None
    stage: str
    stages: tuple
    epoch: int
    best_val: float
    config: dict
    history: list = field(default_factory=list, repr=False)


@dataclass
class _Prepared:
    """Per-sample arrays precomputed once per stage (float32)."""

    partial: np.ndarray
    partial_canonical: np.ndarray
    complete: np.ndarray
    complete_sensor: np.ndarray
    gt_pose: PlanarPose
    model_id: int
    view_id: int


def prepare_samples(samples, cfg):
    """Resample partials to the network input size and precompute the
    frame-shifted ground truths. The resampling is a deterministic
    function of (seed, model_id, view_id), so it is stable across stages."""
    out = []
    for s in samples:
        rs = resample_to(s.partial, cfg.n_input,
                         seed=[cfg.seed, s.model_id, s.view_id])
        canonical = canonicalize(rs, s.gt_pose)
        sensor = transform_points(s.complete.points, s.gt_pose)
        out.append(_Prepared(
            partial=rs.points.astype(np.float32),
            partial_canonical=canonical.points.astype(np.float32),
            complete=s.complete.points.astype(np.float32),
            complete_sensor=sensor.astype(np.float32),
            gt_pose=s.gt_pose,
            model_id=s.model_id,
            view_id=s.view_id,
        ))
    return out


def _frozen_codes(prepared, model, prefix="encoder"):
    binding = Binding(model)
    return [encode(p.partial, binding, prefix).data for p in prepared]


def _batch_loss(stage, batch, binding, net, codes=None):
    """Scalar training loss for one batch on the binding's tape."""
    cd_sum = pl_sum = None
    for item, code_data in zip(batch, codes or [None] * len(batch)):
        if stage is Stage.SHAPE:
            code = encode(item.partial, binding)
            _, fine = decode_shape(code, binding, net)
            term = chamfer(fine, item.complete_sensor)
            cd_sum = term if cd_sum is None else add(cd_sum, term)
        elif stage is Stage.POSE_FROZEN:
            raw = decode_pose(Tensor(code_data), binding)
            term = pose_loss(item.gt_pose, raw, item.complete)
            pl_sum = term if pl_sum is None else add(pl_sum, term)
        elif stage is Stage.BASELINE_POSE:
            code = encode(item.partial, binding, "pose_encoder")
            raw = decode_pose(code, binding)
            term = pose_loss(item.gt_pose, raw, item.complete)
            pl_sum = term if pl_sum is None else add(pl_sum, term)
        elif stage is Stage.BASELINE_SHAPE:
            code = encode(item.partial_canonical, binding, "shape_encoder")
            _, fine = decode_shape(code, binding, net)
            term = chamfer(fine, item.complete)
            cd_sum = term if cd_sum is None else add(cd_sum, term)
        elif stage is Stage.JOINT:
            code = encode(item.partial, binding)
            raw = decode_pose(code, binding)
            _, fine = decode_shape(code, binding, net)
            cd = chamfer(fine, item.complete_sensor)
            pl = pose_loss(item.gt_pose, raw, item.complete)
            cd_sum = cd if cd_sum is None else add(cd_sum, cd)
            pl_sum = pl if pl_sum is None else add(pl_sum, pl)
        else:
            raise ValueError(f"unknown stage {stage}")
    inv = 1.0 / len(batch)
    if stage is Stage.JOINT:
        return joint_loss(scale(cd_sum, inv), scale(pl_sum, inv),
                          binding["uncertainty.s_cd"], binding["uncertainty.s_p"])
    return scale(cd_sum if cd_sum is not None else pl_sum, inv)


def _validation_loss(stage, prepared, model, codes=None):
    """Stage-matched validation metric, computed with recording disabled."""
    binding = Binding(model)
    total = 0.0
    for i, item in enumerate(prepared):
        loss = _batch_loss(stage, [item], binding, model.net,
                           [codes[i]] if codes is not None else None)
        total += float(loss.data)
    return total / len(prepared)


def train_stage(stage, model, train_samples, val_samples, cfg, log=None,
                prior_stages=()):
    """Optimize one stage; returns the best-validation Checkpoint.

    The input model is not mutated. Frozen parameters (anything outside
    the stage's trainable prefixes) are bitwise untouched. Raises
    TrainingDiverged on a non-finite loss.
    """
    stage = Stage(stage)
    if model.arch != _STAGE_ARCH[stage]:
        raise ValueError(
            f"stage {stage.value} needs a {_STAGE_ARCH[stage]} model, got {model.arch}")
    if not train_samples or not val_samples:
        raise ValueError("training and validation splits must be non-empty")

    work = model.copy()
    prefixes = _TRAINABLE[stage]
    trainable = {name: arr for name, arr in work.tensors.items()
                 if name.startswith(prefixes)}
    adam = AdamState(trainable, lr=cfg.lr)

    train_prep = prepare_samples(train_samples, cfg)
    val_prep = prepare_samples(val_samples, cfg)
    codes = codes_val = None
    if stage is Stage.POSE_FROZEN:
        codes = _frozen_codes(train_prep, work)
        codes_val = _frozen_codes(val_prep, work)

    batch = min(cfg.batch_size, len(train_prep))
    steps = len(train_prep) // batch
    best = None
    history = []

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_prep))
        epoch_losses = []
        for step in range(steps):
            take = order[step * batch:(step + 1) * batch]
            items = [train_prep[i] for i in take]
            step_codes = [codes[i] for i in take] if codes is not None else None
            tape = Tape()
            binding = Binding(work, tape)
            try:
                loss = _batch_loss(stage, items, work, binding, work.net, step_codes)
            except FloatingPointError:
                raise TrainingDiverged(stage.value, epoch, step,
                                       [(i.model_id, i.view_id) for i in items])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(stage.value, epoch, step,
                                       [(i.model_id, i.view_id) for i in items])
            grads = binding.named_grads(tape.backward(loss))
            adam_step(trainable, grads, adam)
            epoch_losses.append(value)

        val = _validation_loss(stage, val_prep, work, codes_val)
        train_loss = float(np.mean(epoch_losses))
        wall_ms = (time.perf_counter() - started) * 1000.0
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val})
        if log is not None:
            log.write(f"{epoch},{stage.value},{train_loss!r},{val!r},"
                      f"{float(work.tensors['uncertainty.s_cd'])!r},"
                      f"{float(work.tensors['uncertainty.s_p'])!r},{wall_ms:.1f}\n")
        if best is None or val < best.best_val:
            best = Checkpoint(
                params=work.copy(),
                adam=_copy_adam(adam),
                stage=stage.value,
                stages=tuple(prior_stages) + (stage.value,),
                epoch=epoch,
                best_val=val,
                config=_config_kv(work, cfg),
            )
    best.history = history
    return best


def _copy_adam(state):
    clone = AdamState({}, lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                      eps=state.eps)
    clone.step = state.step
    clone.m = {k: v.copy() for k, v in state.m.items()}
    clone.v = {k: v.copy() for k, v in state.v.items()}
    return clone


def _config_kv(model, cfg):
    kv = {"arch": model.arch,
          "net.n_coarse": str(model.net.n_coarse),
          "net.grid_size": str(model.net.grid_size),
          "net.grid_span": repr(model.net.grid_span)}
    kv.update(cfg.to_kv())
    return kv


def run_protocol(arch, train_samples, val_samples, cfg, log=None, start=None):
    """Train one architecture end to end.

    arch: "baseline" (pose branch then shape branch, independent),
    "shared" (shape stage then frozen-encoder pose stage), or "joint_se"
    (the shared protocol followed by joint fine-tuning). `start` warm-
    starts from a prior checkpoint (e.g. joint_se from a shared one).
    """
    if arch not in PROTOCOLS:
        raise ValueError(f"unknown protocol {arch!r}")
    model_arch = "baseline" if arch == "baseline" else "shared"
    stages = list(PROTOCOLS[arch])
    done = ()
    if start is not None:
        model = start.params.copy()
        done = tuple(start.stages)
        stages = [s for s in stages if s.value not in done]
    else:
        model = init_model(model_arch, seed=cfg.seed)

    ckpt = start
    for stage in stages:
        ckpt = train_stage(stage, model, train_samples, val_samples, cfg,
                           log=log, prior_stages=done)
        model = ckpt.params
        done = ckpt.stages
    return ckpt


# ---------------------------------------------------------------------------
# checkpoint files


def _write_tensor(f, name, arr):
    import struct

    encoded = name.encode()
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<I", dim))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(f):
    import struct

    (name_len,) = struct.unpack("<H", f.read(2))
    name = f.read(name_len).decode()
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape).copy()
    return name, data


def save_checkpoint(path, ckpt):
    """LSCK: magic, version, config text, named float32 tensors, moments."""
    import struct

    kv = dict(ckpt.config)
    kv["stage"] = ckpt.stage
    kv["stages"] = ",".join(ckpt.stages)
    kv["epoch"] = str(ckpt.epoch)
    kv["best_val"] = repr(ckpt.best_val)
    if ckpt.adam is not None:
        kv["adam.step"] = str(ckpt.adam.step)
        kv["adam.lr"] = repr(ckpt.adam.lr)
    config_text = format_kv(kv).encode()

    with atomic_write(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(config_text)))
        f.write(config_text)
        f.write(struct.pack("<I", len(ckpt.params.tensors)))
        for name, arr in ckpt.params.tensors.items():
            _write_tensor(f, name, arr)
        moments = {}
        if ckpt.adam is not None:
            moments.update({f"m.{k}": v for k, v in ckpt.adam.m.items()})
            moments.update({f"v.{k}": v for k, v in ckpt.adam.v.items()})
        f.write(struct.pack("<I", len(moments)))
        for name, arr in moments.items():
            _write_tensor(f, name, arr)


def load_checkpoint(path):
    import struct

    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", f.read(4))
        kv = parse_kv_text(f.read(config_len).decode())
        (n_params,) = struct.unpack("<I", f.read(4))
        tensors = dict(_read_tensor(f) for _ in range(n_params))
        (n_moments,) = struct.unpack("<I", f.read(4))
        moments = dict(_read_tensor(f) for _ in range(n_moments))

    net = NetConfig(n_coarse=int(kv["net.n_coarse"]),
                    grid_size=int(kv["net.grid_size"]),
                    grid_span=float(kv["net.grid_span"]))
    params = ModelParams(kv["arch"], net, tensors)
    adam = None
    if "adam.step" in kv:
        adam = AdamState({}, lr=float(kv["adam.lr"]))
        adam.step = int(kv["adam.step"])
        adam.m = {k[2:]: v for k, v in moments.items() if k.startswith("m.")}
        adam.v = {k[2:]: v for k, v in moments.items() if k.startswith("v.")}
    return Checkpoint(
        params=params,
        adam=adam,
        stage=kv["stage"],
        stages=tuple(kv["stages"].split(",")) if kv["stages"] else (),
        epoch=int(kv["epoch"]),
        best_val=float(kv["best_val"]),
        config=kv,
    )


LOG_HEADER = "epoch,stage,train_loss,val_loss,s_cd,s_p,wall_ms\n"
