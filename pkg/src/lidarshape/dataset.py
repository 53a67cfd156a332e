"""Dataset construction, binary storage, splitting, and loading.

A sample is (partial scan in the Sensor frame, complete cloud in the
Canonical frame, ground-truth pose). Storage is one binary .lsds file per
split (little-endian, float32) plus a plain-text manifest; splits are by
model id so no vehicle appears in both train and val.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fileio import atomic_write
from .geometry import Frame, PlanarPose, PointCloud, transform_cloud, inverse_pose
from .simulator import (SensorConfig, VehicleSpec, VEHICLE_CLASSES,
                        gen_vehicle_mesh, random_placement, scan,
                        uniform_surface_sample)

MAGIC = b"LSDS"
FORMAT_VERSION = 1


@dataclass
class Sample:
    partial: PointCloud
    complete: PointCloud
    gt_pose: PlanarPose
    model_id: int
    view_id: int


@dataclass
class GenConfig:
    """Generation parameters; the manifest stores a full snapshot."""

    models: int = 8
    views: int = 16
    n_complete: int = 1024
    min_points: int = 16
    max_retries: int = 8
    range_min: float = 5.0
    range_max: float = 35.0
    seed: int = 0
    sensor: SensorConfig = field(default_factory=SensorConfig)

    def __post_init__(self):
        if self.models < 1 or self.views < 1:
            raise ValueError("models and views must be >= 1")

    def to_kv(self):
        kv = {
            "gen.models": str(self.models),
            "gen.views": str(self.views),
            "gen.n_complete": str(self.n_complete),
            "gen.min_points": str(self.min_points),
            "gen.max_retries": str(self.max_retries),
            "gen.range_min": repr(self.range_min),
            "gen.range_max": repr(self.range_max),
            "gen.seed": str(self.seed),
        }
        kv.update(self.sensor.to_kv())
        return kv

    @classmethod
    def from_kv(cls, kv):
        base = cls()
        return cls(
            models=int(kv.get("gen.models", base.models)),
            views=int(kv.get("gen.views", base.views)),
            n_complete=int(kv.get("gen.n_complete", base.n_complete)),
            min_points=int(kv.get("gen.min_points", base.min_points)),
            max_retries=int(kv.get("gen.max_retries", base.max_retries)),
            range_min=float(kv.get("gen.range_min", base.range_min)),
            range_max=float(kv.get("gen.range_max", base.range_max)),
            seed=int(kv.get("gen.seed", base.seed)),
            sensor=SensorConfig.from_kv(kv),
        )


@dataclass
class Dataset:
    samples: list
    config_kv: dict
    specs: list
    skipped: list


def _spawn_int_seed(seq):
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _generate_model(cfg, model_id, model_seq):
    vehicle_class = VEHICLE_CLASSES[model_id % len(VEHICLE_CLASSES)]
    spec_seq, complete_seq, *view_seqs = model_seq.spawn(cfg.views + 2)
    spec = VehicleSpec.random(vehicle_class, _spawn_int_seed(spec_seq))
    mesh = gen_vehicle_mesh(spec)
    complete = uniform_surface_sample(mesh, cfg.n_complete,
                                      seed=_spawn_int_seed(complete_seq))
    complete32 = PointCloud(complete.points.astype(np.float32), Frame.CANONICAL)

    samples, skipped = [], []
    for view_id in range(cfg.views):
        rng = np.random.default_rng(view_seqs[view_id])
        partial = None
        pose = None
        for _ in range(cfg.max_retries):
            placement = random_placement(rng, cfg.range_min, cfg.range_max)
            cloud = scan(mesh, placement, cfg.sensor,
                         rng if cfg.sensor.noise_sigma > 0 else None)
            if len(cloud) >= cfg.min_points:
                partial, pose = cloud, placement.pose
                break
        if partial is None:
            skipped.append((model_id, view_id))
            continue
        samples.append(Sample(
            partial=PointCloud(partial.points.astype(np.float32), Frame.SENSOR),
            complete=complete32,
            gt_pose=pose,
            model_id=model_id,
            view_id=view_id,
        ))
    return spec, samples, skipped


def generate(cfg, threads=1):
    """models x views scan/complete/pose triples, deterministic per seed.

    Scans below min_points are redrawn with a fresh placement up to
    max_retries times, then skipped (and reported in the manifest).
    """
    root = np.random.SeedSequence(cfg.seed)
    model_seqs = root.spawn(cfg.models)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda i: _generate_model(cfg, i, model_seqs[i]), range(cfg.models)))
    else:
        results = [_generate_model(cfg, i, model_seqs[i]) for i in range(cfg.models)]

    samples, specs, skipped = [], [], []
    for spec, model_samples, model_skipped in results:
        specs.append(spec)
        samples.extend(model_samples)
        skipped.extend(model_skipped)
    if not samples:
        raise RuntimeError("dataset generation produced zero usable samples")
    kv = dict(cfg.to_kv())
    kv["kernels.backend"] = kernels.backend_name()
    return Dataset(samples, kv, specs, skipped)


def split(samples, holdout_models, seed=0):
    """Hold out whole vehicle models for validation.

    Returns (train, val, held_out_ids); train and val share no model id.
    """
    model_ids = sorted({s.model_id for s in samples})
    if holdout_models >= len(model_ids):
        raise ValueError(
            f"holdout {holdout_models} must be below the model count {len(model_ids)}")
    rng = np.random.default_rng(seed)
    held = set(rng.choice(model_ids, size=holdout_models, replace=False).tolist())
    train = [s for s in samples if s.model_id not in held]
    val = [s for s in samples if s.model_id in held]
    return train, val, sorted(held)


def canonicalize(partial, pose):
    """Partial cloud mapped into the Canonical frame by the inverse pose."""
    if len(partial) == 0:
        raise ValueError("empty cloud")
    return transform_cloud(partial, inverse_pose(pose), out_frame=Frame.CANONICAL)


def resample_to(cloud, n, seed=0):
    """Exactly n points: subsample without replacement when possible,
    otherwise sample with replacement. Deterministic per seed."""
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=n, replace=len(cloud) < n)
    return PointCloud(cloud.points[idx], cloud.frame)


# ---------------------------------------------------------------------------
# binary split files + manifest


def write_lsds(path, samples):
    """Write one split file; returns the byte offset of each record."""
    offsets = []
    with atomic_write(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(samples)))
        pos = len(MAGIC) + 8
        for s in samples:
            offsets.append(pos)
            partial = np.ascontiguousarray(s.partial.points, dtype="<f4")
            complete = np.ascontiguousarray(s.complete.points, dtype="<f4")
            pose = np.array([s.gt_pose.yaw, s.gt_pose.tx, s.gt_pose.ty, s.gt_pose.tz],
                            dtype="<f4")
            header = struct.pack("<IIII", s.model_id, s.view_id,
                                 len(partial), len(complete))
            f.write(header)
            f.write(partial.tobytes())
            f.write(complete.tobytes())
            f.write(pose.tobytes())
            pos += len(header) + partial.nbytes + complete.nbytes + pose.nbytes
    return offsets


def read_lsds(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic, not an .lsds file")
        version, count = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        samples = []
        for _ in range(count):
            model_id, view_id, n_partial, n_complete = struct.unpack("<IIII", f.read(16))
            partial = np.frombuffer(f.read(n_partial * 12), dtype="<f4").reshape(-1, 3)
            complete = np.frombuffer(f.read(n_complete * 12), dtype="<f4").reshape(-1, 3)
            yaw, tx, ty, tz = np.frombuffer(f.read(16), dtype="<f4")
            samples.append(Sample(
                partial=PointCloud(partial.copy(), Frame.SENSOR),
                complete=PointCloud(complete.copy(), Frame.CANONICAL),
                gt_pose=PlanarPose(float(yaw), float(tx), float(ty), float(tz)),
                model_id=int(model_id),
                view_id=int(view_id),
            ))
    return samples


def write_split_dir(out_dir, dataset, holdout_models, seed=0):
    """Split and persist a dataset: train.lsds, val.lsds, manifest.txt."""
    import os

    train, val, held = split(dataset.samples, holdout_models, seed)
    os.makedirs(out_dir, exist_ok=True)
    train_offsets = write_lsds(os.path.join(out_dir, "train.lsds"), train)
    val_offsets = write_lsds(os.path.join(out_dir, "val.lsds"), val)

    with atomic_write(os.path.join(out_dir, "manifest.txt")) as f:
        f.write(f"format_version={FORMAT_VERSION}\n")
        for key, value in dataset.config_kv.items():
            f.write(f"{key}={value}\n")
        f.write(f"split.seed={seed}\n")
        f.write(f"split.holdout_models={holdout_models}\n")
        f.write(f"split.val_model_ids={','.join(str(i) for i in held)}\n")
        f.write(f"split.train_count={len(train)}\n")
        f.write(f"split.val_count={len(val)}\n")
        for model_id, view_id in dataset.skipped:
            f.write(f"skipped={model_id}/{view_id}\n")
        f.write("[samples]\n")
        for name, records, offsets in (("train", train, train_offsets),
                                       ("val", val, val_offsets)):
            for s, off in zip(records, offsets):
                f.write(f"{name} {s.model_id} {s.view_id} {name}.lsds {off}\n")
    return train, val


def load_split_dir(data_dir):
    """(train samples, val samples, manifest kv) from a gen-dataset output."""
    import os

    kv = {}
    with open(os.path.join(data_dir, "manifest.txt")) as f:
        for line in f:
            line = line.strip()
            if line == "[samples]":
                break
            if "=" in line:
                key, value = line.split("=", 1)
                kv.setdefault(key, value)
    train = read_lsds(os.path.join(data_dir, "train.lsds"))
    val = read_lsds(os.path.join(data_dir, "val.lsds"))
    return train, val, kv
