"""File formats: ASCII PLY point clouds, OBJ meshes, key=value configs.

All writers go through atomic_write so a failed command never leaves a
partial output file behind.
"""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager

import numpy as np

from .geometry import Frame, PointCloud, TriMesh


@contextmanager
def atomic_write(path, mode="w"):
    """Write to a temp file in the target directory, rename on success."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_ply(cloud, path):
    """ASCII PLY with float x/y/z vertex properties."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    with atomic_write(path) as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for x, y, z in pts:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path, frame=Frame.SENSOR):
    """Read an ASCII PLY; only the first three vertex floats are used."""
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertices = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated PLY header")
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "format" and tokens[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tokens[0] == "element" and tokens[1] == "vertex":
                n_vertices = int(tokens[2])
            if tokens[0] == "end_header":
                break
        if n_vertices is None:
            raise ValueError(f"{path}: no vertex element in header")
        pts = np.empty((n_vertices, 3))
        for i in range(n_vertices):
            tokens = f.readline().split()
            pts[i] = [float(tokens[0]), float(tokens[1]), float(tokens[2])]
    return PointCloud(pts, frame)


def write_obj(mesh, path):
    """OBJ with v/f records only (triangles, 1-based indices)."""
    with atomic_write(path) as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            f.write(f"f {a} {b} {c}\n")


def read_obj(path):
    """Read v/f records from an OBJ file; polygon faces are fan-triangulated."""
    verts, tris = [], []
    with open(path) as f:
        for line in f:
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "v":
                verts.append([float(tokens[1]), float(tokens[2]), float(tokens[3])])
            elif tokens[0] == "f":
                idx = [_obj_index(tok, len(verts)) for tok in tokens[1:]]
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not tris:
        raise ValueError(f"{path}: no v/f records found")
    return TriMesh(np.array(verts), np.array(tris))


def _obj_index(token, n_seen):
    raw = int(token.split("/")[0])
    return raw - 1 if raw > 0 else n_seen + raw


def save_kv(path, mapping):
    """Plain-text key=value file, one pair per line, keys in given order."""
    with atomic_write(path) as f:
        for key, value in mapping.items():
            f.write(f"{key}={value}\n")


def load_kv(path):
    """Parse a key=value file; '#' starts a comment, blank lines ignored."""
    out = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed line {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def format_kv(mapping):
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def parse_kv_text(text):
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
