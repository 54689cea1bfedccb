"""Middlebury ``.flo`` optical-flow files.

Layout: float32 magic 202021.25 ("PIEH"), int32 width, int32 height, then
height*width*2 float32 values, row-major, (dx, dy) interleaved. Little-endian.
"""

import numpy as np

from .errors import IoFailure

MAGIC = np.float32(202021.25)


def write_flo(path, flow):
    """Write a (2, H, W) displacement field."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, H, W), got {flow.shape}")
    _, h, w = flow.shape
    try:
        with open(path, "wb") as fh:
            np.array([MAGIC], dtype="<f4").tofile(fh)
            np.array([w, h], dtype="<i4").tofile(fh)
            np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4").tofile(fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}", path=path) from exc


def read_flo(path):
    """Read a ``.flo`` file into a (2, H, W) float32 array."""
    try:
        with open(path, "rb") as fh:
            magic = np.fromfile(fh, dtype="<f4", count=1)
            if magic.size != 1 or magic[0] != MAGIC:
                raise IoFailure(f"{path}: bad .flo magic", path=path)
            dims = np.fromfile(fh, dtype="<i4", count=2)
            if dims.size != 2 or (dims <= 0).any():
                raise IoFailure(f"{path}: bad .flo header", path=path)
            w, h = int(dims[0]), int(dims[1])
            data = np.fromfile(fh, dtype="<f4", count=h * w * 2)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}", path=path) from exc
    if data.size != h * w * 2:
        raise IoFailure(f"{path}: truncated .flo payload", path=path)
    return data.reshape(h, w, 2).transpose(2, 0, 1).astype(np.float32)
