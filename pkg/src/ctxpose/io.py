"""Binary file formats: volume files and parameter containers.

Both formats are a single JSON header line (terminated by "\\n") followed by
a flat blob of little-endian 32-bit floats. Headers are serialized with
sorted keys and compact separators so identical content is byte-identical.

Volume file header: {"channels", "dims", "n_joints", "origin", "spacing"};
the blob holds n_joints * channels * |grid| values in C order with the
voxel axis innermost (flat x-major voxel index, see grid layout contract).

Container header: {"meta": {...}, "arrays": [{"key", "shape"}, ...]}; the
blob is the concatenation of the arrays in listed (key-sorted) order.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ShapeMismatch
from .grid import VoxelGrid

_F32 = np.dtype("<f4")


def _dump_header(doc: dict) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode()


def write_volume(path, grid: VoxelGrid, values: np.ndarray) -> None:
    """Write a per-joint volume file.

    `values` is (N, V) for single-channel fields or (N, V, C) for feature
    volumes; V must match the grid. Values are stored as float32.
    """
    values = np.asarray(values)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3 or values.shape[1] != grid.n_voxels:
        raise ShapeMismatch(
            f"expected (N, {grid.n_voxels}[, C]) values, got {values.shape}"
        )
    n, _, c = values.shape
    header = _dump_header(
        {
            "channels": c,
            "dims": list(grid.dims),
            "n_joints": n,
            "origin": list(grid.origin),
            "spacing": list(grid.spacing),
        }
    )
    blob = np.ascontiguousarray(values.transpose(0, 2, 1), dtype=_F32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(blob.tobytes())


def read_volume(path) -> tuple[VoxelGrid, np.ndarray]:
    """Read a volume file; returns (grid, values) with values shaped (N, V, C)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    grid = VoxelGrid(
        dims=tuple(header["dims"]),
        origin=tuple(header["origin"]),
        spacing=tuple(header["spacing"]),
    )
    n, c = int(header["n_joints"]), int(header["channels"])
    count = n * c * grid.n_voxels
    if len(blob) < count * 4:
        raise ShapeMismatch(
            f"volume blob holds {len(blob) // 4} floats, expected {count}"
        )
    flat = np.frombuffer(blob, dtype=_F32, count=count)
    values = flat.reshape(n, c, grid.n_voxels).transpose(0, 2, 1)
    return grid, values.astype(np.float64)


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a parameter/checkpoint container (float32 blobs, sorted keys)."""
    keys = sorted(arrays)
    header = _dump_header(
        {
            "arrays": [{"key": k, "shape": list(np.shape(arrays[k]))} for k in keys],
            "meta": meta,
        }
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for k in keys:
            fh.write(np.ascontiguousarray(arrays[k], dtype=_F32).tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; arrays come back as float64 (storage is float32)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    arrays = {}
    offset = 0
    for rec in header["arrays"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if len(blob) < offset + count * 4:
            raise ShapeMismatch(f"container blob truncated at array {rec['key']!r}")
        flat = np.frombuffer(blob, dtype=_F32, count=count, offset=offset)
        arrays[rec["key"]] = flat.reshape(shape).astype(np.float64)
        offset += count * 4
    return header["meta"], arrays
