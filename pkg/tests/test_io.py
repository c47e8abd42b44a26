import json

import numpy as np
import pytest

from ctxpose.errors import ShapeMismatch
from ctxpose.grid import VoxelGrid
from ctxpose.io import read_container, read_volume, write_container, write_volume


def test_volume_roundtrip(tmp_path):
    grid = VoxelGrid((2, 3, 2), (1.5, -2.0, 7.0), (10, 20, 30))
    rng = np.random.default_rng(0)
    values = rng.normal(size=(4, grid.n_voxels, 3)).astype(np.float32).astype(np.float64)
    path = tmp_path / "v.vol"
    write_volume(path, grid, values)
    grid2, values2 = read_volume(path)
    assert grid2 == grid
    np.testing.assert_array_equal(values2, values)


def test_volume_single_channel(tmp_path):
    grid = VoxelGrid((2, 2, 2), (0, 0, 0), (1, 1, 1))
    values = np.arange(16, dtype=np.float64).reshape(2, 8)
    path = tmp_path / "v.vol"
    write_volume(path, grid, values)
    _, out = read_volume(path)
    assert out.shape == (2, 8, 1)
    np.testing.assert_array_equal(out[:, :, 0], values)


def test_volume_header_is_one_json_line(tmp_path):
    grid = VoxelGrid((1, 1, 2), (0, 0, 0), (5, 5, 5))
    path = tmp_path / "v.vol"
    write_volume(path, grid, np.zeros((1, 2)))
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    assert header["dims"] == [1, 1, 2]
    assert header["channels"] == 1
    assert header["n_joints"] == 1
    assert len(blob) == 2 * 4  # little-endian float32


def test_volume_shape_validation(tmp_path):
    grid = VoxelGrid((2, 2, 2), (0, 0, 0), (1, 1, 1))
    with pytest.raises(ShapeMismatch):
        write_volume(tmp_path / "bad.vol", grid, np.zeros((2, 7)))


def test_volume_truncation_detected(tmp_path):
    grid = VoxelGrid((2, 2, 2), (0, 0, 0), (1, 1, 1))
    path = tmp_path / "v.vol"
    write_volume(path, grid, np.zeros((2, 8)))
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ShapeMismatch):
        read_volume(path)


def test_container_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "w": rng.normal(size=(2, 2, 3, 3)).astype(np.float32).astype(np.float64),
        "b": rng.normal(size=(4,)).astype(np.float32).astype(np.float64),
        "scalar": np.array(3.5),
    }
    meta = {"epoch": 3, "note": "x"}
    path = tmp_path / "c.ckpt"
    write_container(path, meta, arrays)
    meta2, arrays2 = read_container(path)
    assert meta2 == meta
    assert set(arrays2) == set(arrays)
    for k in arrays:
        np.testing.assert_array_equal(arrays2[k], arrays[k])
        assert arrays2[k].shape == arrays[k].shape


def test_container_write_is_deterministic(tmp_path):
    arrays = {"a": np.ones((3, 3)), "z": np.zeros(5), "m": np.full((2,), 7.0)}
    write_container(tmp_path / "c1", {"k": 1}, arrays)
    write_container(tmp_path / "c2", {"k": 1}, dict(reversed(list(arrays.items()))))
    assert (tmp_path / "c1").read_bytes() == (tmp_path / "c2").read_bytes()


def test_gnn_layer_params_roundtrip(tmp_path):
    from ctxpose.gnn import load_layer_params, make_layer_params, save_layer_params
    from ctxpose.skeleton import build_graph

    rng = np.random.default_rng(7)
    g = build_graph(3, [(0, 1), (1, 2)])
    p = make_layer_params(g, 2, 2, "lcn", rng)
    p.weights = p.weights.astype(np.float32).astype(np.float64)
    save_layer_params(tmp_path / "layer.params", p)
    p2 = load_layer_params(tmp_path / "layer.params")
    np.testing.assert_array_equal(p2.weights, p.weights)
    assert p2.variant == "lcn" and p2.shared is False


def test_context_params_roundtrip(tmp_path):
    from ctxpose.contextpose import load_params, random_params, save_params

    rng = np.random.default_rng(8)
    params = random_params(3, 2, rng, alpha=900.0, eps=1e-6)
    params.W = params.W.astype(np.float32).astype(np.float64)
    params.d = params.d.astype(np.float32).astype(np.float64)
    save_params(tmp_path / "ctx.params", params)
    loaded = load_params(tmp_path / "ctx.params")
    np.testing.assert_array_equal(loaded.W, params.W)
    np.testing.assert_array_equal(loaded.d, params.d)
    assert loaded.alpha == 900.0 and loaded.eps == 1e-6


def test_attention_export_roundtrip(tmp_path):
    from ctxpose.contextpose import export_attention

    grid = VoxelGrid((2, 2, 2), (0, 0, 0), (10, 10, 10))
    ga = np.full((3, 8), 1.0 / 8)
    export_attention(tmp_path / "ga.vol", grid, ga)
    grid2, values = read_volume(tmp_path / "ga.vol")
    assert grid2 == grid
    np.testing.assert_allclose(values[:, :, 0], ga, atol=1e-9)
