import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsedepth.arrays import decode_array, encode_array, read_array, write_array
from sparsedepth.datagen import (
    DEPTH_RANGE,
    MANIFEST,
    SceneSpec,
    closeness_from_depth,
    derive_pairs,
    gen_scene,
    gen_scenes,
    read_dataset,
    read_manifest,
    scene_pairs,
    write_dataset,
)
from sparsedepth.exceptions import DegenerateSceneError, FormatError
from sparsedepth.pairs import as_table, relation_from_depth


def test_scene_has_requested_layers_and_is_deterministic():
    a = gen_scene(0, SceneSpec(64, 64, 3))
    b = gen_scene(0, SceneSpec(64, 64, 3))
    assert len(np.unique(a.depth)) == 3
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.depth, b.depth)
    np.testing.assert_array_equal(a.layer_map, b.layer_map)


def test_seed_changes_layer_map():
    assert not np.array_equal(gen_scene(0).layer_map, gen_scene(1).layer_map)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), layers=st.integers(2, 6))
def test_depth_in_range_and_positive(seed, layers):
    s = gen_scene(seed, SceneSpec(32, 32, layers))
    assert s.depth.min() >= DEPTH_RANGE[0] and s.depth.max() <= DEPTH_RANGE[1]
    assert s.image.shape == (32, 32, 3) and s.image.dtype == np.float32
    assert 0.0 <= s.image.min() and s.image.max() <= 1.0


def test_image_red_channel_tracks_closeness_without_noise():
    s = gen_scene(3, SceneSpec(64, 64, 4, texture_noise=0.0))
    red = s.image[..., 0].ravel()
    close = closeness_from_depth(s.depth).ravel()
    order = np.argsort(close)
    assert np.all(np.diff(red[order]) >= -1e-6)


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(8, 64).validate()
    with pytest.raises(ValueError):
        SceneSpec(64, 64, 1).validate()
    with pytest.raises(DegenerateSceneError):
        SceneSpec(16, 16, 17).validate()
    with pytest.raises(DegenerateSceneError):
        SceneSpec(64, 64, 20).validate()


def test_constant_depth_all_equal():
    depth = np.full((16, 16), 3.0)
    pairs = derive_pairs(depth, 50, seed=0, equal_fraction=1.0)
    assert len(pairs) == 50
    assert {p.relation for p in pairs} == {0}


def test_two_layers_relation_points_at_near_layer():
    depth = np.full((16, 16), 5.0)
    depth[:, :8] = 1.0
    pairs = derive_pairs(depth, 40, seed=1)
    assert len(pairs) == 40
    for p in pairs:
        da, db = depth[p.point_a], depth[p.point_b]
        assert da != db
        expected = 1 if da == 1.0 else -1
        assert p.relation == expected


def test_many_pairs_match_brute_force_relations():
    s = gen_scene(5)
    pairs = derive_pairs(s.depth, 3000, seed=2, equal_fraction=0.2, layer_map=s.layer_map)
    assert len(pairs) == 3000
    for p in pairs:
        da, db = float(s.depth[p.point_a]), float(s.depth[p.point_b])
        expected = 0 if da == db else (1 if da < db else -1)
        assert p.relation == expected
    assert sum(p.relation == 0 for p in pairs) == 600


def test_tolerance_excludes_small_gaps_from_unequal_pairs():
    depth = np.tile(np.linspace(1, 2, 32), (32, 1))
    pairs = derive_pairs(depth, 100, seed=0, tolerance=0.3)
    for p in pairs:
        assert abs(depth[p.point_a] - depth[p.point_b]) > 0.3


def test_relation_from_depth_vectorised():
    np.testing.assert_array_equal(relation_from_depth([1, 2, 3], [2, 2, 1]), [1, 0, -1])


def test_equal_pairs_need_a_group():
    depth = np.arange(256, dtype=float).reshape(16, 16) + 1
    with pytest.raises(ValueError):
        derive_pairs(depth, 10, equal_fraction=0.5, layer_map=np.arange(256).reshape(16, 16))


@settings(max_examples=30, deadline=None)
@given(shape=st.lists(st.integers(0, 5), min_size=0, max_size=4), seed=st.integers(0, 99))
def test_array_container_round_trip(shape, seed):
    arr = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
    out = decode_array(encode_array(arr))
    assert out.shape == arr.shape and out.dtype == np.float32
    np.testing.assert_array_equal(out, arr)


def test_array_container_rejects_corruption(tmp_path):
    path = tmp_path / "a.sdt"
    write_array(path, np.ones((3, 4)))
    blob = path.read_bytes()
    with pytest.raises(FormatError):
        decode_array(b"XXXX" + blob[4:], path)
    with pytest.raises(FormatError):
        decode_array(blob[:-1], path)
    with pytest.raises(FormatError):
        decode_array(blob + b"\0", path)


def test_dataset_round_trip(tmp_path):
    scenes = gen_scenes(10, seed=4)
    pairs = scene_pairs(scenes, 15, seed=4)
    write_dataset(scenes, pairs, tmp_path)
    back, back_pairs = read_dataset(tmp_path)
    assert [s.id for s in back] == [s.id for s in scenes]
    for a, b in zip(scenes, back):
        assert np.max(np.abs(a.image - b.image)) <= 1e-6
        assert np.max(np.abs(a.depth - b.depth)) <= 1e-6
        np.testing.assert_array_equal(a.layer_map, b.layer_map)
    assert back_pairs == pairs


def test_pairs_file_uses_x_for_column(tmp_path):
    scene = gen_scene(0)
    pairs = derive_pairs(scene.depth, 3, seed=0)
    write_dataset([scene], [pairs], tmp_path)
    rec = read_manifest(tmp_path)[0]
    first = (tmp_path / rec["pairs_file"]).read_text().splitlines()[0].split()
    ax, ay = int(first[0]), int(first[1])
    assert (ay, ax) == pairs[0].point_a


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError, match="manifest"):
        read_dataset(tmp_path)


def test_tampered_depth_length_field(tmp_path):
    scene = gen_scene(0)
    write_dataset([scene], [derive_pairs(scene.depth, 5)], tmp_path)
    rec = read_manifest(tmp_path)[0]
    depth_path = tmp_path / rec["depth_file"]
    blob = bytearray(depth_path.read_bytes())
    blob[8] ^= 0x01  # first dimension, just after magic and ndim
    depth_path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as info:
        read_dataset(tmp_path)
    assert rec["depth_file"] in str(info.value)


def test_manifest_is_byte_identical_on_rerun(tmp_path):
    for sub in ("a", "b"):
        scenes = gen_scenes(4, seed=9)
        write_dataset(scenes, scene_pairs(scenes, 5, seed=9), tmp_path / sub)
    assert (tmp_path / "a" / MANIFEST).read_bytes() == (tmp_path / "b" / MANIFEST).read_bytes()
    table = as_table(read_dataset(tmp_path / "a")[1][0])
    assert len(table) == 5


def test_read_array_names_file(tmp_path):
    path = tmp_path / "x.sdt"
    path.write_bytes(b"SDT1")
    with pytest.raises(FormatError, match="x.sdt"):
        read_array(path)
