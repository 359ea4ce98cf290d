"""Dataset indexing, splits, raster IO, and patch extraction."""

import csv
import logging

import numpy as np
import pytest

from surfclr.data import (
    Dataset,
    DatasetDescriptor,
    PatchSpec,
    extract_patches,
    index_dataset,
    load_pair,
    rasters,
    sniff_kind,
    split_dataset,
)
from surfclr.exceptions import (
    ConfigurationError,
    DataError,
    DataIOError,
    IndexingError,
    SchemaError,
)


def write_index(root, header, rows):
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def make_paired_dataset(root, n=4, size=64, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        sid = f"s{i:05d}"
        rgb = rng.random((size, size, 3), dtype=np.float32)
        agl = (rng.random((size, size), dtype=np.float32) * 30).astype(np.float32)
        rasters.write_rgb(root / f"{sid}_rgb.png", rgb)
        rasters.write_height(root / f"{sid}_agl.tif", agl)
        rows.append([sid, f"{sid}_rgb.png", f"{sid}_agl.tif"])
    write_index(root, ["sample_id", "rgb_path", "agl_path"], rows)
    return root


# -- rasters ---------------------------------------------------------------


def test_height_tiff_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    h = (rng.random((48, 32), dtype=np.float32) * 120).astype(np.float32)
    h[0, 0] = -9999.0
    rasters.write_height(tmp_path / "h.tif", h)
    again = rasters.read_height(tmp_path / "h.tif")
    np.testing.assert_array_equal(again, h)
    assert again.dtype == np.float32


def test_rgb_png_round_trip_is_exact_on_the_uint8_grid(tmp_path):
    rng = np.random.default_rng(2)
    rgb = (rng.integers(0, 256, size=(16, 16, 3)) / 255.0).astype(np.float32)
    rasters.write_rgb(tmp_path / "x.png", rgb)
    again = rasters.read_rgb(tmp_path / "x.png")
    np.testing.assert_array_equal(again, rgb)


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mask = rng.integers(0, 4, size=(20, 20)).astype(np.int64)
    rasters.write_mask(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(rasters.read_mask(tmp_path / "m.png"), mask)


def test_read_missing_file_is_io_error(tmp_path):
    with pytest.raises(DataIOError):
        rasters.read_rgb(tmp_path / "absent.png")


# -- indexing and splits -----------------------------------------------------


def test_index_returns_sorted_records(tmp_path):
    root = make_paired_dataset(tmp_path / "d", n=5)
    desc = DatasetDescriptor(kind="paired_agl", root=root)
    records = index_dataset(desc)
    ids = [r.sample_id for r in records]
    assert ids == sorted(ids) and len(ids) == 5


def test_sniff_kind_from_header(tmp_path):
    root = make_paired_dataset(tmp_path / "d")
    assert sniff_kind(root) == "paired_agl"
    write_index(tmp_path / "e", ["sample_id", "bogus"], [])
    with pytest.raises(SchemaError):
        sniff_kind(tmp_path / "e")


def test_index_rejects_duplicate_ids(tmp_path):
    root = make_paired_dataset(tmp_path / "d", n=2)
    rows = [["s00000", "s00000_rgb.png", "s00000_agl.tif"]] * 2
    write_index(root, ["sample_id", "rgb_path", "agl_path"], rows)
    with pytest.raises(SchemaError) as err:
        index_dataset(DatasetDescriptor(kind="paired_agl", root=root))
    assert "s00000" in str(err.value)


def test_index_lists_every_missing_file(tmp_path):
    root = make_paired_dataset(tmp_path / "d", n=3)
    (root / "s00000_rgb.png").unlink()
    (root / "s00002_agl.tif").unlink()
    with pytest.raises(IndexingError) as err:
        index_dataset(DatasetDescriptor(kind="paired_agl", root=root))
    msg = str(err.value)
    assert "s00000_rgb.png" in msg and "s00002_agl.tif" in msg


def test_index_rejects_wrong_header(tmp_path):
    root = make_paired_dataset(tmp_path / "d", n=1)
    write_index(root, ["sample_id", "rgb", "agl"], [["a", "x", "y"]])
    with pytest.raises(SchemaError):
        index_dataset(DatasetDescriptor(kind="paired_agl", root=root))


def test_index_rejects_empty_dataset(tmp_path):
    write_index(tmp_path / "d", ["sample_id", "rgb_path", "agl_path"], [])
    with pytest.raises(IndexingError):
        index_dataset(DatasetDescriptor(kind="paired_agl", root=tmp_path / "d"))


def test_split_is_deterministic_and_disjoint(tmp_path):
    root = make_paired_dataset(tmp_path / "d", n=10)
    records = index_dataset(DatasetDescriptor(kind="paired_agl", root=root))
    tr1, va1 = split_dataset(records, val_fraction=0.3, seed=5)
    tr2, va2 = split_dataset(records, val_fraction=0.3, seed=5)
    assert [r.sample_id for r in tr1] == [r.sample_id for r in tr2]
    assert [r.sample_id for r in va1] == [r.sample_id for r in va2]
    assert len(va1) == 3
    assert not set(r.sample_id for r in tr1) & set(r.sample_id for r in va1)
    tr3, va3 = split_dataset(records, val_fraction=0.3, seed=6)
    assert [r.sample_id for r in va3] != [r.sample_id for r in va1]


def test_split_rejects_degenerate_fractions(tmp_path):
    root = make_paired_dataset(tmp_path / "d", n=4)
    records = index_dataset(DatasetDescriptor(kind="paired_agl", root=root))
    with pytest.raises(ConfigurationError):
        split_dataset(records, val_fraction=0.0, seed=1)
    with pytest.raises(ConfigurationError):
        split_dataset(records, val_fraction=0.99, seed=1)


def test_predefined_split_wins_and_warns(tmp_path, caplog):
    rng = np.random.default_rng(0)
    root = tmp_path / "d"
    root.mkdir()
    rows = []
    for i, split in enumerate(["train", "train", "val"]):
        sid = f"s{i}"
        rasters.write_rgb(root / f"{sid}_pre.png", rng.random((64, 64, 3), dtype=np.float32))
        rasters.write_rgb(root / f"{sid}_post.png", rng.random((64, 64, 3), dtype=np.float32))
        rasters.write_mask(root / f"{sid}_mask.png", np.zeros((64, 64), np.int64))
        rows.append([sid, f"{sid}_pre.png", f"{sid}_post.png", f"{sid}_mask.png", split])
    write_index(root, ["sample_id", "pre_path", "post_path", "mask_path", "split"], rows)
    ds = Dataset.open(root)
    assert ds.descriptor.kind == "bitemporal_change"
    with caplog.at_level(logging.WARNING):
        train, val = split_dataset(ds.records, val_fraction=0.5, seed=0)
    assert [r.sample_id for r in train] == ["s0", "s1"]
    assert [r.sample_id for r in val] == ["s2"]
    assert any("predefined" in r.message for r in caplog.records)


# -- sample loading ----------------------------------------------------------


def test_load_pair_applies_nodata_and_clipping(tmp_path):
    root = tmp_path / "d"
    root.mkdir()
    rng = np.random.default_rng(4)
    rgb = rng.random((32, 32, 3), dtype=np.float32)
    agl = np.full((32, 32), 10.0, np.float32)
    agl[0, 0] = -9999.0  # nodata
    agl[1, 1] = 500.0  # above h_max
    agl[2, 2] = -3.0  # below zero but valid
    rasters.write_rgb(root / "a_rgb.png", rgb)
    rasters.write_height(root / "a_agl.tif", agl)
    write_index(root, ["sample_id", "rgb_path", "agl_path"], [["a", "a_rgb.png", "a_agl.tif"]])
    desc = DatasetDescriptor(kind="paired_agl", root=root, h_max=200.0)
    rec = index_dataset(desc)[0]
    sample = load_pair(rec, desc)
    assert sample.agl.shape == (32, 32, 1)
    assert not sample.validity[0, 0]
    assert sample.agl[0, 0, 0] == 0.0
    assert sample.validity[1, 1] and sample.agl[1, 1, 0] == 200.0
    assert sample.validity[2, 2] and sample.agl[2, 2, 0] == 0.0
    assert sample.agl[5, 5, 0] == 10.0


def test_load_mismatched_shapes_is_coregistration_error(tmp_path):
    from surfclr.exceptions import CoRegistrationError

    root = tmp_path / "d"
    root.mkdir()
    rng = np.random.default_rng(5)
    rasters.write_rgb(root / "a_rgb.png", rng.random((32, 32, 3), dtype=np.float32))
    rasters.write_height(root / "a_agl.tif", np.ones((16, 16), np.float32))
    write_index(root, ["sample_id", "rgb_path", "agl_path"], [["a", "a_rgb.png", "a_agl.tif"]])
    desc = DatasetDescriptor(kind="paired_agl", root=root)
    with pytest.raises(CoRegistrationError):
        load_pair(index_dataset(desc)[0], desc)


def test_mask_labels_must_be_in_range(tmp_path):
    root = tmp_path / "d"
    root.mkdir()
    rng = np.random.default_rng(6)
    rasters.write_rgb(root / "a_pre.png", rng.random((32, 32, 3), dtype=np.float32))
    rasters.write_rgb(root / "a_post.png", rng.random((32, 32, 3), dtype=np.float32))
    rasters.write_mask(root / "a_mask.png", np.full((32, 32), 7, np.int64))
    write_index(
        root,
        ["sample_id", "pre_path", "post_path", "mask_path"],
        [["a", "a_pre.png", "a_post.png", "a_mask.png"]],
    )
    ds = Dataset.open(root, num_classes=2)
    with pytest.raises(DataError):
        ds.load(ds.records[0])


# -- patches -----------------------------------------------------------------


def load_one(tmp_path, size=64):
    root = make_paired_dataset(tmp_path / "d", n=1, size=size)
    desc = DatasetDescriptor(kind="paired_agl", root=root)
    rec = index_dataset(desc)[0]
    return load_pair(rec, desc)


def test_grid_patches_tile_row_major(tmp_path):
    sample = load_one(tmp_path, size=64)
    spec = PatchSpec(size=32, strategy="grid", seed=0)
    out = extract_patches(sample, spec)
    assert [p.sample_id for p in out] == [
        "s00000@r0c0", "s00000@r0c1", "s00000@r1c0", "s00000@r1c1"
    ]
    np.testing.assert_array_equal(out[0].rgb, sample.rgb[:32, :32])
    np.testing.assert_array_equal(out[3].rgb, sample.rgb[32:, 32:])
    np.testing.assert_array_equal(out[3].agl, sample.agl[32:, 32:])


def test_random_crops_are_colocated_and_deterministic(tmp_path):
    sample = load_one(tmp_path, size=64)
    spec = PatchSpec(size=32, strategy="random_crop", patches_per_image=3, seed=9)
    a = extract_patches(sample, spec)
    b = extract_patches(sample, spec)
    assert len(a) == 3
    for pa, pb in zip(a, b):
        assert pa.sample_id == pb.sample_id
        np.testing.assert_array_equal(pa.rgb, pb.rgb)
        # the window name encodes the offsets; rgb and agl share them
        tag = pa.sample_id.split("@p")[1]  # "{j}y{y}x{x}"
        _, y, x = (int(v) for v in tag.replace("y", " ").replace("x", " ").split())
        np.testing.assert_array_equal(pa.rgb, sample.rgb[y : y + 32, x : x + 32])
        np.testing.assert_array_equal(pa.agl, sample.agl[y : y + 32, x : x + 32])
    different = extract_patches(sample, PatchSpec(size=32, patches_per_image=3, seed=10))
    assert [p.sample_id for p in different] != [p.sample_id for p in a]


def test_patch_larger_than_image_is_rejected(tmp_path):
    sample = load_one(tmp_path, size=64)
    with pytest.raises(ConfigurationError):
        extract_patches(sample, PatchSpec(size=128, seed=0))


def test_patch_spec_validation():
    with pytest.raises(ConfigurationError):
        PatchSpec(size=0, seed=0).validate()
    with pytest.raises(ConfigurationError):
        PatchSpec(size=32, strategy="mosaic", seed=0).validate()
    with pytest.raises(ConfigurationError):
        PatchSpec(size=32, patches_per_image=0, seed=0).validate()


def test_dataset_open_kind_mismatch(tmp_path):
    root = make_paired_dataset(tmp_path / "d")
    with pytest.raises(ConfigurationError):
        Dataset.open(root, kind="bitemporal_change")
    ds = Dataset.open(root)
    assert len(ds) == 4
