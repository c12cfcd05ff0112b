"""Image loading, bilinear resize, splits, and the container wire format."""

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from demnet.dataio import (
    CLASS_NAMES,
    CLASS_TABLE,
    ContainerBadMagic,
    ContainerDtypeError,
    ContainerError,
    ContainerLabelMismatch,
    ContainerTruncatedError,
    DatasetError,
    LabeledDataset,
    SplitSpec,
    bilinear_resize,
    decode_image,
    feature_container_read,
    feature_container_write,
    load_image_dataset,
    split_dataset,
    split_indices,
    write_split_manifest,
)
from demnet.tensor import RngState


def reference_bilinear(img, out_h, out_w):
    """Independent per-pixel corner-aligned implementation."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for oy in range(out_h):
        for ox in range(out_w):
            sy = 0.0 if out_h == 1 or in_h == 1 else oy * (in_h - 1) / (out_h - 1)
            sx = 0.0 if out_w == 1 or in_w == 1 else ox * (in_w - 1) / (out_w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            fy, fx = sy - y0, sx - x0
            out[oy, ox] = (img[y0, x0] * (1 - fy) * (1 - fx)
                           + img[y0, x1] * (1 - fy) * fx
                           + img[y1, x0] * fy * (1 - fx)
                           + img[y1, x1] * fy * fx)
    return out


class TestBilinearResize:
    def test_constant_image_stays_constant(self):
        img = np.full((208, 176), 0.37)
        out = bilinear_resize(img, 128, 128)
        npt.assert_allclose(out, 0.37, atol=1e-12)

    def test_matches_reference_oracle(self):
        rng = RngState(14)
        img = rng.uniform_array((9, 7), dtype=np.float64)
        npt.assert_allclose(bilinear_resize(img, 5, 4),
                            reference_bilinear(img, 5, 4), atol=1e-12)
        checker = np.indices((8, 8)).sum(axis=0) % 2 * 1.0
        npt.assert_allclose(bilinear_resize(checker, 5, 5),
                            reference_bilinear(checker, 5, 5), atol=1e-12)

    def test_identity_at_same_size(self):
        img = RngState(15).uniform_array((6, 6), dtype=np.float64)
        npt.assert_allclose(bilinear_resize(img, 6, 6), img, atol=1e-12)

    def test_corners_preserved(self):
        img = RngState(16).uniform_array((10, 12), dtype=np.float64)
        out = bilinear_resize(img, 5, 7)
        for oy, sy in ((0, 0), (4, 9)):
            for ox, sx in ((0, 0), (6, 11)):
                npt.assert_allclose(out[oy, ox], img[sy, sx], atol=1e-12)

    def test_linear_in_brightness(self):
        img = RngState(17).uniform_array((7, 9), dtype=np.float64)
        npt.assert_allclose(bilinear_resize(3.0 * img, 4, 5),
                            3.0 * bilinear_resize(img, 4, 5), atol=1e-12)

    def test_channel_axis(self):
        img = RngState(18).uniform_array((6, 6, 3), dtype=np.float64)
        out = bilinear_resize(img, 4, 4)
        for c in range(3):
            npt.assert_allclose(out[:, :, c],
                                bilinear_resize(img[:, :, c], 4, 4), atol=1e-12)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            bilinear_resize(np.zeros(5), 2, 2)
        with pytest.raises(ValueError):
            bilinear_resize(np.zeros((4, 4)), 0, 2)


def write_gray_png(path, array_u8):
    Image.fromarray(array_u8.astype(np.uint8), mode="L").save(path)


def make_tree(root, per_class=2, hw=(16, 16), names=CLASS_NAMES):
    rng = np.random.default_rng(0)
    for name in names:
        d = root / name
        d.mkdir(parents=True)
        for i in range(per_class):
            write_gray_png(d / f"f{i}.png",
                           rng.integers(0, 256, size=hw, dtype=np.uint8))


class TestClassTable:
    def test_fixed_mapping(self):
        assert CLASS_TABLE["MildDemented"] == 0
        assert CLASS_TABLE["ModerateDemented"] == 1
        assert CLASS_TABLE["NonDemented"] == 2
        assert CLASS_TABLE["VeryMildDemented"] == 3
        assert [CLASS_TABLE[a] for a in ("MID", "MOD", "ND", "VMD")] == [0, 1, 2, 3]
        assert CLASS_NAMES == ("MildDemented", "ModerateDemented",
                               "NonDemented", "VeryMildDemented")


class TestLoader:
    def test_two_per_class_ordering(self, tmp_path):
        make_tree(tmp_path, per_class=2)
        ds = load_image_dataset(tmp_path, target_hw=(8, 8))
        assert ds.samples.shape == (8, 1, 8, 8)
        npt.assert_array_equal(ds.labels, [0, 0, 1, 1, 2, 2, 3, 3])
        assert ds.samples.dtype == np.float32
        assert ds.samples.min() >= 0.0 and ds.samples.max() <= 1.0
        assert ds.paths is not None and len(ds.paths) == 8

    def test_short_alias_directories(self, tmp_path):
        make_tree(tmp_path, names=("MID", "MOD", "ND", "VMD"))
        ds = load_image_dataset(tmp_path, target_hw=(8, 8))
        npt.assert_array_equal(ds.labels, [0, 0, 1, 1, 2, 2, 3, 3])

    def test_grayscale_values_scaled(self, tmp_path):
        d = tmp_path / "MildDemented"
        d.mkdir()
        write_gray_png(d / "a.png", np.full((4, 4), 51, dtype=np.uint8))
        for name in CLASS_NAMES[1:]:
            (tmp_path / name).mkdir()
            write_gray_png(tmp_path / name / "a.png", np.zeros((4, 4), np.uint8))
        ds = load_image_dataset(tmp_path, target_hw=(4, 4))
        npt.assert_allclose(ds.samples[0], 51 / 255.0, atol=1e-7)

    def test_resize_applied(self, tmp_path):
        make_tree(tmp_path, hw=(20, 14))
        ds = load_image_dataset(tmp_path, target_hw=(8, 8))
        assert ds.samples.shape[2:] == (8, 8)

    def test_unknown_directory_rejected(self, tmp_path):
        make_tree(tmp_path)
        (tmp_path / "Mystery").mkdir()
        with pytest.raises(DatasetError, match="Mystery"):
            load_image_dataset(tmp_path)

    def test_missing_class_rejected(self, tmp_path):
        make_tree(tmp_path, names=CLASS_NAMES[:3])
        with pytest.raises(DatasetError, match="VeryMildDemented"):
            load_image_dataset(tmp_path)

    def test_non_image_file_rejected(self, tmp_path):
        make_tree(tmp_path)
        (tmp_path / "MildDemented" / "notes.txt").write_text("hello")
        with pytest.raises(DatasetError, match="notes.txt"):
            load_image_dataset(tmp_path)

    def test_undecodable_file_named(self, tmp_path):
        make_tree(tmp_path)
        (tmp_path / "MildDemented" / "bad.png").write_bytes(b"not a png")
        with pytest.raises(DatasetError, match="bad.png"):
            load_image_dataset(tmp_path, target_hw=(8, 8))

    def test_decode_image_round_trip(self, tmp_path):
        arr = np.arange(16, dtype=np.uint8).reshape(4, 4) * 17
        write_gray_png(tmp_path / "x.png", arr)
        out = decode_image(tmp_path / "x.png", target_hw=None)
        npt.assert_allclose(out[0], arr / 255.0, atol=1e-7)


class TestSplits:
    def test_paper_fraction_sizes(self):
        labels = np.repeat([0, 1, 2, 3], 3200)
        tr, va, te = split_indices(labels, SplitSpec(seed=42))
        assert (len(tr), len(va), len(te)) == (10240, 1280, 1280)

    def test_stratified_per_class_sizes(self):
        labels = np.repeat([0, 1, 2, 3], 3200)
        tr, va, te = split_indices(labels, SplitSpec(seed=42, stratified=True))
        for part, want in ((tr, 2560), (va, 320), (te, 320)):
            for c in range(4):
                assert (labels[part] == c).sum() == want

    def test_disjoint_and_exhaustive(self):
        labels = np.repeat([0, 1], [37, 63])
        tr, va, te = split_indices(labels, SplitSpec(seed=3))
        joined = np.concatenate([tr, va, te])
        assert sorted(joined.tolist()) == list(range(100))

    def test_deterministic(self):
        labels = np.repeat([0, 1], 50)
        a = split_indices(labels, SplitSpec(seed=8))
        b = split_indices(labels, SplitSpec(seed=8))
        for x, y in zip(a, b):
            npt.assert_array_equal(x, y)

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError, match="val"):
            split_indices(np.zeros(5, dtype=np.int64), SplitSpec(seed=1))

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(train=0.5, val=0.2, test=0.2).validate()
        with pytest.raises(ValueError):
            SplitSpec(train=1.0, val=0.0, test=0.0).validate()

    def test_split_dataset_carries_paths(self, tmp_path):
        make_tree(tmp_path, per_class=10)
        ds = load_image_dataset(tmp_path, target_hw=(8, 8))
        splits = split_dataset(ds, SplitSpec(seed=4))
        assert len(splits.train) == 32 and len(splits.val) == 4
        assert splits.train.paths is not None
        manifest = tmp_path / "m.csv"
        write_split_manifest(manifest, splits)
        lines = manifest.read_text().strip().splitlines()
        assert lines[0] == "filename,class,split"
        assert len(lines) == 41


def sample_container(tmp_path, shape=(4, 3, 2, 2), seed=19):
    x = RngState(seed).uniform_array(shape)
    y = np.array([0, 1, 2, 3], dtype=np.int64)[:shape[0]]
    path = tmp_path / "c.ftc"
    feature_container_write((x, y, CLASS_NAMES), path)
    return x, y, path


class TestContainer:
    def test_round_trip_bitwise(self, tmp_path):
        x, y, path = sample_container(tmp_path)
        ds = feature_container_read(path)
        assert ds.samples.tobytes() == x.tobytes()
        npt.assert_array_equal(ds.labels, y)
        assert ds.class_names == CLASS_NAMES

    def test_write_twice_identical_bytes(self, tmp_path):
        x, y, path = sample_container(tmp_path)
        p2 = tmp_path / "c2.ftc"
        feature_container_write((x, y, CLASS_NAMES), p2)
        assert path.read_bytes() == p2.read_bytes()

    def test_rank2_round_trip(self, tmp_path):
        x = RngState(20).uniform_array((5, 16))
        y = np.array([0, 0, 1, 2, 3], dtype=np.int64)
        path = tmp_path / "c.ftc"
        feature_container_write((x, y, CLASS_NAMES), path)
        ds = feature_container_read(path)
        assert ds.samples.shape == (5, 16)
        npt.assert_array_equal(ds.samples, x)

    def test_labeled_dataset_round_trip(self, tmp_path):
        ds = LabeledDataset(RngState(21).uniform_array((3, 1, 4, 4)),
                            np.array([0, 1, 2], dtype=np.int64))
        path = tmp_path / "c.ftc"
        feature_container_write(ds, path)
        back = feature_container_read(path)
        npt.assert_array_equal(back.samples, ds.samples)

    def test_bad_magic(self, tmp_path):
        _, _, path = sample_container(tmp_path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(ContainerBadMagic):
            feature_container_read(path)

    def test_unknown_dtype_code(self, tmp_path):
        _, _, path = sample_container(tmp_path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(ContainerDtypeError):
            feature_container_read(path)

    def test_truncated_payload(self, tmp_path):
        _, _, path = sample_container(tmp_path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(ContainerTruncatedError, match="truncated"):
            feature_container_read(path)

    def test_label_count_mismatch(self, tmp_path):
        x, y, path = sample_container(tmp_path)
        data = bytearray(path.read_bytes())
        # label-count u64 sits right after the payload
        off = 4 + 2 + 8 * 4 + 4 * x.size
        data[off:off + 8] = (7).to_bytes(8, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(ContainerLabelMismatch):
            feature_container_read(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        _, _, path = sample_container(tmp_path)
        path.write_bytes(path.read_bytes() + b"!")
        with pytest.raises(ContainerError):
            feature_container_read(path)

    def test_label_width_enforced_on_write(self, tmp_path):
        x = RngState(22).uniform_array((2, 3))
        y = np.array([0, 70000], dtype=np.int64)
        with pytest.raises(ContainerError):
            feature_container_write((x, y, CLASS_NAMES), tmp_path / "c.ftc")

    def test_row_label_mismatch_on_write(self, tmp_path):
        x = RngState(23).uniform_array((3, 2))
        y = np.array([0, 1], dtype=np.int64)
        with pytest.raises(ContainerLabelMismatch):
            feature_container_write((x, y, CLASS_NAMES), tmp_path / "c.ftc")

    def test_unicode_class_names(self, tmp_path):
        x = RngState(24).uniform_array((2, 2))
        y = np.array([0, 1], dtype=np.int64)
        names = ("œdème", "早期")
        path = tmp_path / "c.ftc"
        feature_container_write((x, y, names), path)
        assert feature_container_read(path).class_names == names
