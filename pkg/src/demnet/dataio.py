"""Image ingestion, splitting, and the FeatureContainer wire format.

Datasets on disk are `<root>/<ClassName>/*.png|*.jpg` with the fixed class
table below; files load in lexicographic order per class, classes in index
order, so dataset assembly is deterministic.

Resizing is bilinear with corner-aligned sampling: output pixel j samples
source position j * (L_in - 1) / (L_out - 1) along each axis (position 0
when either length is 1), interpolating the four surrounding pixels.

FeatureContainer binary layout (little-endian throughout):

    magic   b"FTC1"
    u8      dtype code (1 = 32-bit IEEE-754 float, little-endian)
    u8      tensor rank
    rank*u64  dims (dims[0] = sample count)
    payload   row-major tensor bytes
    u64     label count (must equal dims[0])
    count*u16 labels
    u16     class-name count
    per name: u16 byte length + UTF-8 bytes

The same bytes are produced and consumed by the external feature exporter;
any change is a format version change.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import RngState

CLASS_NAMES = ("MildDemented", "ModerateDemented", "NonDemented", "VeryMildDemented")
CLASS_ALIASES = {"MID": 0, "MOD": 1, "ND": 2, "VMD": 3}
CLASS_TABLE = {name: i for i, name in enumerate(CLASS_NAMES)} | CLASS_ALIASES

CONTAINER_MAGIC = b"FTC1"
DTYPE_F32LE = 1

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class DatasetError(ValueError):
    pass


class ContainerError(Exception):
    """Base class for FeatureContainer read/write failures."""


class ContainerBadMagic(ContainerError):
    pass


class ContainerDtypeError(ContainerError):
    pass


class ContainerTruncatedError(ContainerError):
    pass


class ContainerLabelMismatch(ContainerError):
    pass


@dataclass
class LabeledDataset:
    """Samples with parallel labels. `samples` is [N, C, H, W] for images and
    [N, ...] feature tensors when read from a container. Immutable by
    convention after assembly; share freely."""
    samples: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = CLASS_NAMES
    paths: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.samples) == 0:
            raise DatasetError("dataset is empty")
        if len(self.labels) != len(self.samples):
            raise DatasetError(
                f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise DatasetError(
                f"labels outside [0, {len(self.class_names)}) present")

    def __len__(self):
        return len(self.samples)

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        paths = tuple(self.paths[i] for i in idx) if self.paths is not None else None
        return LabeledDataset(self.samples[idx], self.labels[idx],
                              self.class_names, paths)


def _axis_grid(in_len: int, out_len: int):
    if in_len == 1 or out_len == 1:
        pos = np.zeros(out_len)
    else:
        pos = np.arange(out_len) * ((in_len - 1) / (out_len - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), in_len - 1)
    hi = np.minimum(lo + 1, in_len - 1)
    return lo, hi, pos - lo


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of [H, W] or [H, W, C] to the target
    size; computed and returned in float64."""
    if img.ndim not in (2, 3):
        raise ValueError(f"expected [H,W] or [H,W,C], got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size {out_h}x{out_w} must be >= 1x1")
    src = img.astype(np.float64)
    ylo, yhi, fy = _axis_grid(img.shape[0], out_h)
    xlo, xhi, fx = _axis_grid(img.shape[1], out_w)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[ylo][:, xlo] * (1 - fx) + src[ylo][:, xhi] * fx
    bot = src[yhi][:, xlo] * (1 - fx) + src[yhi][:, xhi] * fx
    return top * (1 - fy) + bot * fy


def decode_image(path, target_hw: tuple[int, int] | None = (128, 128)) -> np.ndarray:
    """Decode one file to a single-channel [1, H, W] float32 array in [0, 1],
    resized when a target is given."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    gray /= 255.0
    if target_hw is not None and gray.shape != target_hw:
        gray = bilinear_resize(gray, *target_hw)
    return gray.astype(np.float32)[None, :, :]


def load_image_dataset(root, target_hw: tuple[int, int] = (128, 128)) -> LabeledDataset:
    """Load `<root>/<ClassName>/*` into a [N, 1, H, W] dataset. Every class
    directory must be one of the known names (long form or MID/MOD/ND/VMD);
    all four classes must be present."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    unknown = [p.name for p in subdirs if p.name not in CLASS_TABLE]
    if unknown:
        raise DatasetError(
            f"unknown class directories {unknown}; expected names from "
            f"{sorted(CLASS_TABLE)}")
    by_class: dict[int, list[Path]] = {i: [] for i in range(len(CLASS_NAMES))}
    for p in subdirs:
        files = sorted(f for f in p.iterdir() if f.is_file())
        bad = [f.name for f in files if f.suffix.lower() not in _IMAGE_SUFFIXES]
        if bad:
            raise DatasetError(f"non-image files under {p}: {bad}")
        by_class[CLASS_TABLE[p.name]].extend(files)
    missing = [CLASS_NAMES[i] for i, fs in by_class.items() if not fs]
    if missing:
        raise DatasetError(f"no images for classes {missing}")

    samples, labels, paths = [], [], []
    for c in range(len(CLASS_NAMES)):
        for f in by_class[c]:
            samples.append(decode_image(f, target_hw))
            labels.append(c)
            paths.append(str(f))
    return LabeledDataset(np.stack(samples), np.asarray(labels, dtype=np.int64),
                          CLASS_NAMES, tuple(paths))


# --- splitting ----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 42
    stratified: bool = False

    def validate(self):
        for name in ("train", "val", "test"):
            f = getattr(self, name)
            if not 0.0 < f < 1.0:
                raise ValueError(f"{name} fraction must be in (0, 1), got {f}")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError(
                f"fractions sum to {self.train + self.val + self.test}, expected 1")


@dataclass
class Splits:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset


def _partition(perm: np.ndarray, spec: SplitSpec):
    # floor val/test; the remainder rides with train
    n = len(perm)
    n_val = int(n * spec.val)
    n_test = int(n * spec.test)
    n_train = n - n_val - n_test
    return (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])


def split_indices(labels: np.ndarray, spec: SplitSpec):
    """Index partition (train, val, test) per the seeded shuffle; stratified
    mode partitions within each class and concatenates in class order."""
    spec.validate()
    n = len(labels)
    rng = RngState(spec.seed)
    if not spec.stratified:
        parts = _partition(rng.permutation(n), spec)
    else:
        per_class = [[], [], []]
        for c in np.unique(labels):
            rows = np.flatnonzero(labels == c)
            local = _partition(rng.permutation(len(rows)), spec)
            for bucket, pick in zip(per_class, local):
                bucket.append(rows[pick])
        parts = tuple(np.concatenate(b) for b in per_class)
    for name, part in zip(("train", "val", "test"), parts):
        if len(part) == 0:
            raise ValueError(f"{name} split received 0 samples (n={n}, {spec})")
    return parts


def split_dataset(ds: LabeledDataset, spec: SplitSpec) -> Splits:
    tr, va, te = split_indices(ds.labels, spec)
    return Splits(ds.subset(tr), ds.subset(va), ds.subset(te))


# --- FeatureContainer wire format ----------------------------------------------

def _as_feature_tensor(obj):
    samples = obj.samples if isinstance(obj, LabeledDataset) else obj[0]
    labels = obj.labels if isinstance(obj, LabeledDataset) else obj[1]
    names = (obj.class_names if isinstance(obj, LabeledDataset) else obj[2])
    return np.asarray(samples), np.asarray(labels), tuple(names)


def feature_container_write(ds, path):
    """Serialize samples+labels+class names. `ds` is a LabeledDataset or a
    (features, labels, class_names) triple; features are stored float32."""
    features, labels, names = _as_feature_tensor(ds)
    if features.ndim < 1 or len(features) != len(labels):
        raise ContainerLabelMismatch(
            f"{len(features)} feature rows but {len(labels)} labels")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ContainerError("labels must fit in unsigned 16 bits")
    out = bytearray()
    out += CONTAINER_MAGIC
    out += struct.pack("<BB", DTYPE_F32LE, features.ndim)
    out += struct.pack(f"<{features.ndim}Q", *features.shape)
    out += np.ascontiguousarray(features, dtype="<f4").tobytes()
    out += struct.pack("<Q", len(labels))
    out += np.ascontiguousarray(labels, dtype="<u2").tobytes()
    out += struct.pack("<H", len(names))
    for name in names:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerTruncatedError(
                f"truncated container: {what} wants {n} bytes at offset "
                f"{self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def feature_container_read(path) -> LabeledDataset:
    """Parse a container; the inverse of feature_container_write bit for bit."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(4, "magic")
    if magic != CONTAINER_MAGIC:
        raise ContainerBadMagic(f"bad magic {magic!r}, expected {CONTAINER_MAGIC!r}")
    dtype_code, rank = struct.unpack("<BB", r.take(2, "header"))
    if dtype_code != DTYPE_F32LE:
        raise ContainerDtypeError(f"unknown dtype code {dtype_code}")
    if rank < 1:
        raise ContainerError(f"tensor rank must be >= 1, got {rank}")
    dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, "dims"))
    count = int(np.prod(dims, dtype=np.uint64)) if dims else 0
    payload = r.take(4 * count, "tensor payload")
    features = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    (n_labels,) = struct.unpack("<Q", r.take(8, "label count"))
    if n_labels != dims[0]:
        raise ContainerLabelMismatch(
            f"label count {n_labels} does not match first dim {dims[0]}")
    labels = np.frombuffer(r.take(2 * n_labels, "labels"), dtype="<u2")
    (n_names,) = struct.unpack("<H", r.take(2, "class-name count"))
    names = []
    for i in range(n_names):
        (length,) = struct.unpack("<H", r.take(2, f"name {i} length"))
        names.append(r.take(length, f"name {i}").decode("utf-8"))
    if r.pos != len(r.data):
        raise ContainerError(f"{len(r.data) - r.pos} trailing bytes in container")
    return LabeledDataset(features, labels.astype(np.int64), tuple(names))


def write_split_manifest(path, splits: Splits):
    """CSV of filename,class,split for datasets that kept their source paths."""
    lines = ["filename,class,split"]
    for split_name, ds in (("train", splits.train), ("val", splits.val),
                           ("test", splits.test)):
        if ds.paths is None:
            raise DatasetError("split manifest needs datasets loaded from files")
        for p, label in zip(ds.paths, ds.labels):
            lines.append(f"{p},{ds.class_names[label]},{split_name}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
