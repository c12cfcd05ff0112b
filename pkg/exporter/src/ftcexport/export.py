"""Inception-v3 bottleneck export over a class-per-folder image tree.

Images are decoded to grayscale, replicated to three channels,
resized, normalized with the ImageNet statistics the backbone was
trained against, and pushed through the convolutional trunk (the
classifier head is never run).  ``pooling="spatial"`` keeps the final
8x8-style activation grid; ``pooling="vector"`` average-pools it to a
flat 2048-wide row.  Rows come out in lexicographic order of the
relative file path, which for an alphabetical class table is the same
as (class id, file name).
"""

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image
from torchvision import models

from .container import container_write

CLASS_NAMES = ("MildDemented", "ModerateDemented", "NonDemented", "VeryMildDemented")

_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

# Below this the stride-2 trunk runs out of pixels before Mixed_7c.
_MIN_RESIZE = 75

# Trunk modules in forward order, stopping short of the pooled head.
_STAGES = (
    "Conv2d_1a_3x3",
    "Conv2d_2a_3x3",
    "Conv2d_2b_3x3",
    "maxpool1",
    "Conv2d_3b_1x1",
    "Conv2d_4a_3x3",
    "maxpool2",
    "Mixed_5b",
    "Mixed_5c",
    "Mixed_5d",
    "Mixed_6a",
    "Mixed_6b",
    "Mixed_6c",
    "Mixed_6d",
    "Mixed_6e",
    "Mixed_7a",
    "Mixed_7b",
    "Mixed_7c",
)

_WEIGHT_FILE = "inception_v3_google-0cc3c7bd.pth"


class ExportError(Exception):
    """Raised when an export cannot proceed."""


class MissingWeightsError(ExportError):
    """Pretrained weights are neither cached nor downloadable."""


class ClassTableError(ExportError):
    """Image tree or spec disagrees with the canonical class table."""


@dataclasses.dataclass
class ExportSpec:
    """What to export and where to put it."""

    image_root: str
    out_path: str
    pooling: str = "spatial"
    resize: int = 299
    batch_size: int = 16
    random_init: bool = False
    seed: int = 0
    class_names: tuple = CLASS_NAMES


_BACKBONES = {}


def _load_backbone(random_init, seed):
    key = (random_init, seed if random_init else None)
    if key in _BACKBONES:
        return _BACKBONES[key]
    # transform_input=False: normalization happens in our decoder, not
    # inside the model's legacy input-rescaling shim.
    if random_init:
        torch.manual_seed(seed)
        net = models.inception_v3(
            weights=None, transform_input=False, aux_logits=True, init_weights=True
        )
    else:
        try:
            net = models.inception_v3(
                weights=models.Inception_V3_Weights.IMAGENET1K_V1,
                transform_input=False,
            )
        except Exception as exc:
            cache = Path(torch.hub.get_dir()) / "checkpoints" / _WEIGHT_FILE
            raise MissingWeightsError(
                f"pretrained Inception-v3 weights unavailable ({exc}); "
                f"place {_WEIGHT_FILE} at {cache} or use random_init for an "
                "untrained backbone"
            ) from None
    net.eval()
    _BACKBONES[key] = net
    return net


def _decode(path, resize):
    try:
        with Image.open(path) as im:
            gray = im.convert("L").resize((resize, resize), Image.BILINEAR)
    except Exception as exc:
        raise ExportError(f"cannot decode image {path}: {exc}") from None
    plane = np.asarray(gray, dtype=np.float32) / 255.0
    chans = np.stack([plane, plane, plane])
    return (chans - _MEAN[:, None, None]) / _STD[:, None, None]


def _scan_tree(root, class_names):
    root = Path(root)
    if not root.is_dir():
        raise ExportError(f"image root {root} is not a directory")
    table = {name: idx for idx, name in enumerate(class_names)}
    rows = []
    for entry in sorted(p for p in root.iterdir() if p.is_dir()):
        if entry.name not in table:
            raise ClassTableError(
                f"directory {entry.name!r} is not in the class table "
                f"({', '.join(class_names)})"
            )
        label = table[entry.name]
        for img in sorted(entry.iterdir()):
            if img.is_file():
                rows.append((f"{entry.name}/{img.name}", label))
    if not rows:
        raise ExportError(f"no images found under {root}")
    return rows


def _trunk(net, batch):
    x = batch
    for name in _STAGES:
        x = getattr(net, name)(x)
    return x


def export_features(spec):
    """Run the export described by ``spec``; returns the manifest dict.

    Writes the FTC1 container at ``spec.out_path`` plus a
    ``<out_path>.manifest.json`` sidecar recording how the features
    were produced.
    """
    if spec.pooling not in ("spatial", "vector"):
        raise ValueError(f"pooling must be 'spatial' or 'vector', got {spec.pooling!r}")
    if spec.resize < _MIN_RESIZE:
        raise ValueError(f"resize must be at least {_MIN_RESIZE}, got {spec.resize}")
    if tuple(spec.class_names) != CLASS_NAMES:
        raise ClassTableError(
            "spec class table does not match the canonical trainer table"
        )

    rows = _scan_tree(spec.image_root, spec.class_names)
    root = Path(spec.image_root)
    net = _load_backbone(spec.random_init, spec.seed)
    torch.set_num_threads(1)

    chunks = []
    with torch.no_grad():
        for start in range(0, len(rows), spec.batch_size):
            batch_rows = rows[start : start + spec.batch_size]
            planes = np.stack([_decode(root / rel, spec.resize) for rel, _ in batch_rows])
            acts = _trunk(net, torch.from_numpy(planes))
            if spec.pooling == "vector":
                acts = torch.flatten(torch.nn.functional.adaptive_avg_pool2d(acts, 1), 1)
            chunks.append(acts.numpy().astype(np.float32, copy=False))

    feats = np.concatenate(chunks, axis=0)
    labels = np.array([label for _, label in rows], dtype=np.uint16)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    container_write(out, feats, labels, spec.class_names)

    manifest = {
        "class_names": list(spec.class_names),
        "extractor": "torchvision inception_v3 trunk (through Mixed_7c)",
        "feature_shape": list(feats.shape[1:]),
        "files": [rel for rel, _ in rows],
        "normalize_mean": [float(v) for v in _MEAN],
        "normalize_std": [float(v) for v in _STD],
        "pooling": spec.pooling,
        "preprocess": "grayscale luma replicated to 3 channels, bilinear resize, imagenet normalization",
        "resize": spec.resize,
        "rows": int(feats.shape[0]),
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
        "weights": f"random-init seed={spec.seed}" if spec.random_init else "imagenet-v1",
    }
    with open(f"{out}.manifest.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
