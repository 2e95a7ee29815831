"""Dataset access: the RGB-thermal benchmark tree and synthetic scenes.

A dataset root holds ``rgb/``, ``thermal/``, ``labels/`` with one PNG per
sample id, plus ``splits/{train,val,test}.txt``. Thermal images are
single channel and get replicated to three. Without a ``meta.json`` the
tree is assumed to use the 9-class benchmark label set (0 is the
unlabeled background).

Synthetic scenes are generated per seed: a handful of rectangles and
ellipses over a background, with class-specific colors in RGB and
class-specific intensities in thermal, each modality noised
independently.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .losses import IGNORE_INDEX

MFNET_CLASS_NAMES = [
    "unlabeled",
    "car",
    "person",
    "bike",
    "curve",
    "car_stop",
    "guardrail",
    "color_cone",
    "bump",
]

SPLIT_NAMES = ("train", "val", "test")

# Distinct RGB colors and thermal intensities per class, background first.
SYNTH_RGB = np.array(
    [
        [0.10, 0.10, 0.12],
        [0.85, 0.15, 0.15],
        [0.15, 0.80, 0.20],
        [0.20, 0.25, 0.90],
        [0.90, 0.85, 0.15],
        [0.85, 0.20, 0.85],
        [0.15, 0.85, 0.85],
        [0.95, 0.55, 0.15],
        [0.55, 0.30, 0.10],
    ],
    dtype=np.float32,
)
SYNTH_THERMAL = np.array([0.05, 0.90, 0.70, 0.30, 0.55, 0.15, 0.80, 0.45, 0.62], dtype=np.float32)


@dataclass
class Sample:
    rgb: torch.Tensor  # (3, H, W) float32 in [0, 1]
    thermal: torch.Tensor  # (3, H, W) float32 in [0, 1]
    labels: torch.Tensor  # (H, W) int64
    sample_id: str


@dataclass
class Manifest:
    root: Path
    class_names: list[str]
    splits: dict[str, list[str]]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def collate(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    rgb = torch.stack([s.rgb for s in samples])
    thermal = torch.stack([s.thermal for s in samples])
    labels = torch.stack([s.labels for s in samples])
    return rgb, thermal, labels


def load_manifest(root) -> Manifest:
    root = Path(root)
    for sub in ("rgb", "thermal", "labels", "splits"):
        if not (root / sub).is_dir():
            raise FileNotFoundError(f"dataset root missing directory: {root / sub}")
    meta_path = root / "meta.json"
    if meta_path.is_file():
        class_names = json.loads(meta_path.read_text())["class_names"]
    else:
        class_names = list(MFNET_CLASS_NAMES)
    splits = {}
    for split in SPLIT_NAMES:
        path = root / "splits" / f"{split}.txt"
        if not path.is_file():
            raise FileNotFoundError(f"missing split file: {path}")
        ids = [line.strip() for line in path.read_text().splitlines() if line.strip()]
        for sid in ids:
            for sub in ("rgb", "thermal", "labels"):
                img = root / sub / f"{sid}.png"
                if not img.is_file():
                    raise FileNotFoundError(f"sample {sid}: missing {img}")
        splits[split] = ids
    return Manifest(root=root, class_names=class_names, splits=splits)


def load_sample(manifest: Manifest, sample_id: str, size: tuple[int, int] | None = None) -> Sample:
    """Read one sample; ``size`` (H, W) resizes with bilinear/nearest."""
    root = manifest.root
    rgb_img = Image.open(root / "rgb" / f"{sample_id}.png").convert("RGB")
    thermal_img = Image.open(root / "thermal" / f"{sample_id}.png").convert("L")
    label_img = Image.open(root / "labels" / f"{sample_id}.png")
    if label_img.mode not in ("L", "P", "I"):
        label_img = label_img.convert("L")
    if size is not None:
        h, w = size
        rgb_img = rgb_img.resize((w, h), Image.BILINEAR)
        thermal_img = thermal_img.resize((w, h), Image.BILINEAR)
        label_img = label_img.resize((w, h), Image.NEAREST)
    rgb = torch.from_numpy(np.asarray(rgb_img, dtype=np.float32) / 255.0).permute(2, 0, 1)
    th = torch.from_numpy(np.asarray(thermal_img, dtype=np.float32) / 255.0)
    thermal = th.unsqueeze(0).repeat(3, 1, 1)
    labels = torch.from_numpy(np.asarray(label_img).astype(np.int64))
    bad = (labels != IGNORE_INDEX) & ((labels < 0) | (labels >= manifest.num_classes))
    if bad.any():
        value = int(labels[bad][0])
        raise ValueError(f"sample {sample_id}: label {value} outside the {manifest.num_classes}-class set")
    return Sample(rgb=rgb, thermal=thermal, labels=labels, sample_id=sample_id)


class TreeDataset:
    """Index-based access to one split of an on-disk tree."""

    def __init__(self, manifest: Manifest, split: str, size: tuple[int, int] | None = None):
        if split not in manifest.splits:
            raise KeyError(f"unknown split {split!r}")
        self.manifest = manifest
        self.ids = manifest.splits[split]
        self.size = size

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index: int) -> Sample:
        return load_sample(self.manifest, self.ids[index], self.size)

    @property
    def class_names(self) -> list[str]:
        return self.manifest.class_names


def synth_class_names(num_classes: int) -> list[str]:
    return ["background"] + [f"class{i}" for i in range(1, num_classes)]


def synth_scene(seed: int, height: int, width: int, num_classes: int) -> Sample:
    """One deterministic scene for a seed; ``num_classes`` includes background."""
    if not 1 <= num_classes <= len(SYNTH_RGB):
        raise ValueError(f"num_classes must be in [1, {len(SYNTH_RGB)}]")
    rng = np.random.default_rng(seed)
    labels = np.zeros((height, width), dtype=np.int64)
    ys, xs = np.mgrid[0:height, 0:width]
    num_shapes = int(rng.integers(1, 5)) if num_classes > 1 else 0
    for _ in range(num_shapes):
        cls = int(rng.integers(1, num_classes))
        is_rect = bool(rng.integers(0, 2))
        cy = rng.uniform(0.2, 0.8) * height
        cx = rng.uniform(0.2, 0.8) * width
        ry = rng.uniform(0.15, 0.4) * height
        rx = rng.uniform(0.15, 0.4) * width
        if is_rect:
            # Edges snap to the 4-pixel grid so region boundaries stay
            # representable at the 1/4-scale mask supervision.
            y0, y1 = 4 * round((cy - ry) / 4), 4 * round((cy + ry) / 4)
            x0, x1 = 4 * round((cx - rx) / 4), 4 * round((cx + rx) / 4)
            mask = (ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)
        else:
            mask = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
        labels[mask] = cls
    noise = 0.02
    rgb = SYNTH_RGB[labels] + rng.normal(0.0, noise, (height, width, 3))
    th = SYNTH_THERMAL[labels] + rng.normal(0.0, noise, (height, width))
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    th = np.clip(th, 0.0, 1.0).astype(np.float32)
    return Sample(
        rgb=torch.from_numpy(rgb).permute(2, 0, 1).contiguous(),
        thermal=torch.from_numpy(th).unsqueeze(0).repeat(3, 1, 1),
        labels=torch.from_numpy(labels),
        sample_id=f"synth{seed:06d}",
    )


class SyntheticScenes:
    """Fixed list of scenes with seeds base_seed .. base_seed + count - 1."""

    def __init__(self, count: int, height: int, width: int, num_classes: int, base_seed: int = 0):
        self.count = count
        self.height = height
        self.width = width
        self.num_classes = num_classes
        self.base_seed = base_seed

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> Sample:
        if not 0 <= index < self.count:
            raise IndexError(index)
        return synth_scene(self.base_seed + index, self.height, self.width, self.num_classes)

    @property
    def class_names(self) -> list[str]:
        return synth_class_names(self.num_classes)


def write_synthetic_tree(
    out_root,
    counts: dict[str, int],
    height: int,
    width: int,
    num_classes: int,
    base_seed: int = 0,
) -> Manifest:
    """Materialize scenes as a dataset tree with a ``meta.json``."""
    root = Path(out_root)
    for sub in ("rgb", "thermal", "labels", "splits"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    seed = base_seed
    splits: dict[str, list[str]] = {}
    for split in SPLIT_NAMES:
        ids = []
        for _ in range(counts.get(split, 0)):
            sample = synth_scene(seed, height, width, num_classes)
            sid = sample.sample_id
            rgb = (sample.rgb.permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
            th = (sample.thermal[0].numpy() * 255.0).round().astype(np.uint8)
            lab = sample.labels.numpy().astype(np.uint8)
            Image.fromarray(rgb).save(root / "rgb" / f"{sid}.png")
            Image.fromarray(th).save(root / "thermal" / f"{sid}.png")
            Image.fromarray(lab).save(root / "labels" / f"{sid}.png")
            ids.append(sid)
            seed += 1
        (root / "splits" / f"{split}.txt").write_text("".join(i + "\n" for i in ids))
        splits[split] = ids
    (root / "meta.json").write_text(
        json.dumps({"class_names": synth_class_names(num_classes)}, indent=2) + "\n"
    )
    return Manifest(root=root, class_names=synth_class_names(num_classes), splits=splits)
