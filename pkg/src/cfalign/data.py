"""Synthetic two-domain data for pixel-wise classification.

Each image is a Voronoi partition of the plane: a few seed points get class
labels and every pixel takes the class of its nearest point, which yields
contiguous regions of varying shape. Pixel colors are the class palette color
plus Gaussian noise. Target-domain images run through an extra per-channel
affine shift plus noise, so source-trained classifiers degrade there.

Target-train labels are still written to disk: the trainer may read them to
score pseudo-label accuracy for the metrics log, never to compute a loss.
Files are one JSON header line followed by tensors in the shared binary
layout, so identical specs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, GenerationError
from .tensor import read_tensor, write_tensor

__all__ = [
    "SynthSpec",
    "Split",
    "Dataset",
    "default_palette",
    "generate_dataset",
    "save_split",
    "load_split",
    "save_dataset",
    "load_dataset",
    "SPLIT_FILES",
]

SPLIT_FILES = {
    "source_train": "source_train.bin",
    "target_train": "target_train.bin",
    "target_eval": "target_eval.bin",
}

_RETRIES = 20


@dataclass
class SynthSpec:
    height: int = 32
    width: int = 32
    channels: int = 3
    classes: int = 5
    train_images: int = 200  # per domain
    eval_images: int = 50
    regions: int = 6  # Voronoi seed points per image
    color_std: float = 0.14
    class_means: list | None = None  # (classes, channels); None: default palette
    shift_scale: list | float = 2.2
    shift_offset: list | float = 0.7
    target_noise: float = 0.12
    seed: int = 0

    def validate(self) -> "SynthSpec":
        checks = [
            (self.height >= 2 and self.width >= 2, "image sides must be at least 2"),
            (self.channels >= 1, "channels must be at least 1"),
            (self.classes >= 2, "classes must be at least 2"),
            (self.train_images >= 1, "train_images must be at least 1"),
            (self.eval_images >= 1, "eval_images must be at least 1"),
            (self.regions >= 1, "regions must be at least 1"),
            (self.color_std >= 0, "color_std must be nonnegative"),
            (self.target_noise >= 0, "target_noise must be nonnegative"),
        ]
        problems = [msg for ok, msg in checks if not ok]
        if problems:
            raise ConfigError("; ".join(problems))
        if not np.all(self.scale_vector() > 0):
            raise ConfigError("shift_scale entries must be positive")
        if self.class_means is not None:
            m = np.asarray(self.class_means, dtype=float)
            if m.shape != (self.classes, self.channels):
                raise ConfigError(
                    f"class_means must be {self.classes}x{self.channels}, got {m.shape}"
                )
        return self

    def palette(self) -> np.ndarray:
        if self.class_means is not None:
            return np.asarray(self.class_means, dtype=float)
        return default_palette(self.classes, self.channels)

    def scale_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.shift_scale, float), (self.channels,)).copy()

    def offset_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.shift_offset, float), (self.channels,)).copy()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SynthSpec":
        known = cls.field_names()
        kwargs = {k: v for k, v in mapping.items() if k in known}
        return cls(**kwargs).validate()


def default_palette(classes: int, channels: int) -> np.ndarray:
    """Well-separated class colors, independent of the dataset seed."""
    if classes == 5 and channels == 3:
        return np.array(
            [
                [0.85, 0.15, 0.15],
                [0.15, 0.80, 0.20],
                [0.15, 0.20, 0.85],
                [0.80, 0.75, 0.10],
                [0.60, 0.15, 0.80],
            ]
        )
    rng = np.random.default_rng(classes * 1000 + channels)
    return rng.uniform(0.05, 0.95, size=(classes, channels))


@dataclass
class Split:
    images: np.ndarray  # (n, channels, height, width) float64
    labels: np.ndarray | None  # (n, height, width) int64

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class Dataset:
    spec: SynthSpec
    source_train: Split
    target_train: Split
    target_eval: Split


def _voronoi_labels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    points = rng.uniform(0, [spec.height, spec.width], size=(spec.regions, 2))
    classes = rng.integers(0, spec.classes, size=spec.regions)
    rows, cols = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    grid = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(float)
    d2 = ((grid[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    return classes[d2.argmin(axis=1)].reshape(spec.height, spec.width)


def _paint(labels: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    palette = spec.palette()
    base = palette[labels]  # (h, w, channels)
    noisy = base + rng.normal(0.0, spec.color_std, size=base.shape)
    return noisy.transpose(2, 0, 1)


def _generate_split(
    spec: SynthSpec, rng: np.random.Generator, count: int, domain: str
) -> Split:
    """One split; regenerated wholesale until every class occurs somewhere."""
    scale = spec.scale_vector().reshape(-1, 1, 1)
    offset = spec.offset_vector().reshape(-1, 1, 1)
    for _ in range(_RETRIES):
        images = np.empty((count, spec.channels, spec.height, spec.width))
        labels = np.empty((count, spec.height, spec.width), dtype=np.int64)
        for i in range(count):
            lab = _voronoi_labels(spec, rng)
            img = _paint(lab, spec, rng)
            if domain == "target":
                img = scale * img + offset
                if spec.target_noise > 0:
                    img = img + rng.normal(0.0, spec.target_noise, size=img.shape)
            images[i] = img
            labels[i] = lab
        if len(np.unique(labels)) == spec.classes:
            return Split(images=images, labels=labels)
    raise GenerationError(
        f"could not cover all {spec.classes} classes in {count} {domain} images "
        f"after {_RETRIES} attempts; raise train_images or regions"
    )


def generate_dataset(spec: SynthSpec) -> Dataset:
    """Deterministic by spec.seed: same spec, same arrays, byte for byte."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    source_train = _generate_split(spec, rng, spec.train_images, "source")
    target_train = _generate_split(spec, rng, spec.train_images, "target")
    target_eval = _generate_split(spec, rng, spec.eval_images, "target")
    return Dataset(spec, source_train, target_train, target_eval)


# ---------------------------------------------------------------------------
# file layout: one JSON header line, then images and labels tensors


def save_split(path: str | Path, split: Split, spec: SynthSpec, name: str) -> None:
    tensors = ["images"] + (["labels"] if split.labels is not None else [])
    header = {
        "format": "cfalign-dataset",
        "version": 1,
        "split": name,
        "count": len(split),
        "classes": spec.classes,
        "spec": spec.to_dict(),
        "tensors": tensors,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        write_tensor(fh, split.images)
        if split.labels is not None:
            write_tensor(fh, split.labels.astype(np.float64))


def load_split(path: str | Path) -> tuple[Split, dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} does not start with a dataset header: {exc}") from exc
        if header.get("format") != "cfalign-dataset":
            raise ConfigError(f"{path} is not a dataset file")
        images = None
        labels = None
        for name in header["tensors"]:
            arr = read_tensor(fh)
            if name == "images":
                images = arr
            elif name == "labels":
                labels = arr.astype(np.int64)
    if images is None:
        raise ConfigError(f"{path} holds no images tensor")
    return Split(images=images, labels=labels), header


def save_dataset(directory: str | Path, data: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_split(directory / SPLIT_FILES["source_train"], data.source_train, data.spec, "source_train")
    save_split(directory / SPLIT_FILES["target_train"], data.target_train, data.spec, "target_train")
    save_split(directory / SPLIT_FILES["target_eval"], data.target_eval, data.spec, "target_eval")


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    splits = {}
    header = None
    for name, fname in SPLIT_FILES.items():
        path = directory / fname
        if not path.exists():
            raise ConfigError(f"missing dataset file {path}")
        splits[name], header = load_split(path)
    spec = SynthSpec.from_mapping(header["spec"])
    return Dataset(spec, splits["source_train"], splits["target_train"], splits["target_eval"])
