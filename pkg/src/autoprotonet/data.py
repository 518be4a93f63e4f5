"""Class-labeled image datasets and N-way K-shot episode sampling.

Two dataset sources are supported: a directory tree of per-class image
folders (``root/<class_name>/<image>.png``) and a deterministic synthetic
generator that renders shape-on-background images, small enough to train
and evaluate on a laptop CPU in minutes.

Episode sampling uses a counter-based Philox generator seeded through
``numpy.random.SeedSequence`` so that episodes reproduce across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .images import resize_bilinear, snap_to_uint8_grid

SPLITS = ("meta-train", "meta-val", "meta-test")

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class DatasetError(Exception):
    """Raised for unreadable, empty, or inconsistently described datasets."""


@dataclass(frozen=True)
class ClassDataset:
    """Images grouped by class for one meta-split.

    ``classes`` maps each class name to a float32 array of shape
    (N, 3, H, W) with values in [0, 1].
    """

    classes: tuple[tuple[str, np.ndarray], ...]
    resolution: tuple[int, int]
    split: str = "meta-train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        names = [name for name, _ in self.classes]
        if len(set(names)) != len(names):
            raise DatasetError("class names must be unique within a split")
        h, w = self.resolution
        for name, images in self.classes:
            if images.ndim != 4 or images.shape[1:] != (3, h, w):
                raise DatasetError(
                    f"class {name!r}: expected images of shape (N, 3, {h}, {w}), "
                    f"got {images.shape}"
                )

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.classes)

    def images_for(self, name: str) -> np.ndarray:
        for cls_name, images in self.classes:
            if cls_name == name:
                return images
        raise KeyError(name)


@dataclass(frozen=True)
class EpisodeSpec:
    """Shape of one few-shot task: classes per task, labeled examples per
    class, and held-out queries per class."""

    way: int
    shot: int
    query_count: int
    seed: int | None = None

    def __post_init__(self):
        if self.way < 2:
            raise ValueError("way must be >= 2")
        if self.shot < 1 or self.query_count < 1:
            raise ValueError("shot and query_count must be >= 1")


@dataclass(frozen=True)
class Episode:
    """One sampled task: a labeled support set and a disjoint query set.

    Labels are class indices in {0..way-1}; ``class_names[i]`` is the source
    dataset class behind index i.
    """

    support_images: np.ndarray
    support_labels: np.ndarray
    query_images: np.ndarray
    query_labels: np.ndarray
    class_names: tuple[str, ...]

    @property
    def way(self) -> int:
        return len(self.class_names)


def _rng_from_seed(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def sample_episode(
    dataset: ClassDataset,
    spec: EpisodeSpec,
    rng: np.random.Generator | None = None,
) -> Episode:
    """Draw one episode: ``way`` classes without replacement, then per class
    ``shot + query_count`` distinct images split into support and query.

    Priority for randomness: explicit ``rng`` argument, else ``spec.seed``,
    else fresh OS entropy.
    """
    if spec.way > dataset.num_classes:
        raise ValueError(
            f"way={spec.way} exceeds the {dataset.num_classes} classes available"
        )
    if rng is None:
        rng = _rng_from_seed(spec.seed) if spec.seed is not None else np.random.default_rng()

    chosen = rng.choice(dataset.num_classes, size=spec.way, replace=False)
    needed = spec.shot + spec.query_count
    support_images, query_images = [], []
    support_labels, query_labels = [], []
    names = []
    for label, cls_idx in enumerate(chosen):
        name, images = dataset.classes[int(cls_idx)]
        if len(images) < needed:
            raise DatasetError(
                f"class {name!r} has {len(images)} images, "
                f"but shot+query_count={needed} are required"
            )
        picks = rng.choice(len(images), size=needed, replace=False)
        support_images.append(images[picks[: spec.shot]])
        query_images.append(images[picks[spec.shot :]])
        support_labels.extend([label] * spec.shot)
        query_labels.extend([label] * spec.query_count)
        names.append(name)

    return Episode(
        support_images=np.concatenate(support_images, axis=0),
        support_labels=np.asarray(support_labels, dtype=np.int64),
        query_images=np.concatenate(query_images, axis=0),
        query_labels=np.asarray(query_labels, dtype=np.int64),
        class_names=tuple(names),
    )


# ---------------------------------------------------------------------------
# Directory datasets
# ---------------------------------------------------------------------------


def load_directory_dataset(
    root_path,
    resolution: tuple[int, int] = (32, 32),
    split_manifest=None,
) -> dict[str, ClassDataset]:
    """Load ``root/<class_name>/<image>.{png,jpg}`` into per-split datasets.

    Images are decoded, bilinearly resized to ``resolution``, and scaled to
    [0, 1]. With no manifest every class lands in meta-train; otherwise the
    manifest (JSON object class name -> split) must cover every class on
    disk exactly.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no classes found under {root}")

    assignments: dict[str, str] = {}
    if split_manifest is not None:
        with open(split_manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        on_disk = {p.name for p in class_dirs}
        for cls, split in manifest.items():
            if cls not in on_disk:
                raise DatasetError(f"split manifest names missing class {cls!r}")
            if split not in SPLITS:
                raise DatasetError(f"split manifest assigns {cls!r} to unknown split {split!r}")
            assignments[cls] = split
        unassigned = sorted(on_disk - set(assignments))
        if unassigned:
            raise DatasetError(f"split manifest does not cover classes: {unassigned}")

    per_split: dict[str, list[tuple[str, np.ndarray]]] = {s: [] for s in SPLITS}
    for class_dir in class_dirs:
        files = sorted(
            p for p in class_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not files:
            raise DatasetError(f"class {class_dir.name!r} contains no images")
        images = np.stack([_load_image_file(p, resolution) for p in files])
        split = assignments.get(class_dir.name, "meta-train")
        per_split[split].append((class_dir.name, images))

    return {
        split: ClassDataset(classes=tuple(classes), resolution=resolution, split=split)
        for split, classes in per_split.items()
        if classes
    }


def _load_image_file(path: Path, resolution: tuple[int, int]) -> np.ndarray:
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise DatasetError(f"unreadable image file {path}: {exc}") from exc
    return resize_bilinear(rgb.transpose(2, 0, 1), resolution)


# ---------------------------------------------------------------------------
# Synthetic shape dataset
# ---------------------------------------------------------------------------

SHAPE_NAMES = ("circle", "square", "triangle", "cross", "star", "ring")

FILL_COLORS = (
    ("red", (0.85, 0.10, 0.10)),
    ("green", (0.10, 0.75, 0.15)),
    ("blue", (0.15, 0.25, 0.85)),
    ("yellow", (0.90, 0.85, 0.10)),
    ("magenta", (0.85, 0.15, 0.80)),
    ("cyan", (0.10, 0.80, 0.85)),
    ("orange", (0.95, 0.55, 0.05)),
    ("purple", (0.50, 0.15, 0.75)),
)

MAX_SYNTHETIC_CLASSES = len(SHAPE_NAMES) * len(FILL_COLORS)

_BACKGROUND = 0.84


def class_descriptor(class_index: int) -> tuple[str, str]:
    """Map a class index to its (shape, color) identity.

    Shape cycles fastest and the color index is offset by a stride coprime
    to the palette size, so consecutive classes differ in both shape and
    color and all 48 combinations are distinct.
    """
    if not 0 <= class_index < MAX_SYNTHETIC_CLASSES:
        raise ValueError(
            f"class_index must be in [0, {MAX_SYNTHETIC_CLASSES}), got {class_index}"
        )
    shape = SHAPE_NAMES[class_index % len(SHAPE_NAMES)]
    color_idx = (class_index + 7 * (class_index // len(SHAPE_NAMES))) % len(FILL_COLORS)
    return shape, FILL_COLORS[color_idx][0]


def synthetic_class_name(class_index: int) -> str:
    shape, color = class_descriptor(class_index)
    return f"{shape}_{color}"


def _shape_sdf(shape: str, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Signed distance (negative inside) of unit-sized shapes, vectorized
    over coordinate grids."""
    if shape == "circle":
        return np.hypot(px, py) - 0.9
    if shape == "square":
        return np.maximum(np.abs(px), np.abs(py)) - 0.78
    if shape == "triangle":
        angles = (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3)
        planes = [-(np.cos(a) * px + np.sin(a) * py) for a in angles]
        return np.maximum.reduce(planes) - 0.5
    if shape == "cross":
        bar_h = np.maximum(np.abs(px) - 0.95, np.abs(py) - 0.32)
        bar_v = np.maximum(np.abs(px) - 0.32, np.abs(py) - 0.95)
        return np.minimum(bar_h, bar_v)
    if shape == "star":
        rho = np.hypot(px, py)
        ang = np.arctan2(py, px)
        sector = np.mod(ang, 2 * np.pi / 5) / (2 * np.pi / 5)
        spike = 1.0 - 2.0 * np.abs(sector - 0.5)
        radius = 0.38 + (1.0 - 0.38) * spike
        return rho - radius
    if shape == "ring":
        return np.abs(np.hypot(px, py) - 0.68) - 0.26
    raise ValueError(f"unknown shape {shape!r}")


def render_class_image(
    class_index: int,
    resolution: tuple[int, int],
    rng: np.random.Generator,
    occlusion: float = 0.0,
) -> np.ndarray:
    """Render one synthetic image of a class: its shape in its fill color on
    a jittered light background, at random position, scale, and rotation.

    ``occlusion`` in [0, 1) paints a background-colored band over that
    fraction of the shape's extent, centered on the shape, producing the
    deliberately unrepresentative images used in refinement scenarios.
    """
    h, w = resolution
    shape, color_name = class_descriptor(class_index)
    fill = np.array(dict(FILL_COLORS)[color_name], dtype=np.float64)

    cx, cy = rng.uniform(-0.25, 0.25, size=2)
    scale = 0.55 * rng.uniform(0.75, 1.25)
    theta = rng.uniform(0.0, 2 * np.pi)
    background = np.clip(_BACKGROUND + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)
    fill = np.clip(fill + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)

    ys = np.linspace(-1.0, 1.0, h)
    xs = np.linspace(-1.0, 1.0, w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    dx, dy = gx - cx, gy - cy
    cos_t, sin_t = math.cos(-theta), math.sin(-theta)
    px = (cos_t * dx - sin_t * dy) / scale
    py = (sin_t * dx + cos_t * dy) / scale

    sdf = _shape_sdf(shape, px, py)
    edge = 1.5 * (2.0 / min(h, w)) / scale
    alpha = np.clip(0.5 - sdf / edge, 0.0, 1.0)

    img = background[:, None, None] * (1.0 - alpha) + fill[:, None, None] * alpha
    if occlusion > 0.0:
        band = np.abs(gy - cy) <= occlusion * scale
        img = np.where(band[None, :, :], background[:, None, None], img)
    # snap to the 8-bit grid so writing to PNG and reading back is lossless
    return snap_to_uint8_grid(img.astype(np.float32))


def generate_synthetic_dataset(
    num_classes: int,
    images_per_class: int,
    resolution: tuple[int, int] = (32, 32),
    seed: int = 0,
    split: str = "meta-train",
    class_offset: int = 0,
) -> ClassDataset:
    """Deterministically render a shape-and-color dataset.

    Each class draws from its own child stream of ``seed``, so the images
    of class i do not depend on how many other classes are requested.
    ``class_offset`` selects which shape/color identities are used, letting
    disjoint splits be built from one identity sequence.
    """
    if num_classes < 2 or images_per_class < 2:
        raise ValueError("need num_classes >= 2 and images_per_class >= 2")
    if class_offset + num_classes > MAX_SYNTHETIC_CLASSES:
        raise ValueError(
            f"at most {MAX_SYNTHETIC_CLASSES} distinct synthetic classes exist"
        )
    classes = []
    for i in range(class_offset, class_offset + num_classes):
        rng = _rng_from_seed((seed, i))
        images = np.stack(
            [render_class_image(i, resolution, rng) for _ in range(images_per_class)]
        )
        classes.append((synthetic_class_name(i), images))
    return ClassDataset(classes=tuple(classes), resolution=resolution, split=split)


def synthetic_benchmark(
    num_train: int = 20,
    num_val: int = 0,
    num_test: int = 5,
    images_per_class: int = 50,
    resolution: tuple[int, int] = (32, 32),
    seed: int = 0,
) -> dict[str, ClassDataset]:
    """Desk-scale stand-in for the benchmark datasets: disjoint synthetic
    meta-train/val/test splits drawn from one class-identity sequence."""
    splits: dict[str, ClassDataset] = {}
    offset = 0
    for split, count in (
        ("meta-train", num_train),
        ("meta-val", num_val),
        ("meta-test", num_test),
    ):
        if count > 0:
            splits[split] = generate_synthetic_dataset(
                count,
                images_per_class,
                resolution=resolution,
                seed=seed,
                split=split,
                class_offset=offset,
            )
        offset += count
    return splits


def save_dataset_tree(dataset: ClassDataset, root_path) -> None:
    """Materialize a dataset as the on-disk directory layout (8-bit PNGs)."""
    from .images import save_png

    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    width = len(str(max(len(imgs) for _, imgs in dataset.classes)))
    for name, images in dataset.classes:
        cls_dir = root / name
        cls_dir.mkdir(exist_ok=True)
        for i, img in enumerate(images):
            save_png(img, cls_dir / f"{i:0{width}d}.png")
