"""Episodic and fixed-set evaluation, report serialization, image grids.

Episodic evaluation repeatedly samples tasks from a held-out split,
computes prototypes from each task's support set with frozen weights, and
scores query images by nearest prototype. Reported accuracy is the mean
over episodes with a 95% confidence half-width of 1.96 * s / sqrt(n)
(sample standard deviation, n = number of episodes).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .data import ClassDataset, EpisodeSpec, sample_episode
from .images import check_batch, to_uint8
from .network import AutoProtoNet, decode, encode
from .protonet import (
    LossBreakdown,
    PrototypeSet,
    classification_loss,
    classify_batch,
    compute_prototypes,
    distances_to_prototypes,
    predict,
    reconstruction_loss,
)


def _seed_tuple(seed) -> tuple[int, ...]:
    if seed is None:
        raise ValueError("evaluation requires an explicit seed")
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _episode_rng(seed, index: int) -> np.random.Generator:
    entropy = _seed_tuple(seed) + (index,)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class EvaluationReport:
    """Accuracy over a batch of episodes with its 95% confidence half-width."""

    way: int
    shot: int
    query_count: int
    num_episodes: int
    per_episode_accuracy: list[float]
    mean_accuracy: float
    ci95_halfwidth: float
    seed: tuple[int, ...]
    mean_losses: LossBreakdown | None = None

    @classmethod
    def from_accuracies(
        cls, accuracies, spec: EpisodeSpec, seed, mean_losses=None
    ) -> "EvaluationReport":
        acc = np.asarray(accuracies, dtype=np.float64)
        if acc.size == 0:
            raise ValueError("report needs at least one episode")
        half = 0.0
        if acc.size > 1:
            half = float(1.96 * acc.std(ddof=1) / np.sqrt(acc.size))
        return cls(
            way=spec.way,
            shot=spec.shot,
            query_count=spec.query_count,
            num_episodes=int(acc.size),
            per_episode_accuracy=[float(a) for a in acc],
            mean_accuracy=float(acc.mean()),
            ci95_halfwidth=half,
            seed=_seed_tuple(seed),
            mean_losses=mean_losses,
        )

    def to_dict(self) -> dict:
        d = {
            "way": self.way,
            "shot": self.shot,
            "query_count": self.query_count,
            "num_episodes": self.num_episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95_halfwidth": self.ci95_halfwidth,
            "seed": list(self.seed),
            "per_episode_accuracy": self.per_episode_accuracy,
        }
        if self.mean_losses is not None:
            d["mean_losses"] = {
                "classification": self.mean_losses.classification,
                "reconstruction": self.mean_losses.reconstruction,
                "lam": self.mean_losses.lam,
                "total": self.mean_losses.total,
            }
        return d

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "accuracy"])
            for i, acc in enumerate(self.per_episode_accuracy):
                writer.writerow([i, f"{acc:.10g}"])

    def summary(self) -> str:
        return (
            f"{self.way}-way {self.shot}-shot: "
            f"{100 * self.mean_accuracy:.2f} +/- {100 * self.ci95_halfwidth:.2f}% "
            f"over {self.num_episodes} episodes"
        )


def episode_accuracy(model: AutoProtoNet, episode, distance: str = "sqeuclidean") -> float:
    """Frozen-weights accuracy on one episode: prototypes from the support
    set, queries scored by nearest prototype (ties to the lowest index)."""
    support_z = encode(model, episode.support_images)
    query_z = encode(model, episode.query_images)
    protos = compute_prototypes(
        support_z, episode.support_labels, episode.way, episode.class_names, distance=distance
    )
    predictions = predict(protos, query_z)
    return float(np.mean(predictions == episode.query_labels))


def evaluate_episodic(
    model: AutoProtoNet,
    dataset: ClassDataset,
    spec: EpisodeSpec,
    num_episodes: int = 600,
    seed=0,
    lam: float = 1.0,
    include_losses: bool = False,
    distance: str = "sqeuclidean",
) -> EvaluationReport:
    """Sample ``num_episodes`` tasks (episode i drawn from a counter-based
    stream keyed on (seed, i)) and report mean accuracy with 95% CI."""
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    accuracies = []
    cls_losses = []
    rec_losses = []
    for i in range(num_episodes):
        episode = sample_episode(dataset, spec, rng=_episode_rng(seed, i))
        support_z = encode(model, episode.support_images)
        query_z = encode(model, episode.query_images)
        protos = compute_prototypes(
            support_z, episode.support_labels, episode.way, episode.class_names, distance=distance
        )
        dists = distances_to_prototypes(protos, query_z)
        predictions = np.argmin(dists, axis=1)
        accuracies.append(float(np.mean(predictions == episode.query_labels)))
        if include_losses:
            cls_losses.append(classification_loss(protos, query_z, episode.query_labels))
            images = np.concatenate([episode.support_images, episode.query_images])
            recon = decode(model, encode(model, images))
            rec_losses.append(reconstruction_loss(images, recon))
    mean_losses = None
    if include_losses:
        mean_losses = LossBreakdown(
            classification=float(np.mean(cls_losses)),
            reconstruction=float(np.mean(rec_losses)),
            lam=lam,
        )
    return EvaluationReport.from_accuracies(accuracies, spec, seed, mean_losses)


@dataclass
class FixedSetResult:
    """Per-image outcomes of classifying a labeled image list."""

    accuracy: float
    predictions: list[int]
    correct: list[bool]
    probabilities: np.ndarray
    misclassified_per_class: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "predictions": self.predictions,
            "correct": self.correct,
            "probabilities": self.probabilities.tolist(),
            "misclassified_per_class": self.misclassified_per_class,
        }


def evaluate_fixed_set(source, images, labels) -> FixedSetResult:
    """Score a fixed labeled set against an explicit prototype set (the
    prototypes may have been hand-refined; they need not be class means).

    ``source`` is either a refinement session (anything with ``model`` and
    ``prototypes`` attributes) or a ``(model, prototypes)`` pair.
    """
    if isinstance(source, tuple):
        model, prototypes = source
    else:
        model, prototypes = source.model, source.prototypes
    images = check_batch(np.asarray(images, dtype=np.float32))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ValueError("labels must be a vector aligned with images")
    if labels.size and (labels.min() < 0 or labels.max() >= prototypes.way):
        raise ValueError(f"labels must lie in [0, {prototypes.way})")
    if images.shape[0] == 0:
        return FixedSetResult(0.0, [], [], np.zeros((0, prototypes.way)), [0] * prototypes.way)
    z = encode(model, images)
    probabilities = classify_batch(prototypes, z)
    predictions = predict(prototypes, z)
    correct = predictions == labels
    missed = [0] * prototypes.way
    for label, ok in zip(labels, correct):
        if not ok:
            missed[int(label)] += 1
    return FixedSetResult(
        accuracy=float(correct.mean()),
        predictions=[int(p) for p in predictions],
        correct=[bool(c) for c in correct],
        probabilities=probabilities,
        misclassified_per_class=missed,
    )


def dataset_reconstruction_mse(model: AutoProtoNet, dataset: ClassDataset, limit: int | None = None) -> float:
    """Mean reconstruction MSE over every image of the dataset (or the
    first ``limit`` per class), with frozen weights."""
    total = 0.0
    count = 0
    for _, images in dataset.classes:
        batch = images if limit is None else images[:limit]
        recon = decode(model, encode(model, batch))
        total += reconstruction_loss(batch, recon) * batch.shape[0]
        count += batch.shape[0]
    return total / count


def save_image_grid(images, path, columns: int | None = None, upscale: int = 1, pad: int = 2) -> None:
    """Tile a batch of images into one PNG, nearest-neighbor upscaled."""
    images = check_batch(np.asarray(images, dtype=np.float32))
    n = images.shape[0]
    if n == 0:
        raise ValueError("cannot render an empty grid")
    if columns is None:
        columns = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / columns))
    h, w = images.shape[2] * upscale, images.shape[3] * upscale
    canvas = np.full(
        (rows * h + pad * (rows + 1), columns * w + pad * (columns + 1), 3), 255, dtype=np.uint8
    )
    for i in range(n):
        tile = Image.fromarray(np.transpose(to_uint8(images[i]), (1, 2, 0)))
        if upscale != 1:
            tile = tile.resize((w, h), Image.NEAREST)
        r, c = divmod(i, columns)
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        canvas[y : y + h, x : x + w] = np.asarray(tile)
    Image.fromarray(canvas).save(path, format="PNG")
