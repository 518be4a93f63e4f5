"""Prototype math: class means, distance-softmax classification, and the
joint classification/reconstruction loss.

The numpy functions are the inference-time surface (refinement sessions,
evaluation, the HTTP service). The ``*_t`` helpers are the differentiable
torch equivalents used inside the training loops; the two paths are kept
numerically interchangeable and are tested against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

DISTANCES = ("sqeuclidean", "euclidean")


@dataclass(frozen=True)
class PrototypeSet:
    """One embedding per class plus the distance the classifier uses."""

    prototypes: np.ndarray  # (K, M) float32
    class_names: tuple[str, ...]
    distance: str = "sqeuclidean"

    def __post_init__(self):
        protos = np.asarray(self.prototypes, dtype=np.float32)
        object.__setattr__(self, "prototypes", protos)
        if protos.ndim != 2 or protos.shape[0] < 2:
            raise ValueError("prototypes must be a (K >= 2, M) array")
        if len(self.class_names) != protos.shape[0]:
            raise ValueError("need one class name per prototype")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")

    @property
    def way(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True)
class LossBreakdown:
    """Joint loss: classification plus lambda-weighted reconstruction."""

    classification: float
    reconstruction: float
    lam: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.classification + self.lam * self.reconstruction
        )


def compute_prototypes(
    embeddings: np.ndarray,
    labels: np.ndarray,
    way: int,
    class_names: tuple[str, ...] | None = None,
    distance: str = "sqeuclidean",
) -> PrototypeSet:
    """Elementwise mean of each class's embeddings, one prototype per class."""
    emb = np.asarray(embeddings, dtype=np.float32)
    labels = np.asarray(labels)
    if emb.ndim != 2 or emb.shape[0] != labels.shape[0]:
        raise ValueError("embeddings must be (N, M) with one label per row")
    protos = np.empty((way, emb.shape[1]), dtype=np.float32)
    for k in range(way):
        members = emb[labels == k]
        if len(members) == 0:
            raise ValueError(f"class index {k} has no support embeddings")
        protos[k] = members.mean(axis=0)
    if class_names is None:
        class_names = tuple(f"class-{k}" for k in range(way))
    return PrototypeSet(prototypes=protos, class_names=tuple(class_names), distance=distance)


def distances_to_prototypes(prototypes: PrototypeSet, queries: np.ndarray) -> np.ndarray:
    """(B, K) distances from each query embedding to each prototype."""
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None]
    if q.shape[1] != prototypes.dim:
        raise ValueError(
            f"query dimension {q.shape[1]} does not match prototype dimension {prototypes.dim}"
        )
    diff = q[:, None, :] - prototypes.prototypes.astype(np.float64)[None, :, :]
    d = np.einsum("bkm,bkm->bk", diff, diff)
    if prototypes.distance == "euclidean":
        d = np.sqrt(d)
    return d[0] if single else d


def classify_batch(prototypes: PrototypeSet, queries: np.ndarray) -> np.ndarray:
    """Softmax over negative distances, computed with max-subtraction."""
    d = distances_to_prototypes(prototypes, np.atleast_2d(np.asarray(queries)))
    logits = -d
    logits -= logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    return expd / expd.sum(axis=1, keepdims=True)


def classify(prototypes: PrototypeSet, query: np.ndarray) -> np.ndarray:
    """Distribution over classes for one query embedding."""
    q = np.asarray(query)
    if q.ndim != 1:
        raise ValueError("classify takes a single embedding; use classify_batch")
    return classify_batch(prototypes, q[None])[0]


def predict(prototypes: PrototypeSet, queries: np.ndarray) -> np.ndarray:
    """Argmax class per query; ties resolve to the lowest class index."""
    d = distances_to_prototypes(prototypes, np.atleast_2d(np.asarray(queries)))
    return d.argmin(axis=1)


def classification_loss(
    prototypes: PrototypeSet, queries: np.ndarray, labels: np.ndarray
) -> float:
    """Mean negative log-likelihood of the true classes."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("need at least one query")
    d = distances_to_prototypes(prototypes, np.atleast_2d(np.asarray(queries)))
    logits = -d
    logits -= logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1))
    return float(np.mean(log_norm - logits[np.arange(len(labels)), labels]))


def reconstruction_loss(originals: np.ndarray, reconstructions: np.ndarray) -> float:
    """Mean squared error over all pixels of all images."""
    a = np.asarray(originals, dtype=np.float64)
    b = np.asarray(reconstructions, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def finetune(model, support_images, support_labels, way=None, class_names=None):
    """Task adaptation for prototype classifiers: compute prototypes from the
    support set and return them with the model untouched. No weights change.
    """
    from .network import encode

    labels = np.asarray(support_labels)
    if way is None:
        way = int(labels.max()) + 1
    embeddings = encode(model, support_images, mode="eval")
    protos = compute_prototypes(embeddings, labels, way, class_names=class_names)
    return protos, model


# ---------------------------------------------------------------------------
# Differentiable torch counterparts (training path)
# ---------------------------------------------------------------------------


def prototype_means_t(embeddings: torch.Tensor, labels: torch.Tensor, way: int) -> torch.Tensor:
    """Class-mean prototypes with gradient flow through the mean."""
    return torch.stack([embeddings[labels == k].mean(dim=0) for k in range(way)])


def sq_distances_t(queries: torch.Tensor, prototypes: torch.Tensor) -> torch.Tensor:
    diff = queries[:, None, :] - prototypes[None, :, :]
    return (diff * diff).sum(dim=-1)


def episode_nll_t(
    prototypes: torch.Tensor, query_emb: torch.Tensor, query_labels: torch.Tensor
) -> torch.Tensor:
    """Mean NLL of the softmax over negative squared distances."""
    return F.cross_entropy(-sq_distances_t(query_emb, prototypes), query_labels)


def reconstruction_mse_t(originals: torch.Tensor, reconstructions: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(reconstructions, originals)
