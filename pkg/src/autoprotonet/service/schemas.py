"""Wire types for the refinement HTTP service.

Images travel as base64-encoded 8-bit RGB PNGs in JSON string fields, both
directions. Every session-mutating request carries the version the client
last read; the service rejects stale writers with 409.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class SupportClass(BaseModel):
    """One class of the support set: a name plus its example images."""

    name: str = Field(min_length=1, max_length=128)
    images: list[str]


class CreateSessionRequest(BaseModel):
    model_id: str
    classes: list[SupportClass]


class SessionSummary(BaseModel):
    session_id: str
    version: int
    model_id: str
    class_names: list[str]
    support_counts: list[int]
    embedding_dim: int
    resolution: tuple[int, int]
    prototype_hashes: list[str]
    num_events: int


class PrototypesResponse(BaseModel):
    session_id: str
    version: int
    class_names: list[str]
    images: list[str]  # decoded prototypes, base64 PNG per class
    prototype_hashes: list[str]


class InterpolateRequest(BaseModel):
    class_index: int
    guide_image: str
    steps: int = 10
    include_embeddings: bool = False


class InterpolateResponse(BaseModel):
    class_index: int
    alphas: list[float]
    frames: list[str]  # base64 PNG per step
    embeddings: list[list[float]] | None = None


class CommitRequest(BaseModel):
    class_index: int
    alpha: float
    guide_image: str
    version: int


class ResetRequest(BaseModel):
    class_index: int
    version: int


class ClassifyRequest(BaseModel):
    images: list[str]


class ClassifyResponse(BaseModel):
    session_id: str
    version: int
    class_names: list[str]
    distributions: list[list[float]]
    predicted: list[int]


class EvaluateItem(BaseModel):
    image: str
    label: int


class EvaluateRequest(BaseModel):
    items: list[EvaluateItem]


class EvaluateResponse(BaseModel):
    session_id: str
    version: int
    accuracy: float
    predicted: list[int]
    correct: list[bool]
    misclassified_per_class: list[int]


class ModelInfo(BaseModel):
    model_id: str
    resolution: tuple[int, int]
    embedding_dim: int
    metadata: dict


class ModelsResponse(BaseModel):
    models: list[ModelInfo]


class HealthResponse(BaseModel):
    status: str
    models: int
    sessions: int
