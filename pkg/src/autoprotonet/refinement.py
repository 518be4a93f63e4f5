"""Human-guided prototype refinement sessions.

A session wraps a frozen model plus the prototypes computed from a support
set. The human workflow: decode each prototype back to pixels to inspect
it, sweep the line between a prototype and an uploaded guide image in
embedding space (decoding every waypoint), then commit one waypoint as the
class's new prototype. Weights never change; only prototype vectors move.

All images entering a session are snapped to the 8-bit RGB grid first, so
a session saved to disk (PNGs plus JSON) replays to bit-identical
prototypes, and HTTP round-trips agree bit-for-bit with direct calls.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import secrets
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .images import check_batch, check_image, load_png, save_png, snap_to_uint8_grid
from .network import AutoProtoNet, decode, encode
from .protonet import PrototypeSet, classify_batch, compute_prototypes

SESSION_FILE = "session.json"


class SessionStoreError(RuntimeError):
    """Raised when a persisted session directory is missing or inconsistent."""


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="microseconds")


def _new_session_id() -> str:
    return secrets.token_hex(8)


@dataclass(frozen=True)
class RefinementEvent:
    """One committed refinement: class k's prototype moved along the line
    toward the guide image's embedding."""

    class_index: int
    alpha: float
    guide_image: np.ndarray  # (3, H, W) float32, already uint8-snapped
    old_prototype: np.ndarray  # (M,) float32
    new_prototype: np.ndarray  # (M,) float32
    timestamp: str


@dataclass(frozen=True)
class InterpolationStrip:
    """Decoded waypoints along the prototype-to-guide line in embedding
    space: alphas[i] = i / (steps - 1), embeddings[i] the blended vector,
    frames[i] its decoding."""

    class_index: int
    alphas: tuple[float, ...]
    embeddings: np.ndarray  # (steps, M) float32
    frames: np.ndarray  # (steps, 3, H, W) float32

    @property
    def steps(self) -> int:
        return len(self.alphas)


@dataclass
class RefinementSession:
    """A refinement working set: frozen model, current prototypes, the
    support images they came from, and the committed-event history. The
    history always derives the current prototypes from the initial ones
    (a reset removes the class's events rather than appending one).

    ``version`` increments on every commit and reset; writers must present
    the version they read (optimistic concurrency for the HTTP service).
    """

    session_id: str
    model: AutoProtoNet
    prototypes: PrototypeSet
    initial_prototypes: PrototypeSet
    support_images: tuple[np.ndarray, ...]  # per class: (shot_k, 3, H, W)
    history: list[RefinementEvent] = field(default_factory=list)
    version: int = 0
    model_ref: str | None = None
    store_dir: Path | None = None
    created: str = field(default_factory=_utc_now)

    @property
    def way(self) -> int:
        return self.prototypes.way

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.prototypes.class_names


def blend_embedding(prototype: np.ndarray, guide: np.ndarray, alpha: float) -> np.ndarray:
    """(1 - alpha) * prototype + alpha * guide in float32.

    Exact at the endpoints: alpha=0 returns the prototype's bits, alpha=1
    the guide embedding's bits.
    """
    a = np.float32(alpha)
    return (np.float32(1.0) - a) * prototype + a * guide


def create_session(
    model: AutoProtoNet,
    support_images,
    support_labels,
    class_names=None,
    distance: str = "sqeuclidean",
    session_id: str | None = None,
    model_ref: str | None = None,
    store_dir=None,
) -> RefinementSession:
    """Open a session: snap the support set to the 8-bit grid, embed it
    with frozen weights, and average per class into the starting prototypes."""
    images = snap_to_uint8_grid(check_batch(np.asarray(support_images, dtype=np.float32)))
    labels = np.asarray(support_labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ValueError("support_labels must be a vector aligned with support_images")
    way = int(labels.max()) + 1 if labels.size else 0
    embeddings = encode(model, images)
    prototypes = compute_prototypes(embeddings, labels, way, class_names, distance=distance)
    per_class = tuple(np.ascontiguousarray(images[labels == k]) for k in range(way))
    session = RefinementSession(
        session_id=session_id or _new_session_id(),
        model=model,
        prototypes=prototypes,
        initial_prototypes=prototypes,
        support_images=per_class,
        model_ref=model_ref,
        store_dir=Path(store_dir) if store_dir is not None else None,
    )
    if session.store_dir is not None:
        save_session(session)
    return session


def visualize_prototypes(session: RefinementSession) -> np.ndarray:
    """Decode every current prototype to pixels: (way, 3, H, W) float32."""
    return decode(session.model, session.prototypes.prototypes)


def _check_class_index(session: RefinementSession, class_index: int) -> int:
    class_index = int(class_index)
    if not 0 <= class_index < session.way:
        raise ValueError(f"class_index {class_index} out of range [0, {session.way})")
    return class_index


def _guide_embedding(session: RefinementSession, guide_image) -> tuple[np.ndarray, np.ndarray]:
    guide = snap_to_uint8_grid(check_image(np.asarray(guide_image, dtype=np.float32)))
    expected = session.support_images[0].shape[2:]
    if guide.shape[1:] != expected:
        raise ValueError(f"guide image must be 3x{expected[0]}x{expected[1]}, got {guide.shape}")
    return guide, encode(session.model, guide)[0]


def interpolate(
    session: RefinementSession, class_index: int, guide_image, steps: int = 10
) -> InterpolationStrip:
    """Sweep the line from class ``class_index``'s prototype (alpha 0) to
    the guide image's embedding (alpha 1) in ``steps`` even increments,
    decoding each blended vector to pixels."""
    class_index = _check_class_index(session, class_index)
    if steps < 2:
        raise ValueError("steps must be >= 2 (both endpoints are included)")
    _, guide_z = _guide_embedding(session, guide_image)
    prototype = session.prototypes.prototypes[class_index]
    alphas = tuple(i / (steps - 1) for i in range(steps))
    embeddings = np.stack([blend_embedding(prototype, guide_z, a) for a in alphas])
    frames = decode(session.model, embeddings)
    return InterpolationStrip(
        class_index=class_index, alphas=alphas, embeddings=embeddings, frames=frames
    )


def commit_refinement(
    session: RefinementSession, class_index: int, alpha: float, guide_image
) -> RefinementEvent:
    """Replace class ``class_index``'s prototype with the alpha-blend
    toward the guide embedding. Appends to history, bumps the session
    version, leaves every other prototype row bit-identical, and persists
    when the session has a store directory."""
    class_index = _check_class_index(session, class_index)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    guide, guide_z = _guide_embedding(session, guide_image)
    old = session.prototypes.prototypes[class_index].copy()
    new = blend_embedding(old, guide_z, alpha)
    rows = session.prototypes.prototypes.copy()
    rows[class_index] = new
    event = RefinementEvent(
        class_index=class_index,
        alpha=alpha,
        guide_image=guide,
        old_prototype=old,
        new_prototype=new.copy(),
        timestamp=_utc_now(),
    )
    session.prototypes = replace(session.prototypes, prototypes=rows)
    session.history.append(event)
    session.version += 1
    if session.store_dir is not None:
        save_session(session)
    return event


def reset_class(session: RefinementSession, class_index: int) -> None:
    """Restore class ``class_index``'s prototype to its original support
    mean and drop that class's committed events from the history (history
    always derives the current prototypes from the initial ones, so a
    stored session replays exactly). Still bumps the version."""
    class_index = _check_class_index(session, class_index)
    rows = session.prototypes.prototypes.copy()
    rows[class_index] = session.initial_prototypes.prototypes[class_index]
    session.prototypes = replace(session.prototypes, prototypes=rows)
    session.history = [e for e in session.history if e.class_index != class_index]
    session.version += 1
    if session.store_dir is not None:
        save_session(session)


def classify_images(session: RefinementSession, images) -> np.ndarray:
    """Posterior over the session's classes for each image: (N, way)."""
    images = check_batch(np.asarray(images, dtype=np.float32))
    if images.shape[0] == 0:
        return np.zeros((0, session.way), dtype=np.float64)
    images = snap_to_uint8_grid(images)
    return classify_batch(session.prototypes, encode(session.model, images))


def prototype_hashes(session: RefinementSession) -> list[str]:
    """SHA-256 of each prototype row's float32 bytes; lets clients detect
    whether a commit actually moved a prototype."""
    rows = np.ascontiguousarray(session.prototypes.prototypes, dtype=np.float32)
    return [hashlib.sha256(row.tobytes()).hexdigest() for row in rows]


# ---------------------------------------------------------------------------
# Persistence: a session directory holds session.json, the support set and
# guide images as PNGs, and the prototype history replays from those PNGs.
# ---------------------------------------------------------------------------


def _session_dir(session: RefinementSession) -> Path:
    assert session.store_dir is not None
    return session.store_dir / session.session_id


def save_session(session: RefinementSession) -> Path:
    """Write the session to ``store_dir/<session_id>``: JSON manifest,
    support PNGs, guide PNGs. Prototypes are not stored as floats; they
    are reproduced exactly by replaying the manifest against the model."""
    root = _session_dir(session)
    root.mkdir(parents=True, exist_ok=True)
    support_files: list[list[str]] = []
    for k, images in enumerate(session.support_images):
        files = []
        for i in range(images.shape[0]):
            name = f"support_{k:03d}_{i:03d}.png"
            if not (root / name).exists():
                save_png(images[i], root / name)
            files.append(name)
        support_files.append(files)
    events = []
    for event in session.history:
        # Content-addressed name: resets may drop events from the history,
        # so positional names could pair a manifest entry with a stale file.
        digest = hashlib.sha256(
            np.ascontiguousarray(event.guide_image, dtype=np.float32).tobytes()
        ).hexdigest()
        name = f"guide_{digest[:16]}.png"
        if not (root / name).exists():
            save_png(event.guide_image, root / name)
        events.append(
            {
                "class_index": event.class_index,
                "alpha": event.alpha,
                "guide_file": name,
                "timestamp": event.timestamp,
            }
        )
    manifest = {
        "session_id": session.session_id,
        "version": session.version,
        "created": session.created,
        "model_ref": session.model_ref,
        "distance": session.prototypes.distance,
        "class_names": list(session.class_names),
        "support_files": support_files,
        "events": events,
    }
    with open(root / SESSION_FILE, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return root


def load_session(store_dir, session_id: str, model: AutoProtoNet) -> RefinementSession:
    """Rebuild a session from its directory by replaying the manifest:
    re-embed the stored support PNGs, recompute the starting prototypes,
    then re-apply every committed event in order. Because stored images
    are exact 8-bit grids, the result is bit-identical to the live session
    that was saved."""
    root = Path(store_dir) / session_id
    manifest_path = root / SESSION_FILE
    if not manifest_path.is_file():
        raise SessionStoreError(f"no stored session at {root}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SessionStoreError(f"corrupt session manifest {manifest_path}: {exc}") from exc
    try:
        class_names = manifest["class_names"]
        support_files = manifest["support_files"]
        events = manifest["events"]
        distance = manifest["distance"]
    except KeyError as exc:
        raise SessionStoreError(f"session manifest {manifest_path} missing key {exc}") from exc

    images = []
    labels = []
    for k, files in enumerate(support_files):
        for name in files:
            path = root / name
            if not path.is_file():
                raise SessionStoreError(f"stored session missing support image {path}")
            images.append(load_png(path))
            labels.append(k)
    session = create_session(
        model,
        np.stack(images),
        np.asarray(labels, dtype=np.int64),
        class_names=class_names,
        distance=distance,
        session_id=manifest["session_id"],
        model_ref=manifest.get("model_ref"),
    )
    session.created = manifest.get("created", session.created)
    for entry in events:
        path = root / entry["guide_file"]
        if not path.is_file():
            raise SessionStoreError(f"stored session missing guide image {path}")
        commit_refinement(session, entry["class_index"], entry["alpha"], load_png(path))
    session.version = manifest["version"]
    session.store_dir = Path(store_dir)
    return session


def list_sessions(store_dir) -> list[str]:
    """Session ids present under a store directory."""
    root = Path(store_dir)
    if not root.is_dir():
        return []
    return sorted(p.parent.name for p in root.glob(f"*/{SESSION_FILE}"))
