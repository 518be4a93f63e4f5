"""Encoder/decoder architecture, forward passes, and checkpoint files.

The encoder is four conv blocks (3x3 conv, batch norm, ReLU, 3x3 stride-2
max pool); the decoder mirrors it with four transpose-conv blocks (2x2
stride-2 transpose conv, batch norm, ReLU, 3x3 conv) and a final sigmoid
so reconstructions are valid images. Per-block pool padding and decoder
output padding are planned symbolically before any layer is built, so a
config either round-trips its resolution exactly or fails to construct:
84x84 traces 84-42-21-10-5 (1600-dim embeddings, output padding in the
second transpose block only) and 32x32 traces 32-16-8-4-2 (256-dim).

Checkpoints are zip archives holding a JSON manifest plus the raw
little-endian tensor bytes; round-trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .images import check_batch

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base error for unreadable or inconsistent checkpoint files."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass(frozen=True)
class ShapePlan:
    """Spatial sizes through the encoder plus the paddings that realize them."""

    encoder_sizes: tuple[tuple[int, int], ...]  # input first, bottleneck last
    pool_paddings: tuple[tuple[int, int], ...]
    decoder_output_paddings: tuple[tuple[int, int], ...]

    @property
    def bottleneck(self) -> tuple[int, int]:
        return self.encoder_sizes[-1]


def _plan_dim(size: int, num_blocks: int) -> tuple[list[int], list[int], list[int]]:
    """Plan one spatial dimension through ``num_blocks`` halvings.

    Even sizes pool with padding 1 to exactly half; odd sizes pool with
    padding 0 to (size-1)/2, which the mirrored transpose-conv undoes with
    output padding 1.
    """
    sizes, pool_pads = [size], []
    for _ in range(num_blocks):
        cur = sizes[-1]
        if cur < 2:
            raise ValueError("dimension collapsed below 2")
        if cur % 2 == 0:
            pool_pads.append(1)
            sizes.append(cur // 2)
        else:
            pool_pads.append(0)
            sizes.append((cur - 1) // 2)
    # Decoder block j upsamples sizes[B-j] -> sizes[B-j-1].
    out_pads = [sizes[num_blocks - j - 1] - 2 * sizes[num_blocks - j] for j in range(num_blocks)]
    return sizes, pool_pads, out_pads


def plan_shapes(resolution: tuple[int, int], num_blocks: int) -> ShapePlan:
    h, w = resolution
    try:
        hs, hp, ho = _plan_dim(h, num_blocks)
        ws, wp, wo = _plan_dim(w, num_blocks)
    except ValueError:
        achievable = ", ".join(str(2**num_blocks * k) for k in (1, 2, 3)) + ", ..."
        raise ValueError(
            f"resolution {resolution} cannot round-trip through {num_blocks} "
            f"pooling blocks; each dimension must stay >= 2 until the last "
            f"block (e.g. {achievable} or 84)"
        ) from None
    return ShapePlan(
        encoder_sizes=tuple(zip(hs, ws)),
        pool_paddings=tuple(zip(hp, wp)),
        decoder_output_paddings=tuple(zip(ho, wo)),
    )


@dataclass(frozen=True)
class ArchitectureConfig:
    input_resolution: tuple[int, int] = (32, 32)
    channels_per_block: int = 64
    num_blocks: int = 4
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_resolution", tuple(self.input_resolution))
        if self.channels_per_block < 1 or self.num_blocks < 1:
            raise ValueError("channels_per_block and num_blocks must be >= 1")
        plan_shapes(self.input_resolution, self.num_blocks)  # validate early

    @property
    def plan(self) -> ShapePlan:
        return plan_shapes(self.input_resolution, self.num_blocks)

    @property
    def embedding_dim(self) -> int:
        sh, sw = self.plan.bottleneck
        return self.channels_per_block * sh * sw

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        return cls(
            input_resolution=tuple(d["input_resolution"]),
            channels_per_block=int(d["channels_per_block"]),
            num_blocks=int(d["num_blocks"]),
            in_channels=int(d.get("in_channels", 3)),
        )


def _conv_block(cin: int, cout: int, pool_padding: tuple[int, int]) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=1, padding=1),
        nn.BatchNorm2d(cout, momentum=0.1),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(kernel_size=3, stride=2, padding=pool_padding),
    )


def _deconv_block(cin: int, cout: int, output_padding: tuple[int, int]) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cin, kernel_size=2, stride=2, output_padding=output_padding),
        nn.BatchNorm2d(cin, momentum=0.1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cin, cout, kernel_size=3, stride=1, padding=1),
    )


class AutoProtoNet(nn.Module):
    """Embedding network and image decoder sharing one bottleneck.

    ``embed`` flattens the bottleneck feature map into the embedding vector;
    ``reconstruct`` folds an embedding back to the map and decodes an image.
    """

    def __init__(self, config: ArchitectureConfig):
        super().__init__()
        self.config = config
        plan = config.plan
        ch = config.channels_per_block
        enc_blocks = [
            _conv_block(config.in_channels if i == 0 else ch, ch, plan.pool_paddings[i])
            for i in range(config.num_blocks)
        ]
        dec_blocks = [
            _deconv_block(
                ch,
                config.in_channels if j == config.num_blocks - 1 else ch,
                plan.decoder_output_paddings[j],
            )
            for j in range(config.num_blocks)
        ]
        self.encoder = nn.Sequential(*enc_blocks)
        self.decoder = nn.Sequential(*dec_blocks, nn.Sigmoid())

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x).flatten(1)

    def reconstruct(self, z: torch.Tensor) -> torch.Tensor:
        sh, sw = self.config.plan.bottleneck
        return self.decoder(z.view(-1, self.config.channels_per_block, sh, sw))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.embed(x)
        return z, self.reconstruct(z)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def encoder_parameters(self):
        return self.encoder.parameters()

    def all_parameters(self):
        return self.parameters()


def build_model(config: ArchitectureConfig, seed: int = 0) -> AutoProtoNet:
    """Construct the model with fan-in-scaled uniform init, seeded."""
    model = AutoProtoNet(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.running_mean.zero_()
                module.running_var.fill_(1.0)
                module.num_batches_tracked.zero_()
    model.eval()
    return model


def _run_in_mode(model: AutoProtoNet, mode: str, fn):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = model.training
    model.train(mode == "train")
    try:
        with torch.no_grad():
            return fn()
    finally:
        model.train(was_training)


def encode(model: AutoProtoNet, images, mode: str = "eval") -> np.ndarray:
    """Embed a batch of images; returns (N, M) float32.

    Eval mode normalizes with running statistics and is deterministic;
    train mode uses batch statistics and updates the running ones.
    """
    batch = check_batch(images, resolution=model.config.input_resolution)
    x = torch.from_numpy(np.ascontiguousarray(batch))
    z = _run_in_mode(model, mode, lambda: model.embed(x))
    out = z.numpy().astype(np.float32, copy=True)
    if not np.isfinite(out).all():
        raise FloatingPointError("encoder produced non-finite embeddings")
    return out


def decode(model: AutoProtoNet, embeddings, mode: str = "eval") -> np.ndarray:
    """Decode (N, M) embeddings into images at the configured resolution."""
    z = np.asarray(embeddings, dtype=np.float32)
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.ndim != 2 or z.shape[1] != model.embedding_dim:
        raise ValueError(
            f"expected embeddings of dimension {model.embedding_dim}, got shape {z.shape}"
        )
    zt = torch.from_numpy(np.ascontiguousarray(z))
    x = _run_in_mode(model, mode, lambda: model.reconstruct(zt))
    out = x.numpy().astype(np.float32, copy=True)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_DTYPES = {"float32": np.float32, "int64": np.int64}


def save_checkpoint(model: AutoProtoNet, path, metadata: dict | None = None) -> None:
    """Write a zip of manifest.json plus concatenated raw tensor bytes."""
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        shape = list(arr.shape)  # before ascontiguousarray, which promotes 0-d to 1-d
        dtype = "int64" if arr.dtype == np.int64 else "float32"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        if arr.dtype.byteorder == ">":  # big-endian host
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": shape,
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": model.config.to_dict(),
        "tensors": entries,
        "metadata": dict(metadata or {}),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        zf.writestr("tensors.bin", b"".join(blobs))


def load_checkpoint(path) -> tuple[AutoProtoNet, dict]:
    """Rebuild the model from a checkpoint; returns (model, metadata).

    Raises CheckpointVersionError / CheckpointShapeError /
    CheckpointTruncatedError for the corresponding corruptions.
    """
    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = set(zf.namelist())
            if "manifest.json" not in names or "tensors.bin" not in names:
                raise CheckpointError(f"{path}: missing manifest.json or tensors.bin")
            manifest = json.loads(zf.read("manifest.json"))
            raw = zf.read("tensors.bin")
    except (zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc

    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = ArchitectureConfig.from_dict(manifest["architecture"])
    model = AutoProtoNet(config)
    state = model.state_dict()

    expected_names = set(state)
    manifest_names = {e["name"] for e in manifest["tensors"]}
    if manifest_names != expected_names:
        raise CheckpointError(
            f"checkpoint tensors do not match the architecture: "
            f"missing {sorted(expected_names - manifest_names)}, "
            f"unexpected {sorted(manifest_names - expected_names)}"
        )

    new_state = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"tensor {name}: unknown dtype {entry['dtype']!r}")
        expected_shape = tuple(state[name].shape)
        if shape != expected_shape:
            raise CheckpointShapeError(
                f"tensor {name}: shape mismatch, manifest says {shape}, "
                f"architecture requires {expected_shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if nbytes != entry["nbytes"] or entry["offset"] + nbytes > len(raw):
            raise CheckpointTruncatedError(
                f"tensor {name}: {nbytes} bytes expected at offset "
                f"{entry['offset']}, but tensors.bin holds {len(raw)} bytes"
            )
        arr = np.frombuffer(
            raw, dtype=np.dtype(dtype).newbyteorder("<"), count=count, offset=entry["offset"]
        ).reshape(shape)
        new_state[name] = torch.from_numpy(arr.astype(dtype, copy=True))
    model.load_state_dict(new_state)
    model.eval()
    return model, dict(manifest.get("metadata", {}))


def checkpoint_info(path) -> dict:
    """Read a checkpoint's architecture and metadata without the weights."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            if "manifest.json" not in zf.namelist():
                raise CheckpointError(f"{path}: missing manifest.json")
            manifest = json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = ArchitectureConfig.from_dict(manifest["architecture"])
    return {
        "architecture": config,
        "metadata": dict(manifest.get("metadata", {})),
    }


def state_fingerprint(model: AutoProtoNet) -> dict[str, bytes]:
    """Raw bytes of every tensor, for bit-equality comparisons in tests."""
    return {
        name: tensor.detach().cpu().numpy().tobytes()
        for name, tensor in model.state_dict().items()
    }
