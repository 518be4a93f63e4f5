"""Meta-training loops and the SGD schedule.

Three recipes share one optimizer setup (SGD with Nesterov momentum 0.9 and
weight decay 5e-4, the settings all trained models here use):

* ``protonet``: episodic training of the encoder alone on query NLL.
* ``autoprotonet`` / ``autoprotonet-from-pretrained``: episodic training of
  encoder and decoder jointly on NLL plus lambda-weighted reconstruction
  MSE of all task images.
* ``autoencoder-pretrain``: plain minibatch reconstruction training, no
  episodes, supporting the decay-by-10-every-5-epochs schedule.

With a fixed seed the episode stream, initialization, and update sequence
are fully reproducible (single-threaded).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import ClassDataset, EpisodeSpec, sample_episode
from .network import ArchitectureConfig, AutoProtoNet, build_model, save_checkpoint
from .protonet import prototype_means_t, sq_distances_t

RECIPES = (
    "protonet",
    "autoprotonet",
    "autoencoder-pretrain",
    "autoprotonet-from-pretrained",
)


class TrainingDivergedError(RuntimeError):
    """Raised when a loss stops being finite; carries the diagnostic record."""

    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class TrainingConfig:
    """Hyperparameters for one training run.

    Defaults follow the reference episodic recipe: 30 epochs of 20-way
    5-shot episodes with 15 queries per class, SGD at learning rate 0.1
    dropping to 0.06 at epoch 20, Nesterov momentum 0.9, weight decay 5e-4,
    reconstruction weight 1.
    """

    recipe: str = "autoprotonet"
    epochs: int = 30
    episodes_per_epoch: int = 100
    way: int = 20
    shot: int = 5
    query_count: int = 15
    lam: float = 1.0
    learning_rate: float = 0.1
    lr_milestones: tuple[tuple[int, float], ...] = ((20, 0.06),)
    lr_decay_every: int | None = None
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    tasks_per_batch: int = 1
    batch_size: int = 64  # autoencoder pretraining minibatch size
    val_episodes: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}, expected one of {RECIPES}")
        if self.learning_rate <= 0 or any(r <= 0 for _, r in self.lr_milestones):
            raise ValueError("learning rates must be positive")
        if self.lr_milestones and self.lr_decay_every is not None:
            raise ValueError("set lr_milestones or lr_decay_every, not both")
        if self.epochs < 0 or self.episodes_per_epoch < 1:
            raise ValueError("epochs must be >= 0 and episodes_per_epoch >= 1")
        if self.tasks_per_batch < 1 or self.episodes_per_epoch % self.tasks_per_batch:
            raise ValueError("episodes_per_epoch must be a multiple of tasks_per_batch")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.lr_milestones = tuple((int(e), float(r)) for e, r in self.lr_milestones)

    def lr_at(self, epoch: int) -> float:
        rate = self.learning_rate
        if self.lr_decay_every is not None:
            rate *= self.lr_decay_factor ** (epoch // self.lr_decay_every)
        for milestone, new_rate in sorted(self.lr_milestones):
            if epoch >= milestone:
                rate = new_rate
        return rate

    def episode_spec(self) -> EpisodeSpec:
        return EpisodeSpec(way=self.way, shot=self.shot, query_count=self.query_count)

    def to_json(self) -> str:
        d = asdict(self)
        d["lr_milestones"] = [list(m) for m in self.lr_milestones]
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        if "lr_milestones" in d:
            d["lr_milestones"] = tuple(tuple(m) for m in d["lr_milestones"])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TrainingConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def desk_config(recipe: str = "autoprotonet", seed: int = 0) -> TrainingConfig:
    """Preset that trains on the synthetic benchmark in a few minutes of CPU."""
    return TrainingConfig(
        recipe=recipe,
        epochs=5,
        episodes_per_epoch=100,
        way=5,
        shot=5,
        query_count=5,
        lr_milestones=((3, 0.06),),
        val_episodes=20,
        seed=seed,
    )


@dataclass
class TrainingLog:
    """Per-episode loss/accuracy records plus per-epoch validation records."""

    episode_records: list[dict] = field(default_factory=list)
    validation_records: list[dict] = field(default_factory=list)

    def losses(self, key: str = "loss") -> list[float]:
        return [r[key] for r in self.episode_records]

    def write_ndjson(self, path) -> None:
        by_epoch: dict[int, dict] = {r["epoch"]: r for r in self.validation_records}
        with open(path, "w", encoding="utf-8") as fh:
            last_epoch = None
            for rec in self.episode_records:
                if last_epoch is not None and rec["epoch"] != last_epoch and last_epoch in by_epoch:
                    fh.write(json.dumps({"type": "validation", **by_epoch[last_epoch]}) + "\n")
                fh.write(json.dumps({"type": "episode", **rec}) + "\n")
                last_epoch = rec["epoch"]
            if last_epoch is not None and last_epoch in by_epoch:
                fh.write(json.dumps({"type": "validation", **by_epoch[last_epoch]}) + "\n")


def _episode_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, epoch, index))))


def _make_optimizer(params, config: TrainingConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        params,
        lr=config.learning_rate,
        momentum=config.momentum,
        nesterov=config.momentum > 0,
        weight_decay=config.weight_decay,
    )


def _check_finite(value: float, record: dict):
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"training diverged: non-finite loss at epoch {record['epoch']} "
            f"episode {record['episode']}",
            record,
        )


def _validate(model, splits, config, epoch, log, recipe_is_pretrain=False):
    val_ds = splits.get("meta-val")
    if val_ds is None or config.val_episodes < 1:
        return None
    from .evaluation import dataset_reconstruction_mse, evaluate_episodic

    record: dict = {"epoch": epoch, "val_episodes": config.val_episodes}
    if recipe_is_pretrain:
        record["val_recon_mse"] = dataset_reconstruction_mse(model, val_ds)
    way = min(config.way, val_ds.num_classes)
    if way >= 2:
        spec = EpisodeSpec(way=way, shot=config.shot, query_count=config.query_count)
        report = evaluate_episodic(
            model, val_ds, spec, num_episodes=config.val_episodes, seed=(config.seed, 915, epoch)
        )
        record["val_accuracy"] = report.mean_accuracy
    log.validation_records.append(record)
    return record.get("val_accuracy")


def _checkpoint(model, config, epoch, checkpoint_dir, best, val_accuracy):
    if checkpoint_dir is None:
        return best
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    meta = {"recipe": config.recipe, "epoch": epoch}
    if val_accuracy is not None:
        meta["val_accuracy"] = val_accuracy
    save_checkpoint(model, checkpoint_dir / "last.ckpt", metadata=meta)
    if val_accuracy is not None and (best is None or val_accuracy > best):
        save_checkpoint(model, checkpoint_dir / "best.ckpt", metadata=meta)
        return val_accuracy
    return best


def _episodic_loop(
    splits: dict[str, ClassDataset],
    config: TrainingConfig,
    joint: bool,
    initial_model: AutoProtoNet | None,
    arch: ArchitectureConfig | None,
    checkpoint_dir,
) -> tuple[AutoProtoNet, TrainingLog]:
    train_ds = splits["meta-train"]
    if arch is None:
        arch = ArchitectureConfig(input_resolution=train_ds.resolution)
    model = initial_model if initial_model is not None else build_model(arch, seed=config.seed)

    torch.set_num_threads(1)  # determinism of the logged sequences over throughput
    log = TrainingLog()
    if config.epochs == 0:
        return model, log

    params = model.all_parameters() if joint else model.encoder_parameters()
    optimizer = _make_optimizer(params, config)
    spec = config.episode_spec()
    n_support = config.way * config.shot
    best = None

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        for step in range(config.episodes_per_epoch // config.tasks_per_batch):
            optimizer.zero_grad()
            for task in range(config.tasks_per_batch):
                index = step * config.tasks_per_batch + task
                t0 = time.perf_counter()
                episode = sample_episode(
                    train_ds, spec, rng=_episode_rng(config.seed, epoch, index)
                )
                x = torch.from_numpy(
                    np.concatenate([episode.support_images, episode.query_images])
                )
                y_support = torch.from_numpy(episode.support_labels)
                y_query = torch.from_numpy(episode.query_labels)

                model.train()
                z = model.embed(x)
                protos = prototype_means_t(z[:n_support], y_support, config.way)
                logits = -sq_distances_t(z[n_support:], protos)
                loss_cls = F.cross_entropy(logits, y_query)

                if joint and config.lam != 0.0:
                    recon = model.reconstruct(z)
                    loss_rec = F.mse_loss(recon, x)
                    loss = loss_cls + config.lam * loss_rec
                elif joint:
                    with torch.no_grad():  # lam=0: reconstruction logged, not trained
                        loss_rec = F.mse_loss(model.reconstruct(z.detach()), x)
                    loss = loss_cls
                else:
                    loss_rec = torch.zeros(())
                    loss = loss_cls

                with torch.no_grad():
                    accuracy = (logits.argmax(dim=1) == y_query).double().mean().item()
                record = {
                    "epoch": epoch,
                    "episode": index,
                    "loss_cls": loss_cls.item(),
                    "loss_rec": loss_rec.item(),
                    "loss": loss.item(),
                    "accuracy": accuracy,
                    "lr": lr,
                    "seconds": None,
                }
                _check_finite(record["loss"], record)
                (loss / config.tasks_per_batch).backward()
                record["seconds"] = time.perf_counter() - t0
                log.episode_records.append(record)
            optimizer.step()
        val_accuracy = _validate(model, splits, config, epoch, log)
        best = _checkpoint(model, config, epoch, checkpoint_dir, best, val_accuracy)
    model.eval()
    return model, log


def train_protonet(
    splits: dict[str, ClassDataset],
    config: TrainingConfig,
    arch: ArchitectureConfig | None = None,
    initial_model: AutoProtoNet | None = None,
    checkpoint_dir=None,
) -> tuple[AutoProtoNet, TrainingLog]:
    """Episodic training on classification loss only; decoder untouched."""
    if config.recipe != "protonet":
        raise ValueError(f"train_protonet requires recipe 'protonet', got {config.recipe!r}")
    return _episodic_loop(splits, config, False, initial_model, arch, checkpoint_dir)


def train_autoprotonet(
    splits: dict[str, ClassDataset],
    config: TrainingConfig,
    arch: ArchitectureConfig | None = None,
    initial_model: AutoProtoNet | None = None,
    checkpoint_dir=None,
) -> tuple[AutoProtoNet, TrainingLog]:
    """Joint episodic training: NLL plus lambda-weighted reconstruction MSE
    of every task image, one gradient step over encoder and decoder."""
    if config.recipe not in ("autoprotonet", "autoprotonet-from-pretrained"):
        raise ValueError(
            f"train_autoprotonet requires an autoprotonet recipe, got {config.recipe!r}"
        )
    if config.recipe == "autoprotonet-from-pretrained" and initial_model is None:
        raise ValueError("recipe 'autoprotonet-from-pretrained' needs initial_model weights")
    return _episodic_loop(splits, config, True, initial_model, arch, checkpoint_dir)


def pretrain_autoencoder(
    splits: dict[str, ClassDataset],
    config: TrainingConfig,
    arch: ArchitectureConfig | None = None,
    initial_model: AutoProtoNet | None = None,
    checkpoint_dir=None,
) -> tuple[AutoProtoNet, TrainingLog]:
    """Reconstruction-only minibatch training (no episodes, no classifier)."""
    if config.recipe != "autoencoder-pretrain":
        raise ValueError(
            f"pretrain_autoencoder requires recipe 'autoencoder-pretrain', got {config.recipe!r}"
        )
    train_ds = splits["meta-train"]
    if arch is None:
        arch = ArchitectureConfig(input_resolution=train_ds.resolution)
    model = initial_model if initial_model is not None else build_model(arch, seed=config.seed)

    torch.set_num_threads(1)
    log = TrainingLog()
    if config.epochs == 0:
        return model, log

    pool = np.concatenate([images for _, images in train_ds.classes])
    optimizer = _make_optimizer(model.all_parameters(), config)
    best = None
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        for index in range(config.episodes_per_epoch):
            t0 = time.perf_counter()
            rng = _episode_rng(config.seed, epoch, index)
            picks = rng.choice(len(pool), size=min(config.batch_size, len(pool)), replace=False)
            x = torch.from_numpy(pool[picks])
            model.train()
            z = model.embed(x)
            loss = F.mse_loss(model.reconstruct(z), x)
            record = {
                "epoch": epoch,
                "episode": index,
                "loss_cls": 0.0,
                "loss_rec": loss.item(),
                "loss": loss.item(),
                "accuracy": None,
                "lr": lr,
                "seconds": None,
            }
            _check_finite(record["loss"], record)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            record["seconds"] = time.perf_counter() - t0
            log.episode_records.append(record)
        val_accuracy = _validate(model, splits, config, epoch, log, recipe_is_pretrain=True)
        best = _checkpoint(model, config, epoch, checkpoint_dir, best, val_accuracy)
    model.eval()
    return model, log


def train(
    splits: dict[str, ClassDataset],
    config: TrainingConfig,
    arch: ArchitectureConfig | None = None,
    initial_model: AutoProtoNet | None = None,
    checkpoint_dir=None,
) -> tuple[AutoProtoNet, TrainingLog]:
    """Dispatch to the recipe's training loop."""
    if config.recipe == "protonet":
        fn = train_protonet
    elif config.recipe == "autoencoder-pretrain":
        fn = pretrain_autoencoder
    else:
        fn = train_autoprotonet
    return fn(splits, config, arch=arch, initial_model=initial_model, checkpoint_dir=checkpoint_dir)
