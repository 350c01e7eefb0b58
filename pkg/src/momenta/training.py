"""Mini-batch multi-task training of :class:`~momenta.model.MomentaNet`."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .encoders import EmbeddingCache
from .losses import inverse_frequency_alpha, multitask_loss
from .model import VARIANTS, Batch, ModelConfig, MomentaNet, collate, init_params
from .types import DatasetManifest, MemeRecord, NUM_TARGET_CLASSES, Split

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float) -> None:
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    focal_gamma: float = 2.0
    focal_alpha_harm: Optional[list] = None
    focal_alpha_target: Optional[list] = None
    lambda_target: float = 1.0
    seed: int = 0
    c_harm: int = 3
    variant: str = "full"
    hidden: int = 128
    early_stopping: bool = False
    patience: int = 5

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0 or self.learning_rate <= 0:
            raise ValueError("batch_size, epochs and learning_rate must be positive")
        if self.focal_gamma < 0 or self.lambda_target < 0:
            raise ValueError("focal_gamma and lambda_target must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.c_harm not in (2, 3):
            raise ValueError("c_harm must be 2 or 3")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(c_harm=self.c_harm, hidden=self.hidden, variant=self.variant)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedSplit:
    """Collated inputs plus integer labels for a list of records."""

    records: list
    batch: Batch
    harm: torch.Tensor
    target: torch.Tensor
    harmful: torch.Tensor


def harm_index(record: MemeRecord, c_harm: int) -> int:
    if c_harm == 2:
        return int(record.harm.is_harmful)
    return record.harm.ordinal


def encode_split(records: Sequence[MemeRecord], cache: EmbeddingCache, c_harm: int, dtype=torch.float32) -> EncodedSplit:
    bundles = cache.require([r.id for r in records])
    return EncodedSplit(
        records=list(records),
        batch=collate(bundles, dtype),
        harm=torch.tensor([harm_index(r, c_harm) for r in records], dtype=torch.long),
        target=torch.tensor([r.target.ordinal if r.target is not None else 0 for r in records], dtype=torch.long),
        harmful=torch.tensor([r.harm.is_harmful for r in records], dtype=torch.bool),
    )


def resolve_alphas(config: TrainConfig, data: EncodedSplit) -> tuple[torch.Tensor, torch.Tensor]:
    if config.focal_alpha_harm is not None:
        a_h = np.asarray(config.focal_alpha_harm, dtype=np.float64)
        if a_h.shape != (config.c_harm,):
            raise ValueError(f"focal_alpha_harm needs {config.c_harm} entries")
    else:
        a_h = inverse_frequency_alpha(data.harm.numpy(), config.c_harm)
    if config.focal_alpha_target is not None:
        a_t = np.asarray(config.focal_alpha_target, dtype=np.float64)
        if a_t.shape != (NUM_TARGET_CLASSES,):
            raise ValueError(f"focal_alpha_target needs {NUM_TARGET_CLASSES} entries")
    else:
        a_t = inverse_frequency_alpha(data.target[data.harmful].numpy(), NUM_TARGET_CLASSES)
    return torch.from_numpy(a_h), torch.from_numpy(a_t)


def batch_loss(model: MomentaNet, data: EncodedSplit, index: torch.Tensor, config: TrainConfig, alphas) -> torch.Tensor:
    trace = model(data.batch.select(index))
    return multitask_loss(
        trace.logits_harm,
        trace.logits_target,
        data.harm[index],
        data.target[index],
        data.harmful[index],
        alphas[0],
        alphas[1],
        gamma=config.focal_gamma,
        lambda_target=config.lambda_target,
    )


@torch.no_grad()
def harm_accuracy(model: MomentaNet, data: EncodedSplit) -> float:
    if len(data.records) == 0:
        return float("nan")
    pred = model(data.batch).logits_harm.argmax(dim=-1)
    return 100.0 * float((pred == data.harm).double().mean())


def train(
    manifest: DatasetManifest,
    cache: EmbeddingCache,
    config: TrainConfig,
    train_split: Optional[str] = Split.TRAIN.value,
) -> tuple[MomentaNet, list[dict]]:
    """Train on ``train_split`` records (all records if None) and return (model, history).

    History has one entry per epoch: mean training loss over the epoch's batches,
    harm accuracy on the training set and, when a validation split exists, on it.
    """
    train_records = manifest.by_split(train_split) if train_split else list(manifest.records)
    if not train_records:
        raise ValueError(f"manifest {manifest.name!r} has no {train_split} records")
    data = encode_split(train_records, cache, config.c_harm)
    val_records = manifest.by_split(Split.VALIDATION) if train_split else []
    val = encode_split(val_records, cache, config.c_harm) if val_records else None
    alphas = resolve_alphas(config, data)

    model = init_params(config.seed, config.model_config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps
    )
    shuffle_gen = torch.Generator().manual_seed(int(config.seed) + 1)
    n = len(train_records)
    bs = min(config.batch_size, n)

    history: list[dict] = []
    best_state, best_val, stale = None, -math.inf, 0
    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(n, generator=shuffle_gen)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, bs)):
            index = order[start : start + bs]
            optimizer.zero_grad(set_to_none=False)
            loss = batch_loss(model, data, index, config, alphas)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            loss.backward()
            optimizer.step()
            total += value * len(index)
            seen += len(index)
        model.eval()
        entry = {"epoch": epoch + 1, "train_loss": total / seen, "train_accuracy": harm_accuracy(model, data)}
        if val is not None:
            entry["val_accuracy"] = harm_accuracy(model, val)
        history.append(entry)
        logger.debug("epoch %d %s", epoch + 1, entry)

        if config.early_stopping and val is not None:
            if entry["val_accuracy"] > best_val:
                best_val, stale, best_state = entry["val_accuracy"], 0, copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history


def initial_loss(manifest_records: Sequence[MemeRecord], cache: EmbeddingCache, config: TrainConfig) -> float:
    """Full-batch loss of freshly initialised parameters (baseline for training-progress checks)."""
    data = encode_split(manifest_records, cache, config.c_harm)
    model = init_params(config.seed, config.model_config)
    with torch.no_grad():
        return float(batch_loss(model, data, torch.arange(len(data.records)), config, resolve_alphas(config, data)))


def set_threads(threads: int) -> None:
    """Pin torch to ``threads`` intra-op threads; 1 is the deterministic mode."""
    torch.set_num_threads(max(1, int(threads)))
    if threads == 1:
        torch.use_deterministic_algorithms(True)


__all__ = [
    "EncodedSplit",
    "TrainConfig",
    "TrainingDivergedError",
    "batch_loss",
    "encode_split",
    "harm_accuracy",
    "initial_loss",
    "resolve_alphas",
    "set_threads",
    "train",
]
