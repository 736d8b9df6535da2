"""Poison-subset selection, classifier training and dataset poisoning.

Training is plain SGD with momentum, weight decay and a cosine learning
rate with linear warmup, identical for surrogate and victim; only the
data differs. Checkpoints are single-file containers with a versioned
header, the parameter blob and a metadata record, and round-trip
bit-exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import TEST, LabeledDataset, quantize
from .labels import LabelMap
from .models import build_model
from .trigger import SurrogateHandle, TriggerConfig, TriggerResult, forge_batch

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PoisonPlan:
    rho: float
    selected_indices: tuple[int, ...]
    map: LabelMap
    seed: int


@dataclass(frozen=True)
class TrainConfig:
    model_id: str
    epochs: int
    batch_size: int = 128
    weight_decay: float = 5e-4
    lr_max: float = 0.01
    warmup_epochs: int = 5
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr_max < 0:
            raise ValueError("lr_max must be nonnegative")
        if self.warmup_epochs >= self.epochs and self.epochs > 1:
            raise ValueError("warmup_epochs must be < epochs")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "lr_max": self.lr_max,
            "warmup_epochs": self.warmup_epochs,
            "momentum": self.momentum,
            "seed": self.seed,
            "augment": self.augment,
        }


@dataclass
class ModelCheckpoint:
    model_id: str
    num_classes: int
    state_dict: dict
    metadata: dict

    def build(self) -> torch.nn.Module:
        model = build_model(self.model_id, self.num_classes)
        model.load_state_dict(self.state_dict)
        return model.eval()

    def handle(self) -> SurrogateHandle:
        return SurrogateHandle(self.build(), self.num_classes)

    def save(self, path: str):
        torch.save(
            {
                "format_version": CHECKPOINT_FORMAT_VERSION,
                "model_id": self.model_id,
                "num_classes": self.num_classes,
                "state_dict": self.state_dict,
                "metadata": self.metadata,
            },
            path,
        )

    @classmethod
    def load(cls, path: str) -> "ModelCheckpoint":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        version = blob.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version: {version}")
        return cls(
            model_id=blob["model_id"],
            num_classes=blob["num_classes"],
            state_dict=blob["state_dict"],
            metadata=blob["metadata"],
        )


def select_poison_subset(dataset: LabeledDataset, rho: float, seed: int,
                         label_map: LabelMap) -> PoisonPlan:
    """Uniform sample without replacement of round(rho * N) indices.

    Selection takes the first k entries of a seeded permutation, so plans
    with the same seed are nested across rho values.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    n = len(dataset)
    k = int(round(rho * n))
    perm = np.random.default_rng(seed).permutation(n)
    idx = tuple(sorted(int(i) for i in perm[:k]))
    return PoisonPlan(rho=rho, selected_indices=idx, map=label_map, seed=seed)


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if epoch < cfg.warmup_epochs:
        return cfg.lr_max * (epoch + 1) / cfg.warmup_epochs
    span = max(1, cfg.epochs - cfg.warmup_epochs)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * (epoch - cfg.warmup_epochs) / span))


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random crop with 4px zero padding plus horizontal flip."""
    b, c, h, w = x.shape
    padded = F.pad(x, (4, 4, 4, 4))
    offs = torch.randint(0, 9, (b, 2), generator=gen)
    out = torch.empty_like(x)
    for i in range(b):
        oy, ox = int(offs[i, 0]), int(offs[i, 1])
        out[i] = padded[i, :, oy : oy + h, ox : ox + w]
    flip = torch.rand(b, generator=gen) < 0.5
    out[flip] = out[flip].flip(-1)
    return out


def evaluate_accuracy(model: torch.nn.Module, dataset: LabeledDataset,
                      batch_size: int = 512) -> float:
    """Top-1 accuracy of a model on a dataset (eval mode)."""
    model.eval()
    x = torch.from_numpy(dataset.images_float()).permute(0, 3, 1, 2)
    y = torch.from_numpy(dataset.labels)
    correct = 0
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            logits = model(x[lo : lo + batch_size])
            correct += int((logits.argmax(dim=1) == y[lo : lo + batch_size]).sum())
    return correct / max(1, len(dataset))


def train_classifier(dataset: LabeledDataset, cfg: TrainConfig,
                     eval_dataset: LabeledDataset | None = None,
                     config_hash: str = "") -> ModelCheckpoint:
    """Minimize cross-entropy with SGD; returns a reloadable checkpoint."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model_id, dataset.num_classes)
    imgs = dataset.images_float()
    mean = imgs.mean(axis=(0, 1, 2))
    std = np.maximum(imgs.std(axis=(0, 1, 2)), 1e-3)
    model.norm.set_stats(mean, std)

    x_all = torch.from_numpy(imgs).permute(0, 3, 1, 2).contiguous()
    y_all = torch.from_numpy(dataset.labels)
    opt = torch.optim.SGD(
        model.parameters(),
        lr=cfg.lr_max,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    final_loss = float("nan")
    for epoch in range(cfg.epochs):
        lr = _lr_at(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        gen = torch.Generator().manual_seed(cfg.seed * 100_003 + epoch)
        order = torch.randperm(len(dataset), generator=gen)
        model.train()
        epoch_loss, nb = 0.0, 0
        for lo in range(0, len(dataset), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = x_all[idx]
            if cfg.augment:
                xb = _augment(xb, gen)
            loss = F.cross_entropy(model(xb), y_all[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {nb}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            nb += 1
        final_loss = epoch_loss / max(1, nb)

    train_acc = evaluate_accuracy(model, dataset)
    test_acc = (
        evaluate_accuracy(model, eval_dataset) if eval_dataset is not None else None
    )
    metadata = {
        "config_hash": config_hash,
        "train_config": cfg.to_dict(),
        "dataset_fingerprint": dataset.fingerprint(),
        "final_train_acc": train_acc,
        "final_test_acc": test_acc,
        "final_epoch_loss": final_loss,
        "input_norm_mean": [float(v) for v in mean],
        "input_norm_std": [float(v) for v in std],
    }
    return ModelCheckpoint(
        model_id=cfg.model_id,
        num_classes=dataset.num_classes,
        state_dict=model.state_dict(),
        metadata=metadata,
    )


def build_poisoned_dataset(dataset: LabeledDataset, plan: PoisonPlan,
                           results: list[TriggerResult]) -> LabeledDataset:
    """Replace selected items with (poisoned_image, eta(y)); others untouched."""
    if len(results) != len(plan.selected_indices):
        raise ValueError(
            f"{len(results)} trigger results for {len(plan.selected_indices)} "
            "selected indices"
        )
    images = dataset.images.copy()
    labels = dataset.labels.copy()
    for idx, res in zip(plan.selected_indices, results):
        images[idx] = quantize(res.poisoned_image)
        labels[idx] = plan.map.apply(int(dataset.labels[idx]))
    return LabeledDataset(images, labels, dataset.num_classes, dataset.split)


def poison_training_set(dataset: LabeledDataset, surrogate: SurrogateHandle,
                        plan: PoisonPlan, cfg: TriggerConfig):
    """Phase 2: forge triggers for the planned subset and build D_p union D_r."""
    if not plan.selected_indices:
        return dataset, []
    samples = [
        (dataset.image(i), int(dataset.labels[i])) for i in plan.selected_indices
    ]
    results, rows = forge_batch(surrogate, samples, plan.map, cfg)
    for row, idx in zip(rows, plan.selected_indices):
        row["index"] = int(idx)
    poisoned = build_poisoned_dataset(dataset, plan, results)
    return poisoned, rows


def poison_test_set(dataset: LabeledDataset, surrogate: SurrogateHandle,
                    label_map: LabelMap, cfg: TriggerConfig):
    """Phase 4: poison every test item, keeping true labels as ground truth."""
    if dataset.split != TEST:
        raise ValueError("poison_test_set requires the test split")
    if len(dataset) == 0:
        raise ValueError("test set is empty")
    samples = [(dataset.image(i), int(dataset.labels[i])) for i in range(len(dataset))]
    results, rows = forge_batch(surrogate, samples, label_map, cfg)
    images = np.stack([quantize(r.poisoned_image) for r in results])
    poisoned = LabeledDataset(images, dataset.labels.copy(), dataset.num_classes, TEST)
    return poisoned, rows
