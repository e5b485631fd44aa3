"""Classifier heads and the shared training/prediction procedure."""

from __future__ import annotations

import copy
import json
import math
import random
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import ImageEncoder, TextEncoder
from .features import SRE_DIM, ModalitySpec

HEAD_TEXT = "text"
HEAD_IMAGE = "image"
HEAD_SRE = "sre_logreg"
HEAD_FUSION = "fusion"
HEAD_SRE_TEXT = "sre_text"
HEAD_KINDS = (HEAD_TEXT, HEAD_IMAGE, HEAD_SRE, HEAD_FUSION, HEAD_SRE_TEXT)


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 2e-5
    seed: int = 0
    loss: str = "cross_entropy"  # or "focal"
    focal_gamma: float = 2.0
    early_stop_patience: int = 5  # applied to fusion training only
    deterministic: bool = True

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "loss": self.loss,
            "focal_gamma": self.focal_gamma,
            "early_stop_patience": self.early_stop_patience,
            "deterministic": self.deterministic,
        }


@dataclass
class Example:
    """One model input: whichever of text/image/sre the modality requires."""

    article_id: str
    label: object
    text: Optional[str] = None
    image: Optional[torch.Tensor] = None
    sre: Optional[np.ndarray] = None


def seed_everything(seed: int, deterministic: bool = True):
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def focal_loss(probabilities: Sequence[float], target: int, gamma: float = 2.0) -> float:
    """(1 - p_t)^gamma * (-ln p_t); gamma=0 is exactly cross-entropy."""
    probs = [float(p) for p in probabilities]
    if gamma < 0:
        raise ModelError(f"gamma must be >= 0, got {gamma}")
    if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-6:
        raise ModelError("probabilities must form a distribution")
    if not 0 <= target < len(probs):
        raise ModelError(f"target {target} out of range for {len(probs)} classes")
    p = probs[target]
    if p <= 0:
        return float("inf")
    return (1.0 - p) ** gamma * -math.log(p)


def _batch_loss(logits: torch.Tensor, targets: torch.Tensor, cfg: TrainConfig) -> torch.Tensor:
    if cfg.loss == "cross_entropy":
        return F.cross_entropy(logits, targets)
    if cfg.loss == "focal":
        logp = F.log_softmax(logits, dim=-1)
        logp_t = logp.gather(1, targets.unsqueeze(1)).squeeze(1)
        p_t = logp_t.exp()
        return ((1.0 - p_t) ** cfg.focal_gamma * -logp_t).mean()
    raise ModelError(f"unknown loss {cfg.loss!r}")


class TextClassifier(nn.Module):
    """Fine-tuned text encoder + linear layer over the pooled representation."""

    requires = ("text",)

    def __init__(self, text_encoder: TextEncoder, n_classes: int):
        super().__init__()
        self.text_encoder = text_encoder
        self.head = nn.Linear(text_encoder.pooled_dim, n_classes)

    def forward(self, batch):
        return self.head(self.text_encoder(batch["texts"]))


class ImageClassifier(nn.Module):
    """Image encoder features -> dropout(0.5) -> linear classification layer."""

    requires = ("image",)

    def __init__(self, image_encoder: ImageEncoder, n_classes: int, dropout: float = 0.5):
        super().__init__()
        self.image_encoder = image_encoder
        self.head = nn.Sequential(
            nn.Dropout(dropout), nn.Linear(image_encoder.feature_dim, n_classes)
        )

    def forward(self, batch):
        return self.head(self.image_encoder(batch["images"]))


class SRELogisticRegression(nn.Module):
    """Logistic regression over the 19-dim SRE one-hot pair."""

    requires = ("sre",)

    def __init__(self, n_classes: int):
        super().__init__()
        self.head = nn.Linear(SRE_DIM, n_classes)

    def forward(self, batch):
        return self.head(batch["sre"])


class FusionClassifier(nn.Module):
    """concat[image features, pooled text] -> 3-layer feed-forward head.

    Trained jointly with the image encoder; the text encoder defaults to
    frozen (it is expected to arrive already fine-tuned for the task).
    """

    requires = ("image", "text")

    def __init__(
        self,
        image_encoder: ImageEncoder,
        text_encoder: TextEncoder,
        n_classes: int,
        hidden: Sequence[int] = (512, 128),
        dropout: float = 0.5,
        freeze_text: bool = True,
    ):
        super().__init__()
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        if freeze_text:
            text_encoder.freeze()
        dims = [image_encoder.feature_dim + text_encoder.pooled_dim, *hidden]
        layers: List[nn.Module] = []
        for d_in, d_out in zip(dims, dims[1:]):
            layers += [nn.Linear(d_in, d_out), nn.ReLU(), nn.Dropout(dropout)]
        layers.append(nn.Linear(dims[-1], n_classes))
        self.head = nn.Sequential(*layers)

    def forward(self, batch):
        img = self.image_encoder(batch["images"])
        txt = self.text_encoder(batch["texts"])
        return self.head(torch.cat([img, txt], dim=1))


class SREAugmentedTextClassifier(nn.Module):
    """concat[pooled text, SRE one-hots] -> 1-layer head, trained jointly
    with text fine-tuning."""

    requires = ("text", "sre")

    def __init__(self, text_encoder: TextEncoder, n_classes: int):
        super().__init__()
        self.text_encoder = text_encoder
        self.head = nn.Linear(text_encoder.pooled_dim + SRE_DIM, n_classes)

    def forward(self, batch):
        txt = self.text_encoder(batch["texts"])
        return self.head(torch.cat([txt, batch["sre"]], dim=1))


def head_for_spec(spec: ModalitySpec) -> str:
    """Pick the classifier family a modality combination calls for."""
    parts = set(spec.parts)
    has_image = "image" in parts
    has_sre = "sre" in parts
    has_text = bool(parts - {"image", "sre"})
    if has_image and has_sre:
        raise ModelError(f"unsupported modality combination {spec.key!r}")
    if has_image and has_text:
        return HEAD_FUSION
    if has_image:
        return HEAD_IMAGE
    if has_sre and has_text:
        return HEAD_SRE_TEXT
    if has_sre:
        return HEAD_SRE
    return HEAD_TEXT


def collate(examples: Sequence[Example], class_index: dict, requires) -> dict:
    batch: dict = {}
    if "text" in requires:
        batch["texts"] = [ex.text for ex in examples]
    if "image" in requires:
        batch["images"] = torch.stack([ex.image for ex in examples])
    if "sre" in requires:
        batch["sre"] = torch.from_numpy(np.stack([ex.sre for ex in examples]))
    batch["targets"] = torch.tensor(
        [class_index.get(ex.label, 0) for ex in examples], dtype=torch.long
    )
    return batch


@dataclass
class TrainedModel:
    model: nn.Module
    head_kind: str
    spec: ModalitySpec
    cfg: TrainConfig
    classes: tuple
    history: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def class_index(self) -> dict:
        return {c: i for i, c in enumerate(self.classes)}

    def manifest(self) -> dict:
        enc = {}
        te = getattr(self.model, "text_encoder", None)
        ie = getattr(self.model, "image_encoder", None)
        if te is not None:
            enc["text_encoder"] = te.identifier
        if ie is not None:
            enc["image_encoder"] = ie.identifier
        return {
            "head_kind": self.head_kind,
            "task": self.spec.task,
            "modality": self.spec.key,
            "classes": list(self.classes),
            "config": self.cfg.to_dict(),
            "encoders": enc,
            "history": self.history,
            "best_epoch": self.best_epoch,
        }

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), directory / "weights.pt")
        (directory / "manifest.json").write_text(
            json.dumps(self.manifest(), indent=2, sort_keys=True)
        )

    @classmethod
    def load(cls, directory, text_encoder=None, image_encoder=None) -> "TrainedModel":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        spec = ModalitySpec.parse(manifest["modality"], task=manifest["task"])
        cfg = TrainConfig(**manifest["config"])
        classes = tuple(manifest["classes"])
        model = build_model(
            manifest["head_kind"],
            len(classes),
            text_encoder=text_encoder,
            image_encoder=image_encoder,
        )
        model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        return cls(
            model=model,
            head_kind=manifest["head_kind"],
            spec=spec,
            cfg=cfg,
            classes=classes,
            history=manifest["history"],
            best_epoch=manifest["best_epoch"],
        )


def build_model(
    head_kind: str,
    n_classes: int,
    text_encoder: Optional[TextEncoder] = None,
    image_encoder: Optional[ImageEncoder] = None,
    freeze_text_in_fusion: bool = True,
) -> nn.Module:
    if head_kind == HEAD_TEXT:
        if text_encoder is None:
            raise ModelError("text head needs a text encoder")
        return TextClassifier(text_encoder, n_classes)
    if head_kind == HEAD_IMAGE:
        if image_encoder is None:
            raise ModelError("image head needs an image encoder")
        return ImageClassifier(image_encoder, n_classes)
    if head_kind == HEAD_SRE:
        return SRELogisticRegression(n_classes)
    if head_kind == HEAD_FUSION:
        if text_encoder is None or image_encoder is None:
            raise ModelError("fusion head needs both encoders")
        return FusionClassifier(
            image_encoder, text_encoder, n_classes, freeze_text=freeze_text_in_fusion
        )
    if head_kind == HEAD_SRE_TEXT:
        if text_encoder is None:
            raise ModelError("sre_text head needs a text encoder")
        return SREAugmentedTextClassifier(text_encoder, n_classes)
    raise ModelError(f"unknown head kind {head_kind!r}")


def _accuracy(model: nn.Module, examples, class_index, requires, batch_size) -> float:
    if not examples:
        return float("nan")
    model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            batch = collate(examples[i : i + batch_size], class_index, requires)
            logits = model(batch)
            pred = logits.argmax(dim=1)
            correct += int((pred == batch["targets"]).sum())
    return correct / len(examples)


def train(
    head_kind: str,
    spec: ModalitySpec,
    train_set: Sequence[Example],
    val_set: Optional[Sequence[Example]],
    cfg: TrainConfig,
    classes: Sequence,
    text_encoder: Optional[TextEncoder] = None,
    image_encoder: Optional[ImageEncoder] = None,
    freeze_text_in_fusion: bool = True,
) -> TrainedModel:
    """Train one classifier with AdamW; deterministic under a fixed seed.

    Returns the best-epoch checkpoint by validation accuracy when a
    validation set is given, otherwise the final epoch. Early stopping
    (no val-accuracy improvement over `early_stop_patience` epochs) applies
    to fusion training only.
    """
    if not train_set:
        raise TrainingError("empty training set")
    classes = tuple(classes)
    class_index = {c: i for i, c in enumerate(classes)}
    missing = set(classes) - {ex.label for ex in train_set}
    if missing:
        warnings.warn(
            f"classes absent from training split: {sorted(missing, key=str)}",
            stacklevel=2,
        )
    for ex in list(train_set) + list(val_set or []):
        if ex.label not in class_index:
            raise TrainingError(
                f"label {ex.label!r} of {ex.article_id} not in class list"
            )

    seed_everything(cfg.seed, cfg.deterministic)
    model = build_model(
        head_kind,
        len(classes),
        text_encoder=text_encoder,
        image_encoder=image_encoder,
        freeze_text_in_fusion=freeze_text_in_fusion,
    )
    requires = model.requires
    trainable = [p for p in model.parameters() if p.requires_grad]
    if not trainable:
        raise TrainingError("model has no trainable parameters")
    optimizer = torch.optim.AdamW(trainable, lr=cfg.learning_rate)

    use_early_stop = head_kind == HEAD_FUSION and cfg.early_stop_patience > 0
    rng = random.Random(cfg.seed)
    order = list(range(len(train_set)))
    history = []
    best_acc = -1.0
    best_state = None
    best_epoch = -1

    for epoch in range(cfg.epochs):
        model.train()
        rng.shuffle(order)
        total_loss = 0.0
        n_batches = 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            batch = collate([train_set[j] for j in idx], class_index, requires)
            logits = model(batch)
            loss = _batch_loss(logits, batch["targets"], cfg)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
            n_batches += 1
        val_acc = (
            _accuracy(model, val_set, class_index, requires, cfg.batch_size)
            if val_set
            else None
        )
        history.append(
            {
                "epoch": epoch,
                "train_loss": total_loss / max(1, n_batches),
                "val_accuracy": val_acc,
            }
        )
        if val_acc is not None and val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if use_early_stop and val_acc is not None and epoch - best_epoch >= cfg.early_stop_patience:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = cfg.epochs - 1
    model.eval()
    return TrainedModel(
        model=model,
        head_kind=head_kind,
        spec=spec,
        cfg=cfg,
        classes=classes,
        history=history,
        best_epoch=best_epoch,
    )


def predict(trained: TrainedModel, item: Example):
    """(label, probability vector); argmax ties break toward the lowest class id."""
    requires = trained.model.requires
    for need in requires:
        if getattr(item, need) is None:
            raise ModelError(
                f"{item.article_id}: modality {need!r} required by this model is missing"
            )
    trained.model.eval()
    with torch.no_grad():
        batch = collate([item], trained.class_index, requires)
        logits = trained.model(batch)[0]
        probs = torch.softmax(logits, dim=-1)
    probs_np = probs.numpy()
    label = trained.classes[int(probs_np.argmax())]
    return label, probs_np


def predict_batch(trained: TrainedModel, items: Sequence[Example]):
    """Predicted labels for a list of items, batched."""
    requires = trained.model.requires
    labels = []
    trained.model.eval()
    class_index = trained.class_index
    with torch.no_grad():
        for i in range(0, len(items), max(1, trained.cfg.batch_size)):
            chunk = items[i : i + max(1, trained.cfg.batch_size)]
            for item in chunk:
                for need in requires:
                    if getattr(item, need) is None:
                        raise ModelError(
                            f"{item.article_id}: modality {need!r} required by this model is missing"
                        )
            batch = collate(chunk, class_index, requires)
            logits = trained.model(batch)
            preds = logits.argmax(dim=1)
            labels.extend(trained.classes[int(p)] for p in preds)
    return labels
