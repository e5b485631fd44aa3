"""Model input construction: SRE one-hots, assembled text, image tensors."""

from __future__ import annotations

import numpy as np
import torch
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from .corpus import Article, Frame, ImageRecord

# Central-subject categories (positions 1-16) and race/ethnicity categories
# (positions 17-19) of the SRE annotation scheme.
SUBJECT_CATEGORIES = {
    1: "gun shooter/suspect",
    2: "gun hobbyist/activist",
    3: "victim/affected family/bystanders",
    4: "politicians",
    5: "law enforcement",
    6: "firearm/bullets",
    7: "gun store/gun show",
    8: "demonstrators",
    9: "protest signs",
    10: "memorials",
    11: "crime scene",
    12: "legislative buildings/courthouses",
    13: "school/campus/students",
    14: "NRA objects/representatives",
    15: "company buildings/logos",
    16: "other",
}
RE_CATEGORIES = {
    17: "none",
    18: "racial/ethnic minority groups",
    19: "hate groups",
}

SRE_DIM = 19
MAX_API_TAGS = 10
IMAGE_SIZE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

TEXT_PARTS = ("headline", "api", "caption", "summary", "first3", "frame_label")
ALL_PARTS = TEXT_PARTS + ("sre", "image")
IMAGE_DEPENDENT_PARTS = ("api", "caption", "sre", "image")

# Canonical CLI/report keys for parts whose internal name differs.
_PART_TO_KEY = {"image": "resnet", "frame_label": "frame"}
_KEY_TO_PART = {v: k for k, v in _PART_TO_KEY.items()}


class FeatureError(ValueError):
    """Raised for invalid feature requests (bad ids, missing inputs)."""


def encode_sre(subject_id: int, re_id: int) -> np.ndarray:
    """One-hot pair over the 19 SRE positions; always sums to exactly 2."""
    if subject_id not in SUBJECT_CATEGORIES:
        raise FeatureError(f"subject_id {subject_id} out of range 1-16")
    if re_id not in RE_CATEGORIES:
        raise FeatureError(f"re_id {re_id} out of range 17-19")
    vec = np.zeros(SRE_DIM, dtype=np.float32)
    vec[subject_id - 1] = 1.0
    vec[re_id - 1] = 1.0
    return vec


@dataclass(frozen=True)
class ModalitySpec:
    """A task plus the ordered input parts that feed the model."""

    task: str  # "frame" | "relevance"
    parts: Tuple[str, ...]

    def __post_init__(self):
        if self.task not in ("frame", "relevance"):
            raise FeatureError(f"unknown task {self.task!r}")
        if not self.parts:
            raise FeatureError("modality needs at least one part")
        if len(set(self.parts)) != len(self.parts):
            raise FeatureError(f"duplicate parts in {self.parts}")
        for p in self.parts:
            if p not in ALL_PARTS:
                raise FeatureError(f"unknown part {p!r}")
        if self.task == "frame" and "frame_label" in self.parts:
            raise FeatureError("frame_label is the target of the frame task")

    @property
    def key(self) -> str:
        return "+".join(_PART_TO_KEY.get(p, p) for p in self.parts)

    @property
    def text_parts(self) -> Tuple[str, ...]:
        return tuple(p for p in self.parts if p in TEXT_PARTS)

    @property
    def needs_image_record(self) -> bool:
        return any(p in IMAGE_DEPENDENT_PARTS for p in self.parts)

    @classmethod
    def parse(cls, key: str, task: str = "frame") -> "ModalitySpec":
        parts = tuple(_KEY_TO_PART.get(tok, tok) for tok in key.split("+") if tok)
        return cls(task=task, parts=parts)


def build_text(
    article: Article,
    image: Optional[ImageRecord],
    spec: ModalitySpec,
    frame: Optional[Frame] = None,
    sep: str = "[SEP]",
) -> str:
    """Assemble the text input: parts in spec order joined by the separator token.

    The api part is the first 10 tags joined by spaces; frame_label is the
    frame's canonical name (relevance task only).
    """
    pieces = []
    for part in spec.parts:
        if part not in TEXT_PARTS:
            continue
        if part == "headline":
            pieces.append(article.headline)
        elif part == "api":
            if image is None:
                raise FeatureError(
                    f"{article.article_id}: api part requires an image record"
                )
            pieces.append(" ".join(image.api_tags[:MAX_API_TAGS]))
        elif part == "caption":
            if image is None:
                raise FeatureError(
                    f"{article.article_id}: caption part requires an image record"
                )
            pieces.append(image.caption)
        elif part == "summary":
            pieces.append(article.summary)
        elif part == "first3":
            pieces.append(article.first3)
        elif part == "frame_label":
            if frame is None:
                raise FeatureError("frame_label part requires a frame")
            pieces.append(frame.name)
    return f" {sep} ".join(pieces)


def preprocess_image(local_path, article_id: str = "") -> torch.Tensor:
    """Decode, bilinear-resize to 224x224, and ImageNet-standardize an image.

    Returns a (3, 224, 224) float tensor.
    """
    from PIL import Image

    try:
        with Image.open(local_path) as img:
            img = img.convert("RGB").resize(
                (IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR
            )
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except Exception as exc:
        who = article_id or str(local_path)
        raise FeatureError(f"{who}: cannot decode image ({exc})") from exc
    arr = (arr - np.array(IMAGENET_MEAN, dtype=np.float32)) / np.array(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1)).contiguous()
