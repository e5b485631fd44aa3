"""Backbone wrappers: a contextual subword text encoder and a conv image encoder.

Both expose freeze/unfreeze and deterministic eval-mode inference so heads
stay backbone-agnostic. The `tiny` constructors build small randomly
initialized variants that train on CPU in seconds, used by the test suite
and for smoke runs; the `pretrained`/`resnet50` constructors load the full
backbones for real experiments.
"""

from __future__ import annotations

import re
from typing import Optional, Sequence

import torch
import torch.nn as nn


class EncoderError(ValueError):
    pass


_WORD_RE = re.compile(r"\w+|[^\w\s]+")


def build_vocab(texts: Sequence[str]) -> list:
    """Lowercased word+punctuation vocabulary for the tiny tokenizer."""
    words = set()
    for t in texts:
        words.update(w.lower() for w in _WORD_RE.findall(t))
    return sorted(words)


def _tiny_tokenizer(vocab_words: Sequence[str]):
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import Whitespace
    from tokenizers.processors import TemplateProcessing
    from transformers import PreTrainedTokenizerFast

    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    vocab = {w: i for i, w in enumerate(specials + list(vocab_words))}
    tk = Tokenizer(WordPiece(vocab, unk_token="[UNK]"))
    tk.normalizer = BertNormalizer(lowercase=True)
    tk.pre_tokenizer = Whitespace()
    tk.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
    )


class TextEncoder(nn.Module):
    """Transformer text encoder with last-four-layer concatenation pooling."""

    def __init__(self, model, tokenizer, identifier: str, max_len: int = 512):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer
        self.identifier = identifier
        self.max_len = max_len
        self.hidden_size = model.config.hidden_size
        self._frozen = False

    @property
    def pooled_dim(self) -> int:
        return 4 * self.hidden_size

    @property
    def sep_token(self) -> str:
        return self.tokenizer.sep_token or "[SEP]"

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self):
        for p in self.model.parameters():
            p.requires_grad_(False)
        self._frozen = True
        self.model.eval()
        return self

    def unfreeze(self):
        for p in self.model.parameters():
            p.requires_grad_(True)
        self._frozen = False
        return self

    def train(self, mode: bool = True):
        # A frozen encoder stays in eval mode so its outputs are constant.
        super().train(mode and not self._frozen)
        return self

    def _last4(self, enc):
        out = self.model(
            input_ids=enc["input_ids"],
            attention_mask=enc["attention_mask"],
            output_hidden_states=True,
        )
        if len(out.hidden_states) < 4:
            raise EncoderError(
                "encoder exposes fewer than 4 hidden states; cannot pool last four layers"
            )
        return torch.cat(out.hidden_states[-4:], dim=-1)

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        """Batch of texts -> (B, 4H) pooled representations."""
        return self.encode(texts, mode="pooled_last4")

    def encode(self, texts, mode: str = "pooled_last4") -> torch.Tensor:
        """pooled_last4: (B, 4H) at the classification-token position.

        per_token_last4: single text -> (T, 4H), one row per non-special
        subword.
        """
        if mode == "per_token_last4":
            if not isinstance(texts, str):
                raise EncoderError("per_token_last4 expects a single text")
            enc = self.tokenizer(
                [texts],
                return_tensors="pt",
                truncation=True,
                max_length=self.max_len,
                return_special_tokens_mask=True,
            )
            mask = enc.pop("special_tokens_mask")[0] == 0
            if not mask.any():
                raise EncoderError(f"empty tokenization for {texts!r}")
            hidden = self._last4(enc)
            return hidden[0][mask]
        if mode != "pooled_last4":
            raise EncoderError(f"unknown encode mode {mode!r}")
        if isinstance(texts, str):
            texts = [texts]
        for t in texts:
            if not self.tokenizer(t, add_special_tokens=False)["input_ids"]:
                raise EncoderError(f"empty tokenization for {t!r}")
        enc = self.tokenizer(
            list(texts),
            return_tensors="pt",
            truncation=True,
            max_length=self.max_len,
            padding=True,
        )
        hidden = self._last4(enc)
        return hidden[:, 0, :]

    @classmethod
    def tiny(
        cls,
        vocab_words: Sequence[str],
        hidden_size: int = 32,
        num_layers: int = 3,
        num_heads: int = 2,
        max_len: int = 64,
    ) -> "TextEncoder":
        """Small randomly initialized encoder over a fixed word vocabulary."""
        from transformers import BertConfig, BertModel

        tokenizer = _tiny_tokenizer(vocab_words)
        config = BertConfig(
            vocab_size=len(tokenizer),
            hidden_size=hidden_size,
            num_hidden_layers=num_layers,
            num_attention_heads=num_heads,
            intermediate_size=4 * hidden_size,
            max_position_embeddings=max_len,
        )
        model = BertModel(config)
        return cls(model, tokenizer, identifier=f"tiny-bert-h{hidden_size}", max_len=max_len)

    @classmethod
    def pretrained(cls, identifier: str, max_len: int = 512) -> "TextEncoder":
        """Load a pretrained encoder from a model-hub id or local directory."""
        from transformers import AutoModel, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(identifier)
        model = AutoModel.from_pretrained(identifier)
        return cls(model, tokenizer, identifier=identifier, max_len=max_len)


class _TinyConvNet(nn.Module):
    def __init__(self, feature_dim: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(8, 8, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
            nn.Linear(8 * 16, feature_dim),
        )

    def forward(self, x):
        return self.features(x)


class ImageEncoder(nn.Module):
    """Image backbone ending in a flat feature vector of fixed dimension."""

    def __init__(self, backbone: nn.Module, feature_dim: int, identifier: str):
        super().__init__()
        self.backbone = backbone
        self.feature_dim = feature_dim
        self.identifier = identifier
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self):
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        self._frozen = True
        self.backbone.eval()
        return self

    def unfreeze(self):
        for p in self.backbone.parameters():
            p.requires_grad_(True)
        self._frozen = False
        return self

    def train(self, mode: bool = True):
        super().train(mode and not self._frozen)
        return self

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        feats = self.backbone(images)
        if feats.shape[-1] != self.feature_dim:
            raise EncoderError(
                f"backbone produced {feats.shape[-1]} features, expected {self.feature_dim}"
            )
        return feats

    encode = forward

    @classmethod
    def tiny(cls, feature_dim: int = 32) -> "ImageEncoder":
        return cls(_TinyConvNet(feature_dim), feature_dim, f"tiny-conv-d{feature_dim}")

    @classmethod
    def resnet50(cls, weights: Optional[str] = "IMAGENET1K_V2", feature_dim: int = 512) -> "ImageEncoder":
        """50-layer residual backbone with its output layer replaced by a
        flat feature layer of `feature_dim` nodes."""
        from torchvision.models import resnet50

        net = resnet50(weights=weights)
        net.fc = nn.Linear(net.fc.in_features, feature_dim)
        return cls(net, feature_dim, f"resnet50-{weights}")
