"""Word-concreteness regression, frame concreteness, and correlation analyses."""

from __future__ import annotations

import csv
import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .corpus import FRAMES, Article, Frame, ImageRecord, corpus_stats
from .encoders import TextEncoder

log = logging.getLogger(__name__)

RATING_MIN = 1.0
RATING_MAX = 5.0
NAMED_ENTITY_RATING = 5.0

_WORD_TOKEN_RE = re.compile(r"\w+")

# Reference correlation values reported for this analysis, echoed in the
# report footer for comparison.
REFERENCE_CORRELATIONS = {
    "concreteness_vs_relevance_ratio": 0.69,
    "concreteness_vs_f1_relevant_only": 0.93,
    "concreteness_vs_f1_all": 0.94,
    "relevance_ratio_vs_f1_relevant_only": 0.81,
    "relevance_ratio_vs_f1_all": 0.67,
}


class ConcretenessError(ValueError):
    pass


def load_lexicon(path) -> Dict[str, float]:
    """Two-column CSV (word, rating in [1,5]) -> lowercased unique mapping."""
    entries: Dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConcretenessError("empty lexicon file")
        for rownum, row in enumerate(reader, start=1):
            if len(row) < 2:
                raise ConcretenessError(f"lexicon row {rownum}: expected 2 columns")
            word = row[0].strip().lower()
            try:
                rating = float(row[1])
            except ValueError:
                raise ConcretenessError(
                    f"lexicon row {rownum}: rating {row[1]!r} is not a number"
                )
            if not RATING_MIN <= rating <= RATING_MAX:
                raise ConcretenessError(
                    f"lexicon row {rownum}: rating {rating} outside [1,5]"
                )
            if word in entries:
                raise ConcretenessError(f"lexicon row {rownum}: duplicate word {word!r}")
            entries[word] = rating
    return entries


class _Regressor(nn.Module):
    def __init__(self, input_dim: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(input_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1)
        )

    def forward(self, x):
        return self.net(x).squeeze(-1)


@dataclass
class ConcretenessModel:
    regressor: nn.Module
    input_dim: int
    split_seed: int
    split_sizes: dict
    test_pearson: float
    skipped_words: int = 0
    encoder_identifier: str = ""

    def predict_from_embedding(self, embedding: np.ndarray) -> float:
        self.regressor.eval()
        with torch.no_grad():
            raw = float(self.regressor(torch.as_tensor(embedding, dtype=torch.float32)))
        return min(RATING_MAX, max(RATING_MIN, raw))


def word_embedding(encoder: TextEncoder, word: str) -> np.ndarray:
    """Mean over subword vectors of the word encoded in isolation (4H dims)."""
    vecs = encoder.encode(word, mode="per_token_last4")
    return vecs.detach().mean(dim=0).numpy()


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation; errors on mismatched length or zero variance."""
    if len(x) != len(y):
        raise ConcretenessError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ConcretenessError("need at least 2 observations")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = math.sqrt(float((dx * dx).sum()))
    sy = math.sqrt(float((dy * dy).sum()))
    if sx == 0 or sy == 0:
        raise ConcretenessError("zero variance in input series")
    return float((dx * dy).sum()) / (sx * sy)


def train_concreteness(
    lexicon: Mapping[str, float],
    encoder: TextEncoder,
    split_seed: int = 0,
    epochs: int = 30,
    batch_size: int = 64,
    learning_rate: float = 1e-3,
    embeddings: Optional[Mapping[str, np.ndarray]] = None,
) -> ConcretenessModel:
    """Fit the embedding -> rating regressor on a 90/5/5 split.

    Embeddings are the mean per-subword last-four-layer vectors of each word
    encoded in isolation; words with empty tokenization are skipped and
    counted. Precomputed embeddings can be supplied to bypass extraction.
    """
    if not lexicon:
        raise ConcretenessError("empty lexicon")
    words = sorted(lexicon)
    skipped = 0
    feats = []
    targets = []
    for w in words:
        if embeddings is not None and w in embeddings:
            vec = np.asarray(embeddings[w], dtype=np.float32)
        else:
            try:
                vec = word_embedding(encoder, w)
            except Exception:
                skipped += 1
                continue
        feats.append(vec)
        targets.append(lexicon[w])
    if skipped:
        log.warning("skipped %d words with empty tokenization", skipped)
    n = len(feats)
    if n < 3:
        raise ConcretenessError(
            f"lexicon too small to split train/val/test ({n} usable words)"
        )
    X = torch.tensor(np.stack(feats), dtype=torch.float32)
    y = torch.tensor(targets, dtype=torch.float32)

    rng = random.Random(split_seed)
    order = list(range(n))
    rng.shuffle(order)
    n_test = max(1, round(0.05 * n))
    n_val = max(1, round(0.05 * n))
    test_idx = order[:n_test]
    val_idx = order[n_test : n_test + n_val]
    train_idx = order[n_test + n_val :]
    if not train_idx:
        raise ConcretenessError("lexicon too small to split train/val/test")

    torch.manual_seed(split_seed)
    model = _Regressor(X.shape[1])
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    loss_fn = nn.MSELoss()
    best_val = float("inf")
    best_state = None
    for _ in range(epochs):
        model.train()
        rng.shuffle(train_idx)
        for i in range(0, len(train_idx), batch_size):
            idx = train_idx[i : i + batch_size]
            pred = model(X[idx])
            loss = loss_fn(pred, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            val_loss = float(loss_fn(model(X[val_idx]), y[val_idx]))
        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    with torch.no_grad():
        test_pred = model(X[test_idx]).numpy()
    r = pearson(test_pred.tolist(), y[test_idx].numpy().tolist())
    return ConcretenessModel(
        regressor=model,
        input_dim=int(X.shape[1]),
        split_seed=split_seed,
        split_sizes={"train": len(train_idx), "val": len(val_idx), "test": len(test_idx)},
        test_pearson=r,
        skipped_words=skipped,
        encoder_identifier=encoder.identifier if encoder is not None else "",
    )


def word_concreteness(
    model: ConcretenessModel,
    encoder: Optional[TextEncoder],
    word: str,
    is_named_entity: bool,
    embedding: Optional[np.ndarray] = None,
) -> float:
    """Named entities rate exactly 5; everything else is the clamped prediction."""
    if is_named_entity:
        return NAMED_ENTITY_RATING
    if embedding is None:
        embedding = word_embedding(encoder, word)
    return model.predict_from_embedding(embedding)


def headline_tokens(headline: str) -> list:
    """Word tokens of a headline; punctuation-only tokens are excluded."""
    return _WORD_TOKEN_RE.findall(headline)


def heuristic_ner(tokens: Sequence[str]) -> list:
    """Capitalization-based fallback tagger: capitalized non-initial tokens.

    Stands in for a pretrained tagger when none is supplied.
    """
    return [i > 0 and t[:1].isupper() for i, t in enumerate(tokens)]


def frame_concreteness(
    articles: Sequence[Article],
    model: ConcretenessModel,
    encoder: Optional[TextEncoder],
    ner: Callable[[Sequence[str]], Sequence[bool]] = heuristic_ner,
    exclude_stopwords: bool = False,
    stopwords: Sequence[str] = (),
) -> dict:
    """Per-frame mean word concreteness over headline tokens.

    Named-entity tokens contribute 5, others the regressor prediction.
    Frames with no headlines are excluded and flagged. Returns
    {"ratings": {frame_name: mean}, "excluded_frames": [...]}.
    """
    stop = {w.lower() for w in stopwords} if exclude_stopwords else set()
    cache: dict = {}
    sums: dict = {}
    counts: dict = {}
    for article in articles:
        tokens = headline_tokens(article.headline)
        if not tokens:
            continue
        flags = list(ner(tokens))
        for token, is_ne in zip(tokens, flags):
            if exclude_stopwords and token.lower() in stop:
                continue
            if is_ne:
                rating = NAMED_ENTITY_RATING
            else:
                key = token.lower()
                if key not in cache:
                    cache[key] = word_concreteness(model, encoder, key, False)
                rating = cache[key]
            sums[article.frame.name] = sums.get(article.frame.name, 0.0) + rating
            counts[article.frame.name] = counts.get(article.frame.name, 0) + 1
    ratings = {}
    excluded = []
    for frame in FRAMES:
        if counts.get(frame.name):
            ratings[frame.name] = sums[frame.name] / counts[frame.name]
        else:
            excluded.append(frame.name)
    return {"ratings": ratings, "excluded_frames": excluded}


def correlation_report(
    articles: Sequence[Article],
    images: Sequence[ImageRecord],
    frame_ratings: Mapping[str, float],
    f1_all: Optional[Mapping[str, float]] = None,
    f1_relevant_only: Optional[Mapping[str, float]] = None,
) -> dict:
    """Frame-level Pearson correlations between concreteness, relevance
    ratio, and per-frame F1 on each subset.

    F1 mappings are keyed by frame name; frames missing from a series are
    dropped from that correlation and flagged.
    """
    stats = corpus_stats(articles, images)
    ratio = {row["frame"]: row["ratio"] for row in stats.rows if row["articles"] > 0}

    def corr(series_a: Mapping[str, float], series_b: Mapping[str, float], name: str):
        common = [f.name for f in FRAMES if f.name in series_a and f.name in series_b]
        dropped = [
            f.name
            for f in FRAMES
            if (f.name in series_a) != (f.name in series_b)
            or (f.name not in series_a and f.name not in series_b)
        ]
        if len(common) < 2:
            return {"r": None, "n": len(common), "dropped_frames": dropped}
        try:
            r = pearson([series_a[f] for f in common], [series_b[f] for f in common])
        except ConcretenessError as exc:
            # A constant series (e.g. identical relevance ratios) has no
            # defined correlation; flag it instead of failing the report.
            return {
                "r": None,
                "n": len(common),
                "dropped_frames": dropped,
                "undefined": str(exc),
            }
        return {"r": r, "n": len(common), "dropped_frames": dropped}

    correlations = {
        "concreteness_vs_relevance_ratio": corr(frame_ratings, ratio, "ratio")
    }
    if f1_all is not None:
        correlations["concreteness_vs_f1_all"] = corr(frame_ratings, f1_all, "f1_all")
        correlations["relevance_ratio_vs_f1_all"] = corr(ratio, f1_all, "f1_all")
    if f1_relevant_only is not None:
        correlations["concreteness_vs_f1_relevant_only"] = corr(
            frame_ratings, f1_relevant_only, "f1_rel"
        )
        correlations["relevance_ratio_vs_f1_relevant_only"] = corr(
            ratio, f1_relevant_only, "f1_rel"
        )
    return {
        "correlations": correlations,
        "frame_concreteness": dict(frame_ratings),
        "relevance_ratio": ratio,
        "reference_values": REFERENCE_CORRELATIONS,
    }


def concreteness_chart(
    articles: Sequence[Article],
    images: Sequence[ImageRecord],
    frame_ratings: Mapping[str, float],
    path,
):
    """Dual-axis chart: bars for relevance ratio, line for concreteness."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stats = corpus_stats(articles, images)
    names = [row["frame"] for row in stats.rows]
    ratios = [row["ratio"] for row in stats.rows]
    conc = [frame_ratings.get(n, float("nan")) for n in names]
    x = np.arange(len(names))
    fig, ax1 = plt.subplots(figsize=(10, 4))
    ax1.bar(x, ratios, color="steelblue", label="relevance ratio")
    ax1.set_ylabel("relevance ratio")
    ax1.set_ylim(0, 1)
    ax2 = ax1.twinx()
    ax2.plot(x, conc, color="darkorange", marker="o", label="concreteness")
    ax2.set_ylabel("avg concreteness (1-5)")
    ax2.set_ylim(1, 5)
    ax1.set_xticks(x)
    ax1.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
