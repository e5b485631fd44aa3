"""Corpus schema, ingestion, image fetching, fold planning, and annotator agreement."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

CSV_COLUMNS = [
    "article_id",
    "headline",
    "url",
    "frame_id",
    "summary",
    "first3",
    "image_uri",
    "api_tags",
    "caption",
    "subject_id",
    "re_id",
    "relevant",
]

FRAME_NAMES = {
    1: "Politics",
    2: "Public Opinion",
    3: "Gun Control/Regulation",
    4: "School/Public Space Safety",
    5: "Economic Consequences",
    6: "Race/Ethnicity",
    7: "Mental Health",
    8: "2nd Amendment/Gun Rights",
    9: "Society/Culture",
}


class CorpusError(ValueError):
    """Raised for schema violations and malformed corpus files."""


@dataclass(frozen=True)
class Frame:
    id: int
    name: str

    @classmethod
    def from_id(cls, frame_id: int) -> "Frame":
        if frame_id not in FRAME_NAMES:
            raise CorpusError(f"frame id {frame_id} out of range 1-9")
        return cls(frame_id, FRAME_NAMES[frame_id])

    @classmethod
    def from_name(cls, name: str) -> "Frame":
        for fid, fname in FRAME_NAMES.items():
            if fname == name:
                return cls(fid, fname)
        raise CorpusError(f"unknown frame name {name!r}")


FRAMES = tuple(Frame(i, n) for i, n in sorted(FRAME_NAMES.items()))


@dataclass(frozen=True)
class Article:
    article_id: str
    headline: str
    url: str
    frame: Frame
    summary: str = ""
    first3: str = ""
    body: Optional[str] = None


@dataclass
class ImageRecord:
    article_id: str
    image_uri: str
    api_tags: tuple
    caption: str
    subject_id: int
    re_id: int
    relevant: bool
    local_path: Optional[str] = None


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: Mapping[str, int]
    stratify_by: str
    seed: int

    def fold(self, index: int) -> list:
        return sorted(a for a, f in self.assignments.items() if f == index)

    def folds(self) -> list:
        return [self.fold(i) for i in range(self.k)]


@dataclass(frozen=True)
class AgreementResult:
    percent_agreement: float
    alpha: float
    variable_name: str
    n_items: int
    n_coders: int
    flagged: bool = False


@dataclass
class FetchReport:
    fetched: int = 0
    cached: int = 0
    failed: int = 0
    failures: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fetched": self.fetched,
                "cached": self.cached,
                "failed": self.failed,
                "failures": self.failures,
            },
            indent=2,
            sort_keys=True,
        )


@dataclass
class StatsTable:
    rows: list  # per frame: {"frame", "articles", "relevant", "ratio", "percent"}
    total_articles: int
    total_relevant: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": self.rows,
                "total_articles": self.total_articles,
                "total_relevant": self.total_relevant,
            },
            indent=2,
            sort_keys=True,
        )


def _parse_int(value: str, name: str, row: int, lo: int, hi: int) -> int:
    try:
        n = int(value)
    except ValueError:
        raise CorpusError(f"row {row}: {name} {value!r} is not an integer")
    if not lo <= n <= hi:
        raise CorpusError(f"row {row}: {name} {n} out of range {lo}-{hi}")
    return n


def load_corpus(annotations_path, schema_version: str = SCHEMA_VERSION):
    """Load the annotation CSV and return (articles, image_records).

    Rows are validated strictly: frame ids 1-9, subject ids 1-16, RE ids
    17-19, relevance as 0/1, api_tags as a JSON array. A row with an empty
    image_uri contributes an article but no image record.
    """
    if schema_version != SCHEMA_VERSION:
        raise CorpusError(f"unsupported schema version {schema_version!r}")
    path = Path(annotations_path)
    if not path.exists():
        raise CorpusError(f"annotation file not found: {path}")

    articles = []
    images = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError("empty file: missing header row")
        if header != CSV_COLUMNS:
            raise CorpusError(
                f"bad header: expected {CSV_COLUMNS}, got {header}"
            )
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(CSV_COLUMNS):
                raise CorpusError(
                    f"row {rownum}: expected {len(CSV_COLUMNS)} columns, got {len(row)}"
                )
            rec = dict(zip(CSV_COLUMNS, row))
            aid = rec["article_id"]
            if not aid:
                raise CorpusError(f"row {rownum}: empty article_id")
            if aid in seen:
                raise CorpusError(f"row {rownum}: duplicate article_id {aid!r}")
            seen.add(aid)
            if not rec["headline"]:
                raise CorpusError(f"row {rownum}: empty headline")
            frame = Frame.from_id(
                _parse_int(rec["frame_id"], "frame_id", rownum, 1, 9)
            )
            articles.append(
                Article(
                    article_id=aid,
                    headline=rec["headline"],
                    url=rec["url"],
                    frame=frame,
                    summary=rec["summary"],
                    first3=rec["first3"],
                )
            )
            if rec["image_uri"]:
                try:
                    tags = json.loads(rec["api_tags"]) if rec["api_tags"] else []
                except json.JSONDecodeError:
                    raise CorpusError(
                        f"row {rownum}: api_tags is not a JSON array"
                    )
                if not isinstance(tags, list):
                    raise CorpusError(
                        f"row {rownum}: api_tags must be a JSON array"
                    )
                subject_id = _parse_int(
                    rec["subject_id"], "subject_id", rownum, 1, 16
                )
                re_id = _parse_int(rec["re_id"], "re_id", rownum, 17, 19)
                if rec["relevant"] not in ("0", "1"):
                    raise CorpusError(
                        f"row {rownum}: relevant must be 0 or 1, got {rec['relevant']!r}"
                    )
                images.append(
                    ImageRecord(
                        article_id=aid,
                        image_uri=rec["image_uri"],
                        api_tags=tuple(str(t) for t in tags),
                        caption=rec["caption"],
                        subject_id=subject_id,
                        re_id=re_id,
                        relevant=rec["relevant"] == "1",
                    )
                )
    return articles, images


def save_corpus(articles: Sequence[Article], images: Sequence[ImageRecord], path):
    """Write articles + image records back to the annotation CSV format."""
    by_id = {r.article_id: r for r in images}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for a in articles:
            img = by_id.get(a.article_id)
            if img is None:
                writer.writerow(
                    [a.article_id, a.headline, a.url, a.frame.id,
                     a.summary, a.first3, "", "", "", "", "", ""]
                )
            else:
                writer.writerow(
                    [a.article_id, a.headline, a.url, a.frame.id,
                     a.summary, a.first3, img.image_uri,
                     json.dumps(list(img.api_tags)), img.caption,
                     img.subject_id, img.re_id, int(img.relevant)]
                )


def corpus_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cache_path(cache_dir, article_id: str, image_uri: str = "") -> Path:
    """Cache location for a record's image, keyed by article id."""
    suffix = Path(image_uri.split("?")[0]).suffix if image_uri else ""
    if suffix.lower() not in (".jpg", ".jpeg", ".png", ".gif", ".bmp", ".webp"):
        suffix = ".img"
    return Path(cache_dir) / f"{article_id}{suffix}"


def fetch_images(
    records: Sequence[ImageRecord],
    cache_dir,
    timeout: float = 10.0,
    retries: int = 2,
    max_workers: int = 4,
    session=None,
) -> FetchReport:
    """Download lead images into cache_dir; cached files are never re-fetched.

    Failures are recorded per record and never abort the batch. Successful
    (or cached) records get local_path set in place.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    report = FetchReport()

    if session is None:
        import requests

        session = requests.Session()

    def _one(rec: ImageRecord):
        if rec.local_path and Path(rec.local_path).exists():
            return rec, "cached", None
        target = cache_path(cache_dir, rec.article_id, rec.image_uri)
        if target.exists() and target.stat().st_size > 0:
            rec.local_path = str(target)
            return rec, "cached", None
        last_err = "no attempts made"
        for _ in range(max(1, retries)):
            try:
                resp = session.get(rec.image_uri, timeout=timeout)
                resp.raise_for_status()
                if not resp.content:
                    last_err = "zero-byte download"
                    continue
                target.write_bytes(resp.content)
                rec.local_path = str(target)
                return rec, "fetched", None
            except Exception as exc:  # noqa: BLE001 - per-record failure log
                last_err = f"{type(exc).__name__}: {exc}"
        return rec, "failed", last_err

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for rec, status, err in pool.map(_one, records):
            if status == "fetched":
                report.fetched += 1
            elif status == "cached":
                report.cached += 1
            else:
                report.failed += 1
                report.failures[rec.article_id] = err
    return report


def make_folds(
    articles: Sequence[Article],
    k: int = 4,
    stratify_by: str = "frame",
    seed: int = 0,
    labels: Optional[Mapping[str, object]] = None,
) -> FoldPlan:
    """Stratified k-fold assignment, deterministic under (inputs, seed).

    Within each stratum, items are shuffled and dealt round-robin, so fold
    sizes per stratum differ by at most one. Strata smaller than k trigger a
    warning and a best-effort assignment.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if labels is None:
        if stratify_by != "frame":
            raise ValueError(
                f"labels mapping required when stratifying by {stratify_by!r}"
            )
        labels = {a.article_id: a.frame.id for a in articles}

    strata: dict = {}
    for a in articles:
        strata.setdefault(labels[a.article_id], []).append(a.article_id)

    rng = random.Random(seed)
    assignments = {}
    offset = 0
    for label in sorted(strata, key=str):
        ids = sorted(strata[label])
        if len(ids) < k:
            warnings.warn(
                f"stratum {label!r} has {len(ids)} items for k={k} folds; "
                "some folds will not see this label",
                stacklevel=2,
            )
        rng.shuffle(ids)
        for i, aid in enumerate(ids):
            assignments[aid] = (i + offset) % k
        offset = (offset + len(ids)) % k
    return FoldPlan(k=k, assignments=assignments, stratify_by=stratify_by, seed=seed)


def corpus_stats(articles: Sequence[Article], images: Sequence[ImageRecord]) -> StatsTable:
    """Per-frame article counts, relevant-image counts, and relevance ratios."""
    relevant_by_id = {r.article_id for r in images if r.relevant}
    rows = []
    total_rel = 0
    for frame in FRAMES:
        members = [a for a in articles if a.frame.id == frame.id]
        n_rel = sum(1 for a in members if a.article_id in relevant_by_id)
        total_rel += n_rel
        ratio = n_rel / len(members) if members else 0.0
        rows.append(
            {
                "frame": frame.name,
                "frame_id": frame.id,
                "articles": len(members),
                "relevant": n_rel,
                "ratio": ratio,
                "percent": round(100 * ratio),
            }
        )
    return StatsTable(rows=rows, total_articles=len(articles), total_relevant=total_rel)


def agreement(
    codings: Sequence[Sequence], variable_name: str = ""
) -> AgreementResult:
    """Percent agreement and nominal Krippendorff's alpha over coder x item labels.

    `codings` is a matrix with one row per coder and one column per item;
    None marks a missing code. Items with fewer than two codes are excluded
    from alpha (pairwise deletion); percent agreement is the unanimity rate
    over fully-coded items.
    """
    n_coders = len(codings)
    if n_coders < 2:
        raise ValueError("need at least 2 coders")
    n_items = len(codings[0])
    if n_items < 1 or any(len(row) != n_items for row in codings):
        raise ValueError("coder rows must be non-empty and equal-length")

    # Percent agreement over items every coder coded.
    full = [
        [row[i] for row in codings]
        for i in range(n_items)
        if all(row[i] is not None for row in codings)
    ]
    if full:
        percent = sum(1 for codes in full if len(set(codes)) == 1) / len(full)
    else:
        percent = 0.0

    # Coincidence matrix with pairwise deletion.
    coincidence: dict = {}
    value_totals: dict = {}
    n_pairable = 0.0
    for i in range(n_items):
        codes = [row[i] for row in codings if row[i] is not None]
        m = len(codes)
        if m < 2:
            continue
        for a_idx, c in enumerate(codes):
            for b_idx, kk in enumerate(codes):
                if a_idx == b_idx:
                    continue
                coincidence[(c, kk)] = coincidence.get((c, kk), 0.0) + 1.0 / (m - 1)
        for c in codes:
            value_totals[c] = value_totals.get(c, 0.0) + 1.0
            n_pairable += 1.0
    if not coincidence:
        raise ValueError("no item has two or more codes; alpha is undefined")

    disagreement = sum(v for (c, kk), v in coincidence.items() if c != kk)
    expected = sum(
        value_totals[c] * value_totals[kk]
        for c in value_totals
        for kk in value_totals
        if c != kk
    )
    flagged = False
    if expected == 0:
        # All pairable codes identical: no observable disagreement to expect.
        alpha = 1.0
        flagged = True
    else:
        alpha = 1.0 - (n_pairable - 1.0) * disagreement / expected
    return AgreementResult(
        percent_agreement=percent,
        alpha=alpha,
        variable_name=variable_name,
        n_items=n_items,
        n_coders=n_coders,
        flagged=flagged,
    )
