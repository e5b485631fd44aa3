"""Experiment matrix runner: metrics, cross-validation, aggregation, reports."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import Article, FoldPlan, ImageRecord, make_folds
from .features import ModalitySpec, build_text, encode_sre, preprocess_image
from .models import (
    HEAD_FUSION,
    HEAD_IMAGE,
    HEAD_SRE,
    HEAD_SRE_TEXT,
    HEAD_TEXT,
    Example,
    TrainConfig,
    TrainingError,
    head_for_spec,
    predict_batch,
    seed_everything,
    train,
)

REPORT_SCHEMA_VERSION = "1"


class EvaluationError(ValueError):
    pass


def micro_accuracy(gold: Sequence, pred: Sequence) -> float:
    """Fraction of items whose prediction equals gold."""
    if len(gold) != len(pred):
        raise EvaluationError(f"length mismatch: {len(gold)} vs {len(pred)}")
    if not gold:
        raise EvaluationError("empty label lists")
    return sum(1 for g, p in zip(gold, pred) if g == p) / len(gold)


def per_frame_f1(gold: Sequence, pred: Sequence, label) -> float:
    """One-vs-rest F1 for one class; 0 when precision + recall is 0."""
    if len(gold) != len(pred):
        raise EvaluationError(f"length mismatch: {len(gold)} vs {len(pred)}")
    tp = sum(1 for g, p in zip(gold, pred) if g == label and p == label)
    fp = sum(1 for g, p in zip(gold, pred) if g != label and p == label)
    fn = sum(1 for g, p in zip(gold, pred) if g == label and p != label)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_defined(gold: Sequence, pred: Sequence, label) -> bool:
    """False when the class is absent from both gold and predictions."""
    return label in gold or label in pred


def confusion_matrix(gold: Sequence, pred: Sequence, labels: Sequence) -> np.ndarray:
    index = {lab: i for i, lab in enumerate(labels)}
    mat = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        mat[index[g], index[p]] += 1
    return mat


@dataclass(frozen=True)
class ExperimentSpec:
    task: str = "frame"  # "frame" | "relevance"
    subset: str = "all"  # "all" | "relevant_only"
    modality: ModalitySpec = None
    k: int = 4
    fold_seed: int = 0
    seeds: tuple = tuple(range(25))
    train_config: TrainConfig = TrainConfig()
    fusion_finetune_text: bool = True
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.subset == "relevant_only" and self.task != "frame":
            raise EvaluationError(
                "relevant_only subset is defined for the frame task"
            )

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "subset": self.subset,
            "modality": self.modality.key,
            "k": self.k,
            "fold_seed": self.fold_seed,
            "seeds": list(self.seeds),
            "train_config": self.train_config.to_dict(),
            "fusion_finetune_text": self.fusion_finetune_text,
            "val_fraction": self.val_fraction,
        }


@dataclass
class EvalReport:
    experiment: dict
    runs: list  # {fold, seed, accuracy, n_test, misclassified: [[id, gold, pred], ...]}
    mean_accuracy: float
    std_accuracy: float
    per_class_f1: dict  # str(label) -> {"f1": mean over seeds, "defined": bool}
    confusion: dict  # {"labels": [...], "matrix": [[...]]}
    corpus_checksum: str = ""
    schema_version: str = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "runs": self.runs,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "per_class_f1": self.per_class_f1,
            "confusion": self.confusion,
            "corpus_checksum": self.corpus_checksum,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            experiment=d["experiment"],
            runs=d["runs"],
            mean_accuracy=d["mean_accuracy"],
            std_accuracy=d["std_accuracy"],
            per_class_f1=d["per_class_f1"],
            confusion=d["confusion"],
            corpus_checksum=d.get("corpus_checksum", ""),
            schema_version=d.get("schema_version", REPORT_SCHEMA_VERSION),
        )


def build_example(
    article: Article,
    image: Optional[ImageRecord],
    spec: ModalitySpec,
    label,
    sep: str = "[SEP]",
    frame_for_label=None,
) -> Example:
    """Assemble the Example an article contributes under a modality spec."""
    head_kind = head_for_spec(spec)
    text = None
    img_tensor = None
    sre = None
    if head_kind in (HEAD_TEXT, HEAD_FUSION, HEAD_SRE_TEXT):
        text = build_text(article, image, spec, frame=frame_for_label, sep=sep)
    if head_kind in (HEAD_IMAGE, HEAD_FUSION):
        if image is None or image.local_path is None:
            raise EvaluationError(
                f"{article.article_id}: image modality requires a cached image"
            )
        img_tensor = preprocess_image(image.local_path, article.article_id)
    if head_kind in (HEAD_SRE, HEAD_SRE_TEXT):
        if image is None:
            raise EvaluationError(
                f"{article.article_id}: sre modality requires an image record"
            )
        sre = encode_sre(image.subject_id, image.re_id)
    return Example(
        article_id=article.article_id, label=label, text=text, image=img_tensor, sre=sre
    )


def _stratified_holdout(ids: Sequence[str], labels: Mapping, fraction: float, seed: int):
    """Split ids into (train, val); at least one val item per stratum of >= 2."""
    import random as _random

    rng = _random.Random(seed)
    strata: dict = {}
    for aid in ids:
        strata.setdefault(labels[aid], []).append(aid)
    train_ids, val_ids = [], []
    for label in sorted(strata, key=str):
        members = sorted(strata[label])
        rng.shuffle(members)
        n_val = max(1, round(fraction * len(members))) if len(members) >= 2 else 0
        val_ids.extend(members[:n_val])
        train_ids.extend(members[n_val:])
    return train_ids, val_ids


def run_experiment(
    exp: ExperimentSpec,
    articles: Sequence[Article],
    images: Sequence[ImageRecord],
    text_encoder_factory=None,
    image_encoder_factory=None,
    save_dir=None,
    corpus_checksum: str = "",
) -> EvalReport:
    """Train/evaluate over every (fold, seed) pair and aggregate.

    For each seed and fold: train on the other k-1 folds (with a stratified
    holdout for validation), test on the held-out fold. Aggregate accuracy
    is the mean over all runs; per-class F1 pools fold predictions per seed
    and averages over seeds.
    """
    images_by_id = {r.article_id: r for r in images}
    arts = list(articles)
    if exp.subset == "relevant_only":
        arts = [
            a
            for a in arts
            if a.article_id in images_by_id and images_by_id[a.article_id].relevant
        ]
    if not arts:
        raise EvaluationError("no articles in the selected subset")

    if exp.task == "frame":
        labels = {a.article_id: a.frame.id for a in arts}
        stratify = "frame"
    else:
        for a in arts:
            if a.article_id not in images_by_id:
                raise EvaluationError(
                    f"{a.article_id}: relevance task requires an image record per article"
                )
        labels = {a.article_id: int(images_by_id[a.article_id].relevant) for a in arts}
        stratify = "relevance"

    head_kind = head_for_spec(exp.modality)
    need_text = head_kind in (HEAD_TEXT, HEAD_FUSION, HEAD_SRE_TEXT)
    need_image = head_kind in (HEAD_IMAGE, HEAD_FUSION)
    if need_text and text_encoder_factory is None:
        raise EvaluationError(f"modality {exp.modality.key!r} needs a text encoder")
    if need_image and image_encoder_factory is None:
        raise EvaluationError(f"modality {exp.modality.key!r} needs an image encoder")

    sep = "[SEP]"
    if need_text:
        sep = text_encoder_factory().sep_token

    examples = {}
    for a in arts:
        frame_for_label = a.frame if "frame_label" in exp.modality.parts else None
        examples[a.article_id] = build_example(
            a,
            images_by_id.get(a.article_id),
            exp.modality,
            labels[a.article_id],
            sep=sep,
            frame_for_label=frame_for_label,
        )

    plan = make_folds(arts, k=exp.k, stratify_by=stratify, seed=exp.fold_seed, labels=labels)
    classes = tuple(sorted(set(labels.values())))

    runs = []
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    f1_by_seed: dict = {c: [] for c in classes}
    defined: dict = {c: False for c in classes}

    for seed in exp.seeds:
        pooled_gold, pooled_pred = [], []
        for fold_idx in range(exp.k):
            test_ids = plan.fold(fold_idx)
            rest = [
                a.article_id for a in arts if plan.assignments[a.article_id] != fold_idx
            ]
            train_ids, val_ids = _stratified_holdout(
                rest, labels, exp.val_fraction, seed=exp.fold_seed * 31 + fold_idx
            )
            cfg = replace(exp.train_config, seed=seed)
            try:
                trained = _train_one(
                    exp,
                    head_kind,
                    [examples[i] for i in train_ids],
                    [examples[i] for i in val_ids],
                    cfg,
                    classes,
                    text_encoder_factory,
                    image_encoder_factory,
                )
            except Exception as exc:
                raise TrainingError(
                    f"training failed at fold={fold_idx} seed={seed}: {exc}"
                ) from exc
            test_ex = [examples[i] for i in test_ids]
            preds = predict_batch(trained, test_ex)
            gold = [labels[i] for i in test_ids]
            acc = micro_accuracy(gold, preds)
            runs.append(
                {
                    "fold": fold_idx,
                    "seed": seed,
                    "accuracy": acc,
                    "n_test": len(test_ids),
                    "misclassified": [
                        [aid, g, p]
                        for aid, g, p in zip(test_ids, gold, preds)
                        if g != p
                    ],
                }
            )
            pooled_gold.extend(gold)
            pooled_pred.extend(preds)
            conf += confusion_matrix(gold, preds, classes)
            if save_dir is not None:
                trained.save(Path(save_dir) / f"fold{fold_idx}_seed{seed}")
        for c in classes:
            f1_by_seed[c].append(per_frame_f1(pooled_gold, pooled_pred, c))
            defined[c] = defined[c] or f1_defined(pooled_gold, pooled_pred, c)

    accs = [r["accuracy"] for r in runs]
    return EvalReport(
        experiment=exp.to_dict(),
        runs=runs,
        mean_accuracy=sum(accs) / len(accs),
        std_accuracy=statistics.pstdev(accs) if len(accs) > 1 else 0.0,
        per_class_f1={
            str(c): {
                "f1": sum(f1_by_seed[c]) / len(f1_by_seed[c]),
                "defined": defined[c],
            }
            for c in classes
        },
        confusion={"labels": list(classes), "matrix": conf.tolist()},
        corpus_checksum=corpus_checksum,
    )


def _train_one(
    exp,
    head_kind,
    train_ex,
    val_ex,
    cfg,
    classes,
    text_encoder_factory,
    image_encoder_factory,
):
    seed_everything(cfg.seed, cfg.deterministic)
    text_encoder = text_encoder_factory() if text_encoder_factory else None
    image_encoder = image_encoder_factory() if image_encoder_factory else None
    if head_kind == HEAD_FUSION and exp.fusion_finetune_text:
        text_spec = ModalitySpec(
            task=exp.modality.task,
            parts=tuple(p for p in exp.modality.parts if p != "image"),
        )
        pre = train(
            HEAD_TEXT, text_spec, train_ex, val_ex, cfg, classes,
            text_encoder=text_encoder,
        )
        text_encoder = pre.model.text_encoder
    return train(
        head_kind,
        exp.modality,
        train_ex,
        val_ex,
        cfg,
        classes,
        text_encoder=text_encoder,
        image_encoder=image_encoder,
    )


def run_relevance(
    exp: ExperimentSpec,
    with_frame_label: bool,
    articles: Sequence[Article],
    images: Sequence[ImageRecord],
    **kwargs,
) -> EvalReport:
    """Binary relevance classification, optionally conditioning on the gold
    frame name appended to the text input."""
    parts = exp.modality.parts
    if with_frame_label and "frame_label" not in parts:
        parts = parts + ("frame_label",)
    elif not with_frame_label and "frame_label" in parts:
        parts = tuple(p for p in parts if p != "frame_label")
    modality = ModalitySpec(task="relevance", parts=parts)
    exp = replace(exp, task="relevance", subset="all", modality=modality)
    return run_experiment(exp, articles, images, **kwargs)


def _report_name(report: EvalReport) -> str:
    e = report.experiment
    return f"{e['task']}_{e['subset']}_{e['modality'].replace('+', '_')}"


def emit_report(reports: Sequence[EvalReport], fmt: str, out_dir) -> list:
    """Write reports as machine-readable JSON, paper-style tables, or
    per-frame F1 bar figures. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        for rep in reports:
            path = out_dir / f"{_report_name(rep)}.json"
            path.write_text(rep.to_json())
            written.append(path)
    elif fmt == "table":
        written.extend(_emit_tables(reports, out_dir))
    elif fmt == "figure":
        written.extend(_emit_figures(reports, out_dir))
    else:
        raise EvaluationError(f"unknown report format {fmt!r}")
    return written


def _emit_tables(reports, out_dir):
    by_task: dict = {}
    for rep in reports:
        by_task.setdefault(rep.experiment["task"], []).append(rep)
    written = []
    for task, reps in sorted(by_task.items()):
        subsets = sorted({r.experiment["subset"] for r in reps})
        modalities = []
        cell: dict = {}
        for r in reps:
            key = r.experiment["modality"]
            if key not in modalities:
                modalities.append(key)
            cell[(key, r.experiment["subset"])] = 100 * r.mean_accuracy
        rows = [
            [m] + [
                f"{cell[(m, s)]:.1f}" if (m, s) in cell else ""
                for s in subsets
            ]
            for m in modalities
        ]
        header = ["modality"] + subsets
        csv_path = out_dir / f"{task}_accuracy.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        txt_path = out_dir / f"{task}_accuracy.txt"
        widths = [
            max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))
        ]
        lines = [
            "  ".join(str(v).ljust(w) for v, w in zip(r, widths))
            for r in [header] + rows
        ]
        txt_path.write_text("\n".join(lines) + "\n")
        written += [csv_path, txt_path]
    return written


def _emit_figures(reports, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .corpus import FRAME_NAMES

    by_subset: dict = {}
    for rep in reports:
        if rep.experiment["task"] != "frame":
            continue
        by_subset.setdefault(rep.experiment["subset"], []).append(rep)
    written = []
    for subset, reps in sorted(by_subset.items()):
        labels = reps[0].confusion["labels"]
        names = [FRAME_NAMES.get(lab, str(lab)) for lab in labels]
        x = np.arange(len(labels))
        width = 0.8 / len(reps)
        fig, ax = plt.subplots(figsize=(10, 4))
        for i, rep in enumerate(reps):
            f1s = [rep.per_class_f1[str(lab)]["f1"] for lab in labels]
            ax.bar(x + i * width, f1s, width, label=rep.experiment["modality"])
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("per-frame F1")
        ax.set_title(f"Per-frame F1 ({subset})")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"per_frame_f1_{subset}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
