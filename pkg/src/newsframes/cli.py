"""Command-line entry point: ingest, fetch, train, concreteness, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

from . import concreteness as conc
from . import corpus as corpus_mod
from . import evaluation as eval_mod
from .corpus import CorpusError, corpus_checksum, load_corpus
from .encoders import ImageEncoder, TextEncoder, build_vocab
from .features import FeatureError, ModalitySpec
from .models import ModelError, TrainConfig, TrainingError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3

CACHE_ENV = "NEWSFRAMES_CACHE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def write_manifest(out_dir, command: str, args: dict, **extra):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv,
        "args": {k: str(v) for k, v in args.items()},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _load_store(corpus_dir):
    path = Path(corpus_dir) / "corpus.csv"
    if not path.exists():
        raise CorpusError(f"no corpus.csv under {corpus_dir}")
    articles, images = load_corpus(path)
    return articles, images, corpus_checksum(path)


def _attach_cache(images, cache_dir):
    if cache_dir is None:
        return
    for rec in images:
        target = corpus_mod.cache_path(cache_dir, rec.article_id, rec.image_uri)
        if target.exists():
            rec.local_path = str(target)


def _text_encoder_factory(name, articles, images, max_len=None):
    if name == "tiny":
        texts = [a.headline + " " + a.summary + " " + a.first3 for a in articles]
        texts += [" ".join(r.api_tags) + " " + r.caption for r in images]
        texts += [f.name for f in corpus_mod.FRAMES]
        vocab = build_vocab(texts)
        return lambda: TextEncoder.tiny(vocab)
    kwargs = {"max_len": max_len} if max_len else {}
    return lambda: TextEncoder.pretrained(name, **kwargs)


def _image_encoder_factory(name):
    if name == "tiny":
        return lambda: ImageEncoder.tiny()
    if name == "resnet50":
        return lambda: ImageEncoder.resnet50()
    raise FeatureError(f"unknown image encoder {name!r}")


def cmd_ingest(args) -> int:
    articles, images = load_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(articles, images, out / "corpus.csv")
    stats = corpus_mod.corpus_stats(articles, images)
    (out / "stats.json").write_text(stats.to_json())
    write_manifest(
        out,
        "ingest",
        vars(args),
        corpus_checksum=corpus_checksum(out / "corpus.csv"),
        n_articles=len(articles),
        n_images=len(images),
    )
    print(f"ingested {len(articles)} articles, {len(images)} image records -> {out}")
    return EXIT_OK


def cmd_fetch(args) -> int:
    articles, images, checksum = _load_store(args.corpus)
    Path(args.cache).mkdir(parents=True, exist_ok=True)
    report = corpus_mod.fetch_images(
        images, args.cache, timeout=args.timeout, retries=args.retries,
        max_workers=args.workers,
    )
    cache = Path(args.cache)
    (cache / "fetch_report.json").write_text(report.to_json())
    write_manifest(cache, "fetch", vars(args), corpus_checksum=checksum)
    print(
        f"fetched {report.fetched}, cached {report.cached}, failed {report.failed}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        modality = ModalitySpec.parse(args.modality, task=args.task)
    except FeatureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    articles, images, checksum = _load_store(args.corpus)
    _attach_cache(images, args.cache)

    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        loss=args.loss,
        deterministic=args.deterministic,
    )
    exp = eval_mod.ExperimentSpec(
        task=args.task,
        subset="relevant_only" if args.subset == "relevant" else "all",
        modality=modality,
        k=args.folds,
        fold_seed=args.fold_seed,
        seeds=tuple(range(args.seeds)),
        train_config=cfg,
    )
    text_factory = None
    image_factory = None
    if any(p not in ("sre", "image") for p in modality.parts):
        text_factory = _text_encoder_factory(args.encoder, articles, images)
    if "image" in modality.parts:
        image_factory = _image_encoder_factory(args.image_encoder)
    out = Path(args.out)
    report = eval_mod.run_experiment(
        exp,
        articles,
        images,
        text_encoder_factory=text_factory,
        image_encoder_factory=image_factory,
        save_dir=out / "models" if args.save_models else None,
        corpus_checksum=checksum,
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    write_manifest(
        out,
        "train",
        vars(args),
        corpus_checksum=checksum,
        encoders={
            "text": args.encoder if text_factory else None,
            "image": args.image_encoder if image_factory else None,
        },
        seeds=list(exp.seeds),
        mean_accuracy=report.mean_accuracy,
    )
    print(
        f"{modality.key} [{exp.subset}] mean accuracy "
        f"{100 * report.mean_accuracy:.1f} +/- {100 * report.std_accuracy:.1f} "
        f"over {len(report.runs)} runs -> {out / 'report.json'}"
    )
    return EXIT_OK


def cmd_concreteness(args) -> int:
    articles, images, checksum = _load_store(args.corpus)
    lexicon = conc.load_lexicon(args.lexicon)
    if args.encoder == "tiny":
        # The tiny vocabulary must also cover the lexicon words.
        texts = [a.headline for a in articles] + list(lexicon)
        encoder = TextEncoder.tiny(build_vocab(texts))
    else:
        encoder = TextEncoder.pretrained(args.encoder)
    encoder.freeze()
    model = conc.train_concreteness(
        lexicon, encoder, split_seed=args.split_seed, epochs=args.epochs
    )
    frames = conc.frame_concreteness(articles, model, encoder)
    report = conc.correlation_report(articles, images, frames["ratings"])
    report["test_pearson"] = model.test_pearson
    report["excluded_frames"] = frames["excluded_frames"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "concreteness_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True)
    )
    conc.concreteness_chart(
        articles, images, frames["ratings"], out / "concreteness_chart.png"
    )
    write_manifest(
        out,
        "concreteness",
        vars(args),
        corpus_checksum=checksum,
        encoder=encoder.identifier,
        ner_tagger="capitalization-heuristic",
        test_pearson=model.test_pearson,
    )
    print(
        f"concreteness regressor test r={model.test_pearson:.3f} "
        f"-> {out / 'concreteness_report.json'}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    checksums = set()
    for run_dir in args.runs:
        path = Path(run_dir) / "report.json"
        if not path.exists():
            raise CorpusError(f"no report.json under {run_dir}")
        rep = eval_mod.EvalReport.from_dict(json.loads(path.read_text()))
        reports.append(rep)
        checksums.add(rep.corpus_checksum)
    if len(checksums) > 1:
        raise CorpusError(
            f"refusing to mix runs with mismatched corpus checksums: {sorted(checksums)}"
        )
    written = eval_mod.emit_report(reports, args.format, args.out)
    write_manifest(
        args.out, "report", vars(args),
        corpus_checksum=next(iter(checksums), ""),
        outputs=[str(p) for p in written],
    )
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="newsframes", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and store an annotation CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fetch", help="download lead images into a cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cache", default=os.environ.get(CACHE_ENV))
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", help="run a cross-validated experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cache", default=os.environ.get(CACHE_ENV))
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=("frame", "relevance"), default="frame")
    p.add_argument("--modality", required=True, help="e.g. headline+api, sre, resnet+headline")
    p.add_argument("--subset", choices=("all", "relevant"), default="all")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--fold-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=25, help="number of seeds (0..N-1)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--loss", choices=("cross_entropy", "focal"), default="cross_entropy")
    p.add_argument("--encoder", default="bert-base-uncased",
                   help="text encoder: 'tiny' or a model-hub identifier")
    p.add_argument("--image-encoder", default="resnet50",
                   help="image encoder: 'tiny' or 'resnet50'")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--save-models", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("concreteness", help="train the concreteness regressor and correlations")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoder", default="bert-base-uncased")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_concreteness)

    p = sub.add_parser("report", help="emit tables/figures from finished runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--format", choices=("json", "table", "figure"), default="table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (CorpusError, FeatureError, conc.ConcretenessError, eval_mod.EvaluationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ModelError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
