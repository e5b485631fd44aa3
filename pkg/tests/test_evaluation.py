import json
import random

import numpy as np
import pytest
from sklearn.metrics import f1_score

from newsframes.features import ModalitySpec
from newsframes.models import TrainConfig
from newsframes.evaluation import (
    EvalReport,
    EvaluationError,
    ExperimentSpec,
    confusion_matrix,
    emit_report,
    f1_defined,
    micro_accuracy,
    per_frame_f1,
    run_experiment,
    run_relevance,
)
from tests.conftest import make_corpus, tiny_text_factory


class TestMicroAccuracy:
    def test_all_correct(self):
        assert micro_accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_half(self):
        assert micro_accuracy([1, 1, 2, 2], [1, 1, 3, 3]) == 0.5

    def test_hand_example(self):
        assert micro_accuracy([1, 1, 2, 3], [1, 2, 2, 2]) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            micro_accuracy([1], [1, 2])

    def test_empty(self):
        with pytest.raises(EvaluationError):
            micro_accuracy([], [])

    def test_randomized_against_oracle(self):
        rng = random.Random(1)
        for _ in range(25):
            n = rng.randint(1, 40)
            gold = [rng.randint(1, 4) for _ in range(n)]
            pred = [rng.randint(1, 4) for _ in range(n)]
            oracle = np.mean(np.array(gold) == np.array(pred))
            assert micro_accuracy(gold, pred) == pytest.approx(oracle, abs=1e-9)


class TestPerFrameF1:
    def test_absent_class_is_zero_and_undefined(self):
        assert per_frame_f1([1, 1], [1, 1], 9) == 0.0
        assert not f1_defined([1, 1], [1, 1], 9)

    def test_perfect(self):
        assert per_frame_f1([1, 2, 1], [1, 2, 1], 1) == 1.0

    def test_hand_example(self):
        gold = ["A", "A", "B"]
        pred = ["A", "B", "B"]
        assert per_frame_f1(gold, pred, "A") == pytest.approx(2 / 3, abs=1e-12)

    def test_randomized_against_sklearn(self):
        rng = random.Random(2)
        for _ in range(25):
            n = rng.randint(2, 50)
            gold = [rng.randint(1, 3) for _ in range(n)]
            pred = [rng.randint(1, 3) for _ in range(n)]
            for label in (1, 2, 3):
                oracle = f1_score(
                    gold, pred, labels=[label], average="macro", zero_division=0
                )
                assert per_frame_f1(gold, pred, label) == pytest.approx(
                    oracle, abs=1e-9
                )


class TestConfusionMatrix:
    def test_row_sums_are_gold_counts(self):
        rng = random.Random(3)
        gold = [rng.randint(1, 3) for _ in range(30)]
        pred = [rng.randint(1, 3) for _ in range(30)]
        mat = confusion_matrix(gold, pred, (1, 2, 3))
        assert mat.sum() == 30
        for i, label in enumerate((1, 2, 3)):
            assert mat[i].sum() == gold.count(label)

    def test_shuffle_invariance(self):
        rng = random.Random(4)
        gold = [rng.randint(1, 3) for _ in range(20)]
        pred = [rng.randint(1, 3) for _ in range(20)]
        order = list(range(20))
        rng.shuffle(order)
        g2 = [gold[i] for i in order]
        p2 = [pred[i] for i in order]
        assert micro_accuracy(gold, pred) == micro_accuracy(g2, p2)
        assert (confusion_matrix(gold, pred, (1, 2, 3)) ==
                confusion_matrix(g2, p2, (1, 2, 3))).all()
        for label in (1, 2, 3):
            assert per_frame_f1(gold, pred, label) == per_frame_f1(g2, p2, label)


def _sre_exp(seeds=(0,), epochs=40, k=4):
    return ExperimentSpec(
        task="frame",
        subset="all",
        modality=ModalitySpec(task="frame", parts=("sre",)),
        k=k,
        seeds=seeds,
        train_config=TrainConfig(epochs=epochs, learning_rate=0.1, seed=0),
    )


class TestRunExperiment:
    def test_sre_separable_reaches_one(self, corpus40):
        articles, images = corpus40
        report = run_experiment(_sre_exp(), articles, images)
        assert report.mean_accuracy == 1.0

    def test_run_count(self, corpus40):
        articles, images = corpus40
        report = run_experiment(_sre_exp(seeds=(0, 1), epochs=2), articles, images)
        assert len(report.runs) == 8
        assert {(r["fold"], r["seed"]) for r in report.runs} == {
            (f, s) for f in range(4) for s in (0, 1)
        }

    def test_aggregate_is_mean_of_runs(self, corpus40):
        articles, images = corpus40
        report = run_experiment(_sre_exp(seeds=(0, 1), epochs=3), articles, images)
        accs = [r["accuracy"] for r in report.runs]
        assert report.mean_accuracy == pytest.approx(sum(accs) / len(accs), abs=1e-12)

    def test_relevant_only_subset(self):
        articles, images = make_corpus(
            per_frame=8, relevant_rule=lambda fid, i: i < 4
        )
        report = run_experiment(
            _sre_exp(epochs=2), articles, images
        )
        exp_rel = ExperimentSpec(
            task="frame",
            subset="relevant_only",
            modality=ModalitySpec(task="frame", parts=("sre",)),
            k=4,
            seeds=(0,),
            train_config=TrainConfig(epochs=2, learning_rate=0.1),
        )
        rel_report = run_experiment(exp_rel, articles, images)
        assert sum(r["n_test"] for r in report.runs) == 32
        assert sum(r["n_test"] for r in rel_report.runs) == 16

    def test_missing_encoder_errors(self, corpus40):
        articles, images = corpus40
        exp = ExperimentSpec(
            task="frame", subset="all",
            modality=ModalitySpec.parse("headline", "frame"),
            k=4, seeds=(0,), train_config=TrainConfig(epochs=1),
        )
        with pytest.raises(EvaluationError, match="text encoder"):
            run_experiment(exp, articles, images)

    def test_confusion_totals(self, corpus40):
        articles, images = corpus40
        report = run_experiment(_sre_exp(epochs=2), articles, images)
        mat = np.array(report.confusion["matrix"])
        assert mat.sum() == 40

    def test_report_json_round_trip(self, corpus40):
        articles, images = corpus40
        report = run_experiment(_sre_exp(epochs=2), articles, images)
        loaded = EvalReport.from_dict(json.loads(report.to_json()))
        assert loaded.to_json() == report.to_json()


class TestRunRelevance:
    def test_frame_label_determines_relevance(self):
        # relevance == (frame is Politics or Public Opinion), so the frame
        # name alone separates the classes.
        articles, images = make_corpus(
            per_frame=8, relevant_rule=lambda fid, i: fid in (1, 2)
        )
        factory = tiny_text_factory(articles, images)
        exp = ExperimentSpec(
            task="relevance",
            subset="all",
            modality=ModalitySpec(task="relevance", parts=("frame_label",)),
            k=4,
            seeds=(0,),
            train_config=TrainConfig(epochs=6, learning_rate=1e-3, seed=0),
        )
        report = run_relevance(exp, True, articles, images, text_encoder_factory=factory)
        assert report.mean_accuracy == 1.0
        assert report.experiment["task"] == "relevance"

    def test_frame_label_toggle(self):
        articles, images = make_corpus(per_frame=4)
        factory = tiny_text_factory(articles, images)
        exp = ExperimentSpec(
            task="relevance",
            subset="all",
            modality=ModalitySpec(task="relevance", parts=("headline", "frame_label")),
            k=2,
            seeds=(0,),
            train_config=TrainConfig(epochs=1, learning_rate=1e-3),
        )
        report = run_relevance(
            exp, False, articles, images, text_encoder_factory=factory
        )
        assert report.experiment["modality"] == "headline"

    def test_requires_image_records(self, corpus40):
        articles, images = corpus40
        exp = ExperimentSpec(
            task="relevance", subset="all",
            modality=ModalitySpec(task="relevance", parts=("sre",)),
            k=2, seeds=(0,), train_config=TrainConfig(epochs=1),
        )
        with pytest.raises(EvaluationError, match="image record"):
            run_relevance(exp, False, articles, images[:-2])


class TestEmitReport:
    @pytest.fixture
    def reports(self, corpus40):
        articles, images = corpus40
        rep_all = run_experiment(_sre_exp(epochs=2), articles, images)
        exp_rel = ExperimentSpec(
            task="frame", subset="relevant_only",
            modality=ModalitySpec(task="frame", parts=("sre",)),
            k=4, seeds=(0,), train_config=TrainConfig(epochs=2, learning_rate=0.1),
        )
        rep_rel = run_experiment(exp_rel, articles, images)
        return [rep_all, rep_rel]

    def test_json(self, reports, tmp_path):
        written = emit_report(reports, "json", tmp_path)
        assert len(written) == 2
        for path in written:
            data = json.loads(path.read_text())
            assert "runs" in data and "mean_accuracy" in data

    def test_table_layout(self, reports, tmp_path):
        written = emit_report(reports, "table", tmp_path)
        csv_path = [p for p in written if p.suffix == ".csv"][0]
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "modality,all,relevant_only"
        assert lines[1].startswith("sre,")

    def test_figures_one_per_subset(self, reports, tmp_path):
        written = emit_report(reports, "figure", tmp_path)
        names = sorted(p.name for p in written)
        assert names == [
            "per_frame_f1_all.png",
            "per_frame_f1_relevant_only.png",
        ]

    def test_unknown_format(self, reports, tmp_path):
        with pytest.raises(EvaluationError):
            emit_report(reports, "pdf", tmp_path)
