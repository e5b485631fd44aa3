import random

import numpy as np
import pytest
import torch

from newsframes.corpus import FRAMES, Frame
from newsframes.concreteness import (
    NAMED_ENTITY_RATING,
    REFERENCE_CORRELATIONS,
    ConcretenessError,
    ConcretenessModel,
    concreteness_chart,
    correlation_report,
    frame_concreteness,
    headline_tokens,
    heuristic_ner,
    load_lexicon,
    pearson,
    train_concreteness,
    word_concreteness,
)
from tests.conftest import make_corpus


class TestPearson:
    def test_perfect_positive(self):
        assert pearson([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_randomized_against_numpy(self):
        rng = random.Random(5)
        for _ in range(25):
            n = rng.randint(3, 40)
            x = [rng.uniform(-5, 5) for _ in range(n)]
            y = [rng.uniform(-5, 5) for _ in range(n)]
            oracle = np.corrcoef(x, y)[0, 1]
            assert pearson(x, y) == pytest.approx(oracle, abs=1e-9)

    def test_zero_variance_errors(self):
        with pytest.raises(ConcretenessError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ConcretenessError):
            pearson([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(ConcretenessError):
            pearson([1], [2])


class TestLoadLexicon:
    def _write(self, tmp_path, rows, header="word,rating"):
        path = tmp_path / "lex.csv"
        path.write_text("\n".join([header] + rows) + "\n")
        return path

    def test_basic(self, tmp_path):
        path = self._write(tmp_path, ["Apple,4.5", "idea,1.5"])
        lex = load_lexicon(path)
        assert lex == {"apple": 4.5, "idea": 1.5}

    def test_rating_out_of_range(self, tmp_path):
        path = self._write(tmp_path, ["apple,5.3"])
        with pytest.raises(ConcretenessError, match="outside"):
            load_lexicon(path)

    def test_rating_not_a_number(self, tmp_path):
        path = self._write(tmp_path, ["apple,high"])
        with pytest.raises(ConcretenessError, match="not a number"):
            load_lexicon(path)

    def test_duplicate_word(self, tmp_path):
        path = self._write(tmp_path, ["apple,4.0", "APPLE,3.0"])
        with pytest.raises(ConcretenessError, match="duplicate"):
            load_lexicon(path)

    def test_short_row(self, tmp_path):
        path = self._write(tmp_path, ["apple"])
        with pytest.raises(ConcretenessError, match="2 columns"):
            load_lexicon(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ConcretenessError, match="empty"):
            load_lexicon(path)


class TestTrainConcreteness:
    def test_linear_target_recovered(self):
        # Ratings are an exact linear function of the embedding, so the
        # regressor should reach near-perfect held-out correlation.
        rng = np.random.default_rng(7)
        dim = 8
        weights = rng.uniform(-1, 1, dim)
        vecs = rng.uniform(0, 1, (200, dim)).astype(np.float32)
        raw = vecs @ weights
        ratings = 3.0 + (1.9 / np.abs(raw).max()) * raw
        lexicon = {f"w{i}": float(ratings[i]) for i in range(200)}
        embeddings = {f"w{i}": vecs[i] for i in range(200)}
        model = train_concreteness(
            lexicon, encoder=None, split_seed=0, epochs=1000, embeddings=embeddings
        )
        assert model.test_pearson >= 0.999
        assert model.split_sizes == {"train": 180, "val": 10, "test": 10}
        assert model.skipped_words == 0

    def test_predictions_clamped(self):
        class _Huge(torch.nn.Module):
            def __init__(self, value):
                super().__init__()
                self.value = value

            def forward(self, x):
                return torch.full(x.shape[:-1], self.value)

        hi = ConcretenessModel(_Huge(99.0), 4, 0, {}, 0.0)
        lo = ConcretenessModel(_Huge(-99.0), 4, 0, {}, 0.0)
        emb = np.zeros(4, dtype=np.float32)
        assert hi.predict_from_embedding(emb) == 5.0
        assert lo.predict_from_embedding(emb) == 1.0

    def test_tiny_lexicon_errors(self):
        lexicon = {"a": 2.0, "b": 3.0}
        embeddings = {w: np.zeros(4, dtype=np.float32) for w in lexicon}
        with pytest.raises(ConcretenessError, match="too small"):
            train_concreteness(lexicon, encoder=None, embeddings=embeddings)

    def test_empty_lexicon_errors(self):
        with pytest.raises(ConcretenessError):
            train_concreteness({}, encoder=None)


class _FixedModel:
    """Stub rating model returning a constant for any embedding."""

    def __init__(self, value):
        self.value = value

    def predict_from_embedding(self, embedding):
        return self.value


class _ZeroEncoder:
    sep_token = "[SEP]"
    identifier = "stub"

    def encode(self, text, mode="pooled_last4"):
        return torch.zeros(1, 8)


class TestWordConcreteness:
    def test_named_entity_exact_five(self):
        # The NE rule short-circuits before the model or encoder is touched.
        assert word_concreteness(None, None, "Chicago", True) == 5.0
        assert NAMED_ENTITY_RATING == 5.0

    def test_regular_word_uses_model(self):
        model = _FixedModel(2.25)
        assert word_concreteness(model, _ZeroEncoder(), "idea", False) == 2.25


class TestTokenizationAndNER:
    def test_headline_tokens_drop_punctuation(self):
        assert headline_tokens("Guns, votes - and fear!") == [
            "Guns", "votes", "and", "fear",
        ]

    def test_empty_headline(self):
        assert headline_tokens("...") == []

    def test_heuristic_ner_skips_initial_token(self):
        tokens = ["President", "visits", "Chicago", "today"]
        assert heuristic_ner(tokens) == [False, False, True, False]


def _one_frame_articles(headlines, frame_id=1):
    from newsframes.corpus import Article

    frame = Frame.from_id(frame_id)
    return [
        Article(
            article_id=f"h{i}", headline=h, url=f"http://x/{i}", frame=frame,
        )
        for i, h in enumerate(headlines)
    ]


class TestFrameConcreteness:
    def test_constant_model_constant_ratings(self, corpus40):
        articles, _ = corpus40
        out = frame_concreteness(
            articles, _FixedModel(2.5), _ZeroEncoder(),
            ner=lambda toks: [False] * len(toks),
        )
        for value in out["ratings"].values():
            assert value == pytest.approx(2.5, abs=1e-12)

    def test_all_named_entities_give_five(self, corpus40):
        articles, _ = corpus40
        out = frame_concreteness(
            articles, None, None, ner=lambda toks: [True] * len(toks)
        )
        for value in out["ratings"].values():
            assert value == 5.0

    def test_token_level_average(self):
        # "alpha Beta" -> [2, 5 (NE)], "gamma" -> [2]; token-level mean is
        # 9/3 = 3.0, not the 2.75 a headline-level mean would give.
        articles = _one_frame_articles(["alpha Beta", "gamma"])
        out = frame_concreteness(articles, _FixedModel(2.0), _ZeroEncoder())
        assert out["ratings"]["Politics"] == pytest.approx(3.0, abs=1e-12)

    def test_headline_order_invariant(self):
        headlines = ["alpha Beta", "gamma", "delta Epsilon zeta"]
        a = frame_concreteness(
            _one_frame_articles(headlines), _FixedModel(2.0), _ZeroEncoder()
        )
        b = frame_concreteness(
            _one_frame_articles(headlines[::-1]), _FixedModel(2.0), _ZeroEncoder()
        )
        assert a["ratings"] == b["ratings"]

    def test_stopword_exclusion(self):
        articles = _one_frame_articles(["alpha Beta gamma"])
        out = frame_concreteness(
            articles, _FixedModel(2.0), _ZeroEncoder(),
            exclude_stopwords=True, stopwords=("alpha",),
        )
        assert out["ratings"]["Politics"] == pytest.approx(3.5, abs=1e-12)

    def test_missing_frames_flagged(self):
        articles = _one_frame_articles(["alpha Beta"], frame_id=1)
        out = frame_concreteness(articles, _FixedModel(2.0), _ZeroEncoder())
        assert set(out["ratings"]) == {"Politics"}
        assert len(out["excluded_frames"]) == 8
        assert "Mental Health" in out["excluded_frames"]


class TestCorrelationReport:
    def _corpus(self):
        # i < fid relevant articles per frame -> ratio differs by frame.
        return make_corpus(
            per_frame=8,
            frame_ids=(1, 2, 5, 7),
            relevant_rule=lambda fid, i: i < min(fid, 8),
        )

    def test_perfectly_aligned_series(self):
        articles, images = self._corpus()
        ratios = {Frame.from_id(fid).name: fid / 8 for fid in (1, 2, 5, 7)}
        ratings = {name: 1.0 + 3.0 * r for name, r in ratios.items()}
        report = correlation_report(articles, images, ratings)
        entry = report["correlations"]["concreteness_vs_relevance_ratio"]
        assert entry["r"] == pytest.approx(1.0, abs=1e-12)
        assert entry["n"] == 4
        assert entry["dropped_frames"] == [
            f.name for f in FRAMES if f.id not in (1, 2, 5, 7)
        ]

    def test_against_numpy_oracle(self):
        articles, images = self._corpus()
        ratings = {"Politics": 2.0, "Public Opinion": 4.5,
                   "Economic Consequences": 3.1, "Mental Health": 1.7}
        report = correlation_report(articles, images, ratings)
        names = ["Politics", "Public Opinion", "Economic Consequences",
                 "Mental Health"]
        ratio = report["relevance_ratio"]
        oracle = np.corrcoef(
            [ratings[n] for n in names], [ratio[n] for n in names]
        )[0, 1]
        entry = report["correlations"]["concreteness_vs_relevance_ratio"]
        assert entry["r"] == pytest.approx(oracle, abs=1e-9)

    def test_f1_series_and_dropped_frames(self):
        articles, images = self._corpus()
        ratings = {"Politics": 2.0, "Public Opinion": 4.5,
                   "Economic Consequences": 3.1, "Mental Health": 1.7}
        f1_all = {"Politics": 0.9, "Public Opinion": 0.7,
                  "Economic Consequences": 0.5}  # Mental Health missing
        report = correlation_report(articles, images, ratings, f1_all=f1_all)
        entry = report["correlations"]["concreteness_vs_f1_all"]
        assert entry["n"] == 3
        assert "Mental Health" in entry["dropped_frames"]
        assert "relevance_ratio_vs_f1_all" in report["correlations"]
        assert "concreteness_vs_f1_relevant_only" not in report["correlations"]

    def test_constant_ratio_flagged_not_fatal(self):
        # Default synthetic relevance alternates, so every frame has ratio
        # 0.5 and the correlation is undefined.
        articles, images = make_corpus(per_frame=4)
        ratings = {"Politics": 2.0, "Public Opinion": 4.5,
                   "Economic Consequences": 3.1, "Mental Health": 1.7}
        report = correlation_report(articles, images, ratings)
        entry = report["correlations"]["concreteness_vs_relevance_ratio"]
        assert entry["r"] is None
        assert "undefined" in entry

    def test_reference_footer(self):
        articles, images = self._corpus()
        ratings = {"Politics": 2.0, "Public Opinion": 4.5,
                   "Economic Consequences": 3.1, "Mental Health": 1.7}
        report = correlation_report(articles, images, ratings)
        assert report["reference_values"] == REFERENCE_CORRELATIONS
        assert report["reference_values"]["concreteness_vs_f1_all"] == 0.94

    def test_chart_written(self, tmp_path):
        articles, images = self._corpus()
        ratings = {"Politics": 2.0, "Public Opinion": 4.5,
                   "Economic Consequences": 3.1, "Mental Health": 1.7}
        path = concreteness_chart(articles, images, ratings, tmp_path / "c.png")
        assert path.exists() and path.stat().st_size > 0
