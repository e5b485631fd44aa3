"""Multimodal news-frame analysis toolkit.

Ingests a frame-annotated news corpus with lead images, trains and
evaluates unimodal and multimodal frame/relevance classifiers, and relates
frame concreteness to image relevance and classifier performance.
"""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    Article,
    Frame,
    FRAMES,
    ImageRecord,
    agreement,
    corpus_stats,
    fetch_images,
    load_corpus,
    make_folds,
)
from .features import ModalitySpec, build_text, encode_sre, preprocess_image  # noqa: F401
from .models import TrainConfig, focal_loss, predict, train  # noqa: F401
from .evaluation import (  # noqa: F401
    EvalReport,
    ExperimentSpec,
    emit_report,
    micro_accuracy,
    per_frame_f1,
    run_experiment,
    run_relevance,
)
from .concreteness import (  # noqa: F401
    frame_concreteness,
    pearson,
    train_concreteness,
    word_concreteness,
)
