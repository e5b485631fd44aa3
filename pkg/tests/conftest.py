import os

import numpy as np
import pytest
from PIL import Image

from newsframes.corpus import FRAMES, Article, Frame, ImageRecord
from newsframes.encoders import ImageEncoder, TextEncoder, build_vocab

# Frames with mutually distinct name tokens, used for separable fixtures.
FRAME_SUBSET = (1, 2, 5, 7)


def make_corpus(
    per_frame=10,
    frame_ids=FRAME_SUBSET,
    image_dir=None,
    relevant_rule=None,
    noise_seed=0,
):
    """Synthetic corpus whose headlines contain the frame name verbatim.

    subject_id equals the frame id, so SRE perfectly determines the frame.
    relevant_rule(frame_id, i) -> bool; default alternates.
    """
    if relevant_rule is None:
        relevant_rule = lambda fid, i: i % 2 == 0  # noqa: E731
    rng = np.random.default_rng(noise_seed)
    articles, images = [], []
    for fid in frame_ids:
        frame = Frame.from_id(fid)
        for i in range(per_frame):
            aid = f"a{fid}_{i}"
            articles.append(
                Article(
                    article_id=aid,
                    headline=f"breaking report about {frame.name} issue {i}",
                    url=f"http://example.com/{aid}",
                    frame=frame,
                    summary=f"summary of the {frame.name} story",
                    first3=f"first three sentences about {frame.name}",
                )
            )
            local_path = None
            if image_dir is not None:
                arr = rng.integers(0, 255, (32, 32, 3), dtype=np.uint8)
                local_path = os.path.join(image_dir, f"{aid}.png")
                Image.fromarray(arr).save(local_path)
            images.append(
                ImageRecord(
                    article_id=aid,
                    image_uri=f"http://example.com/{aid}.png",
                    api_tags=(f"tag{fid}", "common", "news"),
                    caption=f"a photo about {frame.name}",
                    subject_id=fid,
                    re_id=17,
                    relevant=relevant_rule(fid, i),
                    local_path=local_path,
                )
            )
    return articles, images


def tiny_text_factory(articles, images, extra=()):
    texts = [f"{a.headline} {a.summary} {a.first3}" for a in articles]
    texts += [" ".join(r.api_tags) + " " + r.caption for r in images]
    texts += [f.name for f in FRAMES]
    texts += list(extra)
    vocab = build_vocab(texts)
    return lambda: TextEncoder.tiny(vocab)


def tiny_image_factory():
    return lambda: ImageEncoder.tiny()


@pytest.fixture
def corpus40():
    return make_corpus()


@pytest.fixture
def corpus40_with_images(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    return make_corpus(image_dir=str(d))
