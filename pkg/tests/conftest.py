from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from traco import corpus as C
from traco.numerics import Tape, Tensor, finite_diff_grad, relative_error
from traco.toy import bundled_corpus_path

settings.register_profile(
    "traco", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("traco")


def tape_grad(fn, x: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of scalar ``fn(Tensor)`` at ``x``."""
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        out = fn(t)
    return tape.gradient(out, [t])[0]


def check_grad(fn, x: np.ndarray, h: float = 1e-4) -> float:
    """Relative error between the tape gradient and central differences."""
    analytic = tape_grad(fn, x)
    numeric = finite_diff_grad(lambda v: float(fn(Tensor(v)).value), x, h)
    return relative_error(analytic, numeric)


def hand_corpus(docs: list[str], labels=None) -> C.BowCorpus:
    tokens = C.preprocess(docs)
    vocab = C.build_vocab(tokens, min_doc_freq=1, max_doc_frac=1.0)
    return C.vectorize(tokens, vocab, labels)


@pytest.fixture(scope="session")
def toy_corpus() -> C.BowCorpus:
    texts, labels = C.read_raw_corpus(bundled_corpus_path())
    tokens = C.preprocess(texts, C.load_stopwords())
    return C.vectorize(tokens, C.build_vocab(tokens), labels)


@pytest.fixture(scope="session")
def four_doc_corpus() -> C.BowCorpus:
    """a and b share d1, d2; c sits alone in d3; d sits in every document."""
    return hand_corpus(["aaa bbb ddd", "aaa bbb ddd", "ccc ddd", "ddd eee"])
