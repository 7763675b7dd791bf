"""Corpus ingestion: cleaning, vocabulary, bag-of-words, co-occurrence counts."""

from __future__ import annotations

import gzip
import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, EmptyVocabularyError, InvalidArgumentError

log = logging.getLogger(__name__)

BOW_MAGIC = "%%traco-bow 1"


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Bundled English stopwords, or one word per line from ``path``."""
    if path is None:
        text = resources.files("traco.data").joinpath("stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def _strip_punctuation(text: str) -> str:
    return "".join(" " if unicodedata.category(ch)[0] in "PS" else ch for ch in text)


def preprocess(docs: Iterable[str], stopwords: Iterable[str] = ()) -> list[list[str]]:
    """Lowercase, strip punctuation, then drop tokens with digits, short tokens and stopwords."""
    stop = frozenset(stopwords)
    out = []
    for doc in docs:
        tokens = _strip_punctuation(doc.lower()).split()
        out.append(
            [
                t
                for t in tokens
                if not any(ch.isdigit() for ch in t) and len(t) >= 3 and t not in stop
            ]
        )
    return out


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {w: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise InvalidArgumentError("vocabulary contains duplicate words")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    @property
    def size(self) -> int:
        return len(self.words)

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines))


def build_vocab(
    tokenized: Sequence[Sequence[str]], min_doc_freq: int = 5, max_doc_frac: float = 0.8
) -> Vocabulary:
    """Keep words by document frequency; ids go by descending count, then alphabetically."""
    if min_doc_freq < 1:
        raise ConfigError(f"min_doc_freq must be >= 1, got {min_doc_freq}")
    if not 0 < max_doc_frac <= 1:
        raise ConfigError(f"max_doc_frac must lie in (0, 1], got {max_doc_frac}")
    df: Counter[str] = Counter()
    tf: Counter[str] = Counter()
    for doc in tokenized:
        tf.update(doc)
        df.update(set(doc))
    max_df = max_doc_frac * len(tokenized)
    kept = [w for w, d in df.items() if min_doc_freq <= d <= max_df]
    if not kept:
        raise EmptyVocabularyError("vocabulary is empty after document-frequency filtering")
    kept.sort(key=lambda w: (-tf[w], w))
    return Vocabulary(tuple(kept))


@dataclass
class BowCorpus:
    """Per-document word counts (CSR, N x V) with optional labels."""

    counts: sp.csr_matrix
    vocab: Vocabulary
    labels: list[str] | None = None
    dropped: list[int] = field(default_factory=list)

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]

    def dense(self, rows=None) -> np.ndarray:
        m = self.counts if rows is None else self.counts[rows]
        return m.toarray().astype(np.float64)

    def label_ids(self) -> tuple[np.ndarray, list[str]]:
        if self.labels is None:
            raise InvalidArgumentError("corpus has no labels")
        names = sorted(set(self.labels))
        lookup = {n: i for i, n in enumerate(names)}
        return np.array([lookup[l] for l in self.labels], dtype=np.int64), names

    def save(self, directory: str | Path) -> None:
        """Write ``vocab.txt``, ``bow.txt`` and (if labelled) ``labels.txt``.

        ``bow.txt`` starts with the magic line ``%%traco-bow 1``, then
        ``N V NNZ``, then one ``doc_id word_id count`` triplet per line in
        row-major order.
        """
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.vocab.save(d / "vocab.txt")
        coo = self.counts.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [BOW_MAGIC, f"{self.n_docs} {self.vocab_size} {coo.nnz}"]
        lines += [f"{r} {c} {v}" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order])]
        (d / "bow.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if self.labels is not None:
            (d / "labels.txt").write_text("".join(l + "\n" for l in self.labels), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "BowCorpus":
        d = Path(directory)
        vocab = Vocabulary.load(d / "vocab.txt")
        with open(d / "bow.txt", encoding="utf-8") as fh:
            if fh.readline().strip() != BOW_MAGIC:
                raise ConfigError(f"{d / 'bow.txt'} is not a traco BoW file")
            n, v, nnz = (int(x) for x in fh.readline().split())
            data = np.loadtxt(fh, dtype=np.int64, ndmin=2) if nnz else np.zeros((0, 3), np.int64)
        if data.shape[0] != nnz:
            raise ConfigError(f"BoW file declares {nnz} entries but holds {data.shape[0]}")
        if v != len(vocab):
            raise ConfigError(f"BoW file has V={v} but vocab.txt has {len(vocab)} words")
        counts = sp.csr_matrix((data[:, 2], (data[:, 0], data[:, 1])), shape=(n, v), dtype=np.int64)
        labels = None
        if (d / "labels.txt").exists():
            labels = (d / "labels.txt").read_text(encoding="utf-8").splitlines()
            if len(labels) != n:
                raise ConfigError(f"labels.txt has {len(labels)} lines for {n} documents")
        return cls(counts=counts, vocab=vocab, labels=labels)


def vectorize(
    tokenized: Sequence[Sequence[str]], vocab: Vocabulary, labels: Sequence[str | None] | None = None
) -> BowCorpus:
    """Count in-vocabulary tokens per document; documents left empty are dropped."""
    if len(vocab) == 0:
        raise EmptyVocabularyError("cannot vectorize with an empty vocabulary")
    rows, cols, vals, kept_labels, dropped = [], [], [], [], []
    n = 0
    for i, doc in enumerate(tokenized):
        c = Counter(vocab.index[t] for t in doc if t in vocab.index)
        if not c:
            dropped.append(i)
            continue
        for wid in sorted(c):
            rows.append(n)
            cols.append(wid)
            vals.append(c[wid])
        if labels is not None:
            kept_labels.append(labels[i])
        n += 1
    if dropped:
        log.info("dropped %d documents with no in-vocabulary tokens", len(dropped))
    if n == 0:
        raise EmptyVocabularyError("every document was dropped during vectorization")
    counts = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)), dtype=np.int64)
    out_labels = None
    if labels is not None and all(l is not None for l in kept_labels):
        out_labels = [str(l) for l in kept_labels]
    return BowCorpus(counts=counts, vocab=vocab, labels=out_labels, dropped=dropped)


class CooccurrenceStats:
    """Document frequencies and pairwise co-document frequencies (whole-document windows)."""

    def __init__(self, corpus: BowCorpus):
        if corpus.n_docs == 0:
            raise InvalidArgumentError("co-occurrence statistics need a nonempty corpus")
        self.n_docs = corpus.n_docs
        self._binary = (corpus.counts > 0).astype(np.int64).tocsc()
        self.df = np.asarray(self._binary.sum(axis=0)).ravel()

    def pair_df(self, a: int, b: int) -> int:
        col_a = self._binary[:, a]
        col_b = self._binary[:, b]
        return int(col_a.multiply(col_b).sum())

    def pair_df_matrix(self, words: Sequence[int]) -> np.ndarray:
        """Co-document counts among ``words`` (diagonal = document frequency)."""
        sub = self._binary[:, list(words)]
        return np.asarray((sub.T @ sub).toarray(), dtype=np.int64)


def cooccurrence_stats(corpus: BowCorpus) -> CooccurrenceStats:
    return CooccurrenceStats(corpus)


def read_raw_corpus(path: str | Path) -> tuple[list[str], list[str | None] | None]:
    """Read plain text (one document per line) or JSON lines with ``text``/``label``.

    A file is treated as JSON lines when its name ends in ``.jsonl`` or
    ``.json``, optionally followed by ``.gz`` for gzip compression. Blank
    lines are skipped in both formats.
    """
    p = Path(path)
    suffixes = [s.lower() for s in p.suffixes]
    if suffixes and suffixes[-1] == ".gz":
        with gzip.open(p, "rt", encoding="utf-8") as fh:
            text = fh.read()
        suffixes = suffixes[:-1]
    else:
        text = p.read_text(encoding="utf-8")
    lines = [l for l in text.splitlines() if l.strip()]
    if not suffixes or suffixes[-1] not in (".jsonl", ".json"):
        return lines, None
    texts, labels = [], []
    for n, line in enumerate(lines, 1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{n}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or not isinstance(rec.get("text"), str):
            raise ConfigError(f"{p}:{n}: expected an object with a string 'text' field")
        texts.append(rec["text"])
        label = rec.get("label")
        labels.append(None if label is None else str(label))
    if all(l is None for l in labels):
        return texts, None
    return texts, labels
