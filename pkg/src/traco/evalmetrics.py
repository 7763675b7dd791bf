"""Topic and hierarchy quality metrics plus document clustering scores.

Coherence is mean pairwise NPMI over each topic's top words with document
co-occurrence counted on the training corpus. Diversity metrics are
uniqueness ratios over top-word lists; the hierarchy variants average the
ratio over topic pairs related as parent/child, siblings or parent/non-child.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import BowCorpus, CooccurrenceStats
from .errors import InvalidArgumentError, ShapeError
from .tpd import parent_of

log = logging.getLogger(__name__)

DEFAULT_TOP_N = 15
NPMI_SMOOTHING = 1e-10


# -- top words ------------------------------------------------------------------


@dataclass(frozen=True)
class TopicTopWords:
    """Per level, a K x n array of word ids and the matching scores."""

    ids: tuple[np.ndarray, ...]
    scores: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return self.ids[0].shape[1]

    def level(self, l: int) -> list[list[int]]:
        return [list(map(int, row)) for row in self.ids[l]]


def top_words(betas: Sequence[np.ndarray], n: int = DEFAULT_TOP_N) -> TopicTopWords:
    """Top-``n`` words of every topic, by descending score then ascending word id.

    ``betas`` are V x K topic-word matrices, one per level.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be at least 1, got {n}")
    ids, scores = [], []
    for beta in betas:
        beta = np.asarray(beta, dtype=np.float64)
        v, k = beta.shape
        if n > v:
            raise InvalidArgumentError(f"cannot take {n} top words from a vocabulary of {v}")
        word_ids = np.arange(v)
        level_ids = np.empty((k, n), dtype=np.int64)
        for t in range(k):
            level_ids[t] = np.lexsort((word_ids, -beta[:, t]))[:n]
        ids.append(level_ids)
        scores.append(np.take_along_axis(beta.T, level_ids, axis=1))
    return TopicTopWords(tuple(ids), tuple(scores))


# -- diversity ------------------------------------------------------------------


def topic_diversity(lists: Sequence[Sequence[int]]) -> float:
    """Distinct words across all lists over the total number of slots."""
    if len(lists) == 0:
        raise InvalidArgumentError("topic diversity needs at least one topic")
    slots = sum(len(l) for l in lists)
    if slots == 0:
        raise InvalidArgumentError("topic diversity needs nonempty word lists")
    distinct = set(itertools.chain.from_iterable(lists))
    return len(distinct) / slots


# -- coherence ------------------------------------------------------------------


def _npmi_from_counts(pair: np.ndarray, df_a: np.ndarray, df_b: np.ndarray, n_docs: int) -> np.ndarray:
    pair = np.asarray(pair, dtype=np.float64)
    p_ab = pair / n_docs
    p_a = np.asarray(df_a, dtype=np.float64) / n_docs
    p_b = np.asarray(df_b, dtype=np.float64) / n_docs
    joint = np.log(p_ab + NPMI_SMOOTHING)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = (joint - np.log(p_a * p_b + NPMI_SMOOTHING)) / -joint
    value = np.where(pair == 0, -1.0, value)
    value = np.where(pair == n_docs, 1.0, value)
    return np.clip(value, -1.0, 1.0)


def npmi(a: int, b: int, stats: CooccurrenceStats) -> float:
    """Normalized PMI of two words from document frequencies.

    A pair that never shares a document scores -1; a pair present in every
    document scores 1.
    """
    df_a, df_b = int(stats.df[a]), int(stats.df[b])
    if df_a == 0 or df_b == 0:
        raise InvalidArgumentError(f"word pair ({a}, {b}) has a word with zero document frequency")
    return float(_npmi_from_counts(stats.pair_df(a, b), df_a, df_b, stats.n_docs))


def npmi_matrix(words: Sequence[int], stats: CooccurrenceStats) -> np.ndarray:
    words = list(words)
    df = stats.df[words]
    if np.any(df == 0):
        raise InvalidArgumentError("NPMI is undefined for words with zero document frequency")
    pairs = stats.pair_df_matrix(words)
    return _npmi_from_counts(pairs, df[:, None], df[None, :], stats.n_docs)


def topic_coherence_npmi(lists: Sequence[Sequence[int]], stats: CooccurrenceStats) -> tuple[float, list[float]]:
    """Mean pairwise NPMI within each list, and the average over lists."""
    per_topic = []
    for words in lists:
        if len(words) < 2:
            raise InvalidArgumentError("coherence needs at least two words per topic")
        m = npmi_matrix(words, stats)
        iu = np.triu_indices(len(words), k=1)
        per_topic.append(float(m[iu].mean()))
    return float(np.mean(per_topic)), per_topic


def clnpmi(parent: Sequence[int], child: Sequence[int], stats: CooccurrenceStats) -> float:
    """Mean NPMI between words only the parent has and words only the child has.

    Returns 0 (with a warning) when either set difference is empty.
    """
    if len(parent) == 0 or len(child) == 0:
        raise InvalidArgumentError("clnpmi needs nonempty word lists")
    child_set, parent_set = set(child), set(parent)
    p_only = [w for w in parent if w not in child_set]
    c_only = [w for w in child if w not in parent_set]
    if not p_only or not c_only:
        log.warning("clnpmi: parent and child lists leave an empty difference; scoring 0")
        return 0.0
    m = npmi_matrix(p_only + c_only, stats)
    return float(m[: len(p_only), len(p_only):].mean())


# -- hierarchy -----------------------------------------------------------------


@dataclass(frozen=True)
class HierarchyView:
    """``parents[l]`` maps each topic at level l+1 to its parent at level l."""

    topics: tuple[int, ...]
    parents: tuple[np.ndarray, ...]

    def children(self, level: int, topic: int) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.parents[level] == topic)]

    def sibling_groups(self, level: int) -> list[list[int]]:
        """Partition of a level: the top level is one group, lower levels group by parent."""
        if level == 0:
            return [list(range(self.topics[0]))]
        return [self.children(level - 1, p) for p in range(self.topics[level - 1]) if self.children(level - 1, p)]


def hierarchy_view(plans: Sequence[np.ndarray]) -> HierarchyView:
    if len(plans) == 0:
        raise InvalidArgumentError("a hierarchy needs at least one dependency matrix")
    topics = [np.shape(plans[0])[1]]
    parents = []
    for l, plan in enumerate(plans):
        plan = np.asarray(plan)
        if plan.shape[1] != topics[-1]:
            raise ShapeError(f"dependency matrix {l} has {plan.shape[1]} parents, expected {topics[-1]}")
        topics.append(plan.shape[0])
        parents.append(parent_of(plan))
    return HierarchyView(tuple(topics), tuple(parents))


@dataclass(frozen=True)
class HierarchyDiversity:
    pcd: float
    sd: float
    pncd: float
    flags: tuple[str, ...] = ()


def _mean_pair_td(pairs: list[tuple[list[int], list[int]]]) -> float | None:
    if not pairs:
        return None
    return float(np.mean([topic_diversity([a, b]) for a, b in pairs]))


def relation_pairs(view: HierarchyView) -> dict[str, list[tuple[tuple[int, int], tuple[int, int]]]]:
    """(level, topic) pairs per relation: parent/child, siblings, parent/non-child."""
    out: dict[str, list] = {"parent_child": [], "sibling": [], "parent_nonchild": []}
    for l, par in enumerate(view.parents):
        for c, p in enumerate(par):
            for q in range(view.topics[l]):
                key = "parent_child" if q == p else "parent_nonchild"
                out[key].append(((l, q), (l + 1, c)))
    for l in range(len(view.topics)):
        for group in view.sibling_groups(l):
            for a, b in itertools.combinations(group, 2):
                out["sibling"].append(((l, a), (l, b)))
    return out


def hierarchy_diversities(view: HierarchyView, topics: TopicTopWords) -> HierarchyDiversity:
    """Per-pair TD averaged over each relation; a relation with no pairs scores 1 and is flagged."""
    lists = [topics.level(l) for l in range(len(view.topics))]
    values, flags = {}, []
    for name, pairs in relation_pairs(view).items():
        v = _mean_pair_td([(lists[a[0]][a[1]], lists[b[0]][b[1]]) for a, b in pairs])
        if v is None:
            flags.append(f"no_{name}_pairs")
            v = 1.0
        values[name] = v
    return HierarchyDiversity(values["parent_child"], values["sibling"], values["parent_nonchild"], tuple(flags))


# -- clustering ----------------------------------------------------------------


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def clustering_eval(theta: np.ndarray, labels: Sequence) -> tuple[float, float]:
    """Purity and NMI (arithmetic-mean normalization) of argmax topic clusters."""
    theta = np.asarray(theta)
    if labels is None or len(labels) != theta.shape[0] or any(l is None for l in labels):
        raise InvalidArgumentError("clustering needs a label for every document")
    clusters = np.argmax(theta, axis=1)
    _, label_ids = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((clusters.max() + 1, label_ids.max() + 1))
    np.add.at(table, (clusters, label_ids), 1.0)
    table = table[table.sum(axis=1) > 0]
    n = table.sum()
    purity = float(table.max(axis=1).sum() / n)
    h_c, h_y = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    if h_c == 0 and h_y == 0:
        return purity, 1.0
    nmi = mi / ((h_c + h_y) / 2)
    return purity, float(min(max(nmi, 0.0), 1.0))


# -- features ------------------------------------------------------------------


def export_features(thetas: Sequence[np.ndarray], directory: str | Path, labels: Sequence[str] | None = None) -> list[Path]:
    """Write ``theta_level{l}.tsv`` per level: a header, then one row per document."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for l, theta in enumerate(thetas):
        theta = np.asarray(theta)
        path = d / f"theta_level{l}.tsv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow([f"topic_{k}" for k in range(theta.shape[1])] + (["label"] if labels is not None else []))
            for i, row in enumerate(theta):
                w.writerow([repr(float(x)) for x in row] + ([labels[i]] if labels is not None else []))
        paths.append(path)
    return paths


def read_features(path: str | Path) -> tuple[np.ndarray, list[str] | None]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    header, body = rows[0], rows[1:]
    has_label = header[-1] == "label"
    k = len(header) - has_label
    values = np.array([[float(x) for x in r[:k]] for r in body]).reshape(len(body), k)
    return values, ([r[-1] for r in body] if has_label else None)


# -- report --------------------------------------------------------------------


@dataclass
class MetricsReport:
    levels: list[dict]
    aggregate: dict
    flags: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"levels": self.levels, "aggregate": self.aggregate, "flags": self.flags, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate(
    betas: Sequence[np.ndarray],
    plans: Sequence[np.ndarray],
    thetas: Sequence[np.ndarray] | None,
    corpus: BowCorpus,
    n_top: int = DEFAULT_TOP_N,
    config: dict | None = None,
) -> MetricsReport:
    """Every metric family for one trained hierarchy.

    Coherence statistics come from ``corpus``. Clustering scores are included
    only when ``thetas`` are given and the corpus carries labels.
    """
    stats = CooccurrenceStats(corpus)
    tops = top_words(betas, n_top)
    view = hierarchy_view(plans)
    flags: list[str] = []
    levels = []
    for l in range(len(betas)):
        lists = tops.level(l)
        tc, _ = topic_coherence_npmi(lists, stats)
        entry = {"level": l, "topics": len(lists), "TC_npmi": tc, "TD": topic_diversity(lists)}
        if thetas is not None and corpus.labels is not None:
            entry["purity"], entry["NMI"] = clustering_eval(thetas[l], corpus.labels)
        levels.append(entry)

    pcc = [
        clnpmi(tops.level(a[0])[a[1]], tops.level(b[0])[b[1]], stats)
        for a, b in relation_pairs(view)["parent_child"]
    ]
    div = hierarchy_diversities(view, tops)
    flags.extend(div.flags)
    aggregate = {
        "TC_npmi": float(np.mean([e["TC_npmi"] for e in levels])),
        "TD": float(np.mean([e["TD"] for e in levels])),
        "PCC": float(np.mean(pcc)),
        "PCD": div.pcd,
        "SD": div.sd,
        "PnCD": div.pncd,
    }
    if thetas is not None and corpus.labels is not None:
        aggregate["purity"] = float(np.mean([e["purity"] for e in levels]))
        aggregate["NMI"] = float(np.mean([e["NMI"] for e in levels]))
    else:
        flags.append("no_labels")
    for k, v in list(aggregate.items()):
        if not math.isfinite(v):
            raise InvalidArgumentError(f"metric {k} is not finite")
    return MetricsReport(levels=levels, aggregate=aggregate, flags=flags, config=config or {})
