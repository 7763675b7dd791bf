"""Command-line interface: preprocess, train, eval, export, inspect.

Exit codes: 0 success, 2 bad input/config/file format, 3 empty vocabulary,
4 numeric failure, 5 checkpoint/corpus vocabulary mismatch.
"""

from __future__ import annotations

import contextlib
import csv
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import corpus as C
from .config import ABLATIONS, RunConfig, load_run_config
from .errors import (
    CheckpointIOError,
    CheckpointSchemaError,
    ConfigError,
    EmptyVocabularyError,
    InvalidArgumentError,
    NumericError,
    ShapeError,
    VocabularyMismatchError,
)
from .evalmetrics import DEFAULT_TOP_N, evaluate, export_features, hierarchy_view, top_words
from .trainer import LOSS_COLUMNS, Checkpoint, infer_doc_topics, load_checkpoint, save_checkpoint, topic_word_matrices, train

log = logging.getLogger("traco")

EXIT_INPUT = 2
EXIT_EMPTY_VOCAB = 3
EXIT_NUMERIC = 4
EXIT_VOCAB_MISMATCH = 5

CHECKPOINT_NAME = "checkpoint.traco"


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _exit_codes(fn):
    """Translate library errors into the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EmptyVocabularyError as exc:
            _fail(EXIT_EMPTY_VOCAB, str(exc))
        except NumericError as exc:
            _fail(EXIT_NUMERIC, str(exc))
        except VocabularyMismatchError as exc:
            _fail(EXIT_VOCAB_MISMATCH, str(exc))
        except (ConfigError, InvalidArgumentError, ShapeError, CheckpointIOError, CheckpointSchemaError, OSError) as exc:
            _fail(EXIT_INPUT, str(exc))

    return wrapper


def _shared_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="TOML run config; flags override its values (default: none, built-in defaults)."),
        click.option("--seed", type=int, default=None, help="Random seed (overrides [train] seed; default 0)."),
        click.option("--output-dir", type=click.Path(file_okay=False), default=None,
                     help="Directory for every output (overrides [output] dir; default traco_out)."),
        click.option("--ablation", type=click.Choice(ABLATIONS), multiple=True,
                     help="Switch off a model component; repeatable (default: none)."),
        click.option("-v", "--verbose", is_flag=True, default=False, help="Log progress to stderr (default: off)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _run_config(config_path, seed, output_dir, ablation, verbose) -> RunConfig:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return load_run_config(config_path, seed=seed, output_dir=output_dir, ablations=tuple(ablation))


@contextlib.contextmanager
def _thread_limit():
    value = os.environ.get("TRACO_THREADS")
    if not value:
        yield
        return
    try:
        n = int(value)
    except ValueError:
        _fail(EXIT_INPUT, f"TRACO_THREADS must be an integer, got {value!r}")
    if n < 1:
        _fail(EXIT_INPUT, f"TRACO_THREADS must be positive, got {n}")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _checkpoint_path(cfg: RunConfig, given: str | None) -> Path:
    return Path(given) if given else Path(cfg.output_dir) / CHECKPOINT_NAME


def _load_corpus(cfg: RunConfig, given: str | None) -> C.BowCorpus:
    d = Path(given) if given else cfg.corpus_dir
    if not (d / "bow.txt").exists():
        raise ConfigError(f"no preprocessed corpus in {d} (run `traco preprocess` first)")
    return C.BowCorpus.load(d)


def _check_vocab(cp: Checkpoint, corpus: C.BowCorpus) -> None:
    if cp.vocab_digest() != corpus.vocab.digest():
        raise VocabularyMismatchError(
            f"checkpoint vocabulary ({len(cp.vocab)} words) does not match the corpus ({len(corpus.vocab)} words)"
        )


@click.group(context_settings={"help_option_names": ["-h", "--help"], "show_default": True})
@click.version_option(package_name="artifact", prog_name="traco")
def main():
    """Hierarchical topic modeling with transport-plan dependencies."""


@main.command()
@click.argument("input_path", metavar="INPUT", required=False)
@click.option("--stopwords", type=click.Path(dir_okay=False), default=None,
              help="One stopword per line; default is the bundled English list.")
@click.option("--min-doc-freq", type=int, default=None, help="Drop words in fewer documents (config default 5).")
@click.option("--max-doc-frac", type=float, default=None, help="Drop words in a larger fraction of documents (config default 0.8).")
@click.option("--toy", is_flag=True, default=False, help="Use the bundled toy corpus as INPUT (default: off).")
@_shared_options
@_exit_codes
def preprocess(input_path, stopwords, min_doc_freq, max_doc_frac, toy, config_path, seed, output_dir, ablation, verbose):
    """Clean raw documents into a vocabulary and bag-of-words files.

    INPUT is plain text (one document per line) or JSON lines with "text" and
    optional "label" fields; a .gz suffix is decompressed.
    """
    cfg = _run_config(config_path, seed, output_dir, ablation, verbose)
    if toy:
        from .toy import bundled_corpus_path

        input_path = str(bundled_corpus_path())
    input_path = input_path or cfg.corpus.input
    if not input_path:
        raise ConfigError("no INPUT given and [corpus] input is unset")
    texts, labels = C.read_raw_corpus(input_path)
    stop = C.load_stopwords(stopwords or cfg.corpus.stopwords)
    tokens = C.preprocess(texts, stop)
    vocab = C.build_vocab(
        tokens,
        min_doc_freq=min_doc_freq if min_doc_freq is not None else cfg.corpus.min_doc_freq,
        max_doc_frac=max_doc_frac if max_doc_frac is not None else cfg.corpus.max_doc_frac,
    )
    bow = C.vectorize(tokens, vocab, labels)
    out = cfg.corpus_dir
    bow.save(out)
    click.echo(f"N={bow.n_docs} V={bow.vocab_size} dropped={len(bow.dropped)} -> {out}")


@main.command(name="train")
@click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), default=None,
              help="Preprocessed corpus directory (default <output-dir>/corpus).")
@_shared_options
@_exit_codes
def train_cmd(corpus_dir, config_path, seed, output_dir, ablation, verbose):
    """Train a model and write the checkpoint, loss log and config echo."""
    cfg = _run_config(config_path, seed, output_dir, ablation, verbose)
    corpus = _load_corpus(cfg, corpus_dir)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_toml(), encoding="utf-8")
    with _thread_limit():
        cp = train(corpus, cfg.train)
    save_checkpoint(cp, out / CHECKPOINT_NAME)
    with open(out / "loss.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch",) + LOSS_COLUMNS)
        for i, row in enumerate(cp.loss_history, 1):
            w.writerow([i] + [repr(float(x)) for x in row])
    final = cp.loss_history[-1][0] if len(cp.loss_history) else float("nan")
    click.echo(f"trained {cfg.train.epochs} epochs, final loss {final:.4f} -> {out / CHECKPOINT_NAME}")


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help=f"Checkpoint file (default <output-dir>/{CHECKPOINT_NAME}).")
@click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), default=None,
              help="Preprocessed corpus directory (default <output-dir>/corpus).")
@click.option("--n-top", type=int, default=DEFAULT_TOP_N, help="Top words per topic.")
@_shared_options
@_exit_codes
def eval_cmd(checkpoint, corpus_dir, n_top, config_path, seed, output_dir, ablation, verbose):
    """Compute every metric and write metrics.json."""
    cfg = _run_config(config_path, seed, output_dir, ablation, verbose)
    cp = load_checkpoint(_checkpoint_path(cfg, checkpoint))
    corpus = _load_corpus(cfg, corpus_dir)
    _check_vocab(cp, corpus)
    with _thread_limit():
        report = evaluate(
            topic_word_matrices(cp), cp.plans, infer_doc_topics(cp, corpus), corpus,
            n_top=n_top, config=cp.config.to_dict(),
        )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    for k, v in report.aggregate.items():
        click.echo(f"{k:>8}  {v:.4f}")
    for flag in report.flags:
        click.echo(f"note: {flag}")


def hierarchy_json(cp: Checkpoint, n_top: int) -> dict:
    """Tree of topics with top words, parent links and dependency weights.

    ``dependency_weight`` is the share of a child's transport mass sent to its
    parent (the plan row rescaled to sum to 1); it is null at the top level.
    """
    betas = topic_word_matrices(cp)
    tops = top_words(betas, n_top)
    view = hierarchy_view(cp.plans)
    levels = []
    for l in range(len(betas)):
        topics = []
        for k in range(betas[l].shape[1]):
            parent, weight = None, None
            if l > 0:
                parent = int(view.parents[l - 1][k])
                row = cp.plans[l - 1][k]
                weight = float(row[parent] / row.sum())
            topics.append({
                "id": k,
                "top_words": [
                    {"word": cp.vocab[int(w)], "score": float(s)}
                    for w, s in zip(tops.ids[l][k], tops.scores[l][k])
                ],
                "parent": parent,
                "dependency_weight": weight,
            })
        levels.append({"level": l, "topics": topics})
    return {"levels": levels}


@main.command()
@click.option("--format", "fmt", type=click.Choice(["hierarchy-json", "features-tsv"]), default="hierarchy-json",
              help="What to export.")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help=f"Checkpoint file (default <output-dir>/{CHECKPOINT_NAME}).")
@click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), default=None,
              help="Preprocessed corpus (features-tsv only; default <output-dir>/corpus).")
@click.option("--n-top", type=int, default=DEFAULT_TOP_N, help="Top words per topic (hierarchy-json).")
@_shared_options
@_exit_codes
def export(fmt, checkpoint, corpus_dir, n_top, config_path, seed, output_dir, ablation, verbose):
    """Export the topic hierarchy as JSON or doc-topic features as TSV."""
    cfg = _run_config(config_path, seed, output_dir, ablation, verbose)
    cp = load_checkpoint(_checkpoint_path(cfg, checkpoint))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "hierarchy-json":
        path = out / "hierarchy.json"
        path.write_text(json.dumps(hierarchy_json(cp, n_top), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        click.echo(f"wrote {path}")
        return
    corpus = _load_corpus(cfg, corpus_dir)
    _check_vocab(cp, corpus)
    paths = export_features(infer_doc_topics(cp, corpus), out / "features", corpus.labels)
    for p in paths:
        click.echo(f"wrote {p}")


@main.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help=f"Checkpoint file (default <output-dir>/{CHECKPOINT_NAME}).")
@click.option("--n-top", type=int, default=8, help="Words shown per topic.")
@_shared_options
@_exit_codes
def inspect(checkpoint, n_top, config_path, seed, output_dir, ablation, verbose):
    """Print a checkpoint's configuration, loss trend and topic tree."""
    cfg = _run_config(config_path, seed, output_dir, ablation, verbose)
    cp = load_checkpoint(_checkpoint_path(cfg, checkpoint))
    h = cp.config.hierarchy
    click.echo(f"levels: {list(h.topics)}  vocabulary: {len(cp.vocab)}  epochs: {len(cp.loss_history)}")
    flags = [a for a in ABLATIONS if getattr(cp.config, a)]
    click.echo(f"ablations: {', '.join(flags) if flags else 'none'}")
    if len(cp.loss_history):
        first, last = cp.loss_history[0], cp.loss_history[-1]
        click.echo(f"loss: {first[0]:.4f} -> {last[0]:.4f} (tm {last[1]:.4f}, tpd {last[2]:.4g})")
    tree = hierarchy_json(cp, n_top)

    def show(level: int, topic: int, depth: int):
        node = tree["levels"][level]["topics"][topic]
        words = " ".join(w["word"] for w in node["top_words"])
        weight = "" if node["dependency_weight"] is None else f" ({node['dependency_weight']:.2f})"
        click.echo(f"{'  ' * depth}[{level}.{topic}]{weight} {words}")
        if level + 1 < len(tree["levels"]):
            for child in tree["levels"][level + 1]["topics"]:
                if child["parent"] == topic:
                    show(level + 1, child["id"], depth + 1)

    for k in range(len(tree["levels"][0]["topics"])):
        show(0, k, 0)


if __name__ == "__main__":
    main()
