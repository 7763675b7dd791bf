"""Synthetic corpus with a planted two-level topic hierarchy.

Four themes each own a block of general words and three subthemes, and each
subtheme owns a block of specific words. A document picks one subtheme and
mixes its theme's general words, its own specific words, and a small shared
background vocabulary. Raw text also carries stopwords, numbers, punctuation
and capitalization so it goes through the full cleaning path.
"""

from __future__ import annotations

import gzip
import json
from importlib import resources
from pathlib import Path

import numpy as np

THEMES: dict[str, dict] = {
    "science": {
        "general": (
            "science research scientist laboratory experiment theory hypothesis discovery "
            "evidence analysis measurement journal study method observation model result "
            "sample academic professor university publish finding peer grant"
        ),
        "sub": {
            "physics": (
                "quantum particle energy photon electron gravity relativity atom nuclear laser "
                "magnetic velocity momentum wave spectrum neutron boson collider optics thermodynamics"
            ),
            "biology": (
                "cell gene protein organism evolution species dna enzyme bacteria tissue "
                "mutation genome neuron membrane virus ecology mammal plant metabolism chromosome"
            ),
            "chemistry": (
                "molecule reaction compound acid catalyst solvent polymer oxidation bond element "
                "carbon synthesis reagent ion crystal titration isotope solution alloy equilibrium"
            ),
        },
    },
    "sports": {
        "general": (
            "sport team player coach season game match league championship fan stadium score "
            "win victory defeat training athlete tournament title rival referee competition "
            "record trophy medal"
        ),
        "sub": {
            "soccer": (
                "soccer goal striker midfielder penalty goalkeeper offside header dribble corner "
                "pitch defender freekick winger tackle premiership kickoff fifa crossbar stoppage"
            ),
            "tennis": (
                "tennis racket serve volley ace backhand forehand deuce baseline wimbledon "
                "grandslam lob smash tiebreak netcord clay grass umpire doubles singles"
            ),
            "basketball": (
                "basketball dunk rebound hoop layup nba pointguard freethrow assist backboard "
                "jumpshot playoffs courtside alleyoop buzzer timeout rim fastbreak draft mvp"
            ),
        },
    },
    "arts": {
        "general": (
            "art artist culture creative performance audience gallery exhibition critic style "
            "aesthetic tradition masterpiece festival inspiration studio composition "
            "contemporary classical museum portfolio premiere award talent expression"
        ),
        "sub": {
            "music": (
                "music song melody guitar piano orchestra symphony concert album chord rhythm "
                "singer lyrics band tempo harmony violin drummer opera jazz"
            ),
            "painting": (
                "painting canvas brush portrait landscape oil watercolor pigment sketch palette "
                "mural fresco easel impressionism acrylic charcoal painter hue gouache varnish"
            ),
            "film": (
                "film movie director actor cinema screenplay camera scene hollywood script "
                "actress editing trailer documentary sequel blockbuster cinematography producer "
                "casting boxoffice"
            ),
        },
    },
    "technology": {
        "general": (
            "technology computer digital innovation robotics device engineer engineering user "
            "platform tech startup product development design interface online electronic "
            "automation industry silicon gadget upgrade launch version"
        ),
        "sub": {
            "software": (
                "software code programming developer bug compiler python java algorithm debugging "
                "repository function variable library framework database api opensource deploy syntax"
            ),
            "hardware": (
                "hardware processor chip circuit memory motherboard transistor semiconductor gpu "
                "cpu battery sensor voltage keyboard monitor disk cooling firmware soldering wafer"
            ),
            "networks": (
                "network internet router protocol bandwidth server wireless ethernet packet latency "
                "firewall cloud wifi fiber broadband dns encryption cable modem tcp"
            ),
        },
    },
}

BACKGROUND = (
    "people time year world work life day way place thing group case point fact area week "
    "level story news report"
).split()

FILLER = ["the", "and", "of", "a", "in", "to", "is", "with", "for", "on", "was", "it"]

# token source probabilities: theme words, subtheme words, background
MIX = (0.35, 0.5, 0.15)

# offset of the rank-frequency curve inside a block; larger is flatter, so
# every planted word is seen often enough to get a trained embedding
ZIPF_OFFSET = 20.0

# tokens drawn per document before filler words are mixed in
DOC_LENGTH = (1000, 1500)


def general_words(theme: str) -> list[str]:
    return THEMES[theme]["general"].split()


def subtheme_words(theme: str, sub: str) -> list[str]:
    return THEMES[theme]["sub"][sub].split()


def planted_subthemes() -> list[tuple[str, str]]:
    """Every (theme, subtheme) pair, in a fixed order."""
    return [(t, s) for t, spec in THEMES.items() for s in spec["sub"]]


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / (np.arange(n) + ZIPF_OFFSET)
    return w / w.sum()


def generate(n_docs: int = 500, seed: int = 7, doc_length: tuple[int, int] = DOC_LENGTH) -> list[dict]:
    """Records ``{"text", "label"}``; the label is the document's theme."""
    rng = np.random.default_rng(seed)
    pairs = planted_subthemes()
    records = []
    for _ in range(n_docs):
        theme, sub = pairs[rng.integers(len(pairs))]
        pools = (general_words(theme), subtheme_words(theme, sub), BACKGROUND)
        weights = [_zipf_weights(len(p)) for p in pools]
        length = int(rng.integers(*doc_length))
        words = []
        for src in rng.choice(3, size=length, p=MIX):
            words.append(pools[src][rng.choice(len(pools[src]), p=weights[src])])
            if rng.random() < 0.25:
                words.append(FILLER[rng.integers(len(FILLER))])
            if rng.random() < 0.03:
                words.append(str(int(rng.integers(1, 2030))))
        sentences, start = [], 0
        while start < len(words):
            stop = start + int(rng.integers(6, 14))
            chunk = words[start:stop]
            chunk[0] = chunk[0].capitalize()
            sentences.append(" ".join(chunk) + rng.choice([".", ".", "!", "?", ";"]))
            start = stop
        records.append({"text": " ".join(sentences), "label": theme})
    return records


def write_jsonl(records: list[dict], path: str | Path) -> None:
    """JSON lines; gzip-compressed (with a zero timestamp) when ``path`` ends in ``.gz``."""
    data = "".join(json.dumps(rec, ensure_ascii=False) + "\n" for rec in records).encode("utf-8")
    with open(path, "wb") as raw:
        if str(path).endswith(".gz"):
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
                fh.write(data)
        else:
            raw.write(data)


def bundled_corpus_path() -> Path:
    """Path of the shipped ``toy_corpus.jsonl.gz`` (500 documents, seed 7)."""
    return Path(str(resources.files("traco.data").joinpath("toy_corpus.jsonl.gz")))
