"""Run configuration files: one TOML document covering corpus, model, solver and training."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

from .errors import ConfigError
from .trainer import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SECTIONS = ("corpus", "hierarchy", "sinkhorn", "train", "output")
ABLATIONS = ("disable_tpd", "disable_cdd")


@dataclass(frozen=True)
class CorpusConfig:
    input: str | None = None
    stopwords: str | None = None
    min_doc_freq: int = 5
    max_doc_frac: float = 0.8
    # directory of a preprocessed corpus; defaults to <output>/corpus
    dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "traco_out"

    @property
    def corpus_dir(self) -> Path:
        return Path(self.corpus.dir) if self.corpus.dir else Path(self.output_dir) / "corpus"

    def to_dict(self) -> dict:
        out = {"corpus": {k: v for k, v in dataclasses.asdict(self.corpus).items() if v is not None}}
        out.update(self.train.to_dict())
        out["output"] = {"dir": self.output_dir}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def parse_run_config(data: dict) -> RunConfig:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    corpus_data = data.get("corpus", {})
    allowed = {f.name for f in dataclasses.fields(CorpusConfig)}
    if not isinstance(corpus_data, dict) or set(corpus_data) - allowed:
        raise ConfigError(f"unknown keys in [corpus]: {sorted(set(corpus_data) - allowed)}")
    output = data.get("output", {})
    if not isinstance(output, dict) or set(output) - {"dir"}:
        raise ConfigError("[output] accepts only 'dir'")
    train = TrainConfig.from_dict({k: data[k] for k in ("hierarchy", "sinkhorn", "train") if k in data})
    return RunConfig(corpus=CorpusConfig(**corpus_data), train=train, output_dir=str(output.get("dir", "traco_out")))


def load_run_config(
    path: str | Path | None = None,
    seed: int | None = None,
    output_dir: str | None = None,
    ablations: tuple[str, ...] = (),
) -> RunConfig:
    """Read ``path`` (if any), then apply command-line overrides, which win."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    cfg = parse_run_config(data)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    for name in ablations:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        changes[name] = True
    if changes:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **changes))
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=output_dir)
    return cfg
