"""Training loop, objective assembly, inference and checkpoint files."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .corpus import BowCorpus
from .errors import (
    CheckpointIOError,
    CheckpointSchemaError,
    ConfigError,
    InvalidArgumentError,
    NumericError,
    TracoError,
)
from .model import HierarchyConfig
from .numerics import AdamState, Tape, Tensor, adam_step, clip_global_norm
from .numerics import tensor as tn
from .tpd import UNROLLED, DependencyMatrix, SinkhornConfig, sinkhorn, tpd_loss, transport_cost

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("total", "tm", "tpd")


@dataclass(frozen=True)
class TrainConfig:
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    lambda_tpd: float = 20.0
    learning_rate: float = 0.002
    epochs: int = 200
    batch_size: int = 200
    seed: int = 0
    # global gradient-norm clip; 0 turns it off
    clip_norm: float = 5.0
    # linear KL warm-up length in epochs; 0 keeps the KL weight at 1 throughout
    kl_warmup_epochs: int = 0
    # optimizer steps between recomputations of the contextual semantics
    bias_refresh_steps: int = 1
    disable_tpd: bool = False
    disable_cdd: bool = False

    def __post_init__(self):
        if self.lambda_tpd < 0:
            raise ConfigError(f"lambda_tpd must be nonnegative, got {self.lambda_tpd}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be nonnegative, got {self.clip_norm}")
        if self.kl_warmup_epochs < 0 or self.bias_refresh_steps < 1:
            raise ConfigError("kl_warmup_epochs must be >= 0 and bias_refresh_steps >= 1")

    def to_dict(self) -> dict:
        flat = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        hierarchy = dataclasses.asdict(flat.pop("hierarchy"))
        hierarchy["topics"] = list(hierarchy["topics"])
        return {
            "hierarchy": hierarchy,
            "sinkhorn": dataclasses.asdict(flat.pop("sinkhorn")),
            "train": flat,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """Build from ``{"hierarchy": ..., "sinkhorn": ..., "train": ...}``; unknown keys are errors."""
        unknown = set(data) - {"hierarchy", "sinkhorn", "train"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            hierarchy = HierarchyConfig(**_checked(HierarchyConfig, data.get("hierarchy", {}), "hierarchy"))
            sk = SinkhornConfig(**_checked(SinkhornConfig, data.get("sinkhorn", {}), "sinkhorn"))
            train = _checked(cls, data.get("train", {}), "train", exclude={"hierarchy", "sinkhorn"})
            return cls(hierarchy=hierarchy, sinkhorn=sk, **train)
        except TracoError as exc:
            raise ConfigError(str(exc)) from None
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _checked(kind, section: dict, name: str, exclude: set[str] = frozenset()) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    allowed = {f.name for f in dataclasses.fields(kind)} - set(exclude)
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return dict(section)


# -- objective ------------------------------------------------------------------


@dataclass
class ObjectiveTerms:
    total: Tensor
    tm: Tensor
    tpd: list[Tensor]
    plans: list[DependencyMatrix]


def combine_objective(tm, tpd_terms: Sequence, lambda_tpd: float, disable_tpd: bool = False):
    """``lambda_tpd * mean(tpd_terms) + tm``; the first term vanishes when disabled."""
    if disable_tpd or lambda_tpd == 0 or not tpd_terms:
        return tm
    mean_tpd = tpd_terms[0]
    for t in tpd_terms[1:]:
        mean_tpd = mean_tpd + t
    return tm + mean_tpd * (lambda_tpd / len(tpd_terms))


def dependency_plans(params, cfg: TrainConfig, costs=None) -> list[DependencyMatrix]:
    """Sinkhorn plan between every adjacent level pair, honoring the differentiation mode.

    Plans are differentiable only when computed on an active tape with
    unrolled differentiation; otherwise the costs are detached first.
    """
    h = cfg.hierarchy
    if costs is None:
        costs = [transport_cost(params[f"T.{l + 1}"], params[f"T.{l}"]) for l in range(h.levels - 1)]
    plans = []
    for l, cost in enumerate(costs):
        unrolled = cfg.sinkhorn.differentiable == UNROLLED
        cols = None
        if f"s_logits.{l}" in params:
            cols = tn.softmax(params[f"s_logits.{l}"])
            if not unrolled:
                cols = cols.value
        plans.append(sinkhorn(cost if unrolled else tn.as_tensor(cost).value, cfg=cfg.sinkhorn, cols=cols))
    return plans


def contextual_bias_semantics(params, hcfg: HierarchyConfig) -> list[np.ndarray]:
    """Current contextual semantics for every level, from detached topic-word matrices."""
    w = _value(params["W"])
    betas = [
        M.compute_beta(_value(params[f"T.{l}"]), w, hcfg.temperature).value for l in range(hcfg.levels)
    ]
    return [
        M.contextual_semantics([betas[c] for c in M.contextual_levels(l, hcfg.levels)], hcfg.n_top)
        for l in range(hcfg.levels)
    ]


def objective(
    params,
    x: np.ndarray,
    noise: np.ndarray,
    semantics: Sequence[np.ndarray] | None,
    cfg: TrainConfig,
    plans: Sequence[DependencyMatrix] | None = None,
    kl_weight: float = 1.0,
) -> ObjectiveTerms:
    """Total loss for one batch.

    ``semantics`` are the per-level contextual semantics used to clamp the
    decoder biases (treated as constants). ``plans`` default to fresh Sinkhorn
    solves from the current topic embeddings; pass precomputed plans to hold
    the dependencies fixed.
    """
    h = cfg.hierarchy
    lam_b = 0.0 if cfg.disable_cdd else h.lambda_b
    topics = [params[f"T.{l}"] for l in range(h.levels)]
    costs = [transport_cost(topics[l + 1], topics[l]) for l in range(h.levels - 1)]
    if plans is None:
        plans = dependency_plans(params, cfg, costs)
    plan_values = [p.tensor if p.tensor is not None else p.plan for p in plans]
    tpd_terms = [tpd_loss(c, p) for c, p in zip(costs, plan_values)]

    betas = [M.compute_beta(t, params["W"], h.temperature) for t in topics]
    q = M.encode(x, params)
    theta_low = M.doc_topic_lowest(M.reparameterize(q, noise))
    thetas = M.propagate_theta(theta_low, plan_values)
    if cfg.disable_cdd or semantics is None:
        biases = [tn.as_tensor(params[f"bias.{l}"]) for l in range(h.levels)]
    else:
        biases = [M.apply_bias(params[f"bias.{l}"], semantics[l]) for l in range(h.levels)]

    log_probs = [M.decode_level(b, t, bias, lam_b) for b, t, bias in zip(betas, thetas, biases)]
    per_doc = M.reconstruction(x, log_probs)
    kl = M.kl_diag_gaussian(q)
    per_doc = per_doc + (kl * kl_weight if kl_weight != 1.0 else kl)
    tm = per_doc.mean() if per_doc.ndim else per_doc
    total = combine_objective(tm, tpd_terms, cfg.lambda_tpd, cfg.disable_tpd)
    return ObjectiveTerms(total=total, tm=tm, tpd=tpd_terms, plans=list(plans))


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x)


# -- checkpoint -----------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    plans: list[np.ndarray]
    config: TrainConfig
    vocab: tuple[str, ...]
    loss_history: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.config == other.config
            and self.vocab == other.vocab
            and list(self.params) == list(other.params)
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
            and len(self.plans) == len(other.plans)
            and all(np.array_equal(a, b) for a, b in zip(self.plans, other.plans))
            and np.array_equal(self.loss_history, other.loss_history)
        )

    def vocab_digest(self) -> str:
        from .corpus import Vocabulary

        return Vocabulary(self.vocab).digest()


CHECKPOINT_MAGIC = b"TRACOCKP"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def save_checkpoint(cp: Checkpoint, path: str | Path) -> None:
    """Write ``cp`` atomically.

    Layout: 8-byte magic ``TRACOCKP``, uint32 format version, uint64 header
    length (all little-endian), a UTF-8 JSON header, then each array listed
    in ``header["arrays"]`` as raw little-endian float64 in C order.
    """
    arrays = [(f"param:{k}", v) for k, v in cp.params.items()]
    arrays += [(f"plan:{i}", p) for i, p in enumerate(cp.plans)]
    arrays.append(("loss_history", np.asarray(cp.loss_history, dtype=np.float64).reshape(-1, len(LOSS_COLUMNS))))
    header = {
        "config": cp.config.to_dict(),
        "vocab": list(cp.vocab),
        "vocab_sha256": cp.vocab_digest(),
        "loss_columns": list(LOSS_COLUMNS),
        "arrays": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(head)))
    buf.write(head)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from None
    if len(data) < _PREFIX.size:
        raise CheckpointIOError(f"{path}: truncated checkpoint (no header)")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointSchemaError(f"{path}: not a traco checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointSchemaError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    start = _PREFIX.size + head_len
    if len(data) < start:
        raise CheckpointIOError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
        specs = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
        config = TrainConfig.from_dict(header["config"])
        vocab = tuple(header["vocab"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointSchemaError(f"{path}: malformed checkpoint header ({exc})") from None
    expected = start + 8 * sum(int(np.prod(s)) for _, s in specs)
    if len(data) != expected:
        raise CheckpointIOError(f"{path}: expected {expected} bytes, found {len(data)} (truncated or corrupt)")

    params, plans, history = {}, [], None
    offset = start
    for name, shape in specs:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * n
        if name.startswith("param:"):
            params[name[len("param:"):]] = arr
        elif name.startswith("plan:"):
            plans.append(arr)
        elif name == "loss_history":
            history = arr
        else:
            raise CheckpointSchemaError(f"{path}: unknown array {name!r}")
    if history is None:
        raise CheckpointSchemaError(f"{path}: missing loss history")
    return Checkpoint(params=params, plans=plans, config=config, vocab=vocab, loss_history=history)


# -- training -------------------------------------------------------------------


EpochCallback = Callable[[int, list[DependencyMatrix], dict[str, np.ndarray], np.ndarray], None]


def _clamp_biases(params: dict[str, np.ndarray], semantics: Sequence[np.ndarray]) -> None:
    for l, p in enumerate(semantics):
        b = params[f"bias.{l}"]
        mask = p != 0
        b[mask] = p[mask]


def train(corpus: BowCorpus, cfg: TrainConfig, on_epoch: EpochCallback | None = None) -> Checkpoint:
    """Fit the model to ``corpus`` and return the final checkpoint.

    Each epoch first refreshes every dependency plan from the current topic
    embeddings, then takes one Adam step per shuffled minibatch. With unrolled
    differentiation each step re-solves the plans on the tape so gradients
    flow through them; with detached differentiation the epoch's plans are
    reused as constants.
    """
    if corpus.n_docs == 0:
        raise InvalidArgumentError("cannot train on an empty corpus")
    h = cfg.hierarchy
    rng = np.random.default_rng(cfg.seed)
    params = M.init_params(corpus.vocab_size, h, rng)
    state = AdamState()
    history: list[list[float]] = []
    unrolled = cfg.sinkhorn.differentiable == UNROLLED
    semantics = None
    step = 0

    for epoch in range(cfg.epochs):
        where = f"epoch {epoch + 1}, plan refresh"
        try:
            plans = dependency_plans(params, cfg)
        except NumericError as exc:
            raise NumericError(f"{where}: {exc}") from exc
        kl_weight = 1.0
        if cfg.kl_warmup_epochs:
            kl_weight = min(1.0, (epoch + 1) / cfg.kl_warmup_epochs)
        order = rng.permutation(corpus.n_docs)
        sums = np.zeros(len(LOSS_COLUMNS))
        for start in range(0, corpus.n_docs, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = corpus.dense(idx)
            noise = rng.standard_normal((len(idx), h.topics[-1]))
            if not cfg.disable_cdd and step % cfg.bias_refresh_steps == 0:
                semantics = contextual_bias_semantics(params, h)
                _clamp_biases(params, semantics)
            names = list(params)
            where = f"epoch {epoch + 1}, batch {start // cfg.batch_size + 1}"
            try:
                with Tape() as tape:
                    tracked = {k: Tensor(params[k], requires_grad=True, name=k) for k in names}
                    terms = objective(
                        tracked, x, noise, semantics, cfg,
                        plans=None if unrolled else plans, kl_weight=kl_weight,
                    )
            except NumericError as exc:
                raise NumericError(f"{where}: {exc}") from exc
            total = float(terms.total.value)
            if not np.isfinite(total):
                raise NumericError(f"{where}: non-finite loss")
            grads = dict(zip(names, tape.gradient(terms.total, [tracked[k] for k in names])))
            if cfg.clip_norm:
                clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, state, cfg.learning_rate)
            if semantics is not None:
                _clamp_biases(params, semantics)
            tpd_val = float(sum(t.value for t in terms.tpd) / max(len(terms.tpd), 1))
            sums += len(idx) * np.array([total, float(terms.tm.value), tpd_val])
            step += 1
        epoch_losses = sums / corpus.n_docs
        history.append(epoch_losses.tolist())
        log.info("epoch %d: total %.4f  tm %.4f  tpd %.4g", epoch + 1, *epoch_losses)
        if on_epoch is not None:
            on_epoch(epoch, plans, params, epoch_losses)

    if semantics is not None:
        # leave the stored biases consistent with the final topic-word matrices
        _clamp_biases(params, contextual_bias_semantics(params, h))
    final_plans = [p.plan for p in dependency_plans(params, cfg)]
    return Checkpoint(
        params={k: v.copy() for k, v in params.items()},
        plans=final_plans,
        config=cfg,
        vocab=corpus.vocab.words,
        loss_history=np.asarray(history, dtype=np.float64).reshape(-1, len(LOSS_COLUMNS)),
    )


# -- inference ------------------------------------------------------------------


def topic_word_matrices(cp: Checkpoint) -> list[np.ndarray]:
    h = cp.config.hierarchy
    return [
        M.compute_beta(cp.params[f"T.{l}"], cp.params["W"], h.temperature).value for l in range(h.levels)
    ]


def infer_doc_topics(cp: Checkpoint, corpus: BowCorpus, batch_size: int = 1000) -> list[np.ndarray]:
    """Per-level N x K doc-topic matrices using the posterior mean (no sampling)."""
    if corpus.vocab_size != len(cp.vocab):
        raise InvalidArgumentError("corpus vocabulary does not match the checkpoint")
    chunks: list[list[np.ndarray]] = []
    for start in range(0, corpus.n_docs, batch_size):
        x = corpus.dense(np.arange(start, min(start + batch_size, corpus.n_docs)))
        q = M.encode(x, cp.params)
        thetas = M.propagate_theta(M.doc_topic_lowest(q.mean), cp.plans)
        chunks.append([t.value for t in thetas])
    return [np.vstack([c[l] for c in chunks]) for l in range(len(cp.plans) + 1)]
