"""Topic-word distributions, the VAE encoder, doc-topic propagation and decoding.

Levels are indexed from 0 (top, fewest topics) to L-1 (lowest, most topics).
Embedding matrices are D x K column matrices as in the math; documents are
batched as rows, so a doc-topic batch is B x K and a topic-word matrix is
V x K.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .numerics import tensor as tn
from .numerics.tensor import Tensor


@dataclass(frozen=True)
class HierarchyConfig:
    topics: tuple[int, ...] = (4, 12)
    embed_dim: int = 128
    hidden_dim: int = 256
    temperature: float = 0.1
    n_top: int = 20
    lambda_b: float = 5.0
    learnable_s: bool = False

    def __post_init__(self):
        object.__setattr__(self, "topics", tuple(int(k) for k in self.topics))
        if len(self.topics) < 2:
            raise InvalidArgumentError("a hierarchy needs at least two levels")
        if any(k < 1 for k in self.topics):
            raise InvalidArgumentError(f"every level needs at least one topic, got {self.topics}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise InvalidArgumentError("embed_dim and hidden_dim must be positive")
        if not self.temperature > 0:
            raise InvalidArgumentError(f"temperature must be positive, got {self.temperature}")
        if self.n_top < 1:
            raise InvalidArgumentError(f"n_top must be at least 1, got {self.n_top}")
        if self.lambda_b < 0:
            raise InvalidArgumentError(f"lambda_b must be nonnegative, got {self.lambda_b}")

    @property
    def levels(self) -> int:
        return len(self.topics)


@dataclass
class GaussianPosterior:
    mean: Tensor
    logvar: Tensor


@dataclass
class ContextualBias:
    """Effective decoder bias: ``p`` where ``p != 0``, the free parameter elsewhere."""

    values: Tensor
    free_mask: np.ndarray
    semantics: np.ndarray


# -- parameters -----------------------------------------------------------------


def encoder_param_names() -> list[str]:
    return [
        "enc.fc1.w", "enc.fc1.b", "enc.fc2.w", "enc.fc2.b",
        "enc.mean.w", "enc.mean.b", "enc.logvar.w", "enc.logvar.b",
    ]


def init_params(vocab_size: int, cfg: HierarchyConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Embeddings ~ N(0, 0.02^2); affine layers ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); bias 0."""
    d, h, k_low = cfg.embed_dim, cfg.hidden_dim, cfg.topics[-1]
    params: dict[str, np.ndarray] = {"W": rng.normal(0.0, 0.02, size=(d, vocab_size))}
    for lvl, k in enumerate(cfg.topics):
        params[f"T.{lvl}"] = rng.normal(0.0, 0.02, size=(d, k))

    def affine(prefix: str, n_in: int, n_out: int) -> None:
        bound = 1.0 / np.sqrt(n_in)
        params[f"{prefix}.w"] = rng.uniform(-bound, bound, size=(n_in, n_out))
        params[f"{prefix}.b"] = rng.uniform(-bound, bound, size=n_out)

    affine("enc.fc1", vocab_size, h)
    affine("enc.fc2", h, h)
    affine("enc.mean", h, k_low)
    affine("enc.logvar", h, k_low)
    for lvl in range(cfg.levels):
        params[f"bias.{lvl}"] = np.zeros(vocab_size)
    if cfg.learnable_s:
        for lvl in range(cfg.levels - 1):
            params[f"s_logits.{lvl}"] = np.zeros(cfg.topics[lvl])
    return params


# -- topics -----------------------------------------------------------------


def compute_beta(topic_emb, word_emb, temperature: float) -> Tensor:
    """V x K matrix; each word's correlations are a softmax over the level's topics."""
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    dist = tn.pairwise_sq_dist(word_emb, topic_emb)
    return tn.softmax(dist * (-1.0 / temperature), axis=1)


# -- encoder -------------------------------------------------------------------


def encode(x, params) -> GaussianPosterior:
    """Two softplus layers then parallel affine heads for mean and log-variance."""
    x = tn.as_tensor(x)
    n_in = params["enc.fc1.w"].shape[0]
    if x.shape[-1] != n_in:
        raise ShapeError(f"document length {x.shape[-1]} != vocabulary size {n_in}")
    h = tn.softplus(x @ params["enc.fc1.w"] + params["enc.fc1.b"])
    h = tn.softplus(h @ params["enc.fc2.w"] + params["enc.fc2.b"])
    return GaussianPosterior(
        mean=h @ params["enc.mean.w"] + params["enc.mean.b"],
        logvar=h @ params["enc.logvar.w"] + params["enc.logvar.b"],
    )


def reparameterize(q: GaussianPosterior, noise) -> Tensor:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != q.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != posterior shape {q.mean.shape}")
    return q.mean + tn.exp(q.logvar * 0.5) * noise


def doc_topic_lowest(r) -> Tensor:
    return tn.softmax(r, axis=-1)


def propagate_theta(theta_lowest, plans: Sequence) -> list[Tensor]:
    """Doc-topic distributions for every level, top first.

    ``plans[l]`` is the K_{l+1} x K_l dependency between level l+1 and l; it
    is rescaled by K_{l+1} so each propagated distribution stays normalized.
    """
    thetas = [tn.as_tensor(theta_lowest)]
    for plan in reversed(plans):
        plan = tn.as_tensor(plan)
        cur = thetas[0]
        if plan.shape[0] != cur.shape[-1]:
            raise ShapeError(f"plan with {plan.shape[0]} child rows cannot propagate {cur.shape[-1]} topics")
        thetas.insert(0, cur @ (plan * float(plan.shape[0])))
    return thetas


# -- contextual bias -------------------------------------------------------------


def contextual_levels(level: int, n_levels: int) -> list[int]:
    return [l for l in (level - 1, level + 1) if 0 <= l < n_levels]


def top_k_mask(column: np.ndarray, n_top: int) -> np.ndarray:
    """Boolean mask of the ``n_top`` largest entries; ties go to the lower index."""
    order = np.argsort(-column, kind="stable")
    mask = np.zeros(column.shape, dtype=bool)
    mask[order[:n_top]] = True
    return mask


def contextual_semantics(context_betas: Sequence[np.ndarray], n_top: int) -> np.ndarray:
    """Sum over contextual levels and their topics of each topic's top-n entries."""
    if n_top < 1:
        raise InvalidArgumentError(f"n_top must be at least 1, got {n_top}")
    if not context_betas:
        raise InvalidArgumentError("at least one contextual level is required")
    p = np.zeros(np.asarray(context_betas[0]).shape[0])
    for beta in context_betas:
        beta = np.asarray(beta)
        for k in range(beta.shape[1]):
            col = beta[:, k]
            p += np.where(top_k_mask(col, n_top), col, 0.0)
    return p


def apply_bias(bias, semantics: np.ndarray) -> ContextualBias:
    """Clamp ``bias`` to ``semantics`` wherever the latter is nonzero.

    Gradients reach only the free coordinates.
    """
    semantics = np.asarray(semantics, dtype=np.float64)
    bias = tn.as_tensor(bias)
    if bias.shape != semantics.shape:
        raise ShapeError(f"bias shape {bias.shape} != semantics shape {semantics.shape}")
    clamped = semantics != 0
    return ContextualBias(values=tn.where(clamped, semantics, bias), free_mask=~clamped, semantics=semantics)


# -- decoding and loss ----------------------------------------------------------


def decode_level(beta, theta, bias, lambda_b: float) -> Tensor:
    """Per-word log-probabilities ``log softmax(beta theta + lambda_b b)``."""
    beta, theta = tn.as_tensor(beta), tn.as_tensor(theta)
    if beta.shape[1] != theta.shape[-1]:
        raise ShapeError(f"beta has {beta.shape[1]} topics but theta has {theta.shape[-1]}")
    logits = theta @ beta.T
    if lambda_b != 0:
        bias = bias.values if isinstance(bias, ContextualBias) else tn.as_tensor(bias)
        if bias.shape[-1] != beta.shape[0]:
            raise ShapeError(f"bias length {bias.shape[-1]} != vocabulary size {beta.shape[0]}")
        logits = logits + bias * lambda_b
    return tn.log_softmax(logits, axis=-1)


def kl_diag_gaussian(q: GaussianPosterior, prior_mean=0.0, prior_var=1.0) -> Tensor:
    """KL(q || N(prior_mean, diag(prior_var))), summed over the last axis."""
    prior_var = np.asarray(prior_var, dtype=np.float64)
    if np.any(prior_var <= 0):
        raise InvalidArgumentError("prior variances must be positive")
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    var = tn.exp(q.logvar)
    diff = q.mean - prior_mean
    terms = var / prior_var + tn.square(diff) / prior_var - 1.0 + np.log(prior_var) - q.logvar
    return terms.sum(axis=-1) * 0.5


def reconstruction(x, log_probs: Sequence[Tensor]) -> Tensor:
    """Negative log-likelihood per document, averaged over levels."""
    x = np.asarray(x, dtype=np.float64)
    total = None
    for lp in log_probs:
        nll = -(lp * x).sum(axis=-1)
        total = nll if total is None else total + nll
    return total * (1.0 / len(log_probs))


def tm_loss(x, betas, thetas, biases, q: GaussianPosterior, lambda_b: float) -> Tensor:
    """Level-averaged reconstruction plus KL to a standard normal prior, batch-averaged."""
    if not (len(betas) == len(thetas) == len(biases)):
        raise ShapeError("betas, thetas and biases must cover the same levels")
    log_probs = [decode_level(b, t, bias, lambda_b) for b, t, bias in zip(betas, thetas, biases)]
    per_doc = reconstruction(x, log_probs) + kl_diag_gaussian(q)
    return per_doc.mean() if per_doc.ndim else per_doc
