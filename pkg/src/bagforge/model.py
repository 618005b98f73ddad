"""Classifier head, weighted cross-entropy objective and parameter accounting."""

from dataclasses import dataclass

import numpy as np

from . import aggregators as agg
from . import numcore as nc
from .errors import ConfigError, DomainError, ShapeError
from .numcore import Tensor


@dataclass
class ModelParams:
    """All trainable weights of one aggregator+classifier configuration.

    The transformer aggregator embeds its own logit head; the other
    variants share a single linear classifier on the bag embedding.
    """

    aggregator: agg.AggregatorParams
    k: int
    classifier_w: Tensor | None = None
    classifier_b: Tensor | None = None

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        named = self.aggregator.named_tensors()
        if self.classifier_w is not None:
            named.append(("classifier.w", self.classifier_w))
            named.append(("classifier.b", self.classifier_b))
        return named


@dataclass
class ClassWeights:
    """Per-class loss weights; all positive."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or (self.w <= 0).any():
            raise DomainError("class weights must be a 1-D positive vector")

    @classmethod
    def uniform(cls, k: int) -> "ClassWeights":
        return cls(np.ones(k))


def init_model(variant: str, d: int, k: int, seed: int, *, d_model: int = 512,
               heads: int = 8, layers: int = 2, hidden: int = 128,
               dtype=np.float32) -> ModelParams:
    """Seeded model construction; same (variant, dims, seed) -> same weights."""
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got {k}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0,))))
    params = agg.init_aggregator(variant, d, k, rng, d_model=d_model, heads=heads,
                                 layers=layers, hidden=hidden, dtype=dtype)
    if variant == agg.TRANSMIL:
        return ModelParams(aggregator=params, k=k)
    w = Tensor(np.zeros((d, k), dtype=dtype), requires_grad=True, name="classifier.w")
    b = Tensor(np.zeros((1, k), dtype=dtype), requires_grad=True, name="classifier.b")
    return ModelParams(aggregator=params, k=k, classifier_w=w, classifier_b=b)


def aggregate(bag: agg.Bag, params: agg.AggregatorParams) -> agg.BagEmbedding:
    if params.variant == agg.BGAP:
        return agg.bgap(bag)
    if params.variant == agg.BGMP:
        return agg.bgmp(bag)
    if params.variant == agg.MILATT:
        return agg.attention_pool(bag, params)
    raise ConfigError(f"aggregate() has no embedding path for {params.variant!r}")


def forward_logits(bag: agg.Bag, params: ModelParams) -> Tensor:
    if params.aggregator.variant == agg.TRANSMIL:
        return agg.transmil_forward(bag, params.aggregator)
    if bag.d != params.aggregator.d:
        raise ShapeError(f"bag dimension {bag.d} != model dimension {params.aggregator.d}")
    emb = aggregate(bag, params.aggregator)
    return nc.add(nc.matmul(emb.vector, params.classifier_w), params.classifier_b)


def forward_classify(bag: agg.Bag, params: ModelParams) -> Tensor:
    """Softmax bag-level class scores, a 1xK probability vector."""
    return nc.softmax(forward_logits(bag, params))


def one_hot(label: int, k: int) -> np.ndarray:
    if not 0 <= label < k:
        raise DomainError(f"label {label} outside [0, {k})")
    y = np.zeros(k)
    y[label] = 1.0
    return y


def _true_class(y) -> int:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    ones = np.flatnonzero(y == 1.0)
    if ones.size != 1 or not np.all((y == 0.0) | (y == 1.0)):
        raise DomainError("Y must be one-hot")
    return int(ones[0])


def weighted_ce(s: Tensor, y, weights: ClassWeights) -> Tensor:
    """Weighted categorical cross-entropy, -(1/K) w_y log(S_y).

    Natural log; S_y is clamped below at 1e-12 so a confidently wrong
    prediction stays finite in float32.
    """
    if s.rows != 1:
        raise ShapeError(f"scores must be 1xK, got {s.shape}")
    k = s.cols
    label = _true_class(y)
    if label >= k or weights.w.size != k:
        raise DomainError("Y/weights length does not match the score vector")
    sy = nc.clamp_min(nc.gather_cols(s, [label]), 1e-12)
    return nc.scale(nc.log(sy), -float(weights.w[label]) / k)


def class_weights(counts) -> ClassWeights:
    """Weights inversely proportional to per-class instance counts.

    w_k = T/(K n_k) with T the total count, so the count-weighted mean
    of the weights is exactly 1.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size < 1:
        raise DomainError("counts must be a 1-D sequence")
    if (counts <= 0).any():
        raise DomainError("every class needs at least one instance for weighting")
    total = counts.sum()
    w = total / (counts.size * counts.astype(np.float64))
    cw = ClassWeights(w)
    assert abs(float((w * counts).sum() / total) - 1.0) < 1e-9
    return cw


def count_params(params: ModelParams) -> int:
    """Total trainable scalar count."""
    return sum(t.data.size for _, t in params.named_tensors())


def param_breakdown(params: ModelParams) -> list[tuple[str, int]]:
    """Per-tensor (name, scalar count) rows, in registration order."""
    return [(name, t.data.size) for name, t in params.named_tensors()]


def predict(bag: agg.Bag, params: ModelParams) -> int:
    """Argmax class with lowest-index tie-break."""
    scores = forward_classify(bag, params)
    return int(np.argmax(scores.data[0]))
