"""Instance-embedding aggregation strategies.

Four ways to collapse a bag of patch embeddings into evidence for a
core-level prediction:

* ``bgap``     — column-wise mean (no trainable weights)
* ``bgmp``     — column-wise max (no trainable weights)
* ``milatt``   — softmax attention over instances (tanh-gated scores)
* ``transmil`` — transformer over the instance sequence with a class
  token, sequence squaring and convolutional positional encoding; this
  variant maps straight to class logits.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DomainError, ShapeError
from .numcore import Tensor

BGAP = "bgap"
BGMP = "bgmp"
MILATT = "milatt"
TRANSMIL = "transmil"
VARIANTS = (BGAP, BGMP, MILATT, TRANSMIL)


@dataclass
class Bag:
    """One core: N patch embeddings, a single label, and an identifier."""

    core_id: str
    label: int
    k: int
    instances: Tensor

    def __post_init__(self):
        if self.instances.rows < 1:
            raise DomainError(f"bag {self.core_id}: empty bag")
        if not 0 <= self.label < self.k:
            raise DomainError(
                f"bag {self.core_id}: label {self.label} outside [0, {self.k})")
        if not np.all(np.isfinite(self.instances.data)):
            raise DomainError(f"bag {self.core_id}: non-finite embedding values")

    @property
    def n(self) -> int:
        return self.instances.rows

    @property
    def d(self) -> int:
        return self.instances.cols


@dataclass
class BagEmbedding:
    vector: Tensor
    attention: Tensor | None = None

    def __post_init__(self):
        if self.attention is not None:
            w = self.attention.data
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-5:
                raise DomainError("attention weights are not a probability vector")


@dataclass
class MilAttParams:
    v: Tensor  # d x hidden
    w: Tensor  # hidden x 1


@dataclass
class TransmilLayerParams:
    ln_gamma: Tensor
    ln_beta: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class TransmilParams:
    d_model: int
    heads: int
    proj_w: Tensor  # d x d_model
    proj_b: Tensor
    class_token: Tensor  # 1 x d_model
    layers: list[TransmilLayerParams]
    conv_w: dict  # kernel size -> C x k*k
    conv_b: dict  # kernel size -> 1 x C
    final_gamma: Tensor
    final_beta: Tensor
    head_w: Tensor  # d_model x K
    head_b: Tensor

    CONV_SIZES = (7, 5, 3)


@dataclass
class AggregatorParams:
    """Variant tag plus the variant's weight tensors (if any)."""

    variant: str
    d: int
    milatt: MilAttParams | None = None
    transmil: TransmilParams | None = None
    hidden: int = 128

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        if self.variant == MILATT:
            return [("milatt.v", self.milatt.v), ("milatt.w", self.milatt.w)]
        if self.variant == TRANSMIL:
            t = self.transmil
            named = [("transmil.proj_w", t.proj_w), ("transmil.proj_b", t.proj_b),
                     ("transmil.class_token", t.class_token)]
            for i, layer in enumerate(t.layers):
                for fname in ("ln_gamma", "ln_beta", "wq", "bq", "wk", "bk",
                              "wv", "bv", "wo", "bo"):
                    named.append((f"transmil.layer{i}.{fname}", getattr(layer, fname)))
            for ks in TransmilParams.CONV_SIZES:
                named.append((f"transmil.conv{ks}_w", t.conv_w[ks]))
                named.append((f"transmil.conv{ks}_b", t.conv_b[ks]))
            named += [("transmil.final_gamma", t.final_gamma),
                      ("transmil.final_beta", t.final_beta),
                      ("transmil.head_w", t.head_w), ("transmil.head_b", t.head_b)]
            return named
        return []  # bgap / bgmp carry zero trainable tensors


def _param(rng, rows, cols, std, name, dtype) -> Tensor:
    data = (rng.standard_normal((rows, cols)) * std).astype(dtype)
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def _const(value, rows, cols, name, dtype) -> Tensor:
    return Tensor(np.full((rows, cols), value, dtype=dtype),
                  requires_grad=True, name=name, dtype=dtype)


def init_aggregator(variant: str, d: int, k: int, rng, *, d_model: int = 512,
                    heads: int = 8, layers: int = 2, hidden: int = 128,
                    dtype=np.float32) -> AggregatorParams:
    """Seeded parameter initialization for one aggregator variant.

    Linear weights draw from a Glorot-scaled normal; the logit head is
    zero-initialized so early training is driven by the data rather than
    by init noise.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown aggregator variant {variant!r}")
    if variant in (BGAP, BGMP):
        return AggregatorParams(variant=variant, d=d)
    if variant == MILATT:
        if hidden < 1:
            raise ConfigError(f"attention hidden size must be >= 1, got {hidden}")
        v = _param(rng, d, hidden, math.sqrt(2.0 / (d + hidden)), "milatt.v", dtype)
        w = _param(rng, hidden, 1, math.sqrt(2.0 / (hidden + 1)), "milatt.w", dtype)
        return AggregatorParams(variant=variant, d=d, hidden=hidden,
                                milatt=MilAttParams(v=v, w=w))
    if d_model % heads != 0:
        raise ConfigError(f"d_model {d_model} not divisible by {heads} heads")
    std_proj = math.sqrt(2.0 / (d + d_model))
    std_attn = math.sqrt(1.0 / d_model)
    layer_list = []
    for i in range(layers):
        layer_list.append(TransmilLayerParams(
            ln_gamma=_const(1.0, 1, d_model, f"layer{i}.ln_gamma", dtype),
            ln_beta=_const(0.0, 1, d_model, f"layer{i}.ln_beta", dtype),
            wq=_param(rng, d_model, d_model, std_attn, f"layer{i}.wq", dtype),
            bq=_const(0.0, 1, d_model, f"layer{i}.bq", dtype),
            wk=_param(rng, d_model, d_model, std_attn, f"layer{i}.wk", dtype),
            bk=_const(0.0, 1, d_model, f"layer{i}.bk", dtype),
            wv=_param(rng, d_model, d_model, std_attn, f"layer{i}.wv", dtype),
            bv=_const(0.0, 1, d_model, f"layer{i}.bv", dtype),
            wo=_param(rng, d_model, d_model, std_attn, f"layer{i}.wo", dtype),
            bo=_const(0.0, 1, d_model, f"layer{i}.bo", dtype),
        ))
    conv_w = {ks: _param(rng, d_model, ks * ks, 0.02, f"conv{ks}_w", dtype)
              for ks in TransmilParams.CONV_SIZES}
    conv_b = {ks: _const(0.0, 1, d_model, f"conv{ks}_b", dtype)
              for ks in TransmilParams.CONV_SIZES}
    tm = TransmilParams(
        d_model=d_model, heads=heads,
        proj_w=_param(rng, d, d_model, std_proj, "proj_w", dtype),
        proj_b=_const(0.0, 1, d_model, "proj_b", dtype),
        class_token=_param(rng, 1, d_model, 0.02, "class_token", dtype),
        layers=layer_list, conv_w=conv_w, conv_b=conv_b,
        final_gamma=_const(1.0, 1, d_model, "final_gamma", dtype),
        final_beta=_const(0.0, 1, d_model, "final_beta", dtype),
        head_w=_const(0.0, d_model, k, "head_w", dtype),
        head_b=_const(0.0, 1, k, "head_b", dtype),
    )
    return AggregatorParams(variant=variant, d=d, transmil=tm)


def bgap(bag: Bag) -> BagEmbedding:
    """Column-wise mean over instances; permutation invariant."""
    return BagEmbedding(vector=nc.colmean(bag.instances))


def bgmp(bag: Bag) -> BagEmbedding:
    """Column-wise max over instances; ties route to the lowest row."""
    return BagEmbedding(vector=nc.colmax(bag.instances))


def attention_pool(bag: Bag, params: AggregatorParams) -> BagEmbedding:
    """Softmax-weighted instance sum, a_n ∝ exp(wᵀ tanh(V xₙᵀ))."""
    if params.variant != MILATT or params.milatt is None:
        raise ConfigError(f"attention_pool needs milatt params, got {params.variant!r}")
    p = params.milatt
    scores = nc.matmul(nc.tanh(nc.matmul(bag.instances, p.v)), p.w)  # N x 1
    weights = nc.softmax(nc.transpose(scores))  # 1 x N
    vector = nc.matmul(weights, bag.instances)  # 1 x d
    return BagEmbedding(vector=vector, attention=weights)


def _self_attention(x: Tensor, layer: TransmilLayerParams, heads: int) -> Tensor:
    """Pre-norm multi-head exact softmax self-attention with residual."""
    d_model = x.cols
    dh = d_model // heads
    normed = nc.layer_norm(x, layer.ln_gamma, layer.ln_beta)
    q = nc.add(nc.matmul(normed, layer.wq), layer.bq)
    k = nc.add(nc.matmul(normed, layer.wk), layer.bk)
    v = nc.add(nc.matmul(normed, layer.wv), layer.bv)
    head_outs = []
    for h in range(heads):
        cols = np.arange(h * dh, (h + 1) * dh)
        qh = nc.gather_cols(q, cols)
        kh = nc.gather_cols(k, cols)
        vh = nc.gather_cols(v, cols)
        scores = nc.scale(nc.matmul(qh, nc.transpose(kh)), 1.0 / math.sqrt(dh))
        head_outs.append(nc.matmul(nc.softmax(scores), vh))
    out = nc.add(nc.matmul(nc.concat_cols(head_outs), layer.wo), layer.bo)
    return nc.add(x, out)


def squared_length(n: int) -> int:
    """Smallest perfect square >= n."""
    root = math.isqrt(n)
    return n if root * root == n else (root + 1) ** 2


def transmil_forward(bag: Bag, params: AggregatorParams) -> Tensor:
    """Transformer aggregation of one bag straight to class logits.

    Pipeline: linear projection, squaring of the instance sequence by
    repeating leading instances, class token, attention layer, grid
    positional convolutions (7/5/3, per channel, class token untouched),
    second attention layer, layer-normed class token to logits.
    """
    if params.variant != TRANSMIL or params.transmil is None:
        raise ConfigError(f"transmil_forward needs transmil params, got {params.variant!r}")
    t = params.transmil
    if bag.d != params.d:
        raise ShapeError(f"bag dimension {bag.d} != aggregator dimension {params.d}")
    n = bag.n
    m = squared_length(n)
    side = math.isqrt(m)

    h = nc.add(nc.matmul(bag.instances, t.proj_w), t.proj_b)  # N x d_model
    if m > n:
        pad_idx = np.arange(m - n) % n  # cyclic from index 0
        h = nc.concat_rows([h, nc.gather_rows(h, pad_idx)])
    x = nc.concat_rows([t.class_token, h])  # (M+1) x d_model

    x = _self_attention(x, t.layers[0], t.heads)

    cls = nc.gather_rows(x, [0])
    grid = nc.gather_rows(x, np.arange(1, m + 1))
    pos = grid
    for ks in TransmilParams.CONV_SIZES:
        pos = nc.add(pos, nc.depthwise_conv2d(grid, t.conv_w[ks], t.conv_b[ks], side, ks))
    x = nc.concat_rows([cls, pos])

    for layer in t.layers[1:]:
        x = _self_attention(x, layer, t.heads)

    cls = nc.layer_norm(nc.gather_rows(x, [0]), t.final_gamma, t.final_beta)
    return nc.add(nc.matmul(cls, t.head_w), t.head_b)  # 1 x K
