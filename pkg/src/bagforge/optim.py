"""AdamW, the one-bag-per-step training loop, and checkpoint selection.

Training runs one bag per optimizer step over a seeded per-epoch shuffle
of the training split, minimizes the weighted cross-entropy, evaluates
validation macro-F1 at every epoch end, and keeps the parameters of the
best validation epoch (earliest on ties).  Everything is derived from
(seed, config, data), so reruns are bit-identical.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as mx
from . import model as mdl
from . import numcore as nc
from .aggregators import VARIANTS, Bag
from .datastore import Manifest, load_bags
from .errors import ConfigError, NumericError

_SHUFFLE_TAG = 17


@dataclass
class TrainConfig:
    aggregator: str = "bgap"
    lr: float = 2e-5
    epochs: int = 50
    seed: int = 0
    patience: int = 10
    class_weighting: bool = True
    fractions: tuple[float, float, float] = (0.6, 0.15, 0.25)
    d_model: int = 512
    heads: int = 8
    layers: int = 2
    hidden: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.aggregator not in VARIANTS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.fractions}")


def config_hash(config: TrainConfig) -> str:
    """Stable digest of the training-relevant settings."""
    doc = asdict(config)
    doc["fractions"] = list(doc["fractions"])
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class OptState:
    """AdamW moment buffers keyed by parameter name."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, named, config: TrainConfig) -> "OptState":
        state = cls(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                    eps=config.eps, weight_decay=config.weight_decay)
        for name, tensor in named:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adamw_step(named_params, state: OptState) -> None:
    """Bias-corrected Adam update with decoupled weight decay.

    In-place on the parameter/moment buffers (the update runs every bag,
    so it is the hottest non-kernel loop in training).
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in named_params:
        g = p.grad
        if g is None:
            raise NumericError(f"adamw_step: no gradient for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adamw_step: non-finite gradient in {name!r}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v / bc2)
        denom += state.eps
        update = m / bc1
        update /= denom
        # theta <- theta - lr*update - lr*wd*theta, decay on the pre-step value
        p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * update


@dataclass
class TrainResult:
    params: mdl.ModelParams
    best_epoch: int
    best_val_f1: float
    log: list[dict]
    config_hash: str
    class_weights: mdl.ClassWeights

    def log_lines(self) -> str:
        """The training log as newline-delimited JSON."""
        return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in self.log)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(_SHUFFLE_TAG, epoch))))
    return rng.permutation(n)


def _snapshot(params: mdl.ModelParams) -> dict:
    return {name: t.data.copy() for name, t in params.named_tensors()}


def _restore(params: mdl.ModelParams, snap: dict) -> None:
    for name, t in params.named_tensors():
        t.data = snap[name].copy()


def train_step(bag: Bag, params: mdl.ModelParams, weights: mdl.ClassWeights,
               state: OptState) -> float:
    """One forward/backward/update on a single bag; returns the loss."""
    named = params.named_tensors()
    for _, t in named:
        t.zero_grad()
    with nc.Tape() as tape:
        scores = mdl.forward_classify(bag, params)
        loss = mdl.weighted_ce(scores, mdl.one_hot(bag.label, params.k), weights)
    value = loss.item()
    nc.backward(tape, loss, params=[t for _, t in named])
    adamw_step(named, state)
    return value


def evaluate_split(bags, params: mdl.ModelParams):
    """(confusion matrix, report) for a list of bags under frozen params."""
    truths = [b.label for b in bags]
    preds = [mdl.predict(b, params) for b in bags]
    cm = mx.confusion_matrix(truths, preds, params.k)
    return cm, mx.macro_metrics(cm)


def train(manifest: Manifest, root, config: TrainConfig) -> TrainResult:
    """Full training run per the configured aggregator and budget."""
    train_bags = load_bags(manifest, root, "train")
    val_bags = load_bags(manifest, root, "val")
    if not train_bags or not val_bags:
        raise ConfigError("manifest needs non-empty train and val splits")

    params = mdl.init_model(config.aggregator, manifest.d, manifest.k, config.seed,
                            d_model=config.d_model, heads=config.heads,
                            layers=config.layers, hidden=config.hidden)
    if config.class_weighting:
        counts = np.bincount([b.label for b in train_bags], minlength=manifest.k)
        weights = mdl.class_weights(counts)
    else:
        weights = mdl.ClassWeights.uniform(manifest.k)

    state = OptState.for_params(params.named_tensors(), config)
    chash = config_hash(config)
    best = {"epoch": -1, "f1": -1.0, "snap": _snapshot(params)}
    log = []
    stale = 0
    for epoch in range(config.epochs):
        order = _epoch_order(config.seed, epoch, len(train_bags))
        losses = []
        for idx in order:
            bag = train_bags[idx]
            try:
                losses.append(train_step(bag, params, weights, state))
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, bag {bag.core_id!r}: {exc}") from exc
        _, report = evaluate_split(val_bags, params)
        improved = report.f1 > best["f1"]
        if improved:
            best = {"epoch": epoch, "f1": report.f1, "snap": _snapshot(params)}
            stale = 0
        else:
            stale += 1
        log.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_macro_f1": report.f1,
            "val_acc": report.acc,
            "best": improved,
        })
        if stale > config.patience:
            break
    _restore(params, best["snap"])
    return TrainResult(params=params, best_epoch=best["epoch"], best_val_f1=best["f1"],
                       log=log, config_hash=chash, class_weights=weights)
