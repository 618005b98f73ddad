"""Exact t-SNE over core-level embeddings.

Core embeddings are the arithmetic mean of each core's patch embeddings.
Affinities use a per-row Gaussian bandwidth found by binary search so the
conditional perplexity 2^H matches the target; the 2-D map minimizes
KL(P||Q) with a Student-t kernel by momentum gradient descent with early
exaggeration.  All math runs in float64; all randomness is seeded.  The
pairwise O(M²) forms are exact (no tree approximation) — fine at the
couple-of-thousand-core scale this engine targets.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datastore import Manifest, read_bag
from .errors import ConfigError, DomainError, NumericError

_TSNE_TAG = 19
_PALETTE = ("#e6194b", "#3cb44b", "#4363d8", "#f58231",
            "#911eb4", "#46f0f0", "#f032e6", "#808000")


@dataclass
class EmbeddingSet:
    """One mean embedding per core, with labels and identifiers."""

    points: np.ndarray  # M x d float64
    labels: np.ndarray  # M ints
    core_ids: list[str]

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.shape[0] < 3:
            raise DomainError(f"t-SNE needs at least 3 cores, got {self.points.shape[0]}")
        if not (self.points.shape[0] == self.labels.size == len(self.core_ids)):
            raise DomainError("points, labels and core_ids must align")


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.perplexity < 2:
            raise ConfigError(f"perplexity must be >= 2, got {self.perplexity}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")

    def clamped_perplexity(self, m: int) -> float:
        return min(self.perplexity, (m - 1) / 3.0)


def _row_entropy_probs(dist_row: np.ndarray, beta: float):
    """Conditional distribution and its natural-log entropy at bandwidth beta."""
    p = np.exp(-dist_row * beta)
    s = p.sum()
    if s <= 0.0:
        return np.zeros_like(p), 0.0
    p /= s
    nz = p > 0
    h = float(-(p[nz] * np.log(p[nz])).sum())
    return p, h


def affinities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetric joint probabilities with per-row perplexity matched to 1e-4."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    m = points.shape[0]
    if m < 3:
        raise DomainError(f"need at least 3 points, got {m}")
    if not 2 <= perplexity <= m - 1:
        raise DomainError(f"perplexity {perplexity} unreachable with {m} points")
    d2 = kernels.pairwise_sq_dists(points)
    target = np.log(perplexity)
    cond = np.zeros((m, m))
    others = np.arange(m)
    for i in range(m):
        idx = others[others != i]
        row = d2[i, idx]
        if row.max() <= 0.0:
            j = int(idx[0])
            raise DomainError(
                f"points {i} and {j} (and all others) coincide; "
                "affinities are undefined")
        beta, lo, hi = 1.0, 0.0, np.inf
        p, h = _row_entropy_probs(row, beta)
        for _ in range(100):
            if abs(h - target) < 1e-4:
                break
            if h > target:  # too flat: sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            p, h = _row_entropy_probs(row, beta)
        if abs(h - target) >= 1e-4:
            raise DomainError(f"perplexity search failed to converge for row {i}")
        cond[i, idx] = p
    joint = (cond + cond.T) / (2.0 * m)
    return joint


def row_perplexities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Achieved conditional perplexity per row (for verification)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    m = points.shape[0]
    d2 = kernels.pairwise_sq_dists(points)
    out = np.zeros(m)
    target = np.log(perplexity)
    others = np.arange(m)
    for i in range(m):
        idx = others[others != i]
        row = d2[i, idx]
        beta, lo, hi = 1.0, 0.0, np.inf
        p, h = _row_entropy_probs(row, beta)
        for _ in range(100):
            if abs(h - target) < 1e-4:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            p, h = _row_entropy_probs(row, beta)
        out[i] = np.exp(h)
    return out


def kl_and_grad(p: np.ndarray, y: np.ndarray):
    """KL(P||Q) under the Student-t kernel and its gradient in y."""
    m = y.shape[0]
    d2 = kernels.pairwise_sq_dists(np.ascontiguousarray(y, dtype=np.float64))
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    z = w.sum()
    # divergence shows up as non-finite coordinates and is reported by the
    # optimizer loop; keep the intermediate arithmetic quiet here
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.maximum(w / z, 1e-12)
    mask = p > 0
    kl = float((p[mask] * np.log(p[mask] / q[mask])).sum())
    pq = (p - q) * w
    grad = 4.0 * (np.diag(pq.sum(axis=1)) @ y - pq @ y)
    return kl, grad


def tsne_optimize(p: np.ndarray, config: TsneConfig):
    """Momentum gradient descent on KL(P||Q); returns (Y, kl_first, kl_final).

    Uses the original method's per-coordinate adaptive gains (+0.2 on a
    sign flip against the velocity, x0.8 otherwise, floored at 0.01),
    which keep the fixed learning rate stable across input scales.
    """
    m = p.shape[0]
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(config.seed, spawn_key=(_TSNE_TAG,))))
    y = rng.standard_normal((m, 2)) * 1e-4
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_first = kl_and_grad(p, y)[0]
    for it in range(config.iterations):
        p_eff = p * config.exaggeration if it < config.exaggeration_iters else p
        _, grad = kl_and_grad(p_eff, y)
        momentum = (config.momentum_start if it < config.momentum_switch
                    else config.momentum_final)
        flip = (grad > 0) != (velocity > 0)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - config.learning_rate * (gains * grad)
        y = y + velocity
        if not np.all(np.isfinite(y)):
            raise NumericError(f"t-SNE diverged at iteration {it}")
    kl_final = kl_and_grad(p, y)[0]
    return y, kl_first, kl_final


def core_embeddings(manifest: Manifest, root, split: str | None = None) -> EmbeddingSet:
    """Mean patch embedding per core for the selected split."""
    points, labels, ids = [], [], []
    for e in manifest.select(split):
        bag = read_bag(os.path.join(root, e.path))
        points.append(bag.instances.data.astype(np.float64).mean(axis=0))
        labels.append(e.label)
        ids.append(e.core_id)
    return EmbeddingSet(points=np.asarray(points), labels=np.asarray(labels),
                        core_ids=ids)


def run_tsne(embeddings: EmbeddingSet, config: TsneConfig):
    """Affinities + optimization with order-canonical seeding.

    Rows are processed in sorted core_id order so a permuted input yields
    the identically permuted map; results return in input order.
    """
    order = np.argsort(np.asarray(embeddings.core_ids))
    perp = config.clamped_perplexity(len(embeddings.core_ids))
    p = affinities(embeddings.points[order], perp)
    y_sorted, kl_first, kl_final = tsne_optimize(p, config)
    y = np.empty_like(y_sorted)
    y[order] = y_sorted
    return y, kl_first, kl_final


def write_coords_csv(path, core_ids, coords, labels) -> None:
    lines = ["core_id,x,y,label"]
    for cid, (x, y), label in zip(core_ids, coords, labels):
        lines.append(f"{cid},{x:.6f},{y:.6f},{int(label)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_scatter(coords: np.ndarray, labels, class_names: list[str], path) -> None:
    """SVG scatter: one point per core, colors by class, legend for
    classes that actually occur."""
    labels = np.asarray(labels, dtype=np.int64)
    width = height = 640
    margin = 48
    span = coords.max(axis=0) - coords.min(axis=0)
    span[span == 0] = 1.0
    scaled = (coords - coords.min(axis=0)) / span
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<style>text{font-family:sans-serif;font-size:12px}</style>',
    ]
    for (sx, sy), label in zip(scaled, labels):
        px = margin + sx * (width - 2 * margin)
        py = height - margin - sy * (height - 2 * margin)
        color = _PALETTE[label % len(_PALETTE)]
        parts.append(f'<circle class="pt" cx="{px:.2f}" cy="{py:.2f}" r="3.5" '
                     f'fill="{color}" fill-opacity="0.8"/>')
    present = sorted(set(labels.tolist()))
    for slot, label in enumerate(present):
        ly = 24 + slot * 18
        color = _PALETTE[label % len(_PALETTE)]
        parts.append(f'<circle cx="{width - 140}" cy="{ly}" r="5" fill="{color}"/>')
        parts.append(f'<text x="{width - 128}" y="{ly + 4}">{class_names[label]}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
