"""Bag-file persistence, dataset manifest, splitting and synthetic data.

Bag container layout (all integers little-endian u32):

    offset 0   magic "MILB"
    offset 4   version (1)
    offset 8   d, embedding dimension
    offset 12  N, instance count
    offset 16  K, class count
    offset 20  label
    offset 24  core_id byte length L
    offset 28  core_id, UTF-8 (L bytes)
    offset 28+L  payload: N*d float32 values, row-major

Checkpoints use the same container style with magic "MILC" and a list of
named tensors after a (config hash, epoch) header.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .aggregators import Bag
from .errors import ConfigError, DomainError, FormatError
from .numcore import Tensor

BAG_MAGIC = b"MILB"
CKPT_MAGIC = b"MILC"
VERSION = 1
SPLITS = ("train", "val", "test", "unassigned")

_SYNTH_TAG = 11
_SPLIT_TAG = 13


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


class _Reader:
    """Cursor over a byte string that reports the offset of any defect."""

    def __init__(self, blob: bytes, what: str):
        self.blob = blob
        self.pos = 0
        self.what = what

    def take(self, n: int, desc: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"{self.what}: truncated while reading {desc}; expected {n} bytes, "
                f"found {len(self.blob) - self.pos}", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, desc: str) -> int:
        return struct.unpack("<I", self.take(4, desc))[0]


def write_bag(bag: Bag, path) -> None:
    data = np.ascontiguousarray(bag.instances.data, dtype="<f4")
    cid = bag.core_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BAG_MAGIC)
        fh.write(_u32(VERSION))
        fh.write(_u32(bag.d))
        fh.write(_u32(bag.n))
        fh.write(_u32(bag.k))
        fh.write(_u32(bag.label))
        fh.write(_u32(len(cid)))
        fh.write(cid)
        fh.write(data.tobytes())


def read_bag(path) -> Bag:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, str(path))
    magic = r.take(4, "magic")
    if magic != BAG_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {BAG_MAGIC!r}", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    d = r.u32("d")
    n = r.u32("N")
    k = r.u32("K")
    label = r.u32("label")
    cid_len = r.u32("core_id length")
    cid = r.take(cid_len, "core_id").decode("utf-8")
    payload = r.take(4 * n * d, f"payload ({n}x{d} float32)")
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes", offset=r.pos)
    if n < 1 or d < 1:
        raise FormatError(f"{path}: empty bag (N={n}, d={d})", offset=8)
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return Bag(core_id=cid, label=label, k=k,
               instances=Tensor(values.copy(), dtype=np.float32))


@dataclass
class ManifestEntry:
    core_id: str
    path: str
    label: int
    split: str = "unassigned"
    source_tma: str = ""


@dataclass
class Manifest:
    dataset_id: str
    d: int
    k: int
    class_names: list[str]
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        if len(self.class_names) != self.k:
            raise DomainError(f"{self.k} classes but {len(self.class_names)} names")
        seen = set()
        for e in self.entries:
            if e.core_id in seen:
                raise DomainError(f"duplicate core_id {e.core_id!r}")
            seen.add(e.core_id)
            if not 0 <= e.label < self.k:
                raise DomainError(f"core {e.core_id}: label {e.label} outside [0, {self.k})")
            if e.split not in SPLITS:
                raise DomainError(f"core {e.core_id}: unknown split {e.split!r}")

    def select(self, split: str | None) -> list[ManifestEntry]:
        if split is None:
            return list(self.entries)
        return [e for e in self.entries if e.split == split]

    def class_counts(self, split: str | None = None) -> np.ndarray:
        counts = np.zeros(self.k, dtype=np.int64)
        for e in self.select(split):
            counts[e.label] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "d": self.d,
            "k": self.k,
            "class_names": list(self.class_names),
            "entries": [
                {"core_id": e.core_id, "path": e.path, "label": e.label,
                 "split": e.split, "source_tma": e.source_tma}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Manifest":
        try:
            entries = [ManifestEntry(core_id=e["core_id"], path=e["path"],
                                     label=int(e["label"]), split=e["split"],
                                     source_tma=e.get("source_tma", ""))
                       for e in doc["entries"]]
            return cls(dataset_id=doc["dataset_id"], d=int(doc["d"]), k=int(doc["k"]),
                       class_names=list(doc["class_names"]), entries=entries)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"manifest: missing or malformed field ({exc})") from exc


def save_manifest(manifest: Manifest, path) -> None:
    """Atomic write (temp file + rename) with stable key order."""
    blob = json.dumps(manifest.to_dict(), indent=2) + "\n"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return Manifest.from_dict(doc)


def load_bags(manifest: Manifest, root, split: str | None = None) -> list[Bag]:
    """Read the bags of one split; paths resolve relative to ``root``."""
    bags = []
    for e in manifest.select(split):
        bag = read_bag(os.path.join(root, e.path))
        if bag.core_id != e.core_id or bag.label != e.label:
            raise FormatError(
                f"{e.path}: bag header ({bag.core_id!r}, label {bag.label}) "
                f"disagrees with manifest ({e.core_id!r}, label {e.label})")
        if bag.d != manifest.d:
            raise FormatError(f"{e.path}: dimension {bag.d} != manifest d {manifest.d}")
        bags.append(bag)
    return bags


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float] = (0.6, 0.15, 0.25)
    seed: int = 0
    grouping: str = "core"  # "core" or "tma"
    force: bool = False

    def __post_init__(self):
        if any(f < 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be >= 0 and sum to 1, "
                              f"got {self.fractions}")
        if self.grouping not in ("core", "tma"):
            raise ConfigError(f"grouping must be core or tma, got {self.grouping!r}")


def _partition(count: int, fractions) -> tuple[int, int, int]:
    """Floor train and val; test takes the remainder (exact partition)."""
    n_train = int(fractions[0] * count)
    n_val = int(fractions[1] * count)
    return n_train, n_val, count - n_train - n_val


def stratified_split(manifest: Manifest, spec: SplitSpec) -> Manifest:
    """Assign splits per class with a seeded counter-based shuffle.

    Per class, units (cores, or whole TMAs in tma grouping) are shuffled
    by a Philox generator keyed on (seed, class) and partitioned by the
    floor rule.  Deterministic given the manifest order and seed.
    """
    assignment: dict[str, str] = {}
    for label in range(manifest.k):
        class_entries = [e for e in manifest.entries if e.label == label]
        if spec.grouping == "core":
            units = [[e] for e in class_entries]
        else:
            groups: dict[str, list[ManifestEntry]] = {}
            for e in class_entries:
                groups.setdefault(e.source_tma, []).append(e)
            units = [groups[t] for t in sorted(groups)]
        if len(units) < 3 and not spec.force:
            raise DomainError(
                f"class {manifest.class_names[label]!r} has {len(units)} "
                f"{spec.grouping} units; need >= 3 (or force)")
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(spec.seed, spawn_key=(_SPLIT_TAG, label))))
        order = rng.permutation(len(units))
        n_train, n_val, _ = _partition(len(units), spec.fractions)
        for pos, unit_idx in enumerate(order):
            split = ("train" if pos < n_train
                     else "val" if pos < n_train + n_val else "test")
            for e in units[unit_idx]:
                assignment[e.core_id] = split
    entries = [ManifestEntry(e.core_id, e.path, e.label, assignment[e.core_id],
                             e.source_tma) for e in manifest.entries]
    return Manifest(dataset_id=manifest.dataset_id, d=manifest.d, k=manifest.k,
                    class_names=list(manifest.class_names), entries=entries)


def synthesize_dataset(k: int, bags_per_class: int, n_range: tuple[int, int],
                       d: int, separation: float, seed: int, out_dir,
                       dataset_id: str = "synthetic") -> Manifest:
    """Generate an isotropic-Gaussian MIL dataset and write it to disk.

    Class ``c`` instances draw from N(separation * e_c, I); bag sizes are
    uniform over ``n_range``.  When separation >= 4 a nearest-centroid
    probe on the bag means must reach 0.95 accuracy (generation
    self-check).  Same seed, same bytes.
    """
    if d < 2:
        raise ConfigError(f"need d >= 2, got {d}")
    if k > d:
        raise ConfigError(f"need d >= k to place {k} class centers, got d={d}")
    if separation < 0:
        raise ConfigError("separation must be non-negative")
    n_lo, n_hi = n_range
    if not 1 <= n_lo <= n_hi:
        raise ConfigError(f"bad bag-size range {n_range}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    means = []
    labels = []
    for label in range(k):
        for i in range(bags_per_class):
            rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence(seed, spawn_key=(_SYNTH_TAG, label, i))))
            n = int(rng.integers(n_lo, n_hi + 1))
            x = rng.standard_normal((n, d))
            x[:, label] += separation
            core_id = f"synth-{label}-{i:04d}"
            bag = Bag(core_id=core_id, label=label, k=k,
                      instances=Tensor(x.astype(np.float32)))
            rel = f"{core_id}.bag"
            write_bag(bag, os.path.join(out_dir, rel))
            entries.append(ManifestEntry(core_id=core_id, path=rel, label=label,
                                         source_tma=f"tma-{label}"))
            means.append(x.mean(axis=0))
            labels.append(label)
    manifest = Manifest(dataset_id=dataset_id, d=d, k=k,
                        class_names=[f"class{c}" for c in range(k)], entries=entries)
    if separation >= 4:
        acc = nearest_centroid_accuracy(np.asarray(means), np.asarray(labels), k)
        if acc < 0.95:
            raise DomainError(
                f"generation self-check failed: centroid probe accuracy {acc:.3f}")
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def nearest_centroid_accuracy(points: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Accuracy of classifying each point by its nearest class centroid."""
    centroids = np.stack([points[labels == c].mean(axis=0) for c in range(k)])
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == labels).mean())


def write_checkpoint(path, named_tensors, config_hash: str, epoch: int) -> None:
    """Named float32 tensors plus a (config hash, epoch) header."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(_u32(VERSION))
        h = config_hash.encode("utf-8")
        fh.write(_u32(len(h)))
        fh.write(h)
        fh.write(_u32(epoch))
        fh.write(_u32(len(named_tensors)))
        for name, tensor in named_tensors:
            nb = name.encode("utf-8")
            fh.write(_u32(len(nb)))
            fh.write(nb)
            fh.write(_u32(tensor.data.shape[0]))
            fh.write(_u32(tensor.data.shape[1]))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[dict, str, int]:
    """Returns ({name: float32 array}, config_hash, epoch)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, str(path))
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    hash_len = r.u32("config hash length")
    config_hash = r.take(hash_len, "config hash").decode("utf-8")
    epoch = r.u32("epoch")
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name_len = r.u32("tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        rows = r.u32("rows")
        cols = r.u32("cols")
        payload = r.take(4 * rows * cols, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes", offset=r.pos)
    return tensors, config_hash, epoch
