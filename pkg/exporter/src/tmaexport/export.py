"""The ingestion pipeline: images -> patches -> embeddings -> bag files.

Outputs land in the engine's formats: one bag file per informative core,
a manifest JSON indexing them, and an exclusions CSV listing cores that
produced no usable patches.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .encoders import EncoderSpec, build_encoder
from .errors import ConfigError, DomainError
from .tiling import CoreImage, filter_tissue, tile

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass
class LabelRow:
    core_id: str
    class_name: str
    tma_id: str


@dataclass
class ExportResult:
    manifest_path: str
    exclusions_path: str
    exported: int
    excluded: list[tuple[str, str]] = field(default_factory=list)


def read_labels_csv(path) -> list[LabelRow]:
    """core_id,class_name,tma_id rows with a header line."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"core_id", "class_name", "tma_id"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ConfigError(f"{path}: labels CSV needs columns {sorted(required)}")
        for row in reader:
            rows.append(LabelRow(core_id=row["core_id"].strip(),
                                 class_name=row["class_name"].strip(),
                                 tma_id=row["tma_id"].strip()))
    if not rows:
        raise ConfigError(f"{path}: labels CSV is empty")
    seen = set()
    for row in rows:
        if row.core_id in seen:
            raise DomainError(f"{path}: duplicate core_id {row.core_id!r}")
        seen.add(row.core_id)
    return rows


def find_image(in_dir, core_id: str) -> str:
    for ext in IMAGE_EXTENSIONS:
        candidate = os.path.join(in_dir, core_id + ext)
        if os.path.exists(candidate):
            return candidate
    raise ConfigError(f"no image found for core {core_id!r} under {in_dir}")


def load_core(in_dir, row: LabelRow) -> CoreImage:
    path = find_image(in_dir, row.core_id)
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return CoreImage(core_id=row.core_id, class_name=row.class_name,
                     tma_id=row.tma_id, pixels=pixels)


def export(in_dir, labels_path, spec: EncoderSpec, out_dir, patch: int = 256,
           filter_threshold: float | None = None,
           dataset_id: str = "exported") -> ExportResult:
    """Encode every labelled core and write bags + manifest + exclusions.

    Tissue filtering is off unless a threshold is given (curated cores
    need no filtering).  Cores with zero kept patches are excluded and
    reported, not fatal.
    """
    from .bagio import write_bag_file

    rows = read_labels_csv(labels_path)
    class_names = sorted({r.class_name for r in rows})
    label_of = {name: i for i, name in enumerate(class_names)}
    encoder = build_encoder(spec)
    os.makedirs(out_dir, exist_ok=True)

    entries = []
    excluded: list[tuple[str, str]] = []
    dim = None
    for row in rows:
        core = load_core(in_dir, row)
        patches = tile(core, patch=patch)
        if filter_threshold is not None:
            patches = filter_tissue(patches, threshold=filter_threshold)
        if not patches:
            excluded.append((row.core_id, "no informative patches"))
            continue
        embeddings = encoder.encode(patches)
        if embeddings.shape[0] != len(patches):
            raise ConfigError(
                f"encoder returned {embeddings.shape[0]} rows for "
                f"{len(patches)} patches")
        if dim is None:
            dim = embeddings.shape[1]
        elif embeddings.shape[1] != dim:
            raise ConfigError(f"encoder dimension changed mid-run "
                              f"({embeddings.shape[1]} != {dim})")
        rel = f"{row.core_id}.bag"
        write_bag_file(os.path.join(out_dir, rel), row.core_id,
                       label_of[row.class_name], len(class_names), embeddings)
        entries.append({"core_id": row.core_id, "path": rel,
                        "label": label_of[row.class_name], "split": "unassigned",
                        "source_tma": row.tma_id})
    if not entries:
        raise DomainError("every core was excluded; nothing to export")

    manifest = {
        "dataset_id": dataset_id,
        "d": int(dim),
        "k": len(class_names),
        "class_names": class_names,
        "entries": entries,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    tmp = manifest_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, manifest_path)

    exclusions_path = os.path.join(out_dir, "exclusions.csv")
    with open(exclusions_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["core_id", "reason"])
        writer.writerows(excluded)
    return ExportResult(manifest_path=manifest_path, exclusions_path=exclusions_path,
                        exported=len(entries), excluded=excluded)
