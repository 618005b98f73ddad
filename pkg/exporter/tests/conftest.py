"""Synthetic core imagery shared by the exporter tests."""

import csv

import numpy as np
import pytest
from PIL import Image


def disk_core(size, color, rng, fill_fraction=0.8):
    """White background with a colored tissue disk plus pixel noise."""
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    radius = size * fill_fraction / 2
    mask = (yy - size / 2) ** 2 + (xx - size / 2) ** 2 <= radius ** 2
    noise = rng.integers(-25, 26, size=(size, size, 3))
    tissue = np.clip(np.array(color)[None, None, :] + noise, 0, 230).astype(np.uint8)
    img[mask] = tissue[mask]
    return img


CLASS_COLORS = {"spindle": (150, 40, 60), "round": (60, 50, 150)}


@pytest.fixture(scope="session")
def imagery(tmp_path_factory):
    """16 synthetic cores (8 per class) plus a labels CSV."""
    root = tmp_path_factory.mktemp("imagery")
    in_dir = root / "cores"
    in_dir.mkdir()
    rng = np.random.default_rng(13)
    rows = []
    for class_name, color in CLASS_COLORS.items():
        for i in range(8):
            core_id = f"{class_name}-{i:02d}"
            pixels = disk_core(600, color, rng)
            Image.fromarray(pixels).save(in_dir / f"{core_id}.png")
            rows.append((core_id, class_name, f"tma-{class_name}"))
    labels = root / "labels.csv"
    with open(labels, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["core_id", "class_name", "tma_id"])
        writer.writerows(rows)
    return in_dir, labels
