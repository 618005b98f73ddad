"""Core image tiling and tissue filtering.

Cores are cut into a non-overlapping grid of square patches in row-major
order; remainder pixels at the right/bottom edges are discarded.  The
optional tissue filter keeps a patch when enough of its pixels are darker
than a luminance cutoff, a documented stand-in for manual exclusion of
non-informative tissue.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass
class CoreImage:
    """One digitized TMA core: an RGB raster plus identity and label."""

    core_id: str
    class_name: str
    tma_id: str
    pixels: np.ndarray  # H x W x 3 uint8

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DomainError(f"core {self.core_id}: expected HxWx3 RGB pixels")
        if self.pixels.dtype != np.uint8:
            raise DomainError(f"core {self.core_id}: expected 8-bit channels")


@dataclass
class Patch:
    y0: int
    x0: int
    pixels: np.ndarray


def tile(core: CoreImage, patch: int = 256) -> list[Patch]:
    """Non-overlapping row-major grid of patch x patch crops."""
    h, w = core.pixels.shape[:2]
    if h < patch or w < patch:
        raise DomainError(
            f"core {core.core_id}: image {w}x{h} smaller than patch size {patch}")
    rows = h // patch
    cols = w // patch
    out = []
    for r in range(rows):
        for c in range(cols):
            y0, x0 = r * patch, c * patch
            out.append(Patch(y0=y0, x0=x0,
                             pixels=core.pixels[y0:y0 + patch, x0:x0 + patch]))
    return out


def tissue_fraction(patch: Patch, luma_cutoff: float = 220.0) -> float:
    """Fraction of pixels darker than the luminance cutoff (Rec. 601 luma)."""
    rgb = patch.pixels.astype(np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return float((luma < luma_cutoff).mean())


def filter_tissue(patches: list[Patch], threshold: float = 0.2,
                  luma_cutoff: float = 220.0) -> list[Patch]:
    """Keep patches whose tissue fraction reaches the threshold."""
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must be in (0, 1), got {threshold}")
    return [p for p in patches if tissue_fraction(p, luma_cutoff) >= threshold]
