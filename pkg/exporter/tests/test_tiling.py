"""Tiling geometry and tissue-filter contracts."""

import numpy as np
import pytest

from tmaexport.errors import DomainError
from tmaexport.tiling import CoreImage, Patch, filter_tissue, tile, tissue_fraction


def core(pixels, core_id="c1"):
    return CoreImage(core_id=core_id, class_name="a", tma_id="t1", pixels=pixels)


def gray(h, w, value):
    return np.full((h, w, 3), value, dtype=np.uint8)


class TestTile:
    def test_standard_core_yields_121_patches(self):
        # floor(3000/256) = 11 per axis
        patches = tile(core(gray(3000, 3000, 128)))
        assert len(patches) == 121

    def test_exact_fit_single_patch(self):
        patches = tile(core(gray(256, 256, 10)))
        assert len(patches) == 1
        assert patches[0].pixels.shape == (256, 256, 3)

    def test_undersized_rejected(self):
        with pytest.raises(DomainError, match="smaller than"):
            tile(core(gray(255, 512, 0)))

    def test_row_major_order(self):
        img = np.zeros((512, 768, 3), dtype=np.uint8)
        patches = tile(core(img))
        offsets = [(p.y0, p.x0) for p in patches]
        assert offsets == [(0, 0), (0, 256), (0, 512),
                           (256, 0), (256, 256), (256, 512)]

    def test_disjoint_and_exhaustive_on_random_sizes(self):
        rng = np.random.default_rng(3)
        for _ in range(8):
            h = int(rng.integers(256, 1400))
            w = int(rng.integers(256, 1400))
            img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            patches = tile(core(img))
            rows, cols = h // 256, w // 256
            assert len(patches) == rows * cols
            # offsets form the full grid exactly once: disjoint + exhaustive
            offsets = {(p.y0, p.x0) for p in patches}
            assert offsets == {(r * 256, c * 256)
                               for r in range(rows) for c in range(cols)}
            # pixel content matches the cropped region patch by patch
            rebuilt = np.zeros((rows * 256, cols * 256, 3), dtype=np.uint8)
            for p in patches:
                rebuilt[p.y0:p.y0 + 256, p.x0:p.x0 + 256] = p.pixels
            np.testing.assert_array_equal(rebuilt, img[:rows * 256, :cols * 256])


class TestFilterTissue:
    def make_patch(self, pixels):
        return Patch(y0=0, x0=0, pixels=pixels)

    def test_all_white_dropped(self):
        p = self.make_patch(gray(256, 256, 255))
        assert filter_tissue([p]) == []

    def test_all_dark_kept(self):
        p = self.make_patch(gray(256, 256, 30))
        assert filter_tissue([p]) == [p]

    def test_half_dark_between_thresholds(self):
        pixels = gray(256, 256, 255)
        pixels[:, :128] = 0  # exactly half the pixels are tissue-dark
        p = self.make_patch(pixels)
        assert tissue_fraction(p) == 0.5
        assert filter_tissue([p], threshold=0.2) == [p]
        assert filter_tissue([p], threshold=0.6) == []

    def test_threshold_domain(self):
        with pytest.raises(DomainError):
            filter_tissue([], threshold=0.0)
