"""Frozen patch encoders.

Three backends share one interface: a vision-language pathology encoder
(``plip``), a generic ImageNet CNN (``cnn``), and a dependency-free
seeded stub (``stub``) used to test the export contract offline.  All
backends are inference-only; nothing here is trainable.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tiling import Patch


@dataclass
class EncoderSpec:
    backend: str = "stub"
    dim: int = 512
    resize: int = 224
    weights_ref: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("stub", "plip", "cnn"):
            raise ConfigError(f"unknown encoder backend {self.backend!r}")
        if self.dim < 1:
            raise ConfigError(f"encoder dim must be >= 1, got {self.dim}")


class StubEncoder:
    """Mean-RGB features through a fixed seeded random projection.

    Deterministic and model-free, so the exporter-to-engine contract is
    testable without downloading weights.
    """

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(spec.seed, spawn_key=(23,))))
        self.projection = rng.standard_normal((3, spec.dim)).astype(np.float32)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def encode(self, patches: list[Patch]) -> np.ndarray:
        feats = np.stack([
            p.pixels.reshape(-1, 3).mean(axis=0) / 255.0 for p in patches
        ]).astype(np.float32)
        return feats @ self.projection


class PlipEncoder:
    """Vision-language pathology encoder via transformers (optional extra)."""

    DEFAULT_WEIGHTS = "vinid/plip"

    def __init__(self, spec: EncoderSpec):
        try:
            import torch
            from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection
        except ImportError as exc:
            raise ConfigError(
                "plip backend needs the [plip] extra (torch + transformers)") from exc
        self.spec = spec
        ref = spec.weights_ref or self.DEFAULT_WEIGHTS
        self._torch = torch
        self.processor = CLIPImageProcessor.from_pretrained(ref)
        self.model = CLIPVisionModelWithProjection.from_pretrained(ref).eval()
        produced = int(self.model.config.projection_dim)
        if spec.dim and spec.dim != produced:
            raise ConfigError(
                f"plip produces {produced}-d embeddings, spec declares {spec.dim}")
        self._dim = produced

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, patches: list[Patch]) -> np.ndarray:
        torch = self._torch
        images = [p.pixels for p in patches]
        with torch.no_grad():
            inputs = self.processor(images=images, return_tensors="pt")
            out = self.model(**inputs).image_embeds
        return out.cpu().numpy().astype(np.float32)


class CnnEncoder:
    """Frozen ImageNet VGG16 features, globally average-pooled to 512-d."""

    def __init__(self, spec: EncoderSpec):
        try:
            import torch
            from torchvision import models, transforms
        except ImportError as exc:
            raise ConfigError(
                "cnn backend needs the [cnn] extra (torch + torchvision)") from exc
        self.spec = spec
        self._torch = torch
        vgg = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
        self.features = vgg.features.eval()
        self.preprocess = transforms.Compose([
            transforms.ToTensor(),
            transforms.Resize((spec.resize, spec.resize), antialias=True),
            transforms.Normalize(mean=[0.485, 0.456, 0.406],
                                 std=[0.229, 0.224, 0.225]),
        ])
        if spec.dim and spec.dim != 512:
            raise ConfigError(f"cnn produces 512-d embeddings, spec declares {spec.dim}")
        self._dim = 512

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, patches: list[Patch]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            batch = torch.stack([self.preprocess(p.pixels) for p in patches])
            maps = self.features(batch)
            pooled = maps.mean(dim=(2, 3))
        return pooled.cpu().numpy().astype(np.float32)


def build_encoder(spec: EncoderSpec):
    if spec.backend == "stub":
        return StubEncoder(spec)
    if spec.backend == "plip":
        return PlipEncoder(spec)
    return CnnEncoder(spec)
