"""Frozen vision encoders producing per-frame patch feature grids.

A patch grid comes from an intermediate spatial layer, not the pooled
embedding: the monitor's transport alignment and heatmaps need one
feature vector per spatial cell.  Supported:

  resnet18  layers layer1..layer4 (layer4 at 224px -> 7x7 grid, F=512)
  dinov2    ViT patch tokens via torch.hub (needs network/cache)

`weights="imagenet"` loads the pretrained checkpoint; `weights="random"`
freezes a seeded random initialization so fully offline runs stay
deterministic and format-correct (features are untrained in that mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torchvision import models

RESNET_LAYERS = ("layer1", "layer2", "layer3", "layer4")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class EncoderConfig:
    name: str  # resnet18 | dinov2
    layer: str
    resolution: int = 224
    weights: str = "imagenet"  # imagenet | random
    seed: int = 0

    @property
    def encoder_id(self) -> str:
        tag = self.weights if self.weights == "imagenet" else f"random-seed{self.seed}"
        return f"{self.name}:{self.layer}:{self.resolution}px:{tag}"


class PatchEncoder:
    """Frozen feature extractor: (B, 3, H, W) float tensor -> (B, P, F)."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        if config.name == "resnet18":
            self._model = self._build_resnet(config)
            self._forward = self._resnet_features
        elif config.name == "dinov2":
            self._model = self._build_dinov2(config)
            self._forward = self._dinov2_features
        else:
            raise ValueError(f"unknown encoder {config.name!r} (expected resnet18 or dinov2)")
        self._model.eval()
        for parameter in self._model.parameters():
            parameter.requires_grad_(False)

    @staticmethod
    def _build_resnet(config: EncoderConfig):
        if config.layer not in RESNET_LAYERS:
            raise ValueError(f"resnet18 layer must be one of {RESNET_LAYERS}, got {config.layer!r}")
        if config.weights == "imagenet":
            return models.resnet18(weights=models.ResNet18_Weights.IMAGENET1K_V1)
        if config.weights == "random":
            torch.manual_seed(config.seed)
            return models.resnet18(weights=None)
        raise ValueError(f"weights must be imagenet or random, got {config.weights!r}")

    @staticmethod
    def _build_dinov2(config: EncoderConfig):
        if config.weights != "imagenet":
            raise ValueError("dinov2 supports only pretrained weights")
        try:
            return torch.hub.load("facebookresearch/dinov2", config.layer)
        except Exception as exc:
            raise RuntimeError(
                f"could not load dinov2 {config.layer!r} via torch.hub (offline?); "
                "pre-populate the hub cache or use --encoder resnet18"
            ) from exc

    def _resnet_features(self, batch: torch.Tensor) -> torch.Tensor:
        m = self._model
        x = m.maxpool(m.relu(m.bn1(m.conv1(batch))))
        for name in RESNET_LAYERS:
            x = getattr(m, name)(x)
            if name == self.config.layer:
                break
        b, f, h, w = x.shape
        return x.reshape(b, f, h * w).permute(0, 2, 1)  # row-major spatial cells -> P

    def _dinov2_features(self, batch: torch.Tensor) -> torch.Tensor:
        return self._model.forward_features(batch)["x_norm_patchtokens"]

    @torch.no_grad()
    def encode(self, batch: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) normalized frames -> (B, P, F) float32 patch features."""
        return self._forward(batch).float()
