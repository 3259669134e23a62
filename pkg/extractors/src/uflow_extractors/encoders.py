"""Frozen vision encoders producing 1024-d per-screen feature vectors.

Every encoder consumes 224x224 RGB images; `resize_screen` performs the
non-uniform (aspect-ignoring) scaling used during preprocessing.

The `stub` encoder is deterministic and dependency-free: block statistics
of the pixel grid.  It exists so the pipeline is testable offline; swap in
`dinov2-vitl14-reg` for real features (requires torch and downloadable
weights).
"""

from __future__ import annotations

import numpy as np
from PIL import Image

FEATURE_DIM = 1024
INPUT_SIZE = 224
_BLOCK = 14  # 224 / 14 = 16 blocks per axis


def resize_screen(img: Image.Image) -> Image.Image:
    """Non-uniform scale to 224x224 (no aspect-preserving letterboxing)."""
    return img.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)


class VisionEncoder:
    name = "abstract"
    dim = FEATURE_DIM

    def encode(self, images: list[Image.Image]) -> np.ndarray:
        """images are 224x224 RGB; returns (n, 1024) float32."""
        raise NotImplementedError


class StubEncoder(VisionEncoder):
    """Deterministic pixel-statistics encoder (16x16 block means per channel
    plus 16x16 grayscale second moments = 768 + 256 = 1024 dims)."""

    name = "stub"

    def encode(self, images: list[Image.Image]) -> np.ndarray:
        out = np.zeros((len(images), FEATURE_DIM), dtype=np.float32)
        for i, img in enumerate(images):
            a = np.asarray(img, dtype=np.float32) / 255.0
            if a.shape != (INPUT_SIZE, INPUT_SIZE, 3):
                raise ValueError(
                    f"encoder expects {INPUT_SIZE}x{INPUT_SIZE} RGB, got {a.shape}"
                )
            blocks = a.reshape(16, _BLOCK, 16, _BLOCK, 3).mean(axis=(1, 3))
            gray = a.mean(axis=2)
            moments = (gray * gray).reshape(16, _BLOCK, 16, _BLOCK).mean(axis=(1, 3))
            out[i, :768] = blocks.reshape(-1)
            out[i, 768:] = moments.reshape(-1)
        return out


class Dinov2Encoder(VisionEncoder):
    """DinoV2 ViT-L/14 with registers, frozen; class token as the screen
    embedding (the interoperability convention for real data).

    Needs torch plus network access to fetch the hub weights, so it is not
    exercised by the test suite.
    """

    name = "dinov2-vitl14-reg"

    def __init__(self):
        try:
            import torch
        except ImportError as exc:
            raise RuntimeError(
                "dinov2 encoder needs torch; install uflow-extractors[dinov2]"
            ) from exc
        self._torch = torch
        self._model = torch.hub.load(
            "facebookresearch/dinov2", "dinov2_vitl14_reg"
        ).eval()
        self._mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        self._std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)

    def encode(self, images: list[Image.Image]) -> np.ndarray:
        torch = self._torch
        arrays = [np.asarray(img, dtype=np.float32) / 255.0 for img in images]
        batch = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2)
        batch = (batch - self._mean) / self._std
        with torch.no_grad():
            features = self._model(batch)
        out = features.cpu().numpy().astype(np.float32)
        if out.shape[1] != FEATURE_DIM:
            raise RuntimeError(
                f"encoder returned {out.shape[1]}-d features, expected {FEATURE_DIM}"
            )
        return out


def get_encoder(name: str) -> VisionEncoder:
    if name == "stub":
        return StubEncoder()
    if name == "dinov2-vitl14-reg":
        return Dinov2Encoder()
    raise ValueError(f"unknown encoder {name!r}")
