"""Pretrained convolutional backbone management.

The feature extractor is a ResNet-50 trunk whose classification layer is
replaced by identity, yielding a 2048-dim globally pooled representation.
Weights always come from an explicit source; a model is never silently left
at random initialization:

* ``"imagenet"`` — torchvision's pretrained weights (needs their download
  cache or network access),
* a filesystem path — a state-dict file, e.g. one produced by
  :func:`synthesize_backbone_weights` for offline/synthetic work.

``synthesize_backbone_weights`` draws seeded random weights and then
calibrates the batch-norm running statistics on procedurally generated
structured images, so the frozen trunk produces well-scaled, informative
pooled features without any external download.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torchvision.models import resnet50

from .errors import InputError

log = logging.getLogger(__name__)

FEATURE_DIM = 2048

# channel statistics used for input scaling, matching the trunk's pretraining
INPUT_MEAN = (0.485, 0.456, 0.406)
INPUT_STD = (0.229, 0.224, 0.225)


def build_backbone(weights: str | Path, in_channels: int = 3) -> nn.Module:
    """ResNet-50 trunk with pooled 2048-dim output, weights from ``weights``.

    With ``in_channels=4`` the first convolution is widened and the extra
    channel is initialized to the mean of the pretrained RGB filters.
    """
    model = resnet50(weights=None)
    model.fc = nn.Identity()
    if weights == "imagenet":
        try:
            from torchvision.models import ResNet50_Weights

            pretrained = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2)
            state = {k: v for k, v in pretrained.state_dict().items() if not k.startswith("fc.")}
        except Exception as exc:
            raise InputError(
                "pretrained backbone weights unavailable: torchvision could not load "
                f"imagenet weights ({exc}); supply a weights file instead"
            ) from exc
    else:
        path = Path(weights)
        if not path.exists():
            raise InputError(
                f"pretrained backbone weights not found at {path}; "
                "run synthesize_backbone_weights or point to a real weights file"
            )
        state = torch.load(path, map_location="cpu", weights_only=True)
    missing = model.load_state_dict(state, strict=False)
    if missing.missing_keys:
        raise InputError(f"backbone weights are incomplete, missing keys: {missing.missing_keys[:5]}")
    if in_channels == 4:
        old = model.conv1
        conv = nn.Conv2d(4, old.out_channels, old.kernel_size, old.stride, old.padding, bias=False)
        with torch.no_grad():
            conv.weight[:, :3] = old.weight
            conv.weight[:, 3:4] = old.weight.mean(dim=1, keepdim=True)
        model.conv1 = conv
    elif in_channels != 3:
        raise InputError(f"in_channels must be 3 or 4, got {in_channels}")
    return model


def _calibration_batch(rng: np.random.Generator, n: int, size: int) -> torch.Tensor:
    """Structured random images (rectangles over smooth backgrounds)."""
    imgs = np.empty((n, 3, size, size), np.float32)
    for i in range(n):
        base = rng.uniform(0.05, 0.8, 3)[:, None, None] * np.ones((3, size, size), np.float32)
        gy = np.linspace(0, rng.uniform(-0.3, 0.3), size, dtype=np.float32)
        base += gy[None, :, None]
        for _ in range(int(rng.integers(4, 16))):
            x0, y0 = rng.integers(0, size - 6, 2)
            w, h = rng.integers(3, size // 3, 2)
            base[:, y0 : y0 + h, x0 : x0 + w] = rng.uniform(0, 1, 3)[:, None, None]
        imgs[i] = base + rng.normal(0, 0.05, (3, size, size))
    mean = np.asarray(INPUT_MEAN, np.float32)[:, None, None]
    std = np.asarray(INPUT_STD, np.float32)[:, None, None]
    return torch.from_numpy((np.clip(imgs, 0, 1) - mean) / std)


def synthesize_backbone_weights(
    path: str | Path, seed: int = 0, batches: int = 6, batch_size: int = 8, image_size: int = 112
) -> Path:
    """Write a deterministic stand-in weights file for offline environments.

    Convolutions get seeded Kaiming initialization and batch-norm running
    statistics are calibrated by forwarding structured noise in train mode.
    The result is a fixed general-purpose (though not ImageNet-trained)
    feature extractor; suitable for synthetic corpora and tests.
    """
    path = Path(path)
    torch.manual_seed(seed)
    model = resnet50(weights=None)
    model.fc = nn.Identity()
    rng = np.random.default_rng(seed)
    model.train()
    with torch.no_grad():
        for _ in range(batches):
            model(_calibration_batch(rng, batch_size, image_size))
    model.eval()
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    log.info("synthesized backbone weights at %s (seed=%d)", path, seed)
    return path


def normalize_images(pixels: np.ndarray) -> np.ndarray:
    """uint8 HxWxC (or NxHxWxC) image(s) to normalized float32 NCHW."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    arr = arr.astype(np.float32) / 255.0
    c = arr.shape[3]
    mean = np.asarray(INPUT_MEAN, np.float32)
    std = np.asarray(INPUT_STD, np.float32)
    if c == 4:
        mean = np.append(mean, mean.mean()).astype(np.float32)
        std = np.append(std, std.mean()).astype(np.float32)
    arr = (arr - mean) / std
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def pooled_features(
    backbone: nn.Module, images: list[np.ndarray] | np.ndarray, batch_size: int = 16
) -> np.ndarray:
    """Frozen-trunk pooled features for a sequence of images; deterministic."""
    backbone.eval()
    feats = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = normalize_images(np.stack([np.asarray(im) for im in images[i : i + batch_size]]))
            feats.append(backbone(torch.from_numpy(batch)).numpy())
    return np.concatenate(feats, axis=0)
