"""Supervised CNN regression on neighborhood imagery.

A pretrained trunk feeds a seven-layer fully-connected head that tapers the
2048-dim pooled feature down to one scalar, with 30% dropout after the first
four head layers. One model is trained per target variable with L1 loss,
AdamW, batch size 16, and early stopping once validation loss has not
improved for ``patience`` epochs; the checkpoint of the best validation
epoch is kept.

Two input regimes share the code path: ``patching`` fine-tunes every weight,
``resizing`` trains the head only. With a frozen trunk the pooled features
are computed once and cached, which is mathematically identical to running
the full forward pass each step (the trunk stays in eval mode) but orders of
magnitude faster.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from PIL import Image

from .backbone import FEATURE_DIM, build_backbone, normalize_images
from .errors import ConfigError, InputError

log = logging.getLogger(__name__)

TARGETS = ("density", "income", "education")
MODES = ("patching", "resizing")

HEAD_WIDTHS = (1024, 512, 256, 128, 64, 32)


@dataclass
class RegressorConfig:
    target: str
    mode: str
    backbone_weights: str
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-2
    patience: int = 5
    max_epochs: int = 60
    dropout: float = 0.30
    head_widths: tuple = HEAD_WIDTHS
    in_channels: int = 3
    normalize_labels: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        self.head_widths = tuple(self.head_widths)

    @property
    def label_column(self) -> str:
        return f"label_{self.target}"


class RegressionHead(nn.Module):
    """Seven linear layers tapering to a scalar, dropout after the first four."""

    def __init__(self, in_dim: int = FEATURE_DIM, widths=HEAD_WIDTHS, dropout: float = 0.30):
        super().__init__()
        dims = [in_dim, *widths]
        layers: list[nn.Module] = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            layers.append(nn.ReLU())
            if i < 4:
                layers.append(nn.Dropout(dropout))
        layers.append(nn.Linear(dims[-1], 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)  # (n, 1)

    @property
    def final_linear(self) -> nn.Linear:
        return self.net[-1]


class ImageRegressor(nn.Module):
    def __init__(self, backbone: nn.Module, head: RegressionHead):
        super().__init__()
        self.backbone = backbone
        self.head = head

    def forward(self, x):
        return self.head(self.backbone(x))  # (n, 1)


def build_model(config: RegressorConfig) -> ImageRegressor:
    """Construct the regressor; head initialization is seeded for repeatability."""
    backbone = build_backbone(config.backbone_weights, config.in_channels)
    torch.manual_seed(config.seed)
    head = RegressionHead(FEATURE_DIM, config.head_widths, config.dropout)
    return ImageRegressor(backbone, head)


def load_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path))


def extract_pooled_features(
    backbone: nn.Module,
    paths: list[str],
    batch_size: int = 16,
    cache_path: str | Path | None = None,
    item_ids: list[str] | None = None,
) -> np.ndarray:
    """Frozen-trunk features for image files, optionally cached on disk.

    The cache is keyed by item id so a permuted-label retrain or a resumed
    run never recomputes the forward passes.
    """
    if cache_path is not None and Path(cache_path).exists():
        cached = np.load(cache_path, allow_pickle=False)
        if item_ids is not None and cached["item_ids"].tolist() == list(map(str, item_ids)):
            return cached["features"]
    backbone.eval()
    feats = []
    with torch.no_grad():
        for i in range(0, len(paths), batch_size):
            batch = np.stack([load_image(p) for p in paths[i : i + batch_size]])
            feats.append(backbone(torch.from_numpy(normalize_images(batch))).numpy())
    features = np.concatenate(feats, axis=0)
    if cache_path is not None:
        np.savez(
            cache_path,
            features=features,
            item_ids=np.asarray(list(map(str, item_ids or range(len(paths))))),
        )
    return features


def backbone_weight_hash(model: ImageRegressor) -> str:
    """Order-stable hash of all backbone parameters and buffers."""
    import hashlib

    h = hashlib.sha256()
    state = model.backbone.state_dict()
    for key in sorted(state):
        h.update(key.encode())
        h.update(state[key].detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    path: Path
    config: RegressorConfig
    best_val_loss: float
    best_epoch: int
    epochs_run: int


def _label_transform(config: RegressorConfig, train_labels: np.ndarray):
    if not config.normalize_labels:
        return {"mean": 0.0, "std": 1.0}
    return {"mean": float(train_labels.mean()), "std": float(train_labels.std() or 1.0)}


def train(
    model: ImageRegressor,
    train_items: pd.DataFrame,
    val_items: pd.DataFrame,
    config: RegressorConfig,
    out_dir: str | Path,
    feature_cache: bool | str | Path = True,
) -> Checkpoint:
    """Train one target with early stopping; returns the best-epoch checkpoint.

    Raises on NaN loss with the offending epoch in the message, and refuses
    empty splits. The training log (epoch, train loss, val loss, timestamp)
    is appended to ``training_log.csv`` in ``out_dir``.
    """
    if train_items.empty or val_items.empty:
        raise ConfigError("training requires non-empty train and validation splits")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label_col = config.label_column
    y_train = train_items[label_col].to_numpy(dtype=np.float64)
    y_val = val_items[label_col].to_numpy(dtype=np.float64)
    stats = _label_transform(config, y_train)
    y_train_t = (y_train - stats["mean"]) / stats["std"]
    y_val_t = (y_val - stats["mean"]) / stats["std"]

    frozen_trunk = config.mode == "resizing"
    if frozen_trunk:
        for p in model.backbone.parameters():
            p.requires_grad_(False)
        model.backbone.eval()
        if feature_cache is True:
            cache_dir = out_dir
        elif feature_cache:
            cache_dir = Path(feature_cache)
            cache_dir.mkdir(parents=True, exist_ok=True)
        else:
            cache_dir = None
        f_train = extract_pooled_features(
            model.backbone,
            train_items["path"].tolist(),
            config.batch_size,
            cache_dir / "features_train.npz" if cache_dir else None,
            train_items["item_id"].tolist(),
        )
        f_val = extract_pooled_features(
            model.backbone,
            val_items["path"].tolist(),
            config.batch_size,
            cache_dir / "features_val.npz" if cache_dir else None,
            val_items["item_id"].tolist(),
        )
        params = list(model.head.parameters())
    else:
        f_train = f_val = None
        params = list(model.parameters())

    optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    criterion = nn.L1Loss()
    torch.manual_seed(config.seed)

    best_val = float("inf")
    best_epoch = -1
    best_state = None
    log_path = out_dir / "training_log.csv"
    if not log_path.exists():
        log_path.write_text("epoch,train_loss,val_loss,timestamp\n")

    epoch = 0
    while epoch < config.max_epochs:
        order = np.random.default_rng(config.seed + 1000 * epoch).permutation(len(train_items))
        model.head.train()
        if not frozen_trunk:
            model.backbone.train()
        train_losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            targets = torch.from_numpy(y_train_t[idx]).float()
            if frozen_trunk:
                pred = model.head(torch.from_numpy(f_train[idx])).squeeze(-1)
            else:
                batch = np.stack([load_image(p) for p in train_items["path"].to_numpy()[idx]])
                pred = model(torch.from_numpy(normalize_images(batch))).squeeze(-1)
            loss = criterion(pred, targets)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {i // config.batch_size}; "
                    f"lr={config.lr}, target={config.target}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            train_losses.append(loss.detach().item() * len(idx))
        train_loss = sum(train_losses) / len(order)

        val_loss = _validation_loss(model, val_items, y_val_t, f_val, config)
        with log_path.open("a") as fh:
            fh.write(f"{epoch},{train_loss:.8g},{val_loss:.8g},{time.time():.3f}\n")
        log.info("epoch %d: train %.5g val %.5g", epoch, train_loss, val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        epoch += 1
        if epoch - best_epoch - 1 >= config.patience:
            break

    model.load_state_dict(best_state)
    ckpt_path = out_dir / f"{config.target}_{config.mode}.pt"
    torch.save(
        {
            "model_state": best_state,
            "config": dataclasses.asdict(config),
            "best_val_loss": best_val,
            "best_epoch": best_epoch,
            "epochs_run": epoch,
            "label_stats": stats,
        },
        ckpt_path,
    )
    (out_dir / f"{config.target}_{config.mode}.json").write_text(
        json.dumps({"best_val_loss": best_val, "best_epoch": best_epoch, "epochs_run": epoch})
    )
    return Checkpoint(ckpt_path, config, best_val, best_epoch, epoch)


def _validation_loss(model, val_items, y_val_t, f_val, config) -> float:
    model.eval()
    criterion = nn.L1Loss(reduction="sum")
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(val_items), config.batch_size):
            targets = torch.from_numpy(y_val_t[i : i + config.batch_size]).float()
            if f_val is not None:
                pred = model.head(torch.from_numpy(f_val[i : i + config.batch_size])).squeeze(-1)
            else:
                batch = np.stack(
                    [load_image(p) for p in val_items["path"].tolist()[i : i + config.batch_size]]
                )
                pred = model(torch.from_numpy(normalize_images(batch))).squeeze(-1)
            total += float(criterion(pred, targets))
    val = total / len(val_items)
    if not np.isfinite(val):
        raise RuntimeError("non-finite validation loss")
    return val


def load_checkpoint(path: str | Path) -> tuple[ImageRegressor, RegressorConfig, dict]:
    """Rebuild a model from a checkpoint; predictions reproduce bit-for-bit."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    config = RegressorConfig(**blob["config"])
    model = build_model(config)
    model.load_state_dict(blob["model_state"])
    model.eval()
    meta = {k: blob[k] for k in ("best_val_loss", "best_epoch", "epochs_run", "label_stats")}
    return model, config, meta


def predict(
    model: ImageRegressor,
    items: pd.DataFrame,
    config: RegressorConfig,
    label_stats: dict | None = None,
    batch_size: int | None = None,
    features: np.ndarray | None = None,
) -> pd.DataFrame:
    """Per-item predictions (dropout disabled, deterministic).

    Returns a table (item_id, geoid, prediction). For patching-mode corpora
    use :func:`aggregate_by_neighborhood` on the result for the
    per-neighborhood view.
    """
    model.eval()
    stats = label_stats or {"mean": 0.0, "std": 1.0}
    bs = batch_size or config.batch_size
    preds = []
    with torch.no_grad():
        if features is not None:
            if features.shape[0] != len(items):
                raise InputError("feature matrix does not match item count")
            for i in range(0, len(items), bs):
                preds.append(model.head(torch.from_numpy(features[i : i + bs])).numpy().reshape(-1))
        else:
            paths = items["path"].tolist()
            for i in range(0, len(items), bs):
                batch = np.stack([load_image(p) for p in paths[i : i + bs]])
                preds.append(model(torch.from_numpy(normalize_images(batch))).numpy().reshape(-1))
    raw = np.concatenate(preds, axis=0).astype(np.float64)
    values = raw * stats["std"] + stats["mean"]
    return pd.DataFrame(
        {"item_id": items["item_id"].to_numpy(), "geoid": items["geoid"].to_numpy(), "prediction": values}
    )


def aggregate_by_neighborhood(predictions: pd.DataFrame) -> pd.DataFrame:
    """Mean prediction over each neighborhood's patches."""
    return (
        predictions.groupby("geoid", as_index=False)["prediction"]
        .mean()
        .sort_values("geoid")
        .reset_index(drop=True)
    )
