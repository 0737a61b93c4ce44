"""Autoencoder latent embedding and joint centroid training for patch features.

Stage 1 trains a feed-forward autoencoder (four linear layers on each side)
to reconstruct standardized 2048-dim patch features. Stage 2 ("dec") seeds
k-means centroids in the latent space and then optimizes encoder, decoder,
and centroids jointly: reconstruction loss plus a weighted mean squared
distance of each embedding to its currently assigned centroid, with
assignments refreshed each epoch. If a cluster stays empty for several
consecutive epochs, training warns about cluster collapse and stops early.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .clustering import assign_to_centroids, kmeans_cluster
from .errors import InputError

FEATURE_DIM = 2048
ENCODER_WIDTHS = (1024, 512, 128)  # hidden widths; latent dim appended per model


class ClusterCollapseWarning(UserWarning):
    """A cluster lost all assigned samples during joint training."""


class Autoencoder(nn.Module):
    def __init__(self, latent_dim: int, in_dim: int = FEATURE_DIM, hidden=ENCODER_WIDTHS):
        super().__init__()
        dims = [in_dim, *hidden, latent_dim]
        enc = []
        for i in range(len(dims) - 1):
            enc.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                enc.append(nn.ReLU())
        dec = []
        rdims = dims[::-1]
        for i in range(len(rdims) - 1):
            dec.append(nn.Linear(rdims[i], rdims[i + 1]))
            if i < len(rdims) - 2:
                dec.append(nn.ReLU())
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)
        self.latent_dim = latent_dim

    def forward(self, x):
        z = self.encoder(x)
        return self.decoder(z), z


@dataclass
class ClusterModel:
    """Encoder + centroids; everything needed to featurize neighborhoods."""

    latent_dim: int
    k: int
    method: str  # "kmeans" | "dec"
    centroids: np.ndarray
    encoder_state: dict
    decoder_state: dict
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    seed: int
    history: dict = field(default_factory=dict)

    def build_autoencoder(self) -> Autoencoder:
        model = Autoencoder(self.latent_dim)
        model.encoder.load_state_dict(self.encoder_state)
        model.decoder.load_state_dict(self.decoder_state)
        model.eval()
        return model

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, np.float64) - self.scaler_mean) / self.scaler_std

    def encode(self, features: np.ndarray, standardized: bool = False) -> np.ndarray:
        """Latent vectors for raw (or pre-standardized) 2048-dim features."""
        x = np.asarray(features, np.float64) if standardized else self.standardize(features)
        model = self.build_autoencoder()
        with torch.no_grad():
            z = model.encoder(torch.from_numpy(x.astype(np.float32)))
        return z.numpy().astype(np.float64)

    def assign(self, features: np.ndarray, standardized: bool = False) -> np.ndarray:
        return assign_to_centroids(self.encode(features, standardized), self.centroids)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "latent_dim": self.latent_dim,
                "k": self.k,
                "method": self.method,
                "centroids": self.centroids,
                "encoder_state": self.encoder_state,
                "decoder_state": self.decoder_state,
                "scaler_mean": self.scaler_mean,
                "scaler_std": self.scaler_std,
                "seed": self.seed,
                "history": self.history,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        return cls(**blob)


def fit_scaler(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean/std for standardization; constant columns get std 1."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train_autoencoder(
    features: np.ndarray,
    latent_dim: int,
    seed: int = 0,
    val_fraction: float = 0.15,
    epochs: int = 60,
    patience: int = 5,
    batch_size: int = 256,
    lr: float = 1e-3,
    scaler: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ClusterModel, dict]:
    """Stage-1 reconstruction training; returns a centroid-free ClusterModel.

    ``features`` are raw; the standardization scaler is fit here (or passed
    in when the caller has already fit it on the training split only).
    Training aborts on non-finite loss and early-stops on the validation
    reconstruction error.
    """
    features = np.asarray(features, np.float64)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise InputError(f"features must be (n, {FEATURE_DIM}), got {features.shape}")
    mean, std = scaler if scaler is not None else fit_scaler(features)
    x = ((features - mean) / std).astype(np.float32)

    rng = np.random.default_rng(seed)
    n = len(x)
    n_val = max(1, int(round(val_fraction * n)))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise InputError("not enough feature rows to hold out a validation set")
    x_t = torch.from_numpy(x)

    torch.manual_seed(seed)
    model = Autoencoder(latent_dim)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    criterion = nn.MSELoss()

    best_val = float("inf")
    best_state = None
    best_epoch = -1
    history = {"train_mse": [], "val_mse": []}
    for epoch in range(epochs):
        model.train()
        epoch_rng = np.random.default_rng(seed + 7919 * (epoch + 1))
        total = 0.0
        for idx in minibatches(len(train_idx), batch_size, epoch_rng):
            batch = x_t[train_idx[idx]]
            recon, _ = model(batch)
            loss = criterion(recon, batch)
            if not torch.isfinite(loss):
                raise RuntimeError(f"autoencoder loss diverged at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.detach().item() * len(idx)
        history["train_mse"].append(total / len(train_idx))

        model.eval()
        with torch.no_grad():
            recon, _ = model(x_t[val_idx])
            val = float(criterion(recon, x_t[val_idx]))
        history["val_mse"].append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if epoch - best_epoch >= patience:
            break
    model.load_state_dict(best_state)
    cluster_model = ClusterModel(
        latent_dim=latent_dim,
        k=0,
        method="autoencoder",
        centroids=np.zeros((0, latent_dim)),
        encoder_state={k: v.cpu() for k, v in model.encoder.state_dict().items()},
        decoder_state={k: v.cpu() for k, v in model.decoder.state_dict().items()},
        scaler_mean=mean,
        scaler_std=std,
        seed=seed,
        history={"stage1": history, "best_val_mse": best_val},
    )
    return cluster_model, history


def make_kmeans_model(stage1: ClusterModel, features: np.ndarray, k: int, seed: int = 0) -> ClusterModel:
    """Plain k-means in the stage-1 latent space (method tag ``kmeans``)."""
    latents = stage1.encode(features)
    result = kmeans_cluster(latents, k, seed=seed)
    return ClusterModel(
        latent_dim=stage1.latent_dim,
        k=k,
        method="kmeans",
        centroids=result.centroids,
        encoder_state=stage1.encoder_state,
        decoder_state=stage1.decoder_state,
        scaler_mean=stage1.scaler_mean,
        scaler_std=stage1.scaler_std,
        seed=seed,
        history={"wcss": result.wcss_history, "n_iter": result.n_iter},
    )


def train_dec(
    stage1: ClusterModel,
    features: np.ndarray,
    k: int,
    distance_weight: float = 0.1,
    epochs: int = 30,
    patience: int = 5,
    batch_size: int = 256,
    lr: float = 1e-4,
    seed: int = 0,
    collapse_epochs: int = 2,
) -> ClusterModel:
    """Stage-2 joint training of encoder, decoder, and centroid parameters.

    The loss is reconstruction MSE plus ``distance_weight`` times the mean
    squared latent distance to the assigned centroid; assignments refresh at
    every epoch start. Persistent empty clusters raise
    :class:`ClusterCollapseWarning` and terminate training early.
    """
    x = stage1.standardize(features).astype(np.float32)
    n = len(x)
    model = stage1.build_autoencoder()
    with torch.no_grad():
        z0 = model.encoder(torch.from_numpy(x)).numpy().astype(np.float64)
    if k <= n:
        init = kmeans_cluster(z0, k, seed=seed).centroids
    else:
        rng = np.random.default_rng(seed)
        init = z0[rng.integers(0, n, size=k)] + 1e-3 * rng.standard_normal((k, z0.shape[1]))
    centroids = nn.Parameter(torch.tensor(init, dtype=torch.float32))
    x_t = torch.from_numpy(x)

    torch.manual_seed(seed)
    # centroids get a faster rate so they track the moving latent space
    optimizer = torch.optim.Adam(
        [{"params": model.parameters(), "lr": lr}, {"params": [centroids], "lr": 10 * lr}]
    )
    criterion = nn.MSELoss()

    history = {"total": [], "recon": [], "distance": [], "collapsed": False}
    best_total = float("inf")
    best_epoch = -1
    empty_streak = 0
    for epoch in range(epochs):
        model.eval()
        with torch.no_grad():
            z = model.encoder(x_t)
            d2 = torch.cdist(z, centroids.detach()) ** 2
            assignments = d2.argmin(dim=1)
            distance_term = float(d2.gather(1, assignments[:, None]).mean())
        counts = np.bincount(assignments.numpy(), minlength=k)
        if (counts == 0).any():
            empty_streak += 1
            if empty_streak >= collapse_epochs:
                warnings.warn(
                    f"cluster collapse: {(counts == 0).sum()} of {k} clusters empty for "
                    f"{empty_streak} consecutive epochs; stopping joint training",
                    ClusterCollapseWarning,
                )
                history["collapsed"] = True
                if not history["distance"]:
                    history["distance"].append(distance_term)
                break
        else:
            empty_streak = 0

        model.train()
        epoch_rng = np.random.default_rng(seed + 104729 * (epoch + 1))
        tot = rec_sum = dist_sum = 0.0
        for idx in minibatches(n, batch_size, epoch_rng):
            batch = x_t[idx]
            recon, z = model(batch)
            rec = criterion(recon, batch)
            assigned = centroids[assignments[idx]]
            dist = ((z - assigned) ** 2).sum(dim=1).mean()
            loss = rec + distance_weight * dist
            if not torch.isfinite(loss):
                raise RuntimeError(f"joint training loss diverged at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            tot += loss.detach().item() * len(idx)
            rec_sum += rec.detach().item() * len(idx)
            dist_sum += dist.detach().item() * len(idx)
        history["total"].append(tot / n)
        history["recon"].append(rec_sum / n)
        history["distance"].append(distance_term)
        if tot / n < best_total - 1e-9:
            best_total = tot / n
            best_epoch = epoch
        if epoch - best_epoch >= patience:
            break

    model.eval()
    with torch.no_grad():
        z = model.encoder(x_t)
        d2 = torch.cdist(z, centroids.detach()) ** 2
        history["final_distance"] = float(d2.min(dim=1).values.mean())
    return ClusterModel(
        latent_dim=stage1.latent_dim,
        k=k,
        method="dec",
        centroids=centroids.detach().numpy().astype(np.float64),
        encoder_state={key: v.cpu() for key, v in model.encoder.state_dict().items()},
        decoder_state={key: v.cpu() for key, v in model.decoder.state_dict().items()},
        scaler_mean=stage1.scaler_mean,
        scaler_std=stage1.scaler_std,
        seed=seed,
        history=history,
    )
