"""Semi-supervised visual-word pipeline.

Small grid patches are embedded with the frozen pretrained trunk (2048-dim
pooled features), compressed by a stage-1 autoencoder, and clustered in the
latent space (plain k-means, or k-means followed by joint centroid training).
Each neighborhood is then described by its cluster composition — either the
frequency histogram of its patches' cluster assignments or the mean latent
distance of its patches to every centroid — and a random forest regresses
the target variable on those neighborhood features. Latent dimension,
cluster count, feature mode, and forest hyperparameters are selected on the
validation split by exhaustive grid search.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestRegressor

from .backbone import FEATURE_DIM, pooled_features
from .embedding import ClusterModel, fit_scaler, make_kmeans_model, train_autoencoder, train_dec
from .errors import InputError
from .evaluate import score

log = logging.getLogger(__name__)

FEATURE_MODES = ("frequency", "distance")
DEFAULT_RF_GRID = {"n_estimators": (50, 100, 200), "max_depth": (4, 8, None), "min_samples_leaf": (1,)}


def extract_features(patches: np.ndarray | list, backbone, patch_size: int = 112, batch_size: int = 32) -> np.ndarray:
    """2048-dim pooled trunk features for small patches; deterministic."""
    arrs = [np.asarray(p) for p in patches]
    for i, a in enumerate(arrs):
        if a.shape[0] != patch_size or a.shape[1] != patch_size:
            raise InputError(
                f"patch {i} has shape {a.shape[:2]}, expected ({patch_size}, {patch_size})"
            )
    return pooled_features(backbone, arrs, batch_size=batch_size).astype(np.float64)


def hood_frequency_features(assignments: np.ndarray, geoids, k: int) -> pd.DataFrame:
    """Per-neighborhood normalized histogram of cluster assignments.

    Rows are indexed by geoid, columns c0..c{k-1}; every row sums to one.
    """
    assignments = np.asarray(assignments)
    if assignments.size and (assignments.min() < 0 or assignments.max() >= k):
        raise InputError("assignments outside [0, k)")
    frame = pd.DataFrame({"geoid": list(geoids), "cluster": assignments})
    rows = {}
    for geoid, group in frame.groupby("geoid", sort=True):
        counts = np.bincount(group["cluster"].to_numpy(), minlength=k).astype(np.float64)
        rows[geoid] = counts / counts.sum()
    out = pd.DataFrame.from_dict(rows, orient="index", columns=[f"c{i}" for i in range(k)])
    out.index.name = "geoid"
    return out


def hood_distance_features(latents: np.ndarray, geoids, centroids: np.ndarray, agg: str = "mean") -> pd.DataFrame:
    """Per-neighborhood aggregate latent distance to each centroid."""
    latents = np.asarray(latents, np.float64)
    cent = np.asarray(centroids, np.float64)
    d = np.sqrt(
        np.maximum(
            (latents**2).sum(1)[:, None] + (cent**2).sum(1)[None, :] - 2 * latents @ cent.T, 0
        )
    )
    frame = pd.DataFrame(d, columns=[f"c{i}" for i in range(len(cent))])
    frame["geoid"] = list(geoids)
    if agg == "mean":
        out = frame.groupby("geoid", sort=True).mean()
    elif agg == "min":
        out = frame.groupby("geoid", sort=True).min()
    else:
        raise InputError(f"unknown distance aggregation {agg!r}")
    out.index.name = "geoid"
    return out


def hood_features(
    model: ClusterModel, features: np.ndarray, geoids, mode: str, agg: str = "mean"
) -> pd.DataFrame:
    """Neighborhood feature table for one cluster model and feature mode."""
    if mode not in FEATURE_MODES:
        raise InputError(f"mode must be one of {FEATURE_MODES}, got {mode!r}")
    latents = model.encode(features)
    if mode == "frequency":
        from .clustering import assign_to_centroids

        return hood_frequency_features(assign_to_centroids(latents, model.centroids), geoids, model.k)
    return hood_distance_features(latents, geoids, model.centroids, agg=agg)


def fit_regressor(features: pd.DataFrame | np.ndarray, labels: np.ndarray, rf_params: dict | None = None, seed: int = 0) -> RandomForestRegressor:
    """Random-forest regression on neighborhood features (train split only)."""
    X = np.asarray(features, np.float64)
    y = np.asarray(labels, np.float64)
    if len(X) != len(y):
        raise InputError(f"feature/label length mismatch: {len(X)} vs {len(y)}")
    params = {"n_estimators": 100, "max_depth": None, "min_samples_leaf": 1}
    params.update(rf_params or {})
    model = RandomForestRegressor(random_state=seed, n_jobs=-1, **params)
    model.fit(X, y)
    return model


@dataclass
class SearchCorpus:
    """Patch features + neighborhood labels, already split."""

    features: np.ndarray  # (n_patches, 2048)
    geoids: np.ndarray  # (n_patches,)
    splits: np.ndarray  # (n_patches,) "train" | "val" | "test"
    labels: pd.DataFrame  # indexed by geoid, columns label_*

    def __post_init__(self):
        self.features = np.asarray(self.features, np.float64)
        self.geoids = np.asarray(self.geoids, dtype=object)
        self.splits = np.asarray(self.splits, dtype=object)
        if self.features.shape[1] != FEATURE_DIM:
            raise InputError(f"patch features must be {FEATURE_DIM}-dim")

    def mask(self, split: str) -> np.ndarray:
        return self.splits == split


@dataclass
class SearchResult:
    leaderboard: pd.DataFrame
    winners: dict  # (target, method) -> row dict
    models: dict = field(default_factory=dict)  # (d_z, method, k) -> ClusterModel


def hyperparameter_search(
    corpus: SearchCorpus,
    targets: tuple[str, ...] = ("density", "income", "education"),
    methods: tuple[str, ...] = ("kmeans", "dec"),
    d_z_grid: tuple[int, ...] = (32, 64),
    k_grid: tuple[int, ...] = (50, 100, 200),
    dec_extra_k: tuple[int, ...] = (20,),
    feature_modes: tuple[str, ...] = FEATURE_MODES,
    rf_grid: dict | None = None,
    seed: int = 0,
    ae_epochs: int = 40,
    dec_epochs: int = 20,
    distance_weight: float = 0.1,
    keep_models: bool = True,
) -> SearchResult:
    """Exhaustive grid evaluation on the validation split.

    Cluster models are fit on training-split patches only; the scaler too.
    The leaderboard holds every evaluated configuration; winners are picked
    per (target, method) by validation R², ties broken toward smaller k,
    then smaller latent dimension, then frequency features, then the smaller
    forest.
    """
    rf_grid = rf_grid or DEFAULT_RF_GRID
    train_mask = corpus.mask("train")
    val_mask = corpus.mask("val")
    if not train_mask.any() or not val_mask.any():
        raise InputError("corpus must contain train and val patches")
    f_train = corpus.features[train_mask]
    scaler = fit_scaler(f_train)

    rows = []
    models = {}
    for d_z in d_z_grid:
        stage1, _ = train_autoencoder(f_train, d_z, seed=seed, epochs=ae_epochs, scaler=scaler)
        for method in methods:
            k_values = tuple(k_grid) + (tuple(dec_extra_k) if method == "dec" else ())
            for k in sorted(set(k_values)):
                if method == "kmeans":
                    model = make_kmeans_model(stage1, f_train, k, seed=seed)
                else:
                    model = train_dec(
                        stage1, f_train, k, distance_weight=distance_weight,
                        epochs=dec_epochs, seed=seed,
                    )
                if keep_models:
                    models[(d_z, method, k)] = model
                for mode in feature_modes:
                    x_tr = hood_features(model, f_train, corpus.geoids[train_mask], mode)
                    x_val = hood_features(model, corpus.features[val_mask], corpus.geoids[val_mask], mode)
                    for combo in itertools.product(*rf_grid.values()):
                        params = dict(zip(rf_grid.keys(), combo))
                        for target in targets:
                            col = f"label_{target}"
                            y_tr = corpus.labels.loc[x_tr.index, col].to_numpy()
                            y_val = corpus.labels.loc[x_val.index, col].to_numpy()
                            rf = fit_regressor(x_tr, y_tr, params, seed=seed)
                            mae, r2, _ = score(y_val, rf.predict(np.asarray(x_val)))
                            rows.append(
                                {
                                    "target": target,
                                    "method": method,
                                    "d_z": d_z,
                                    "k": k,
                                    "feature_mode": mode,
                                    **{key: (-1 if value is None else value) for key, value in params.items()},
                                    "val_mae": mae,
                                    "val_r2": r2,
                                }
                            )
                log.info("searched d_z=%d method=%s k=%d", d_z, method, k)
    leaderboard = pd.DataFrame(rows)
    return SearchResult(leaderboard=leaderboard, winners=pick_winners(leaderboard), models=models)


def pick_winners(leaderboard: pd.DataFrame) -> dict:
    """Best configuration per (target, method) by validation R².

    Ties break toward smaller k, then smaller latent dimension, then
    frequency features, then the smaller forest.
    """
    winners = {}
    for (target, method), sub in leaderboard.groupby(["target", "method"]):
        sort_cols = ["val_r2", "k", "d_z", "feature_mode"]
        ascending = [False, True, True, True]
        if "n_estimators" in sub.columns:
            sort_cols.append("n_estimators")
            ascending.append(True)
        sub = sub.sort_values(by=sort_cols, ascending=ascending, kind="mergesort")
        winners[(target, method)] = sub.iloc[0].to_dict()
    return winners
