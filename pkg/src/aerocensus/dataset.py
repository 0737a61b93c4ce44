"""Dataset manifests and deterministic train/validation/test splitting.

A manifest is a delimited table, one row per model input item, carrying the
item's file path, its neighborhood, its labels, and its split assignment.
Manifests are the only hand-off between pipeline stages.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyInputError

SPLITS = ("train", "val", "test")


def split_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Floor/floor/remainder allocation of n items to train/val/test."""
    n_train = math.floor(fractions[0] * n)
    n_val = math.floor(fractions[1] * n)
    return n_train, n_val, n - n_train - n_val


def split(
    items: pd.DataFrame,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
    group_by: str = "item",
) -> pd.DataFrame:
    """Assign each item to train/val/test.

    Items are canonicalized by item_id before shuffling so the assignment
    depends only on (item set, seed). With ``group_by="neighborhood"`` whole
    neighborhoods move together: the floor/floor/remainder rule is applied to
    the neighborhood count and every patch follows its neighborhood, so no
    geoid appears in two splits.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if group_by not in ("item", "neighborhood"):
        raise ConfigError(f"group_by must be 'item' or 'neighborhood', got {group_by!r}")
    if items.empty:
        raise EmptyInputError("cannot split an empty item table")
    items = items.sort_values("item_id").reset_index(drop=True)
    rng = np.random.default_rng(seed)
    if group_by == "item":
        n = len(items)
        n_train, n_val, _ = split_sizes(n, fractions)
        perm = rng.permutation(n)
        labels = np.empty(n, dtype=object)
        labels[perm[:n_train]] = "train"
        labels[perm[n_train : n_train + n_val]] = "val"
        labels[perm[n_train + n_val :]] = "test"
        items = items.assign(split=labels)
    else:
        geoids = np.array(sorted(items["geoid"].astype(str).unique()))
        g = len(geoids)
        n_train, n_val, _ = split_sizes(g, fractions)
        perm = rng.permutation(g)
        assignment = {}
        for i, gi in enumerate(perm):
            if i < n_train:
                assignment[geoids[gi]] = "train"
            elif i < n_train + n_val:
                assignment[geoids[gi]] = "val"
            else:
                assignment[geoids[gi]] = "test"
        items = items.assign(split=items["geoid"].astype(str).map(assignment))
    return items


def write_manifest(path: str | Path, items: pd.DataFrame, meta: dict | None = None) -> None:
    """Write a manifest CSV plus a small JSON sidecar with split metadata."""
    path = Path(path)
    items.to_csv(path, index=False)
    if meta is not None:
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_manifest(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    df = pd.read_csv(path, dtype={"geoid": str, "item_id": str})
    return df


def manifest_meta(path: str | Path) -> dict:
    sidecar = Path(path).with_suffix(".meta.json")
    return json.loads(sidecar.read_text()) if sidecar.exists() else {}
