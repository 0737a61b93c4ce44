"""Evaluation metrics and reports.

MAE is the mean absolute error in the target's natural units; R² is
1 − SS_res/SS_tot. A zero-variance truth vector makes R² undefined, which is
reported as 0 with an explicit flag rather than NaN so synthetic corpora
cannot silently poison comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InputError


def score(truth, predictions) -> tuple[float, float, bool]:
    """(MAE, R², zero_variance_flag) for equal-length nonempty vectors."""
    y = np.asarray(truth, np.float64)
    yhat = np.asarray(predictions, np.float64)
    if y.shape != yhat.shape:
        raise InputError(f"length mismatch: truth {y.shape} vs predictions {yhat.shape}")
    if y.size == 0:
        raise InputError("cannot score empty vectors")
    mae = float(np.abs(y - yhat).mean())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return mae, 0.0, True
    ss_res = float(((y - yhat) ** 2).sum())
    return mae, 1.0 - ss_res / ss_tot, False


@dataclass
class EvaluationReport:
    target: str
    method: str  # e.g. "supervised_resizing", "bovw_kmeans"
    split: str
    mae: float
    r2: float
    zero_variance: bool = False
    per_item: pd.DataFrame = field(default_factory=pd.DataFrame)  # geoid, truth, prediction
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "target": self.target,
            "method": self.method,
            "split": self.split,
            "mae": self.mae,
            "r2": self.r2,
            "zero_variance": self.zero_variance,
            "n_items": int(len(self.per_item)),
            **self.extra,
        }

    def write(self, directory: str | Path, stem: str | None = None) -> Path:
        """Per-item CSV plus JSON summary; returns the summary path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.method}_{self.target}_{self.split}"
        self.per_item.to_csv(directory / f"{stem}.csv", index=False)
        summary_path = directory / f"{stem}.json"
        summary_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return summary_path


def evaluate_predictions(
    truth_by_geoid: pd.DataFrame,
    predictions: pd.DataFrame,
    target: str,
    method: str,
    split: str,
    label_column: str | None = None,
) -> EvaluationReport:
    """Join geoid-keyed predictions against labels and score them."""
    label_column = label_column or f"label_{target}"
    labels = truth_by_geoid.set_index("geoid") if "geoid" in truth_by_geoid.columns else truth_by_geoid
    merged = predictions.copy()
    merged["truth"] = merged["geoid"].map(labels[label_column]).astype(float)
    if merged["truth"].isna().any():
        missing = merged.loc[merged["truth"].isna(), "geoid"].tolist()[:5]
        raise InputError(f"predictions reference geoids without labels, e.g. {missing}")
    mae, r2, flag = score(merged["truth"].to_numpy(), merged["prediction"].to_numpy())
    per_item = merged[["geoid", "truth", "prediction"]].sort_values("geoid").reset_index(drop=True)
    return EvaluationReport(
        target=target, method=method, split=split, mae=mae, r2=r2, zero_variance=flag, per_item=per_item
    )
