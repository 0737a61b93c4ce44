"""Derived neighborhood indicators and record filtering.

Three indicators are computed from the survey variables and the masked crop:

* educational attainment: percent of the 25+ population holding at least a
  bachelor's degree,
* area: nonzero (in-polygon) pixel count times gsd squared, in square meters,
* population density: persons per square kilometer.

Records with zero population, zero 25+ population, or any missing required
survey field are dropped with a machine-readable reason before any model
sees them.
"""

from __future__ import annotations

from dataclasses import dataclass

import pandas as pd

from .errors import DegenerateGeometryError, UndefinedMetricError

LABELS_MANIFEST_NAME = "labels_manifest.csv"
DROPPED_SIDECAR_NAME = "labels_dropped.csv"

REASON_ZERO_POPULATION = "zero_population"
REASON_CENSUS_ERROR = "census_error"
REASON_ZERO_POP_OVER_25 = "zero_population_over_25"
REASON_DEGENERATE_GEOMETRY = "degenerate_geometry"


@dataclass
class NeighborhoodRecord:
    """One retained neighborhood with labels attached."""

    geoid: str
    area_m2: float
    density: float
    median_income: float
    education: float
    crop_path: str
    crop_height: int
    crop_width: int


def education_attainment(bachelors: int, masters: int, professional: int, doctorate: int, pop_over_25: int) -> float:
    """Percent of the 25+ population whose highest degree is at least a bachelor's."""
    if pop_over_25 <= 0:
        raise UndefinedMetricError("educational attainment undefined for pop_over_25 <= 0")
    for name, count in (
        ("bachelors", bachelors),
        ("masters", masters),
        ("professional", professional),
        ("doctorate", doctorate),
    ):
        if count < 0:
            raise UndefinedMetricError(f"negative degree count {name}={count}")
    return 100.0 * (bachelors + masters + professional + doctorate) / pop_over_25


def area_from_mask(nonzero_pixel_count: int, gsd: float) -> float:
    """Neighborhood area in m²: each nonzero pixel covers gsd² square meters."""
    if nonzero_pixel_count <= 0:
        raise DegenerateGeometryError("neighborhood mask has no nonzero pixels")
    if gsd <= 0:
        raise DegenerateGeometryError(f"gsd must be positive, got {gsd}")
    return float(nonzero_pixel_count) * gsd * gsd


def density(total_pop: float, area_m2: float) -> float:
    """Population density in persons per square kilometer."""
    if area_m2 <= 0:
        raise DegenerateGeometryError(f"area must be positive, got {area_m2}")
    return 1e6 * total_pop / area_m2


def filter_records(manifest: pd.DataFrame) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Split an ingest manifest into (retained, dropped) label tables.

    Retained rows carry the derived indicators; dropped rows carry a reason
    code. The two outputs partition the input, and filtering an already
    filtered table is a no-op.
    """
    required = [
        "total_pop",
        "pop_over_25",
        "median_income",
        "bachelors",
        "masters",
        "professional",
        "doctorate",
    ]
    retained_rows = []
    dropped_rows = []
    for _, row in manifest.iterrows():
        reason = None
        missing = [f for f in required if pd.isna(row[f]) or row[f] == ""]
        if missing:
            reason = REASON_CENSUS_ERROR
        elif float(row["total_pop"]) == 0:
            reason = REASON_ZERO_POPULATION
        elif float(row["pop_over_25"]) == 0:
            reason = REASON_ZERO_POP_OVER_25
        elif int(row["nonzero_count"]) <= 0:
            reason = REASON_DEGENERATE_GEOMETRY
        if reason is not None:
            dropped_rows.append({"geoid": row["geoid"], "reason": reason})
            continue
        area = area_from_mask(int(row["nonzero_count"]), float(row["gsd"]))
        retained_rows.append(
            {
                "geoid": row["geoid"],
                "crop_path": row["crop_path"],
                "height": int(row["height"]),
                "width": int(row["width"]),
                "gsd": float(row["gsd"]),
                "area_m2": area,
                "label_density": density(float(row["total_pop"]), area),
                "label_income": float(row["median_income"]),
                "label_education": education_attainment(
                    int(row["bachelors"]),
                    int(row["masters"]),
                    int(row["professional"]),
                    int(row["doctorate"]),
                    int(row["pop_over_25"]),
                ),
                "total_pop": int(row["total_pop"]),
            }
        )
    retained = pd.DataFrame(
        retained_rows,
        columns=[
            "geoid",
            "crop_path",
            "height",
            "width",
            "gsd",
            "area_m2",
            "label_density",
            "label_income",
            "label_education",
            "total_pop",
        ],
    )
    dropped = pd.DataFrame(dropped_rows, columns=["geoid", "reason"])
    retained = retained.sort_values("geoid").reset_index(drop=True)
    dropped = dropped.sort_values("geoid").reset_index(drop=True)
    return retained, dropped
