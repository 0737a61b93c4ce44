"""Neighborhood boundary loading.

Boundaries arrive as GeoJSON feature collections carrying a GEOID attribute.
Invalid geometries are repaired where possible; irreparable ones are rejected
with a reason so ingestion stays total.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from shapely.geometry import MultiPolygon, Polygon, shape
from shapely.validation import make_valid

from .errors import EmptyInputError, SchemaError

log = logging.getLogger(__name__)


@dataclass
class BoundaryRecord:
    geoid: str
    polygon: Polygon | MultiPolygon
    state_fips: str = ""
    county_fips: str = ""
    properties: dict = field(default_factory=dict)
    repaired: bool = False


@dataclass
class BoundaryLoadResult:
    records: list[BoundaryRecord]
    rejected: list[dict]  # {"geoid": ..., "reason": ...}

    def by_geoid(self) -> dict[str, BoundaryRecord]:
        return {r.geoid: r for r in self.records}


def _find_geoid(properties: dict) -> str | None:
    for key in properties:
        if key.upper() == "GEOID":
            return str(properties[key])
    return None


def load_boundaries(path: str | Path) -> BoundaryLoadResult:
    """Load boundary polygons keyed by geoid from a GeoJSON file.

    Self-intersecting polygons are repaired with ``make_valid``; features whose
    repair yields no polygonal area are rejected. Duplicate geoids are a schema
    error since every downstream join is keyed on geoid.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    features = doc.get("features", []) if isinstance(doc, dict) else []
    if not features:
        raise EmptyInputError(f"{path}: no features found")
    records: list[BoundaryRecord] = []
    rejected: list[dict] = []
    seen: set[str] = set()
    for i, feat in enumerate(features):
        props = feat.get("properties") or {}
        geoid = _find_geoid(props)
        if geoid is None:
            raise SchemaError(f"{path}: feature {i} has no GEOID attribute")
        if geoid in seen:
            raise SchemaError(f"{path}: duplicate geoid {geoid}")
        seen.add(geoid)
        try:
            geom = shape(feat["geometry"])
        except (KeyError, AttributeError, ValueError) as exc:
            rejected.append({"geoid": geoid, "reason": f"unreadable geometry: {exc}"})
            continue
        repaired = False
        if not geom.is_valid:
            geom = _polygonal(make_valid(geom))
            repaired = True
            if geom is None or geom.is_empty:
                rejected.append({"geoid": geoid, "reason": "invalid geometry, repair yielded no area"})
                continue
        elif geom.geom_type not in ("Polygon", "MultiPolygon"):
            rejected.append({"geoid": geoid, "reason": f"non-polygonal geometry {geom.geom_type}"})
            continue
        records.append(
            BoundaryRecord(
                geoid=geoid,
                polygon=geom,
                state_fips=str(props.get("STATEFP", geoid[:2])),
                county_fips=str(props.get("COUNTYFP", geoid[2:5])),
                properties=props,
                repaired=repaired,
            )
        )
    if rejected:
        log.warning("rejected %d boundary features", len(rejected))
    records.sort(key=lambda r: r.geoid)
    return BoundaryLoadResult(records=records, rejected=rejected)


def _polygonal(geom):
    """Largest-area polygonal component of a repaired geometry, or None."""
    if geom.geom_type in ("Polygon", "MultiPolygon"):
        return geom
    if geom.geom_type == "GeometryCollection":
        polys = [g for g in geom.geoms if g.geom_type in ("Polygon", "MultiPolygon")]
        if not polys:
            return None
        if len(polys) == 1:
            return polys[0]
        flat = []
        for g in polys:
            flat.extend(g.geoms if g.geom_type == "MultiPolygon" else [g])
        return MultiPolygon(flat)
    return None


def write_boundaries(path: str | Path, records: list[BoundaryRecord]) -> None:
    """Write records back out as GeoJSON (used by the synthetic generator)."""
    from shapely.geometry import mapping

    features = []
    for rec in sorted(records, key=lambda r: r.geoid):
        props = {"GEOID": rec.geoid, "STATEFP": rec.state_fips, "COUNTYFP": rec.county_fips}
        props.update({k: v for k, v in rec.properties.items() if k not in props})
        features.append(
            {"type": "Feature", "properties": props, "geometry": mapping(rec.polygon)}
        )
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": features}))
