"""Survey-variable acquisition for census block groups.

Talks to an ACS-style HTTP endpoint returning JSON arrays (header row first),
or reads the same payload from a local fixture file for offline runs. Sentinel
"jam" values that the survey product uses for suppressed or non-computable
cells are mapped to an explicit missing marker (``None``), never to zero.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import EmptyResultError, ParseError, RetryableError

log = logging.getLogger(__name__)

# Default variable-code mapping. The survey product names the concepts; codes
# are configuration so a different vintage or product can be swapped in.
DEFAULT_VARIABLE_MAP: dict[str, str] = {
    "total_pop": "B01003_001E",
    "pop_over_25": "B15003_001E",
    "median_income": "B19013_001E",
    "bachelors": "B15003_022E",
    "masters": "B15003_023E",
    "professional": "B15003_024E",
    "doctorate": "B15003_025E",
}

DEFAULT_ENDPOINT = "https://api.census.gov/data/{year}/acs/acs5"

# Documented jam codes: negative placeholders for suppressed/non-computable cells.
JAM_VALUES = frozenset(
    {
        -111111111,
        -222222222,
        -333333333,
        -444444444,
        -555555555,
        -666666666,
        -888888888,
        -999999999,
    }
)

REQUIRED_FIELDS = (
    "total_pop",
    "pop_over_25",
    "median_income",
    "bachelors",
    "masters",
    "professional",
    "doctorate",
)


@dataclass(frozen=True)
class SurveyRow:
    """Survey variables for one block group; ``None`` marks a missing value."""

    geoid: str
    total_pop: int | None
    pop_over_25: int | None
    median_income: float | None
    bachelors: int | None
    masters: int | None
    professional: int | None
    doctorate: int | None
    year: int

    @property
    def degree_counts(self) -> tuple[int | None, int | None, int | None, int | None]:
        return (self.bachelors, self.masters, self.professional, self.doctorate)

    def missing_fields(self) -> list[str]:
        return [f for f in REQUIRED_FIELDS if getattr(self, f) is None]


def parse_cell(raw, field: str):
    """One survey cell to a number, or None for missing/jam values."""
    if raw is None or raw == "":
        return None
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"survey field {field!r}: cannot parse value {raw!r}") from None
    if value in JAM_VALUES or value < -100000000:
        return None
    if value != int(value):
        return value
    return int(value)


def _rows_from_payload(payload, variable_map: dict[str, str], year: int) -> list[SurveyRow]:
    if not isinstance(payload, list) or not payload or not isinstance(payload[0], list):
        raise ParseError("survey response is not a JSON array-of-arrays with a header row")
    header = payload[0]
    idx = {name: i for i, name in enumerate(header)}
    for field, code in variable_map.items():
        if code not in idx:
            raise ParseError(f"survey response missing column {code!r} (field {field!r})")
    geo_cols = ("state", "county", "tract", "block group")
    for col in geo_cols:
        if col not in idx:
            raise ParseError(f"survey response missing geography column {col!r}")
    rows = []
    for raw in payload[1:]:
        geoid = "".join(str(raw[idx[c]]) for c in geo_cols)
        if len(geoid) != 12:
            raise ParseError(f"geography columns for row {raw!r} do not form a 12-char geoid")
        values = {field: parse_cell(raw[idx[code]], field) for field, code in variable_map.items()}
        rows.append(SurveyRow(geoid=geoid, year=year, **values))
    rows.sort(key=lambda r: r.geoid)
    return rows


def fetch_survey(
    state_fips: str,
    county_fips: str,
    year: int,
    endpoint: str = DEFAULT_ENDPOINT,
    variable_map: dict[str, str] | None = None,
    fixture: str | Path | None = None,
    timeout: float = 60.0,
    retries: int = 3,
    retry_wait: float = 1.0,
) -> list[SurveyRow]:
    """Fetch one county's block-group survey rows, sorted by geoid.

    With ``fixture`` set, the payload is read from a local JSON file in the
    same array-of-arrays format the live endpoint returns, and no network
    access happens. An empty result (county unknown to the product) raises
    :class:`EmptyResultError`.
    """
    variable_map = dict(variable_map or DEFAULT_VARIABLE_MAP)
    if fixture is not None:
        payload = json.loads(Path(fixture).read_text())
    else:
        url = endpoint.format(year=year)
        params = {
            "get": ",".join(variable_map.values()),
            "for": "block group:*",
            "in": f"state:{state_fips} county:{county_fips}",
        }
        payload = _get_with_retry(url, params, timeout=timeout, retries=retries, wait=retry_wait)
    rows = _rows_from_payload(payload, variable_map, year)
    rows = [r for r in rows if r.geoid[:2] == state_fips and r.geoid[2:5] == county_fips] or rows
    if not rows:
        raise EmptyResultError(
            f"no block groups returned for state {state_fips} county {county_fips} year {year}"
        )
    return rows


def _get_with_retry(url: str, params: dict, timeout: float, retries: int, wait: float):
    last = None
    for attempt in range(retries):
        try:
            resp = requests.get(url, params=params, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
            last = exc
            log.warning("survey request failed (attempt %d/%d): %s", attempt + 1, retries, exc)
            if attempt + 1 < retries:
                time.sleep(wait * (2**attempt))
        except ValueError as exc:
            raise ParseError(f"survey response is not valid JSON: {exc}") from exc
    raise RetryableError(f"survey endpoint unreachable after {retries} attempts: {last}")


def write_fixture(path: str | Path, rows: list[list], variable_map: dict[str, str] | None = None) -> None:
    """Write a payload in endpoint format; helper for synthetic corpora and tests."""
    Path(path).write_text(json.dumps(rows))
