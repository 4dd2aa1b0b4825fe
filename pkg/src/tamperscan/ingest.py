"""Parsing and cleaning of demographic profile tables and election returns.

The pipeline is: parse each delimiter-separated file verbatim, drop
margin-of-error and duplicate feature columns, drop columns that are missing
or non-numeric for any county, inner-join everything on FIPS, exclude
Alaska, and append prior-election vote shares as extra features. Every drop
is recorded in a CleaningReport with a machine-readable reason code; nothing
is imputed.
"""

from __future__ import annotations

import csv
import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import CountyKey, Dataset, VoteTally
from .errors import ConfigError, DataError, FetchError, SchemaError
from .fips import normalize_fips, state_for_fips

SOURCE_IDS = ("DP02", "DP03", "DP05", "election")
_TABLE_PRECEDENCE = {"DP02": 0, "DP03": 1, "DP05": 2}

# Column identifiers that mark margin-of-error estimates rather than values.
DEFAULT_MOE_PATTERN = re.compile(r"(?i)(?:^|_|\W)moe(?:$|_|\W)|margin\s+of\s+error")

# Headers recognized as the county display-name column (never a feature).
_NAME_HEADERS = {"name", "county", "county_name", "geographic area name"}

DATASET_FORMAT = "tamperscan-dataset"
DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RawTable:
    """One parsed file: verbatim string cells keyed by normalized FIPS."""

    source_id: str
    columns: tuple[str, ...]
    rows: dict[str, tuple[str, ...]]
    names: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.source_id not in SOURCE_IDS:
            raise ConfigError(
                f"unknown source_id {self.source_id!r}; expected one of {SOURCE_IDS}"
            )


@dataclass(frozen=True)
class FeatureTable:
    """Joined numeric features over the counties shared by every table."""

    fips: tuple[str, ...]
    names: tuple[str, ...]
    values: np.ndarray
    county_names: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ElectionTable:
    year: int
    tallies: dict[str, VoteTally]
    names: dict[str, str] = field(default_factory=dict)


@dataclass
class CleaningReport:
    """Everything the cleaning pass removed, and why."""

    dropped_moe_columns: list = field(default_factory=list)
    dropped_duplicate_columns: list = field(default_factory=list)
    dropped_missing_columns: list = field(default_factory=list)
    dropped_counties: list = field(default_factory=list)

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        return CleaningReport(
            dropped_moe_columns=self.dropped_moe_columns + other.dropped_moe_columns,
            dropped_duplicate_columns=self.dropped_duplicate_columns
            + other.dropped_duplicate_columns,
            dropped_missing_columns=self.dropped_missing_columns
            + other.dropped_missing_columns,
            dropped_counties=self.dropped_counties + other.dropped_counties,
        )

    def to_dict(self) -> dict:
        return {
            "dropped_moe_columns": self.dropped_moe_columns,
            "dropped_duplicate_columns": self.dropped_duplicate_columns,
            "dropped_missing_columns": self.dropped_missing_columns,
            "dropped_counties": self.dropped_counties,
        }


def parse_table(path, source_id: str, delimiter: str = ",") -> RawTable:
    """Parse one header-rowed delimited file, cells kept verbatim.

    The fips column (matched case-insensitively) is normalized to 5 digits;
    a county display-name column, when present, is captured separately and
    excluded from the feature columns. Ragged rows and repeated fips are
    hard errors.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        stripped = [h.strip() for h in header]
        lowered = [h.lower() for h in stripped]
        if "fips" not in lowered:
            raise SchemaError(f"{path}: no fips column in header")
        fips_idx = lowered.index("fips")
        name_idx = next((i for i, h in enumerate(lowered) if h in _NAME_HEADERS), None)
        feature_idx = [
            i for i in range(len(header)) if i != fips_idx and i != name_idx
        ]
        columns = tuple(stripped[i] for i in feature_idx)
        if len(set(columns)) != len(columns):
            dupes = sorted({c for c in columns if columns.count(c) > 1})
            raise SchemaError(f"{path}: repeated column headers {dupes}")

        rows: dict[str, tuple[str, ...]] = {}
        names: dict[str, str] = {}
        for row in reader:
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {reader.line_num} has {len(row)} cells, "
                    f"header has {len(header)}"
                )
            fips = normalize_fips(row[fips_idx])
            if fips in rows:
                raise DataError(f"{path}: duplicate fips {fips}")
            rows[fips] = tuple(row[i] for i in feature_idx)
            if name_idx is not None and row[name_idx].strip():
                names[fips] = row[name_idx].strip()
    return RawTable(source_id=source_id, columns=columns, rows=rows, names=names)


def _to_float(cell: str) -> float | None:
    s = cell.strip().replace(",", "")
    if not s:
        return None
    try:
        return float(s)
    except ValueError:
        return None


def clean_features(tables, moe_pattern=None) -> tuple[FeatureTable, CleaningReport]:
    """Apply the column-cleaning rules to demographic tables, in order:
    margin-of-error columns out, duplicate identifiers resolved by
    DP02 > DP03 > DP05 precedence, then any column not fully numeric over
    the common counties. Survivors are parsed to reals."""
    tables = list(tables)
    if not tables:
        raise ConfigError("clean_features needs at least one table")
    for t in tables:
        if t.source_id == "election":
            raise ConfigError("election tables do not belong in clean_features")
    if len({t.source_id for t in tables}) != len(tables):
        raise ConfigError("duplicate source_id among feature tables")
    pattern = moe_pattern or DEFAULT_MOE_PATTERN
    tables.sort(key=lambda t: _TABLE_PRECEDENCE[t.source_id])
    report = CleaningReport()

    # common counties across all tables; drops reported once per county
    common = set(tables[0].rows)
    for t in tables[1:]:
        common &= set(t.rows)
    all_fips = set()
    for t in tables:
        all_fips |= set(t.rows)
    for f in sorted(all_fips - common):
        absent = [t.source_id for t in tables if f not in t.rows]
        report.dropped_counties.append(
            {"fips": f, "reason": "not_in_all_feature_tables", "detail": absent}
        )
    fips_order = tuple(sorted(common))

    kept: list[tuple[str, str]] = []  # (source_id, column)
    seen_names: dict[str, str] = {}
    for t in tables:
        for col in t.columns:
            if pattern.search(col):
                report.dropped_moe_columns.append(
                    {"table": t.source_id, "column": col, "reason": "margin_of_error"}
                )
                continue
            if col in seen_names:
                report.dropped_duplicate_columns.append(
                    {
                        "table": t.source_id,
                        "column": col,
                        "reason": "duplicate_feature",
                        "kept_in": seen_names[col],
                    }
                )
                continue
            seen_names[col] = t.source_id
            kept.append((t.source_id, col))

    by_source = {t.source_id: t for t in tables}
    names: list[str] = []
    columns: list[np.ndarray] = []
    for source_id, col in kept:
        t = by_source[source_id]
        j = t.columns.index(col)
        parsed = [_to_float(t.rows[f][j]) for f in fips_order]
        bad = sum(v is None for v in parsed)
        if bad:
            report.dropped_missing_columns.append(
                {
                    "table": source_id,
                    "column": col,
                    "reason": "missing_or_non_numeric",
                    "bad_cells": bad,
                }
            )
            continue
        names.append(col)
        columns.append(np.array(parsed, dtype=np.float64))
    if not names:
        raise DataError("no feature columns survive cleaning")

    county_names: dict[str, str] = {}
    for t in tables:
        for f, n in t.names.items():
            county_names.setdefault(f, n)
    values = np.column_stack(columns) if fips_order else np.empty((0, len(names)))
    return (
        FeatureTable(
            fips=fips_order,
            names=tuple(names),
            values=values,
            county_names=county_names,
        ),
        report,
    )


def _to_votes(cell: str, column: str, fips: str) -> int:
    s = cell.strip().replace(",", "")
    try:
        v = int(s)
    except ValueError:
        raise DataError(
            f"county {fips}: {column}={cell!r} is not an integer vote count"
        ) from None
    if v < 0:
        raise DataError(f"county {fips}: negative {column} {v}")
    return v


def parse_election(path, year: int, delimiter: str = ",") -> ElectionTable:
    """Parse election returns: columns fips, rep_votes, dem_votes."""
    table = parse_table(path, "election", delimiter=delimiter)
    lowered = [c.lower() for c in table.columns]
    try:
        rep_idx = lowered.index("rep_votes")
        dem_idx = lowered.index("dem_votes")
    except ValueError:
        raise SchemaError(
            f"{path}: election file needs rep_votes and dem_votes columns, "
            f"found {list(table.columns)}"
        ) from None
    tallies = {}
    for fips, cells in table.rows.items():
        tallies[fips] = VoteTally(
            year=year,
            rep_votes=_to_votes(cells[rep_idx], "rep_votes", fips),
            dem_votes=_to_votes(cells[dem_idx], "dem_votes", fips),
        )
    return ElectionTable(year=year, tallies=tallies, names=table.names)


def assemble_dataset(
    features: FeatureTable, elections, target_year: int
) -> tuple[Dataset, CleaningReport]:
    """Inner-join features and elections on FIPS into a Dataset.

    Alaska is excluded entirely. Vote shares from every non-target election
    year are appended as features named share_<year> (skipped when a column
    of that name already exists, which keeps re-assembly idempotent).
    Counties failing the join, lacking a usable state, or with a zero
    two-party total in any year are dropped and reported.
    """
    by_year: dict[int, ElectionTable] = {}
    for e in elections:
        if e.year in by_year:
            raise ConfigError(f"two election tables for year {e.year}")
        by_year[e.year] = e
    if target_year not in by_year:
        raise ConfigError(f"no election table for target year {target_year}")
    years = sorted(by_year)
    report = CleaningReport()

    feature_fips = set(features.fips)
    for year in years:
        for f in sorted(set(by_year[year].tallies) - feature_fips):
            if not any(d["fips"] == f for d in report.dropped_counties):
                report.dropped_counties.append(
                    {"fips": f, "reason": "not_in_demographics"}
                )

    kept: list[str] = []
    for f in features.fips:
        missing = [y for y in years if f not in by_year[y].tallies]
        if missing:
            report.dropped_counties.append(
                {"fips": f, "reason": "absent_from_election", "detail": missing}
            )
            continue
        state = state_for_fips(f)
        if state is None:
            report.dropped_counties.append({"fips": f, "reason": "unknown_state_fips"})
            continue
        if state == "AK":
            report.dropped_counties.append({"fips": f, "reason": "alaska"})
            continue
        zero_years = [y for y in years if by_year[y].tallies[f].total == 0]
        if zero_years:
            report.dropped_counties.append(
                {"fips": f, "reason": "zero_two_party_total", "detail": zero_years}
            )
            continue
        kept.append(f)
    if not kept:
        raise ConfigError("no counties left after join and cleaning")

    row_of = {f: i for i, f in enumerate(features.fips)}
    idx = np.array([row_of[f] for f in kept], dtype=np.intp)
    X = features.values[idx]
    names = list(features.names)
    for year in years:
        if year == target_year:
            continue
        col_name = f"share_{year}"
        if col_name in names:
            continue
        t = by_year[year].tallies
        shares = np.array(
            [t[f].rep_votes / t[f].total for f in kept], dtype=np.float64
        )
        X = np.column_stack([X, shares])
        names.append(col_name)

    def display_name(f: str) -> str:
        if f in features.county_names:
            return features.county_names[f]
        for year in years:
            if f in by_year[year].names:
                return by_year[year].names[f]
        return f

    keys = [
        CountyKey(fips=f, state=state_for_fips(f), name=display_name(f)) for f in kept
    ]
    rep = {
        y: np.array([by_year[y].tallies[f].rep_votes for f in kept], dtype=np.int64)
        for y in years
    }
    dem = {
        y: np.array([by_year[y].tallies[f].dem_votes for f in kept], dtype=np.int64)
        for y in years
    }
    dataset = Dataset.build(
        keys=keys, feature_names=names, X=X, rep=rep, dem=dem, target_year=target_year
    )
    return dataset, report


def fetch_acs(endpoint: str, year: int, table_ids, cache_dir, transport=None):
    """Download (or reuse cached) survey tables, then parse them.

    `endpoint` may contain {year} and {table} placeholders; otherwise the
    path <endpoint>/<year>/<table>.csv is used. A present cache file skips
    the network entirely. `transport` is a callable url -> bytes, injectable
    for testing; the default uses urllib.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    if transport is None:
        transport = _urllib_transport
    tables = []
    for table_id in table_ids:
        cache_file = cache_dir / f"acs_{year}_{table_id}.csv"
        if not cache_file.exists():
            if "{" in endpoint:
                url = endpoint.format(year=year, table=table_id)
            else:
                url = f"{endpoint.rstrip('/')}/{year}/{table_id}.csv"
            payload = transport(url)
            tmp = cache_file.with_suffix(".tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, cache_file)
        tables.append(parse_table(cache_file, table_id))
    return tables


def _urllib_transport(url: str) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=60) as resp:
            return resp.read()
    except urllib.error.HTTPError as err:
        raise FetchError(f"HTTP {err.code} fetching {url}") from err
    except urllib.error.URLError as err:
        raise FetchError(f"network failure fetching {url}: {err.reason}") from err


# --- canonical dataset files ------------------------------------------------

def save_dataset(dataset: Dataset, csv_path, manifest_hash: str = "") -> None:
    """Write the canonical dataset pair: <csv_path> and <stem>_meta.json.

    Floats are written with repr so a load is bit-for-bit faithful.
    """
    csv_path = Path(csv_path)
    years = dataset.years
    header = ["fips", "state", "name"]
    for y in years:
        header += [f"rep_{y}", f"dem_{y}"]
    header += list(dataset.feature_names)
    with open(csv_path, "w", newline="") as fh:
        if manifest_hash:
            fh.write(f"# manifest_sha256={manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, key in enumerate(dataset.keys):
            row = [key.fips, key.state, key.name]
            for y in years:
                row += [str(int(dataset.rep[y][i])), str(int(dataset.dem[y][i]))]
            row += [repr(float(v)) for v in dataset.X[i]]
            writer.writerow(row)
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_FORMAT_VERSION,
        "target_year": dataset.target_year,
        "years": list(years),
        "n_counties": dataset.n,
        "n_features": dataset.p,
        "feature_names": list(dataset.feature_names),
        "manifest_sha256": manifest_hash,
    }
    with open(_meta_path(csv_path), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + "_meta.json")


def load_dataset(csv_path) -> Dataset:
    """Read a canonical dataset pair back into memory."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DataError(f"dataset file not found: {csv_path}")
    meta_path = _meta_path(csv_path)
    if not meta_path.exists():
        raise SchemaError(f"missing dataset metadata file {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{meta_path}: not a dataset metadata file")
    if meta.get("version") != DATASET_FORMAT_VERSION:
        raise SchemaError(f"{meta_path}: unsupported version {meta.get('version')!r}")
    years = [int(y) for y in meta["years"]]
    feature_names = list(meta["feature_names"])

    with open(csv_path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    expected = ["fips", "state", "name"]
    for y in years:
        expected += [f"rep_{y}", f"dem_{y}"]
    expected += feature_names
    if header != expected:
        raise SchemaError(f"{csv_path}: header does not match metadata")

    keys, rep_cols, dem_cols, feat_rows = [], {y: [] for y in years}, {y: [] for y in years}, []
    for row in reader:
        if len(row) != len(header):
            raise DataError(f"{csv_path}: ragged data row for fips {row[0] if row else '?'}")
        keys.append(CountyKey(fips=row[0], state=row[1], name=row[2]))
        pos = 3
        for y in years:
            rep_cols[y].append(int(row[pos]))
            dem_cols[y].append(int(row[pos + 1]))
            pos += 2
        feat_rows.append([float(v) for v in row[pos:]])
    X = np.array(feat_rows, dtype=np.float64).reshape(len(keys), len(feature_names))
    return Dataset.build(
        keys=keys,
        feature_names=feature_names,
        X=X,
        rep={y: np.array(rep_cols[y], dtype=np.int64) for y in years},
        dem={y: np.array(dem_cols[y], dtype=np.int64) for y in years},
        target_year=int(meta["target_year"]),
    )
