"""Vendor file-format detection, parsing, and normalization.

Each supported vendor export is described by a declarative VendorProfile:
how to recognize the file (extension patterns plus header sniffing), how its
columns map onto canonical DataPoint fields, and the unit scale for each
mapped column.  Parsing is pure and reentrant; the profile registry is the
only shared state and hands out atomic snapshots.
"""

from __future__ import annotations

import csv
import io
import json
import re
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .errors import (
    AmbiguousFormat,
    ChannelMismatch,
    EmptyFile,
    InvalidProfile,
    MissingRequiredColumn,
    ParseError,
    UnitError,
    UnknownFormat,
)
from .model import CanonicalDataset, DataPoint, ExtraDataValue

REQUIRED_FIELDS = ("time", "voltage", "current")

MAPPABLE_FIELDS = frozenset({
    "time", "wall_time", "voltage", "current", "capacity", "energy",
    "power", "temperature", "resistance", "cycle_index", "step_index",
    "cycle_step",
})

_INT_FIELDS = frozenset({"cycle_index", "step_index", "cycle_step"})

CHANNEL_SOURCES = ("column", "file_extension", "fixed")


@dataclass(frozen=True)
class UnitSpec:
    """Unit label and affine conversion to the canonical unit."""

    unit: str
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class VendorProfile:
    """Declarative description of one vendor export format."""

    format_id: str
    extensions: tuple[str, ...] = ()
    extension_pattern: str = ""
    header_contains: tuple[str, ...] = ()
    column_map: dict[str, str] = field(default_factory=dict)
    unit_map: dict[str, UnitSpec] = field(default_factory=dict)
    delimiter: str = ","
    decimal_separator: str = "."
    header_row_count: int = 1
    comment_prefix: str = ""
    encoding: str = "utf-8-sig"
    channel_source: str = "fixed"
    channel_column: str = ""
    default_channel: int = 0
    ignore_columns: tuple[str, ...] = ()

    def check(self) -> None:
        if not self.format_id:
            raise InvalidProfile("format_id is required")
        if not self.extensions and not self.extension_pattern:
            raise InvalidProfile(f"{self.format_id}: no filename match rules")
        mapped = set(self.column_map.values())
        unknown = mapped - MAPPABLE_FIELDS
        if unknown:
            raise InvalidProfile(
                f"{self.format_id}: column_map targets unknown fields {sorted(unknown)}")
        missing = [f for f in REQUIRED_FIELDS if f not in mapped]
        if missing:
            raise InvalidProfile(
                f"{self.format_id}: column_map must cover {', '.join(missing)}")
        if self.header_row_count < 1:
            raise InvalidProfile(f"{self.format_id}: header_row_count must be >= 1")
        if self.channel_source not in CHANNEL_SOURCES:
            raise InvalidProfile(
                f"{self.format_id}: channel_source must be one of {CHANNEL_SOURCES}")
        if self.channel_source == "column" and not self.channel_column:
            raise InvalidProfile(f"{self.format_id}: channel_column is required")
        if self.decimal_separator not in (".", ","):
            raise InvalidProfile(f"{self.format_id}: unsupported decimal separator")

    def matches(self, file_name: str, head: bytes) -> bool:
        name = file_name.lower()
        ext_ok = any(name.endswith(ext.lower()) for ext in self.extensions)
        if not ext_ok and self.extension_pattern:
            ext_ok = re.search(self.extension_pattern, file_name) is not None
        if not ext_ok:
            return False
        text = head.decode(self.encoding, errors="replace")
        return all(token in text for token in self.header_contains)


def profile_from_dict(doc: dict) -> VendorProfile:
    """Build a VendorProfile from its JSON document form."""
    try:
        match = doc.get("match", {})
        units = {}
        for col, spec in doc.get("unit_map", {}).items():
            units[col] = UnitSpec(
                unit=spec.get("unit", ""),
                scale=float(spec.get("scale", 1.0)),
                offset=float(spec.get("offset", 0.0)),
            )
        profile = VendorProfile(
            format_id=doc.get("format_id", ""),
            extensions=tuple(match.get("extensions", ())),
            extension_pattern=match.get("extension_pattern", ""),
            header_contains=tuple(match.get("header_contains", ())),
            column_map=dict(doc.get("column_map", {})),
            unit_map=units,
            delimiter=doc.get("delimiter", ","),
            decimal_separator=doc.get("decimal_separator", "."),
            header_row_count=int(doc.get("header_row_count", 1)),
            comment_prefix=doc.get("comment_prefix", ""),
            encoding=doc.get("encoding", "utf-8-sig"),
            channel_source=doc.get("channel_source", "fixed"),
            channel_column=doc.get("channel_column", ""),
            default_channel=int(doc.get("default_channel", 0)),
            ignore_columns=tuple(doc.get("ignore_columns", ())),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidProfile(f"malformed profile document: {exc}") from exc
    profile.check()
    return profile


def profile_to_dict(p: VendorProfile) -> dict:
    return {
        "format_id": p.format_id,
        "match": {
            "extensions": list(p.extensions),
            "extension_pattern": p.extension_pattern,
            "header_contains": list(p.header_contains),
        },
        "column_map": dict(p.column_map),
        "unit_map": {
            col: {"unit": u.unit, "scale": u.scale, "offset": u.offset}
            for col, u in p.unit_map.items()
        },
        "delimiter": p.delimiter,
        "decimal_separator": p.decimal_separator,
        "header_row_count": p.header_row_count,
        "comment_prefix": p.comment_prefix,
        "encoding": p.encoding,
        "channel_source": p.channel_source,
        "channel_column": p.channel_column,
        "default_channel": p.default_channel,
        "ignore_columns": list(p.ignore_columns),
    }


class ProfileRegistry:
    """Thread-safe registry of vendor profiles with snapshot reads."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._profiles: dict[str, VendorProfile] = {}

    def register(self, profile: VendorProfile) -> str:
        profile.check()
        with self._lock:
            self._profiles = {**self._profiles, profile.format_id: profile}
        return profile.format_id

    def get(self, format_id: str) -> VendorProfile:
        snap = self.snapshot()
        if format_id not in snap:
            raise UnknownFormat(format_id)
        return snap[format_id]

    def snapshot(self) -> dict[str, VendorProfile]:
        with self._lock:
            return dict(self._profiles)

    def load_directory(self, path: Path | str) -> list[str]:
        loaded = []
        for doc_path in sorted(Path(path).glob("*.json")):
            doc = json.loads(doc_path.read_text("utf-8"))
            loaded.append(self.register(profile_from_dict(doc)))
        return loaded


_builtin: Optional[ProfileRegistry] = None
_builtin_lock = threading.Lock()


def builtin_registry() -> ProfileRegistry:
    """Registry preloaded with the shipped delimited-text profiles."""
    global _builtin
    with _builtin_lock:
        if _builtin is None:
            reg = ProfileRegistry()
            reg.load_directory(Path(__file__).parent / "profiles")
            _builtin = reg
    return _builtin


def detect_format(file_name: str, head: bytes,
                  registry: Optional[ProfileRegistry] = None) -> str:
    """Return the unique profile matching (file name, first bytes).

    Deterministic: matching depends only on the arguments and the registry
    contents.  Raises UnknownFormat / AmbiguousFormat otherwise.
    """
    registry = registry or builtin_registry()
    hits = [p.format_id for p in registry.snapshot().values()
            if p.matches(file_name, head)]
    if not hits:
        raise UnknownFormat(file_name)
    if len(hits) > 1:
        raise AmbiguousFormat(file_name, hits)
    return hits[0]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawChannelSeries:
    """Rows of one channel, still as source-labelled text values."""

    channel: int
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    source_lines: tuple[int, ...]


@dataclass(frozen=True)
class ParseResult:
    series: tuple[RawChannelSeries, ...]
    malformed: tuple[tuple[int, str], ...]

    @property
    def row_count(self) -> int:
        return sum(len(s.rows) for s in self.series)


def _channel_from_extension(file_name: str, profile: VendorProfile) -> int:
    ext = Path(file_name).suffix.lstrip(".")
    if ext.isdigit():
        return int(ext, 10)
    return profile.default_channel


def _required_cell_error(cells: tuple[str, ...], required_idx: dict[str, int],
                         decimal_separator: str) -> Optional[str]:
    for fld, pos in required_idx.items():
        cell = cells[pos].strip()
        if not cell:
            return f"empty {fld} cell"
        try:
            _parse_number(cell, decimal_separator)
        except ValueError:
            return f"{fld} cell {cell!r} is not numeric"
    return None


def parse(data: bytes, profile: VendorProfile, file_name: str = "",
          malformed_tolerance: int = 0) -> ParseResult:
    """Split a vendor file into per-channel raw series.

    Rows with a wrong field count or non-numeric required cells are
    collected with their 1-based line numbers; more than
    ``malformed_tolerance`` of them raises ParseError.
    """
    text = data.decode(profile.encoding, errors="strict")
    physical = text.splitlines()

    logical: list[tuple[int, str]] = []
    for lineno, line in enumerate(physical, start=1):
        if profile.comment_prefix and line.startswith(profile.comment_prefix):
            continue
        if not line.strip():
            continue
        logical.append((lineno, line))

    if len(logical) < profile.header_row_count + 1:
        raise EmptyFile(f"{file_name or 'input'}: no data rows")

    header_line = logical[profile.header_row_count - 1][1]
    columns = tuple(
        c.strip() for c in next(csv.reader([header_line], delimiter=profile.delimiter))
    )
    n_cols = len(columns)
    required_idx = {
        fld: columns.index(col)
        for col, fld in profile.column_map.items()
        if fld in REQUIRED_FIELDS and col in columns
    }

    malformed: list[tuple[int, str]] = []
    parsed_rows: list[tuple[int, tuple[str, ...]]] = []
    body = logical[profile.header_row_count:]
    reader = csv.reader((line for _, line in body), delimiter=profile.delimiter)
    for (lineno, _), cells in zip(body, reader):
        if len(cells) != n_cols:
            malformed.append((lineno, f"expected {n_cols} fields, got {len(cells)}"))
            continue
        row = tuple(c.strip() for c in cells)
        reason = _required_cell_error(row, required_idx, profile.decimal_separator)
        if reason is not None:
            malformed.append((lineno, reason))
            continue
        parsed_rows.append((lineno, row))

    if not parsed_rows and not malformed:
        raise EmptyFile(f"{file_name or 'input'}: no data rows")
    if len(malformed) > malformed_tolerance:
        line, reason = malformed[0]
        raise ParseError(line, f"{reason} ({len(malformed)} malformed rows total)")

    if profile.channel_source == "column" and profile.channel_column in columns:
        ch_idx = columns.index(profile.channel_column)
        grouped: dict[int, list[tuple[int, tuple[str, ...]]]] = {}
        for lineno, cells in parsed_rows:
            try:
                ch = int(float(cells[ch_idx].replace(profile.decimal_separator, ".")))
            except ValueError:
                malformed.append((lineno, f"bad channel value {cells[ch_idx]!r}"))
                if len(malformed) > malformed_tolerance:
                    raise ParseError(lineno, f"bad channel value {cells[ch_idx]!r}")
                continue
            grouped.setdefault(ch, []).append((lineno, cells))
        series = tuple(
            RawChannelSeries(
                channel=ch,
                columns=columns,
                rows=tuple(cells for _, cells in rows),
                source_lines=tuple(ln for ln, _ in rows),
            )
            for ch, rows in sorted(grouped.items())
        )
    else:
        if profile.channel_source == "file_extension":
            channel = _channel_from_extension(file_name, profile)
        else:
            channel = profile.default_channel
        series = (RawChannelSeries(
            channel=channel,
            columns=columns,
            rows=tuple(cells for _, cells in parsed_rows),
            source_lines=tuple(ln for ln, _ in parsed_rows),
        ),)

    return ParseResult(series=series, malformed=tuple(malformed))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _parse_number(cell: str, decimal_separator: str) -> Optional[float]:
    cell = cell.strip()
    if not cell:
        return None
    if decimal_separator != ".":
        cell = cell.replace(decimal_separator, ".")
    return float(cell)


def _parse_wall_time(cell: str, unit: str) -> Optional[float]:
    cell = cell.strip()
    if not cell:
        return None
    if unit == "epoch_s":
        return float(cell)
    dt = datetime.fromisoformat(cell)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def delta_compress(name: str, values: list[str]) -> list[ExtraDataValue]:
    """Store an aux column only at the points where its value changed."""
    out: list[ExtraDataValue] = []
    prev: Optional[str] = None
    for idx, value in enumerate(values):
        if value != prev:
            out.append(ExtraDataValue(point_index=idx, name=name, value=value))
            prev = value
    return out


def delta_expand(entries: list[ExtraDataValue], name: str, n_points: int) -> list[str]:
    """Reconstruct the full aux column by forward fill."""
    out = [""] * n_points
    current = ""
    mine = {e.point_index: e.value for e in entries if e.name == name}
    for idx in range(n_points):
        if idx in mine:
            current = mine[idx]
        out[idx] = current
    return out


def normalize(raw: RawChannelSeries, profile: VendorProfile) -> CanonicalDataset:
    """Map a raw channel series onto canonical fields and units.

    Unmapped source columns survive as delta-compressed ExtraDataValue
    entries; the original unit label of every converted column is recorded in
    unit_provenance.
    """
    col_index = {c: i for i, c in enumerate(raw.columns)}
    for source_col, fld in profile.column_map.items():
        if fld in REQUIRED_FIELDS and source_col not in col_index:
            raise MissingRequiredColumn(source_col)
    mapped_fields = set(profile.column_map.values())
    for fld in REQUIRED_FIELDS:
        if fld not in mapped_fields:
            raise MissingRequiredColumn(fld)

    provenance: dict[str, str] = {}
    points: list[DataPoint] = []
    for idx, cells in enumerate(raw.rows):
        kwargs: dict = {"index": idx}
        for source_col, fld in profile.column_map.items():
            pos = col_index.get(source_col)
            if pos is None:
                continue
            cell = cells[pos]
            spec = profile.unit_map.get(source_col, UnitSpec(unit=""))
            try:
                if fld == "wall_time":
                    value = _parse_wall_time(cell, spec.unit)
                else:
                    value = _parse_number(cell, profile.decimal_separator)
                    if value is not None:
                        value = value * spec.scale + spec.offset
            except ValueError as exc:
                raise UnitError(
                    f"column {source_col!r} value {cell!r} is not "
                    f"convertible: {exc}") from exc
            if value is not None and fld in _INT_FIELDS:
                value = int(round(value))
            kwargs[fld] = value
        if kwargs.get("time") is None or kwargs.get("voltage") is None \
                or kwargs.get("current") is None:
            raise UnitError(f"row {idx}: missing required value after mapping")
        points.append(DataPoint(**kwargs))

    for source_col, fld in profile.column_map.items():
        if source_col in col_index:
            spec = profile.unit_map.get(source_col)
            if spec is not None and spec.unit:
                provenance[fld] = spec.unit

    extra: list[ExtraDataValue] = []
    mapped_cols = set(profile.column_map) | set(profile.ignore_columns) | (
        {profile.channel_column} if profile.channel_source == "column" else set())
    for col in raw.columns:
        if col in mapped_cols:
            continue
        values = [cells[col_index[col]] for cells in raw.rows]
        extra.extend(delta_compress(col, values))
    extra.sort(key=lambda e: (e.point_index, e.name))

    return CanonicalDataset(
        points=tuple(points),
        extra=tuple(extra),
        channel=raw.channel,
        source_format=profile.format_id,
        unit_provenance=provenance,
    )


def parse_and_normalize(data: bytes, profile: VendorProfile, file_name: str = "",
                        malformed_tolerance: int = 0) -> list[CanonicalDataset]:
    result = parse(data, profile, file_name=file_name,
                   malformed_tolerance=malformed_tolerance)
    return [normalize(s, profile) for s in result.series]


# ---------------------------------------------------------------------------
# Stitching
# ---------------------------------------------------------------------------

def stitch(parts: list[CanonicalDataset],
           names: Optional[list[str]] = None) -> CanonicalDataset:
    """Concatenate sequential datasets from the same channel.

    Each part's times are shifted by the previous part's final time so the
    combined axis is non-decreasing; cycle indices are renumbered
    continuously; the source names are retained as provenance.
    """
    if len(parts) < 2:
        raise ValueError("stitch requires at least 2 parts")
    channels = {p.channel for p in parts}
    if len(channels) > 1:
        raise ChannelMismatch(f"parts span channels {sorted(channels)}")

    names = names or [p.source_format or f"part{i}" for i, p in enumerate(parts)]
    points: list[DataPoint] = []
    extra: list[ExtraDataValue] = []
    last_values: dict[str, str] = {}
    time_offset = 0.0
    cycle_offset = 0
    index_offset = 0
    for part in parts:
        cycle_map: dict[int, int] = {}
        part_cycles = sorted({p.cycle_index for p in part.points
                              if p.cycle_index is not None})
        for rank, old in enumerate(part_cycles, start=1):
            cycle_map[old] = cycle_offset + rank
        for p in part.points:
            points.append(replace(
                p,
                index=index_offset + p.index,
                time=p.time + time_offset,
                cycle_index=cycle_map.get(p.cycle_index) if p.cycle_index is not None else None,
            ))
        for e in part.extra:
            shifted = ExtraDataValue(e.point_index + index_offset, e.name, e.value)
            if last_values.get(e.name) == e.value:
                last_values[e.name] = e.value
                continue
            extra.append(shifted)
            last_values[e.name] = e.value
        if part.points:
            time_offset += part.points[-1].time
            index_offset += len(part.points)
        cycle_offset += len(part_cycles)

    extra.sort(key=lambda e: (e.point_index, e.name))
    merged_provenance: dict[str, str] = {}
    for part in parts:
        merged_provenance.update(part.unit_provenance)
    return CanonicalDataset(
        points=tuple(points),
        extra=tuple(extra),
        channel=parts[0].channel,
        source_format=parts[0].source_format,
        unit_provenance=merged_provenance,
        stitched_from=tuple(names),
    )
