"""Canonical domain types, unit conventions, validation, and on-disk dataset format.

Canonical units are fixed for every dataset in the system: seconds, volts,
amperes, ampere-hours, watt-hours, watts, ohms, degrees Celsius.  Charge
current is positive, discharge current negative.  Capacity and energy
accumulate from zero at each half-cycle boundary.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

# DataPoint fields in canonical column order.  This order is the contract for
# the points CSV and must not be reordered.
POINT_FIELDS = (
    "index",
    "time",
    "wall_time",
    "voltage",
    "current",
    "capacity",
    "energy",
    "power",
    "temperature",
    "resistance",
    "cycle_index",
    "step_index",
    "cycle_step",
)

_INT_POINT_FIELDS = frozenset({"index", "cycle_index", "step_index", "cycle_step"})

# Relative tolerance for the power == voltage * current consistency check.
POWER_RTOL = 1e-9


@dataclass(frozen=True)
class DataPoint:
    """One canonical time-series sample.

    ``time`` is seconds since test start; ``wall_time`` is an optional
    absolute timestamp in epoch seconds (UTC).  ``capacity``/``energy``
    accumulate within the half-cycle and are non-negative; they may be absent
    before derivation.  ``cycle_index`` is 1-based, all other ordinals
    0-based.
    """

    index: int
    time: float
    voltage: float
    current: float
    wall_time: Optional[float] = None
    capacity: Optional[float] = None
    energy: Optional[float] = None
    power: Optional[float] = None
    temperature: Optional[float] = None
    resistance: Optional[float] = None
    cycle_index: Optional[int] = None
    step_index: Optional[int] = None
    cycle_step: Optional[int] = None


@dataclass(frozen=True)
class ExtraDataValue:
    """Auxiliary channel value stored only where it changed (delta rule)."""

    point_index: int
    name: str
    value: str


@dataclass(frozen=True)
class CanonicalDataset:
    """One test channel's ordered samples plus unit metadata.

    The unit of parsing and analysis.  Immutable after construction; safe to
    share across threads.
    """

    points: tuple[DataPoint, ...]
    extra: tuple[ExtraDataValue, ...] = ()
    channel: int = 0
    source_format: str = ""
    unit_provenance: dict[str, str] = field(default_factory=dict)
    stitched_from: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    def column(self, name: str) -> list:
        return [getattr(p, name) for p in self.points]

    def has_column(self, name: str) -> bool:
        """True when every point carries a value for ``name``."""
        return all(getattr(p, name) is not None for p in self.points)


@dataclass(frozen=True)
class Violation:
    """A single invariant violation found by validate_dataset."""

    code: str
    point_index: Optional[int]
    field: str
    message: str


def validate_dataset(d: CanonicalDataset) -> list[Violation]:
    """Check every dataset invariant; returns one Violation per failure.

    Violations are data, not errors: an empty list means the dataset is
    valid.
    """
    out: list[Violation] = []
    if not d.points:
        out.append(Violation("non-empty", None, "points", "dataset has no points"))
        return out

    prev = None
    for p in d.points:
        if prev is not None:
            if p.index <= prev.index:
                out.append(Violation(
                    "monotone-index", p.index, "index",
                    f"index {p.index} does not increase after {prev.index}"))
            if p.time < prev.time:
                out.append(Violation(
                    "monotone-time", p.index, "time",
                    f"time {p.time} decreases after {prev.time}"))
            if (p.cycle_index is not None and prev.cycle_index is not None
                    and p.cycle_index < prev.cycle_index):
                out.append(Violation(
                    "monotone-cycle", p.index, "cycle_index",
                    f"cycle_index {p.cycle_index} decreases after {prev.cycle_index}"))
        if not p.voltage > 0:
            out.append(Violation(
                "positive-voltage", p.index, "voltage",
                f"voltage {p.voltage} is not positive"))
        if p.capacity is not None and p.capacity < 0:
            out.append(Violation(
                "non-negative-capacity", p.index, "capacity",
                f"capacity {p.capacity} is negative"))
        if p.energy is not None and p.energy < 0:
            out.append(Violation(
                "non-negative-energy", p.index, "energy",
                f"energy {p.energy} is negative"))
        if p.power is not None:
            expect = p.voltage * p.current
            scale = max(abs(expect), abs(p.power), 1e-12)
            if abs(p.power - expect) > POWER_RTOL * scale:
                out.append(Violation(
                    "power-consistency", p.index, "power",
                    f"power {p.power} != voltage*current {expect}"))
        prev = p

    seen_last: dict[str, str] = {}
    last_index: dict[str, int] = {}
    for e in d.extra:
        if e.name in seen_last and seen_last[e.name] == e.value:
            out.append(Violation(
                "extra-delta", e.point_index, e.name,
                f"stored value {e.value!r} repeats the previous entry at "
                f"point {last_index[e.name]}"))
        seen_last[e.name] = e.value
        last_index[e.name] = e.point_index
    return out


# ---------------------------------------------------------------------------
# Cycle statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleStats:
    """Per-cycle statistics computed from the canonical points.

    Capacities are ampere-hours, energies watt-hours, powers watts, voltages
    volts, currents amperes, resistances ohms.  Discharge power statistics
    use the magnitude of instantaneous power; full-cycle power statistics are
    signed.  ``charge_voltage``/``discharge_voltage``/``voltage`` are mean
    voltages over the respective spans and feed the cross-cycle rollup.
    """

    cycle_index: int
    first_point_index: int
    point_count: int
    charge_capacity: float = 0.0
    discharge_capacity: float = 0.0
    charge_energy: float = 0.0
    discharge_energy: float = 0.0
    charge_capacity_retention: Optional[float] = None
    discharge_capacity_retention: Optional[float] = None
    coulombic_efficiency: Optional[float] = None
    mid_voltage: Optional[float] = None
    end_voltage: Optional[float] = None
    end_rest_voltage: Optional[float] = None
    discharge_end_voltage: Optional[float] = None
    start_charge_voltage: Optional[float] = None
    start_discharge_voltage: Optional[float] = None
    start_current: Optional[float] = None
    end_current: Optional[float] = None
    discharge_end_current: Optional[float] = None
    start_discharge_current: Optional[float] = None
    power: Optional[float] = None
    average_power: Optional[float] = None
    min_power: Optional[float] = None
    max_power: Optional[float] = None
    discharge_power: Optional[float] = None
    average_discharge_power: Optional[float] = None
    min_discharge_power: Optional[float] = None
    max_discharge_power: Optional[float] = None
    resistance_ohms: Optional[float] = None
    discharge_resistance: Optional[float] = None
    temperature: Optional[float] = None
    charge_voltage: Optional[float] = None
    discharge_voltage: Optional[float] = None
    voltage: Optional[float] = None


# Cycles table columns, in wire order.  Every cycle payload served by the
# query API and written to cycles.json uses exactly these keys.
CYCLE_COLUMNS = (
    "ProjectId",
    "Index",
    "ChargeCapacity",
    "ChargeCapacityRetention",
    "ChargeEnergy",
    "DischargeCapacity",
    "DischargeCapacityRetention",
    "DischargeEndCurrent",
    "DischargeEndVoltage",
    "DischargeEnergy",
    "DischargePower",
    "DischargeResistance",
    "EndCurrent",
    "EndRestVoltage",
    "EndVoltage",
    "FirstPointIndex",
    "MidVoltage",
    "PointCount",
    "Power",
    "ResistanceOhms",
    "StartChargeVoltage",
    "StartCurrent",
    "StartDischargeCurrent",
    "StartDischargeVoltage",
    "StatisticMetaData",
    "Temperature",
    "MinimumPower",
    "MaximumPower",
    "MinimumDischargePower",
    "MaximumDischargePower",
    "AverageDischargePower",
    "AveragePower",
)

_CYCLE_FIELD_FOR_COLUMN = {
    "Index": "cycle_index",
    "ChargeCapacity": "charge_capacity",
    "ChargeCapacityRetention": "charge_capacity_retention",
    "ChargeEnergy": "charge_energy",
    "DischargeCapacity": "discharge_capacity",
    "DischargeCapacityRetention": "discharge_capacity_retention",
    "DischargeEndCurrent": "discharge_end_current",
    "DischargeEndVoltage": "discharge_end_voltage",
    "DischargeEnergy": "discharge_energy",
    "DischargePower": "discharge_power",
    "DischargeResistance": "discharge_resistance",
    "EndCurrent": "end_current",
    "EndRestVoltage": "end_rest_voltage",
    "EndVoltage": "end_voltage",
    "FirstPointIndex": "first_point_index",
    "MidVoltage": "mid_voltage",
    "PointCount": "point_count",
    "Power": "power",
    "ResistanceOhms": "resistance_ohms",
    "StartChargeVoltage": "start_charge_voltage",
    "StartCurrent": "start_current",
    "StartDischargeCurrent": "start_discharge_current",
    "StartDischargeVoltage": "start_discharge_voltage",
    "Temperature": "temperature",
    "MinimumPower": "min_power",
    "MaximumPower": "max_power",
    "MinimumDischargePower": "min_discharge_power",
    "MaximumDischargePower": "max_discharge_power",
    "AverageDischargePower": "average_discharge_power",
    "AveragePower": "average_power",
}


def cycle_stats_row(stats: CycleStats, project_id: str, statistic_meta: str = "") -> dict:
    """Serialize one CycleStats as a Cycles table row (wire key order)."""
    row: dict = {}
    for col in CYCLE_COLUMNS:
        if col == "ProjectId":
            row[col] = project_id
        elif col == "StatisticMetaData":
            row[col] = statistic_meta
        else:
            row[col] = getattr(stats, _CYCLE_FIELD_FOR_COLUMN[col])
    return row


# ---------------------------------------------------------------------------
# Cross-cycle rollup
# ---------------------------------------------------------------------------

# The serialized rollup carries exactly these keys, in this order.
ROLLUP_KEYS = (
    "ChargeCapacityAverage",
    "ChargeCapacityFirst",
    "ChargeCapacityLast",
    "ChargeCapacityMax",
    "ChargeCapacityMin",
    "ChargeCapacityRetentionStdDev",
    "ChargeCapacityStdDev",
    "ChargeCapacityStdError",
    "ChargeCapacityVariance",
    "ChargeEnergyStdDev",
    "ChargeVoltageAverage",
    "ChargeVoltageMax",
    "ChargeVoltageMin",
    "ChargeVoltageStdDev",
    "ChargeVoltageStdError",
    "ChargeVoltageVariance",
    "CoulombicEfficiencyAverage",
    "CoulombicEfficiencyStdDev",
    "DischargeCapacityAverage",
    "DischargeCapacityFirst",
    "DischargeCapacityLast",
    "DischargeCapacityMax",
    "DischargeCapacityMin",
    "DischargeCapacityRetentionStdDev",
    "DischargeCapacityStdDev",
    "DischargeCapacityStdError",
    "DischargeCapacityVariance",
    "DischargeEndCurrentStdDev",
    "DischargeEndVoltageStdDev",
    "DischargeEnergyStdDev",
    "DischargePowerStdDev",
    "DischargeResistanceStdDev",
    "DischargeVoltageAverage",
    "DischargeVoltageMax",
    "DischargeVoltageMin",
    "DischargeVoltageStdDev",
    "DischargeVoltageStdError",
    "DischargeVoltageVariance",
    "EndCurrentStdDev",
    "EndVoltageStdDev",
    "MidVoltageStdDev",
    "PowerStdDev",
    "ResistanceOhmsStdDev",
    "VoltageAverage",
    "VoltageFirst",
    "VoltageLast",
    "VoltageMax",
    "VoltageMin",
    "VoltageStdDev",
    "VoltageStdError",
    "VoltageVariance",
)


@dataclass(frozen=True)
class StatisticRollup:
    """Cross-cycle aggregate statistics.

    ``columns`` maps each rollup key to its value (None where no input values
    existed).  ``single_cycle`` flags the degenerate convention where spread
    statistics are 0 because only one cycle was available.
    """

    columns: dict[str, Optional[float]]
    n_cycles: int
    single_cycle: bool

    def to_meta_json(self) -> str:
        """The rollup payload embedded in each cycle row, as JSON text."""
        ordered = {k: self.columns.get(k) for k in ROLLUP_KEYS}
        return canonical_json(ordered)


# ---------------------------------------------------------------------------
# Project metadata
# ---------------------------------------------------------------------------

class ProjectStatus(str, Enum):
    PENDING = "Pending"
    PROCESSING = "Processing"
    READY = "Ready"
    FAILED = "Failed"


@dataclass
class ProjectRecord:
    """Metadata row for one test channel.

    ``extra`` carries opaque per-row metadata with no defined semantics
    (IsAveragePlot, IsPartialGathering, TraceId and the like); it is stored
    and served but never interpreted.
    """

    id: str
    name: str
    file_name: str = ""
    internal_file_name: str = ""
    file_size: int = 0
    channel: int = 0
    num_cycles: int = 0
    test_name: str = ""
    test_type: str = ""
    comments: str = ""
    tag: str = ""
    mass: Optional[float] = None
    pam_mass: Optional[float] = None
    nam_mass: Optional[float] = None
    area: Optional[float] = None
    active_material_fraction: Optional[float] = None
    theoretical_capacity: Optional[float] = None
    status: ProjectStatus = ProjectStatus.PENDING
    error: str = ""
    error_detailed: str = ""
    processing_message: str = ""
    created_at: Optional[str] = None
    updated_at: Optional[str] = None
    test_date: Optional[str] = None
    process_date: Optional[str] = None
    data_point_start_date: Optional[str] = None
    shard_id: int = 0
    organization_id: Optional[str] = None
    user_id: str = ""
    job_id: Optional[str] = None
    stitched_from: list[str] = field(default_factory=list)
    stitched_from_names: list[str] = field(default_factory=list)
    is_real_time: bool = False
    extra_data_names: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def check(self) -> None:
        if not self.name:
            raise ValueError("project name is required")
        failed = self.status == ProjectStatus.FAILED
        if failed != bool(self.error):
            raise ValueError("status Failed requires non-empty error and vice versa")


@dataclass(frozen=True)
class ProjectTag:
    """User-attached key/value metadata; (project_id, name) is unique."""

    id: str
    project_id: str
    name: str
    value: str


def utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    """Deterministic JSON text: fixed separators, no NaN, insertion order."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        raise TypeError("bool is not a point value")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise ValueError("points CSV must be NaN-free")
        return repr(value)
    return str(value)


def points_csv_bytes(points: Iterable[DataPoint]) -> bytes:
    """Render points as canonical UTF-8 CSV (header row, RFC 4180 quoting)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(POINT_FIELDS)
    for p in points:
        writer.writerow([_format_cell(getattr(p, name)) for name in POINT_FIELDS])
    return buf.getvalue().encode("utf-8")


def points_from_csv_bytes(data: bytes) -> tuple[DataPoint, ...]:
    reader = csv.reader(io.StringIO(data.decode("utf-8"), newline=""))
    rows = list(reader)
    if not rows:
        return ()
    header = rows[0]
    if tuple(header) != POINT_FIELDS:
        raise ValueError(f"unexpected points header: {header}")
    points = []
    for row in rows[1:]:
        if not row:
            continue
        kwargs = {}
        for name, cell in zip(POINT_FIELDS, row):
            if cell == "":
                kwargs[name] = None
            elif name in _INT_POINT_FIELDS:
                kwargs[name] = int(cell)
            else:
                kwargs[name] = float(cell)
        points.append(DataPoint(**kwargs))
    return tuple(points)


def extra_csv_bytes(extra: Iterable[ExtraDataValue]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(("point_index", "name", "value"))
    for e in extra:
        writer.writerow((str(e.point_index), e.name, e.value))
    return buf.getvalue().encode("utf-8")


def extra_from_csv_bytes(data: bytes) -> tuple[ExtraDataValue, ...]:
    reader = csv.reader(io.StringIO(data.decode("utf-8"), newline=""))
    rows = list(reader)
    out = []
    for row in rows[1:]:
        if not row:
            continue
        out.append(ExtraDataValue(int(row[0]), row[1], row[2]))
    return tuple(out)


def dataset_meta_json(d: CanonicalDataset) -> str:
    meta = {
        "channel": d.channel,
        "source_format": d.source_format,
        "unit_provenance": dict(sorted(d.unit_provenance.items())),
    }
    if d.stitched_from:
        meta["stitched_from"] = list(d.stitched_from)
    return canonical_json(meta)


def write_dataset_dir(d: CanonicalDataset, path: Path | str) -> Path:
    """Write the canonical dataset directory: ``meta`` (JSON), ``points``
    (CSV) and, when auxiliary data exists, ``extra`` (CSV)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "meta").write_bytes(dataset_meta_json(d).encode("utf-8"))
    (path / "points").write_bytes(points_csv_bytes(d.points))
    if d.extra:
        (path / "extra").write_bytes(extra_csv_bytes(d.extra))
    elif (path / "extra").exists():
        (path / "extra").unlink()
    return path


def read_dataset_dir(path: Path | str) -> CanonicalDataset:
    path = Path(path)
    meta = json.loads((path / "meta").read_text("utf-8"))
    points = points_from_csv_bytes((path / "points").read_bytes())
    extra: tuple[ExtraDataValue, ...] = ()
    if (path / "extra").exists():
        extra = extra_from_csv_bytes((path / "extra").read_bytes())
    return CanonicalDataset(
        points=points,
        extra=extra,
        channel=int(meta["channel"]),
        source_format=meta.get("source_format", ""),
        unit_provenance=dict(meta.get("unit_provenance", {})),
        stitched_from=tuple(meta.get("stitched_from", ())),
    )


def dataset_bytes(d: CanonicalDataset) -> bytes:
    """A single deterministic byte string covering every dataset field.

    Used by determinism checks: two datasets are identical iff their
    canonical bytes are equal.
    """
    return b"\x00".join([
        dataset_meta_json(d).encode("utf-8"),
        points_csv_bytes(d.points),
        extra_csv_bytes(d.extra),
    ])


def with_points(d: CanonicalDataset, points: Iterable[DataPoint]) -> CanonicalDataset:
    return replace(d, points=tuple(points))
