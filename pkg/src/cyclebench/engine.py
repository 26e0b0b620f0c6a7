"""Field derivation, cycle segmentation, per-cycle statistics, and rollups.

A cycle is one charge half-cycle followed by the subsequent discharge
half-cycle.  Rest samples (|I| <= rest threshold) attach to the preceding
half-cycle; a leading rest attaches to the first half-cycle.  Capacity and
energy are trapezoidal integrals of |I| and |V*I| that reset to zero at each
half-cycle boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateCycle, EmptyInput, NoCycles
from .model import (
    CanonicalDataset,
    CycleStats,
    DataPoint,
    ROLLUP_KEYS,
    StatisticRollup,
    with_points,
)

CHARGE, REST, DISCHARGE = 1, 0, -1

# Current-step factor above which a transition counts as a DC resistance
# pulse (relative to the rest threshold).
RESISTANCE_STEP_FACTOR = 10.0


def rest_threshold(currents: Sequence[float]) -> float:
    """Rest-current threshold: max(1e-6 A, 1e-4 * max |I|)."""
    if len(currents) == 0:
        return 1e-6
    return max(1e-6, 1e-4 * float(np.max(np.abs(currents))))


def classify_samples(currents: np.ndarray, eps: float) -> np.ndarray:
    """Raw per-sample phase: CHARGE, DISCHARGE, or REST."""
    labels = np.zeros(len(currents), dtype=np.int8)
    labels[currents > eps] = CHARGE
    labels[currents < -eps] = DISCHARGE
    return labels


def attach_rests(raw: np.ndarray) -> np.ndarray:
    """Rests inherit the preceding half-cycle's phase; leading rests the next."""
    attached = raw.copy()
    current = 0
    for i, lab in enumerate(attached):
        if lab == REST:
            attached[i] = current
        else:
            current = lab
    # leading rests: inherit the first non-rest phase
    nonzero = np.nonzero(attached)[0]
    if len(nonzero) and nonzero[0] > 0:
        attached[: nonzero[0]] = attached[nonzero[0]]
    return attached


def _runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Merged (label, start, end_inclusive) runs."""
    out: list[tuple[int, int, int]] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            out.append((int(labels[start]), start, i - 1))
            start = i
    return out


@dataclass(frozen=True)
class CycleBoundary:
    """Index extent of one cycle plus its active half-cycle spans.

    Spans are (first, last) inclusive index pairs over samples where the
    current is actively flowing; trailing rests lie inside the cycle extent
    but outside the spans.
    """

    cycle_index: int
    first_point_index: int
    last_point_index: int
    charge_span: Optional[tuple[int, int]] = None
    discharge_span: Optional[tuple[int, int]] = None


def _spans_within(raw: np.ndarray, first: int, last: int
                  ) -> tuple[Optional[tuple[int, int]], Optional[tuple[int, int]]]:
    seg = raw[first:last + 1]
    ch = np.nonzero(seg == CHARGE)[0]
    di = np.nonzero(seg == DISCHARGE)[0]
    charge_span = discharge_span = None
    if len(ch) and len(di):
        if ch[0] < di[0]:
            ch_before = ch[ch < di[0]]
            charge_span = (first + int(ch_before[0]), first + int(ch_before[-1]))
            discharge_span = (first + int(di[0]), first + int(di[-1]))
        else:
            di_before = di[di < ch[0]]
            discharge_span = (first + int(di_before[0]), first + int(di_before[-1]))
            charge_span = (first + int(ch[0]), first + int(ch[-1]))
    elif len(ch):
        charge_span = (first + int(ch[0]), first + int(ch[-1]))
    elif len(di):
        discharge_span = (first + int(di[0]), first + int(di[-1]))
    return charge_span, discharge_span


def segment_cycles(d: CanonicalDataset, eps: Optional[float] = None
                   ) -> list[CycleBoundary]:
    """Partition the dataset into cycles.

    When the source supplied cycle_index on every point, boundaries follow it
    verbatim (contiguous runs of equal values).  Otherwise cycles are derived
    from the current sign: each charge half-cycle pairs with the subsequent
    discharge half-cycle; unpaired leading discharges or trailing charges
    form partial cycles so that every point belongs to exactly one cycle.
    """
    if not d.points:
        raise NoCycles("dataset has no points")
    currents = np.array([p.current for p in d.points], dtype=float)
    if eps is None:
        eps = rest_threshold(currents)
    raw = classify_samples(currents, eps)

    if d.has_column("cycle_index"):
        out = []
        start = 0
        points = d.points
        for i in range(1, len(points) + 1):
            if i == len(points) or points[i].cycle_index != points[start].cycle_index:
                ch, di = _spans_within(raw, start, i - 1)
                out.append(CycleBoundary(
                    cycle_index=int(points[start].cycle_index),
                    first_point_index=start,
                    last_point_index=i - 1,
                    charge_span=ch,
                    discharge_span=di,
                ))
                start = i
        return out

    if not np.any(raw):
        raise NoCycles("no charge or discharge current above the rest threshold")
    attached = attach_rests(raw)
    runs = _runs(attached)

    out = []
    i = 0
    number = 1
    while i < len(runs):
        label, start, end = runs[i]
        if label == CHARGE and i + 1 < len(runs) and runs[i + 1][0] == DISCHARGE:
            end = runs[i + 1][2]
            i += 2
        else:
            i += 1
        ch, di = _spans_within(raw, start, end)
        out.append(CycleBoundary(
            cycle_index=number,
            first_point_index=start,
            last_point_index=end,
            charge_span=ch,
            discharge_span=di,
        ))
        number += 1
    return out


def with_cycle_index(d: CanonicalDataset, boundaries: list[CycleBoundary]
                     ) -> CanonicalDataset:
    """Write cycle_index (and cycle_step where absent) back to the points."""
    index_of: dict[int, int] = {}
    for b in boundaries:
        for i in range(b.first_point_index, b.last_point_index + 1):
            index_of[i] = b.cycle_index

    has_step = d.has_column("step_index")
    currents = np.array([p.current for p in d.points], dtype=float)
    raw = classify_samples(currents, rest_threshold(currents))

    new_points: list[DataPoint] = []
    for b in boundaries:
        step_ordinal = 0
        prev_step = None
        prev_raw = None
        for i in range(b.first_point_index, b.last_point_index + 1):
            p = d.points[i]
            if has_step:
                if prev_step is not None and p.step_index != prev_step:
                    step_ordinal += 1
                prev_step = p.step_index
            else:
                if prev_raw is not None and raw[i] != prev_raw:
                    step_ordinal += 1
                prev_raw = raw[i]
            cycle_step = p.cycle_step if p.cycle_step is not None else step_ordinal
            new_points.append(replace(
                p, cycle_index=index_of[i], cycle_step=cycle_step))
    return with_points(d, new_points)


# ---------------------------------------------------------------------------
# Field derivation
# ---------------------------------------------------------------------------

class FieldOrigin(str, Enum):
    FROM_SOURCE = "FromSource"
    DERIVED = "Derived"
    ABSENT = "Absent"


@dataclass(frozen=True)
class DerivationReport:
    """Origin of every DataPoint numeric field after derivation."""

    fields: dict[str, FieldOrigin]


def _reset_boundaries(attached: np.ndarray) -> list[int]:
    starts = [0]
    for i in range(1, len(attached)):
        if attached[i] != attached[i - 1]:
            starts.append(i)
    return starts


def _integrate(values: np.ndarray, times: np.ndarray, starts: list[int]) -> np.ndarray:
    """Cumulative trapezoid of ``values`` over time, resetting at ``starts``.

    Result is in value-hours (seconds integral / 3600).
    """
    out = np.zeros(len(values))
    start_set = set(starts)
    for i in range(1, len(values)):
        if i in start_set:
            out[i] = 0.0
            continue
        dt = times[i] - times[i - 1]
        out[i] = out[i - 1] + 0.5 * (values[i] + values[i - 1]) * dt / 3600.0
    return out


def derive_fields(d: CanonicalDataset, eps: Optional[float] = None
                  ) -> tuple[CanonicalDataset, DerivationReport]:
    """Fill capacity, energy, and power where the source did not provide them.

    capacity(t) = integral of |I| dt and energy(t) = integral of |V*I| dt,
    trapezoidal, resetting at each half-cycle boundary; power = V*I
    pointwise.  Source-provided columns are never overwritten.
    """
    origins: dict[str, FieldOrigin] = {}
    for name in ("index", "time", "voltage", "current"):
        origins[name] = FieldOrigin.FROM_SOURCE
    for name in ("wall_time", "temperature", "resistance",
                 "cycle_index", "step_index", "cycle_step"):
        origins[name] = (FieldOrigin.FROM_SOURCE if d.has_column(name)
                         else FieldOrigin.ABSENT)

    have_current = d.has_column("current") and len(d.points) > 0
    have_voltage = d.has_column("voltage") and len(d.points) > 0
    need_capacity = not d.has_column("capacity")
    need_energy = not d.has_column("energy")
    need_power = not d.has_column("power")

    origins["capacity"] = FieldOrigin.FROM_SOURCE if not need_capacity else (
        FieldOrigin.DERIVED if have_current else FieldOrigin.ABSENT)
    origins["energy"] = FieldOrigin.FROM_SOURCE if not need_energy else (
        FieldOrigin.DERIVED if have_current and have_voltage else FieldOrigin.ABSENT)
    origins["power"] = FieldOrigin.FROM_SOURCE if not need_power else (
        FieldOrigin.DERIVED if have_current and have_voltage else FieldOrigin.ABSENT)

    if not have_current or not (need_capacity or need_energy or need_power):
        return d, DerivationReport(fields=origins)

    times = np.array([p.time for p in d.points], dtype=float)
    currents = np.array([p.current for p in d.points], dtype=float)
    voltages = np.array([p.voltage for p in d.points], dtype=float)
    if eps is None:
        eps = rest_threshold(currents)
    attached = attach_rests(classify_samples(currents, eps))
    starts = _reset_boundaries(attached)

    capacity = energy = power = None
    if need_capacity:
        capacity = _integrate(np.abs(currents), times, starts)
    if need_energy and have_voltage:
        energy = _integrate(np.abs(currents * voltages), times, starts)
    if need_power and have_voltage:
        power = currents * voltages

    new_points = []
    for i, p in enumerate(d.points):
        new_points.append(replace(
            p,
            capacity=float(capacity[i]) if capacity is not None else p.capacity,
            energy=float(energy[i]) if energy is not None else p.energy,
            power=float(power[i]) if power is not None else p.power,
        ))
    return with_points(d, new_points), DerivationReport(fields=origins)


# ---------------------------------------------------------------------------
# Per-cycle statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceCapacities:
    """Capacities of the retention reference cycle."""

    charge: float
    discharge: float


def _span_max(values: np.ndarray, span: Optional[tuple[int, int]]) -> float:
    if span is None:
        return 0.0
    return float(np.max(values[span[0]:span[1] + 1]))


def _mid_voltage(voltages: np.ndarray, capacities: np.ndarray,
                 span: Optional[tuple[int, int]]) -> Optional[float]:
    """Interpolated voltage where discharge capacity crosses 50% of the
    cycle's discharge capacity."""
    if span is None:
        return None
    q = capacities[span[0]:span[1] + 1]
    v = voltages[span[0]:span[1] + 1]
    total = float(np.max(q))
    if total <= 0:
        return None
    target = 0.5 * total
    k = len(q) - 1
    for i, qi in enumerate(q):
        if qi >= target:
            k = i
            break
    if k == 0 or q[k] == q[k - 1]:
        return float(v[k])
    frac = (target - q[k - 1]) / (q[k] - q[k - 1])
    return float(v[k - 1] + (v[k] - v[k - 1]) * frac)


def _pulse_resistance(voltages: np.ndarray, currents: np.ndarray,
                      span: Optional[tuple[int, int]], eps: float
                      ) -> Optional[float]:
    """DC pulse resistance dV/dI across the step into the span, when the
    current steps by more than RESISTANCE_STEP_FACTOR * eps."""
    if span is None or span[0] == 0:
        return None
    i = span[0]
    di = currents[i] - currents[i - 1]
    if abs(di) <= RESISTANCE_STEP_FACTOR * eps:
        return None
    return float((voltages[i] - voltages[i - 1]) / di)


def compute_cycle_stats(d: CanonicalDataset, b: CycleBoundary,
                        ref: Optional[ReferenceCapacities] = None,
                        eps: Optional[float] = None) -> CycleStats:
    """Compute every per-cycle statistic for one boundary.

    Requires capacity and energy columns (run derive_fields first).  Raises
    DegenerateCycle when the cycle extent holds fewer than 2 points.
    """
    s, e = b.first_point_index, b.last_point_index
    if e - s + 1 < 2:
        raise DegenerateCycle(f"cycle {b.cycle_index} has {e - s + 1} point(s)")
    pts = d.points
    voltages = np.array([p.voltage for p in pts], dtype=float)
    currents = np.array([p.current for p in pts], dtype=float)
    if not d.has_column("capacity") or not d.has_column("energy"):
        raise ValueError("capacity/energy columns required; derive fields first")
    capacities = np.array([p.capacity for p in pts], dtype=float)
    energies = np.array([p.energy for p in pts], dtype=float)
    if eps is None:
        eps = rest_threshold(currents)
    raw = classify_samples(currents, eps)

    ch, di = b.charge_span, b.discharge_span
    charge_capacity = _span_max(capacities, ch)
    discharge_capacity = _span_max(capacities, di)
    charge_energy = _span_max(energies, ch)
    discharge_energy = _span_max(energies, di)

    ce = discharge_capacity / charge_capacity if charge_capacity > 0 else None
    charge_ret = discharge_ret = None
    if ref is not None:
        if ref.charge > 0:
            charge_ret = charge_capacity / ref.charge
        if ref.discharge > 0:
            discharge_ret = discharge_capacity / ref.discharge

    power_all = voltages * currents
    sp = slice(s, e + 1)
    power = float(np.mean(power_all[sp]))
    min_power = float(np.min(power_all[sp]))
    max_power = float(np.max(power_all[sp]))
    active = np.abs(currents[sp]) > eps
    average_power = float(np.mean(power_all[sp][active])) if np.any(active) else None

    discharge_power = average_discharge_power = None
    min_discharge_power = max_discharge_power = None
    if di is not None:
        dsl = slice(di[0], di[1] + 1)
        pd = np.abs(power_all[dsl])
        discharge_power = float(np.mean(pd))
        min_discharge_power = float(np.min(pd))
        max_discharge_power = float(np.max(pd))
        d_active = np.abs(currents[dsl]) > eps
        if np.any(d_active):
            average_discharge_power = float(np.mean(pd[d_active]))

    temps = [p.temperature for p in pts[s:e + 1] if p.temperature is not None]
    temperature = float(np.mean(temps)) if temps else None

    end_rest_voltage = float(voltages[e]) if raw[e] == REST else None

    return CycleStats(
        cycle_index=b.cycle_index,
        first_point_index=s,
        point_count=e - s + 1,
        charge_capacity=charge_capacity,
        discharge_capacity=discharge_capacity,
        charge_energy=charge_energy,
        discharge_energy=discharge_energy,
        charge_capacity_retention=charge_ret,
        discharge_capacity_retention=discharge_ret,
        coulombic_efficiency=ce,
        mid_voltage=_mid_voltage(voltages, capacities, di),
        end_voltage=float(voltages[ch[1]]) if ch else None,
        end_rest_voltage=end_rest_voltage,
        discharge_end_voltage=float(voltages[di[1]]) if di else None,
        start_charge_voltage=float(voltages[ch[0]]) if ch else None,
        start_discharge_voltage=float(voltages[di[0]]) if di else None,
        start_current=float(currents[ch[0]]) if ch else None,
        end_current=float(currents[ch[1]]) if ch else None,
        discharge_end_current=float(currents[di[1]]) if di else None,
        start_discharge_current=float(currents[di[0]]) if di else None,
        power=power,
        average_power=average_power,
        min_power=min_power,
        max_power=max_power,
        discharge_power=discharge_power,
        average_discharge_power=average_discharge_power,
        min_discharge_power=min_discharge_power,
        max_discharge_power=max_discharge_power,
        resistance_ohms=_pulse_resistance(voltages, currents, ch, eps),
        discharge_resistance=_pulse_resistance(voltages, currents, di, eps),
        temperature=temperature,
        charge_voltage=float(np.mean(voltages[ch[0]:ch[1] + 1])) if ch else None,
        discharge_voltage=float(np.mean(voltages[di[0]:di[1] + 1])) if di else None,
        voltage=float(np.mean(voltages[sp])),
    )


def find_reference(stats: list[CycleStats]) -> Optional[ReferenceCapacities]:
    """First cycle with both nonzero charge and discharge capacity."""
    for cs in stats:
        if cs.charge_capacity > 0 and cs.discharge_capacity > 0:
            return ReferenceCapacities(cs.charge_capacity, cs.discharge_capacity)
    return None


def compute_all_cycle_stats(d: CanonicalDataset,
                            boundaries: Optional[list[CycleBoundary]] = None,
                            eps: Optional[float] = None) -> list[CycleStats]:
    """Stats for every cycle, with retention against the reference cycle."""
    if boundaries is None:
        boundaries = segment_cycles(d, eps=eps)
    base = [compute_cycle_stats(d, b, ref=None, eps=eps) for b in boundaries]
    ref = find_reference(base)
    if ref is None:
        return base
    out = []
    for cs in base:
        out.append(replace(
            cs,
            charge_capacity_retention=(
                cs.charge_capacity / ref.charge if ref.charge > 0 else None),
            discharge_capacity_retention=(
                cs.discharge_capacity / ref.discharge if ref.discharge > 0 else None),
        ))
    return out


# ---------------------------------------------------------------------------
# Cross-cycle rollup
# ---------------------------------------------------------------------------

_BASE_EXTRACTORS = {
    "ChargeCapacity": lambda c: c.charge_capacity,
    "ChargeCapacityRetention": lambda c: c.charge_capacity_retention,
    "ChargeEnergy": lambda c: c.charge_energy,
    "ChargeVoltage": lambda c: c.charge_voltage,
    "CoulombicEfficiency": lambda c: c.coulombic_efficiency,
    "DischargeCapacity": lambda c: c.discharge_capacity,
    "DischargeCapacityRetention": lambda c: c.discharge_capacity_retention,
    "DischargeEndCurrent": lambda c: c.discharge_end_current,
    "DischargeEndVoltage": lambda c: c.discharge_end_voltage,
    "DischargeEnergy": lambda c: c.discharge_energy,
    "DischargePower": lambda c: c.discharge_power,
    "DischargeResistance": lambda c: c.discharge_resistance,
    "DischargeVoltage": lambda c: c.discharge_voltage,
    "EndCurrent": lambda c: c.end_current,
    "EndVoltage": lambda c: c.end_voltage,
    "MidVoltage": lambda c: c.mid_voltage,
    "Power": lambda c: c.power,
    "ResistanceOhms": lambda c: c.resistance_ohms,
    "Voltage": lambda c: c.voltage,
}

_STAT_SUFFIXES = ("Average", "First", "Last", "Max", "Min",
                  "StdDev", "StdError", "Variance")


def _split_rollup_key(key: str) -> tuple[str, str]:
    for suffix in _STAT_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)], suffix
    raise KeyError(key)


def _sample_stddev(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(np.array(values), ddof=1))


def compute_rollup(cycles: list[CycleStats]) -> StatisticRollup:
    """Aggregate per-cycle values into the cross-cycle statistics payload.

    Sample (n-1) statistics; a single available value yields zero spread by
    convention, flagged via ``single_cycle`` when the whole input is one
    cycle.  Cycles where a base value is absent are skipped for that base.
    """
    if not cycles:
        raise EmptyInput("no cycles")
    columns: dict[str, Optional[float]] = {}
    series: dict[str, list[float]] = {}
    for base, extract in _BASE_EXTRACTORS.items():
        series[base] = [v for v in (extract(c) for c in cycles) if v is not None]

    for key in ROLLUP_KEYS:
        base, stat = _split_rollup_key(key)
        values = series[base]
        if not values:
            columns[key] = None
            continue
        if stat == "Average":
            columns[key] = float(np.mean(values))
        elif stat == "First":
            columns[key] = values[0]
        elif stat == "Last":
            columns[key] = values[-1]
        elif stat == "Max":
            columns[key] = float(np.max(values))
        elif stat == "Min":
            columns[key] = float(np.min(values))
        elif stat == "StdDev":
            columns[key] = _sample_stddev(values)
        elif stat == "StdError":
            columns[key] = _sample_stddev(values) / math.sqrt(len(values))
        elif stat == "Variance":
            columns[key] = _sample_stddev(values) ** 2
    return StatisticRollup(
        columns=columns,
        n_cycles=len(cycles),
        single_cycle=len(cycles) == 1,
    )


def process_dataset(d: CanonicalDataset, eps: Optional[float] = None
                    ) -> tuple[CanonicalDataset, list[CycleBoundary],
                               list[CycleStats], StatisticRollup, DerivationReport]:
    """Full derivation pipeline: derive fields, segment, write back cycle
    indices, and compute per-cycle stats plus the rollup."""
    derived, report = derive_fields(d, eps=eps)
    boundaries = segment_cycles(derived, eps=eps)
    indexed = with_cycle_index(derived, boundaries)
    stats = compute_all_cycle_stats(indexed, boundaries, eps=eps)
    rollup = compute_rollup(stats)
    return indexed, boundaries, stats, rollup, report
