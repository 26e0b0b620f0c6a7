"""Diagnostic analyses: cycle selection, voltage profiles, differential
capacity with peak tracking, titration-pulse diffusivity, and plot-series
assembly.

All functions here are pure; callers may run analyses for different projects
concurrently without coordination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import rest_threshold, segment_cycles
from .errors import (
    BadBinWidth,
    DegenerateCycle,
    EmptySelection,
    MixedDomain,
    NonPositiveDeltaEt,
    NoPulsesFound,
    UnknownVariable,
)
from .model import CanonicalDataset


# ---------------------------------------------------------------------------
# Cycle selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleSelector:
    """Which cycles an analysis covers.

    Modes: ``all``; ``interval`` (start, start+step, ... while <= available);
    ``explicit`` (given list, sorted and deduplicated); ``range`` (lo..hi).
    """

    mode: str = "all"
    start: int = 1
    step: int = 1
    indices: tuple[int, ...] = ()
    lo: int = 1
    hi: int = 1

    @staticmethod
    def all() -> "CycleSelector":
        return CycleSelector(mode="all")

    @staticmethod
    def interval(start: int, step: int) -> "CycleSelector":
        return CycleSelector(mode="interval", start=start, step=step)

    @staticmethod
    def explicit(indices: Sequence[int]) -> "CycleSelector":
        return CycleSelector(mode="explicit", indices=tuple(indices))

    @staticmethod
    def range(lo: int, hi: int) -> "CycleSelector":
        return CycleSelector(mode="range", lo=lo, hi=hi)

    def to_dict(self) -> dict:
        if self.mode == "interval":
            return {"mode": "interval", "start": self.start, "step": self.step}
        if self.mode == "explicit":
            return {"mode": "explicit", "indices": list(self.indices)}
        if self.mode == "range":
            return {"mode": "range", "lo": self.lo, "hi": self.hi}
        return {"mode": "all"}

    @staticmethod
    def from_dict(doc: dict) -> "CycleSelector":
        mode = doc.get("mode", "all")
        if mode == "interval":
            return CycleSelector.interval(int(doc["start"]), int(doc["step"]))
        if mode == "explicit":
            return CycleSelector.explicit([int(i) for i in doc.get("indices", [])])
        if mode == "range":
            return CycleSelector.range(int(doc["lo"]), int(doc["hi"]))
        if mode == "all":
            return CycleSelector.all()
        raise ValueError(f"unknown selector mode {mode!r}")

    def validate(self) -> None:
        if self.mode == "interval" and (self.start < 1 or self.step < 1):
            raise ValueError("interval start and step must be >= 1")
        if self.mode == "range" and self.lo > self.hi:
            raise ValueError(f"range lo {self.lo} exceeds hi {self.hi}")
        if self.mode == "explicit" and not self.indices:
            raise ValueError("explicit selector needs at least one index")
        if self.mode not in ("all", "interval", "explicit", "range"):
            raise ValueError(f"unknown selector mode {self.mode!r}")


def resolve_cycles(sel: CycleSelector, available: int) -> list[int]:
    """Resolve a selector to sorted, deduplicated 1-based cycle indices.

    Idempotent: resolving the explicit form of the output is the output.
    """
    sel.validate()
    if available < 1:
        raise EmptySelection("no cycles available")
    if sel.mode == "all":
        out = list(range(1, available + 1))
    elif sel.mode == "interval":
        out = list(range(sel.start, available + 1, sel.step))
    elif sel.mode == "explicit":
        out = sorted({i for i in sel.indices if 1 <= i <= available})
    else:
        out = [i for i in range(sel.lo, sel.hi + 1) if 1 <= i <= available]
    if not out:
        raise EmptySelection(f"selector {sel.to_dict()} matches no cycle "
                             f"of {available}")
    return out


# ---------------------------------------------------------------------------
# Half-cycle extraction
# ---------------------------------------------------------------------------

def _find_boundary(d: CanonicalDataset, cycle: int) -> CycleBoundary:
    for b in segment_cycles(d):
        if b.cycle_index == cycle:
            return b
    raise DegenerateCycle(f"cycle {cycle} not found")


def _half_cycle(d: CanonicalDataset, cycle: int, direction: str
                ) -> tuple[np.ndarray, np.ndarray]:
    """(capacity, voltage) arrays over the requested half-cycle span."""
    if direction not in ("charge", "discharge"):
        raise ValueError(f"direction must be charge or discharge, got {direction!r}")
    b = _find_boundary(d, cycle)
    span = b.charge_span if direction == "charge" else b.discharge_span
    if span is None or span[1] - span[0] + 1 < 2:
        raise DegenerateCycle(
            f"cycle {cycle} has no usable {direction} half-cycle")
    pts = d.points[span[0]:span[1] + 1]
    if any(p.capacity is None for p in pts):
        raise ValueError("capacity column required; derive fields first")
    q = np.array([p.capacity for p in pts], dtype=float)
    v = np.array([p.voltage for p in pts], dtype=float)
    return q, v


def voltage_profile(d: CanonicalDataset, cycle: int, direction: str
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Voltage vs capacity series for one half-cycle, in source order."""
    return _half_cycle(d, cycle, direction)


# ---------------------------------------------------------------------------
# Differential capacity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DqdvCurve:
    """Capacity increment per voltage bin for one half-cycle.

    ``voltage_bins`` are uniform bin centers; ``dqdv`` is ampere-hours per
    volt and non-negative for both directions.  Pre-smoothing, the binned
    increments sum back to the half-cycle capacity (bin conservation).
    """

    cycle_index: int
    direction: str
    voltage_bins: np.ndarray
    dqdv: np.ndarray
    bin_width: float
    smoothing: str = "none"


def _accumulate_bins(q: np.ndarray, v: np.ndarray, vmin: float, dv: float,
                     n_bins: int) -> np.ndarray:
    """Distribute each segment's capacity increment across the voltage bins
    it sweeps, proportionally to voltage overlap."""
    dq_bins = np.zeros(n_bins)
    for i in range(1, len(q)):
        dq = q[i] - q[i - 1]
        if dq <= 0:
            continue
        v0, v1 = v[i - 1], v[i]
        lo, hi = (v0, v1) if v0 <= v1 else (v1, v0)
        if hi == lo:
            k = min(n_bins - 1, max(0, int((lo - vmin) / dv)))
            dq_bins[k] += dq
            continue
        k_lo = min(n_bins - 1, max(0, int((lo - vmin) / dv)))
        k_hi = min(n_bins - 1, max(0, int((hi - vmin) / dv)))
        if k_lo == k_hi:
            dq_bins[k_lo] += dq
            continue
        span = hi - lo
        for k in range(k_lo, k_hi + 1):
            b_lo = vmin + k * dv
            b_hi = b_lo + dv
            overlap = min(hi, b_hi) - max(lo, b_lo)
            if overlap > 0:
                dq_bins[k] += dq * overlap / span
    return dq_bins


def _moving_average_reflect(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return values.copy()
    if window % 2 == 0:
        window += 1
    half = window // 2
    padded = np.concatenate([values[half:0:-1], values, values[-2:-half - 2:-1]])
    kernel = np.ones(window) / window
    return np.convolve(padded, kernel, mode="valid")


def dqdv(d: CanonicalDataset, cycle: int, direction: str,
         dv: float = 0.005, smooth_window: int = 0) -> DqdvCurve:
    """Differential capacity by voltage-binned accumulation.

    Capacity change is accumulated into uniform voltage bins of width ``dv``
    spanning the half-cycle's voltage range; dqdv = dQ_bin / dv.  Optional
    centered moving-average smoothing (reflective edges) is applied after
    binning, so bin conservation holds pre-smoothing.
    """
    q, v = _half_cycle(d, cycle, direction)
    vmin, vmax = float(np.min(v)), float(np.max(v))
    span = vmax - vmin
    if dv <= 0 or (span > 0 and dv > span):
        raise BadBinWidth(f"dv={dv} invalid for voltage span {span}")
    if span == 0:
        raise BadBinWidth("half-cycle has zero voltage span")
    n_bins = max(1, math.ceil(span / dv - 1e-12))
    dq_bins = _accumulate_bins(q, v, vmin, dv, n_bins)
    centers = vmin + (np.arange(n_bins) + 0.5) * dv
    values = dq_bins / dv
    smoothing = "none"
    if smooth_window and smooth_window > 1:
        values = _moving_average_reflect(values, smooth_window)
        actual = smooth_window + 1 if smooth_window % 2 == 0 else smooth_window
        smoothing = f"moving_average(window={actual}, reflect)"
    return DqdvCurve(
        cycle_index=cycle,
        direction=direction,
        voltage_bins=centers,
        dqdv=values,
        bin_width=dv,
        smoothing=smoothing,
    )


# ---------------------------------------------------------------------------
# Peak detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Peak:
    position: float
    intensity: float
    prominence: float


def find_peaks(curve: DqdvCurve, min_prominence: Optional[float] = None
               ) -> list[Peak]:
    """Local maxima of the curve with prominence above the threshold.

    Prominence is measured against the lower of the two flanking minima
    (the minimum between this peak and the neighbouring peak or curve end on
    each side), which makes it invariant to constant offsets.  Default
    threshold: 5% of the curve maximum.
    """
    y = np.asarray(curve.dqdv, dtype=float)
    x = np.asarray(curve.voltage_bins, dtype=float)
    n = len(y)
    if n < 3:
        return []
    if min_prominence is None:
        top = float(np.max(y))
        min_prominence = 0.05 * abs(top)

    peak_idx: list[int] = []
    i = 1
    while i < n - 1:
        if y[i] > y[i - 1]:
            j = i
            while j + 1 < n and y[j + 1] == y[i]:
                j += 1
            if j < n - 1 and y[j + 1] < y[i]:
                peak_idx.append((i + j) // 2)
            i = j + 1
        else:
            i += 1

    peaks: list[Peak] = []
    for k, idx in enumerate(peak_idx):
        left_edge = peak_idx[k - 1] if k > 0 else 0
        right_edge = peak_idx[k + 1] if k + 1 < len(peak_idx) else n - 1
        left_min = float(np.min(y[left_edge:idx + 1]))
        right_min = float(np.min(y[idx:right_edge + 1]))
        prominence = float(y[idx]) - min(left_min, right_min)
        if prominence >= min_prominence and prominence > 0:
            peaks.append(Peak(
                position=float(x[idx]),
                intensity=float(y[idx]),
                prominence=prominence,
            ))
    peaks.sort(key=lambda p: p.position)
    return peaks


# ---------------------------------------------------------------------------
# Titration-pulse diffusivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GittConfig:
    """Geometry and segmentation inputs for pulse diffusivity.

    ``molar_volume_term`` is n_m * V_m in cm^3, ``contact_area`` the
    electrode/electrolyte contact area in cm^2; their ratio is the geometry
    length that enters the diffusivity squared.  ``ir_exclude_samples``
    removes the ohmic jump at the pulse front from the transient voltage
    change.
    """

    molar_volume_term: float
    contact_area: float
    rest_threshold: Optional[float] = None
    ir_exclude_samples: int = 1

    @property
    def geometry_term(self) -> float:
        return self.molar_volume_term / self.contact_area


@dataclass(frozen=True)
class GittStep:
    step_start_time: float
    pulse_duration: float
    delta_es: float
    delta_et: float
    diffusivity: float


def diffusivity(tau: float, delta_es: float, delta_et: float,
                geometry_term: float) -> float:
    """Solid-state diffusivity from one titration step:
    D = 4/(pi*tau) * geometry^2 * (dEs/dEt)^2, in cm^2/s."""
    if delta_et <= 0:
        raise NonPositiveDeltaEt(f"delta_et={delta_et}")
    return 4.0 / (math.pi * tau) * geometry_term ** 2 * (delta_es / delta_et) ** 2


def gitt(d: CanonicalDataset, cfg: GittConfig) -> list[GittStep]:
    """Per-step diffusivity for a pulse/rest titration dataset.

    Steps are segmented by the rest-current threshold.  For each pulse
    bracketed by rests: tau is the pulse's sampled duration, the transient
    change dEt spans the pulse with the first ``ir_exclude_samples`` samples
    excluded, and the steady-state change dEs is the difference of the
    equilibrated (final) rest voltages before and after.
    """
    if not d.points:
        raise NoPulsesFound("empty dataset")
    t = np.array([p.time for p in d.points], dtype=float)
    v = np.array([p.voltage for p in d.points], dtype=float)
    currents = np.array([p.current for p in d.points], dtype=float)
    eps = cfg.rest_threshold if cfg.rest_threshold is not None \
        else rest_threshold(currents)
    active = np.abs(currents) > eps

    runs: list[tuple[bool, int, int]] = []
    start = 0
    for i in range(1, len(active) + 1):
        if i == len(active) or active[i] != active[start]:
            runs.append((bool(active[start]), start, i - 1))
            start = i
    if not any(is_pulse for is_pulse, _, _ in runs):
        raise NoPulsesFound("no samples above the rest-current threshold")

    steps: list[GittStep] = []
    for k, (is_pulse, s, e) in enumerate(runs):
        if not is_pulse:
            continue
        if k == 0 or k == len(runs) - 1:
            continue  # needs an equilibrated rest on both sides
        prev_rest = runs[k - 1]
        next_rest = runs[k + 1]
        skip = cfg.ir_exclude_samples
        if e - s < skip + 1:
            continue  # too short to measure a transient
        tau = float(t[e] - t[s])
        if tau <= 0:
            continue
        delta_et = abs(float(v[e] - v[s + skip]))
        delta_es = abs(float(v[next_rest[2]] - v[prev_rest[2]]))
        steps.append(GittStep(
            step_start_time=float(t[s]),
            pulse_duration=tau,
            delta_es=delta_es,
            delta_et=delta_et,
            diffusivity=diffusivity(tau, delta_es, delta_et, cfg.geometry_term),
        ))
    if not steps:
        raise NoPulsesFound("no pulse bracketed by rests with enough samples")
    return steps


# ---------------------------------------------------------------------------
# Plot series
# ---------------------------------------------------------------------------

CYCLE_DOMAIN = "cycle"
POINT_DOMAIN = "point"


@dataclass(frozen=True)
class PlotVariable:
    var_id: str
    domain: str
    label: str
    cycle_key: Optional[str] = None
    point_field: Optional[str] = None
    compute: Optional[Callable[[dict], Optional[float]]] = None


def _ce_of_row(row: dict) -> Optional[float]:
    cc = row.get("ChargeCapacity")
    dc = row.get("DischargeCapacity")
    if cc and cc > 0 and dc is not None:
        return dc / cc
    return None


VARIABLE_CATALOG: dict[str, PlotVariable] = {}
_ALIASES = {
    "cycle": "cycle_index",
    "ce": "coulombic_efficiency",
    "retention": "discharge_capacity_retention",
}


def _register_variables() -> None:
    cycle_vars = [
        ("cycle_index", "Cycle", "Index", None),
        ("charge_capacity", "Charge Capacity (Ah)", "ChargeCapacity", None),
        ("discharge_capacity", "Discharge Capacity (Ah)", "DischargeCapacity", None),
        ("charge_energy", "Charge Energy (Wh)", "ChargeEnergy", None),
        ("discharge_energy", "Discharge Energy (Wh)", "DischargeEnergy", None),
        ("coulombic_efficiency", "Coulombic Efficiency", None, _ce_of_row),
        ("charge_capacity_retention", "Charge Capacity Retention",
         "ChargeCapacityRetention", None),
        ("discharge_capacity_retention", "Discharge Capacity Retention",
         "DischargeCapacityRetention", None),
        ("mid_voltage", "Mid Voltage (V)", "MidVoltage", None),
        ("end_voltage", "End Voltage (V)", "EndVoltage", None),
        ("avg_power", "Average Power (W)", "AveragePower", None),
        ("avg_temperature", "Temperature (degC)", "Temperature", None),
    ]
    for var_id, label, key, compute in cycle_vars:
        VARIABLE_CATALOG[var_id] = PlotVariable(
            var_id=var_id, domain=CYCLE_DOMAIN, label=label,
            cycle_key=key, compute=compute)
    point_vars = [
        ("time", "Time (s)"),
        ("voltage", "Voltage (V)"),
        ("current", "Current (A)"),
        ("capacity", "Capacity (Ah)"),
        ("energy", "Energy (Wh)"),
        ("power", "Power (W)"),
        ("temperature", "Temperature (degC)"),
    ]
    for var_id, label in point_vars:
        VARIABLE_CATALOG[var_id] = PlotVariable(
            var_id=var_id, domain=POINT_DOMAIN, label=label, point_field=var_id)


_register_variables()


def lookup_variable(var_id: str) -> PlotVariable:
    resolved = _ALIASES.get(var_id, var_id)
    if resolved not in VARIABLE_CATALOG:
        raise UnknownVariable(var_id)
    return VARIABLE_CATALOG[resolved]


@dataclass(frozen=True)
class PlotSource:
    """One project's data made available to the plot assembler."""

    label: str
    cycle_rows: list[dict] = field(default_factory=list)
    dataset: Optional[CanonicalDataset] = None


@dataclass(frozen=True)
class Series:
    project_label: str
    variable: str
    axis: int
    x: list[float]
    y: list[Optional[float]]


@dataclass(frozen=True)
class PlotSeries:
    """Assembled plot payload: one x variable, series for up to two y
    variables per project."""

    x_variable: str
    series: list[Series]


def decimate(x: list[float], y: list[float], max_points: int
             ) -> tuple[list[float], list[float]]:
    """Min/max-preserving decimation to at most max_points points.

    Keeps the first and last samples and, per bucket, the samples holding
    the bucket's minimum and maximum, so rendered extrema are exact.
    """
    n = len(x)
    if n <= max_points or max_points < 4:
        return list(x), list(y)
    n_buckets = (max_points - 2) // 2
    keep: set[int] = {0, n - 1}
    edges = np.linspace(1, n - 1, n_buckets + 1, dtype=int)
    ya = np.asarray(y, dtype=float)
    for b in range(n_buckets):
        lo, hi = int(edges[b]), int(edges[b + 1])
        if hi <= lo:
            continue
        seg = ya[lo:hi]
        keep.add(lo + int(np.argmin(seg)))
        keep.add(lo + int(np.argmax(seg)))
    ordered = sorted(keep)
    return [x[i] for i in ordered], [y[i] for i in ordered]


def plot_series(sources: list[PlotSource], x_var: str, y1_var: str,
                y2_var: Optional[str] = None, max_points: int = 2000
                ) -> PlotSeries:
    """Assemble plot data: one series per (project, y variable).

    Cycle-domain variables come from the pre-computed cycle rows,
    point-domain variables from the raw points; mixing domains between x and
    any y is an error.
    """
    x_pv = lookup_variable(x_var)
    y_pvs = [(1, lookup_variable(y1_var))]
    if y2_var:
        y_pvs.append((2, lookup_variable(y2_var)))
    for _, pv in y_pvs:
        if pv.domain != x_pv.domain:
            raise MixedDomain(
                f"x variable {x_var!r} is {x_pv.domain}-domain but "
                f"{pv.var_id!r} is {pv.domain}-domain")

    out: list[Series] = []
    for source in sources:
        for axis, pv in y_pvs:
            if x_pv.domain == CYCLE_DOMAIN:
                xs, ys = [], []
                for row in source.cycle_rows:
                    xv = _cycle_value(x_pv, row)
                    yv = _cycle_value(pv, row)
                    if xv is None:
                        continue
                    xs.append(float(xv))
                    ys.append(None if yv is None else float(yv))
            else:
                if source.dataset is None:
                    raise ValueError(f"{source.label}: point data not loaded")
                xs_all = source.dataset.column(x_pv.point_field)
                ys_all = source.dataset.column(pv.point_field)
                xs, ys = [], []
                for xv, yv in zip(xs_all, ys_all):
                    if xv is None:
                        continue
                    xs.append(float(xv))
                    ys.append(None if yv is None else float(yv))
            if len(xs) > max_points and all(v is not None for v in ys):
                xs, ys = decimate(xs, ys, max_points)
            out.append(Series(
                project_label=source.label,
                variable=pv.var_id,
                axis=axis,
                x=xs,
                y=ys,
            ))
    return PlotSeries(x_variable=x_pv.var_id, series=out)


def _cycle_value(pv: PlotVariable, row: dict) -> Optional[float]:
    if pv.compute is not None:
        return pv.compute(row)
    return row.get(pv.cycle_key)
