"""Synthetic dataset builders shared by the test suite."""

from __future__ import annotations

import random

from cyclebench.model import CanonicalDataset, DataPoint


def make_dataset(samples, channel=0, source_format="synthetic",
                 extra=()) -> CanonicalDataset:
    """Build a dataset from (time, voltage, current, *optional) tuples.

    Optional per-sample entries, in order: temperature, cycle_index,
    capacity.
    """
    points = []
    for idx, sample in enumerate(samples):
        time, voltage, current = sample[0], sample[1], sample[2]
        temperature = sample[3] if len(sample) > 3 else None
        cycle_index = sample[4] if len(sample) > 4 else None
        capacity = sample[5] if len(sample) > 5 else None
        points.append(DataPoint(
            index=idx, time=time, voltage=voltage, current=current,
            temperature=temperature, cycle_index=cycle_index,
            capacity=capacity))
    return CanonicalDataset(points=tuple(points), extra=tuple(extra),
                            channel=channel, source_format=source_format)


def d1_dataset(dt: float = 60.0) -> CanonicalDataset:
    """The closed-form check dataset: charge 1 A for 3600 s with voltage
    3.0 -> 4.0, then discharge -1 A for 3240 s with voltage 4.0 -> 3.0."""
    samples = []
    n_charge = int(3600 / dt)
    for k in range(n_charge + 1):
        t = k * dt
        samples.append((t, 3.0 + t / 3600.0, 1.0))
    n_discharge = int(3240 / dt)
    for k in range(n_discharge + 1):
        t = 3600.0 + dt + k * dt
        frac = (k * dt) / 3240.0
        samples.append((t, 4.0 - frac, -1.0))
    return make_dataset(samples)


def random_piecewise_dataset(rng: random.Random,
                             max_cycles: int = 10) -> CanonicalDataset:
    """Random piecewise-constant-current cycling data.

    Charge/rest/discharge/rest segments with random amplitudes, durations,
    and irregular sample spacing; occasionally starts with a bare discharge
    or ends with a charge-only partial cycle; sometimes carries a source
    cycle_index column and/or temperature.
    """
    n_cycles = rng.randint(1, max_cycles)
    with_cycle_index = rng.random() < 0.5
    with_temperature = rng.random() < 0.5
    leading_discharge = rng.random() < 0.10
    trailing_charge_only = rng.random() < 0.10

    samples = []
    t = 0.0
    v = rng.uniform(3.0, 3.4)

    def advance() -> float:
        nonlocal t
        t += rng.uniform(1.0, 60.0)
        return t

    def emit(current: float, cycle: int) -> None:
        nonlocal v
        v = min(4.8, max(2.2, v))
        temp = 20.0 + 10.0 * rng.random() if with_temperature else None
        samples.append((t, v, current, temp,
                        cycle if with_cycle_index else None))

    def segment(current: float, n: int, v_target: float, cycle: int) -> None:
        nonlocal v
        v_start = v
        for k in range(n):
            v = v_start + (v_target - v_start) * (k / max(1, n - 1)) \
                + rng.uniform(-0.005, 0.005)
            emit(current, cycle)
            advance()

    cycle_number = 0
    if leading_discharge:
        cycle_number += 1
        segment(-rng.uniform(0.1, 2.0), rng.randint(3, 20),
                v - rng.uniform(0.5, 1.0), cycle_number)
        if rng.random() < 0.7:
            segment(0.0, rng.randint(2, 6), v + 0.03, cycle_number)

    for _ in range(n_cycles):
        cycle_number += 1
        segment(rng.uniform(0.1, 2.0), rng.randint(3, 25),
                v + rng.uniform(0.5, 1.2), cycle_number)
        if rng.random() < 0.7:
            segment(0.0, rng.randint(2, 6), v - 0.02, cycle_number)
        segment(-rng.uniform(0.1, 2.0), rng.randint(3, 25),
                v - rng.uniform(0.5, 1.2), cycle_number)
        if rng.random() < 0.7:
            segment(0.0, rng.randint(2, 6), v + 0.02, cycle_number)

    if trailing_charge_only:
        cycle_number += 1
        segment(rng.uniform(0.1, 2.0), rng.randint(3, 15),
                v + rng.uniform(0.3, 0.8), cycle_number)

    return make_dataset(samples)
