from __future__ import annotations

import pytest

from cyclebench.model import (
    CanonicalDataset,
    CYCLE_COLUMNS,
    DataPoint,
    ExtraDataValue,
    ROLLUP_KEYS,
    dataset_bytes,
    points_csv_bytes,
    points_from_csv_bytes,
    read_dataset_dir,
    validate_dataset,
    write_dataset_dir,
)

from synth import make_dataset


def test_validate_monotone_time_ok():
    d = make_dataset([(0, 3.0, 1.0), (1, 3.1, 1.0), (2, 3.2, 1.0)])
    assert validate_dataset(d) == []


def test_validate_time_regression_flagged():
    d = make_dataset([(0, 3.0, 1.0), (2, 3.1, 1.0), (1, 3.2, 1.0)])
    violations = validate_dataset(d)
    assert len(violations) == 1
    assert violations[0].code == "monotone-time"
    assert violations[0].point_index == 2


def test_validate_zero_voltage_flagged():
    samples = [(k, 3.0, 1.0) for k in range(6)]
    samples[5] = (5, 0.0, 1.0)
    violations = validate_dataset(make_dataset(samples))
    assert [(v.code, v.point_index) for v in violations] == \
        [("positive-voltage", 5)]


def test_validate_power_consistency():
    p = DataPoint(index=0, time=0.0, voltage=3.0, current=2.0, power=6.0)
    bad = DataPoint(index=1, time=1.0, voltage=3.0, current=2.0, power=6.1)
    d = CanonicalDataset(points=(p, bad))
    codes = [v.code for v in validate_dataset(d)]
    assert codes == ["power-consistency"]


def test_validate_extra_delta_rule():
    d = make_dataset([(0, 3.0, 1.0), (1, 3.0, 1.0)],
                     extra=[ExtraDataValue(0, "VARx1", "5"),
                            ExtraDataValue(1, "VARx1", "5")])
    codes = [v.code for v in validate_dataset(d)]
    assert codes == ["extra-delta"]


def test_empty_dataset_invalid():
    violations = validate_dataset(CanonicalDataset(points=()))
    assert violations[0].code == "non-empty"


def test_points_csv_round_trip():
    points = (
        DataPoint(index=0, time=0.0, voltage=3.123456789012345, current=1.0,
                  capacity=0.0, energy=0.0, power=3.123456789012345,
                  temperature=25.0, cycle_index=1, step_index=0, cycle_step=0),
        DataPoint(index=1, time=1e-3, voltage=4.2, current=-0.5,
                  wall_time=1565614380.25, resistance=0.012),
    )
    assert points_from_csv_bytes(points_csv_bytes(points)) == points


def test_dataset_dir_round_trip(tmp_path):
    d = CanonicalDataset(
        points=(DataPoint(index=0, time=0.0, voltage=3.0, current=0.25),
                DataPoint(index=1, time=7.5, voltage=3.1, current=0.25)),
        extra=(ExtraDataValue(0, "FLGx1", "0"),),
        channel=17,
        source_format="maccor-csv",
        unit_provenance={"time": "s", "current": "A"},
        stitched_from=("a.csv", "b.csv"),
    )
    write_dataset_dir(d, tmp_path / "ds")
    back = read_dataset_dir(tmp_path / "ds")
    assert back == d
    assert dataset_bytes(back) == dataset_bytes(d)


def test_nan_rejected_in_csv():
    p = DataPoint(index=0, time=0.0, voltage=float("nan"), current=1.0)
    with pytest.raises(ValueError):
        points_csv_bytes((p,))


def test_wire_column_lists_are_fixed():
    # the wire contract: 32 cycle columns, 51 rollup keys
    assert len(CYCLE_COLUMNS) == 32
    assert CYCLE_COLUMNS[0] == "ProjectId"
    assert CYCLE_COLUMNS[-1] == "AveragePower"
    assert len(ROLLUP_KEYS) == 51
    assert ROLLUP_KEYS[0] == "ChargeCapacityAverage"
    assert ROLLUP_KEYS[-1] == "VoltageVariance"
