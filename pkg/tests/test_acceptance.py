"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers.  Run with `pytest tests/test_acceptance.py -v -s`.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cyclebench import engine
from cyclebench.analysis import GittConfig, diffusivity, dqdv, find_peaks, gitt
from cyclebench.errors import BadBinWidth, DegenerateCycle
from cyclebench.model import (
    CYCLE_COLUMNS,
    ProjectRecord,
    cycle_stats_row,
    dataset_bytes,
)
from cyclebench.parsers import builtin_registry, detect_format, parse, \
    parse_and_normalize
from cyclebench.service import create_app
from cyclebench.service.auth import Users
from cyclebench.store import Query, Store

from conftest import FIXTURE_FILES, FIXTURES
from oracle import oracle_cycles, oracle_rollup
from synth import d1_dataset, make_dataset, random_piecewise_dataset

RTOL = 1e-9


def rel_close(a, b, rtol=RTOL, atol=1e-12):
    if a is None and b is None:
        return True
    if a is None or b is None:
        return False
    return abs(a - b) <= max(atol, rtol * max(abs(a), abs(b)))


def test_parser_corpus():
    """Every shipped profile parses its fixture; row conservation and
    determinism hold; whole corpus under 10 s."""
    t0 = time.monotonic()
    registry = builtin_registry()
    formats_seen = set()
    multi_channel_seen = False
    numeric_ext_seen = False
    for name in FIXTURE_FILES:
        data = (FIXTURES / name).read_bytes()
        fmt = detect_format(name, data[:4096], registry)
        formats_seen.add(fmt)
        profile = registry.get(fmt)

        result = parse(data, profile, file_name=name)
        text = data.decode(profile.encoding)
        body = [ln for ln in text.splitlines()
                if ln.strip() and not (profile.comment_prefix
                                       and ln.startswith(profile.comment_prefix))]
        rows_in = len(body) - profile.header_row_count
        assert result.row_count + len(result.malformed) == rows_in, name

        first = parse_and_normalize(data, profile, file_name=name)
        second = parse_and_normalize(data, profile, file_name=name)
        assert [dataset_bytes(a) for a in first] == \
            [dataset_bytes(b) for b in second], name
        assert all(len(d.points) > 0 for d in first)
        if len(first) > 1:
            multi_channel_seen = True
        if re.search(r"\.\d{3}$", name):
            numeric_ext_seen = True
            assert first[0].channel == int(name.rsplit(".", 1)[1])

    elapsed = time.monotonic() - t0
    assert len(FIXTURE_FILES) >= 6
    assert len(formats_seen) == 6, formats_seen
    assert multi_channel_seen and numeric_ext_seen
    assert elapsed < 10.0
    print(f"\nACCEPTANCE PASS: parser corpus "
          f"({len(FIXTURE_FILES)} files, {len(formats_seen)} formats, "
          f"{elapsed:.2f} s < 10 s)")


def _wire_row_from_oracle(row: dict) -> dict:
    from cyclebench.model import _CYCLE_FIELD_FOR_COLUMN
    out = {}
    for col in CYCLE_COLUMNS:
        if col in ("ProjectId", "StatisticMetaData"):
            continue
        out[col] = row[_CYCLE_FIELD_FOR_COLUMN[col]]
    return out


def test_cycle_stats_oracle():
    """100 randomized piecewise-constant datasets match the brute-force
    reference on every Cycles and rollup column within 1e-9 relative."""
    t0 = time.monotonic()
    rng = random.Random(0xC0FFEE)
    checked_cells = 0
    for case in range(100):
        d = random_piecewise_dataset(rng)
        derived, _ = engine.derive_fields(d)
        bounds = engine.segment_cycles(derived)
        stats = engine.compute_all_cycle_stats(derived, bounds)
        rollup = engine.compute_rollup(stats)

        expected_rows = oracle_cycles(d)
        assert len(stats) == len(expected_rows), f"case {case}"
        for cs, want in zip(stats, expected_rows):
            got_row = cycle_stats_row(cs, "", "")
            want_row = _wire_row_from_oracle(want)
            for col, want_value in want_row.items():
                assert rel_close(got_row[col], want_value), \
                    f"case {case} cycle {cs.cycle_index} {col}: " \
                    f"{got_row[col]} != {want_value}"
                checked_cells += 1
        want_rollup = oracle_rollup(expected_rows)
        for key, want_value in want_rollup.items():
            assert rel_close(rollup.columns[key], want_value), \
                f"case {case} rollup {key}: " \
                f"{rollup.columns[key]} != {want_value}"
            checked_cells += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    print(f"\nACCEPTANCE PASS: cycle-stats oracle "
          f"(100 datasets, {checked_cells} cells, {elapsed:.2f} s < 60 s)")


def test_d1_closed_form():
    """The constructed charge/discharge dataset reproduces its closed-form
    statistics to 1e-9 relative."""
    _, _, stats, _, _ = engine.process_dataset(d1_dataset())
    cs = stats[0]
    checks = {
        "charge_capacity": (cs.charge_capacity, 1.0),
        "discharge_capacity": (cs.discharge_capacity, 0.9),
        "coulombic_efficiency": (cs.coulombic_efficiency, 0.9),
        "charge_energy": (cs.charge_energy, 3.5),
        "mid_voltage": (cs.mid_voltage, 3.5),
    }
    for name, (got, want) in checks.items():
        assert rel_close(got, want), f"{name}: {got} != {want}"
    print("\nACCEPTANCE PASS: D1 closed-form "
          "(capacities 1.0/0.9 Ah, CE 0.9, energy 3.5 Wh, mid 3.5 V at 1e-9)")


def test_dqdv_criteria():
    """Bin conservation within 1% on random inputs; the two-plateau curve
    yields 2 peaks with a 0.6/0.4 area split within 5%; a linear profile is
    constant within 1e-6 away from the edges."""
    rng = random.Random(777)
    conserved = 0
    for _ in range(25):
        d = random_piecewise_dataset(rng, max_cycles=3)
        derived, _ = engine.derive_fields(d)
        stats = engine.compute_all_cycle_stats(derived)
        for cs in stats:
            for direction, cap in (("charge", cs.charge_capacity),
                                   ("discharge", cs.discharge_capacity)):
                if cap <= 1e-9:
                    continue
                try:
                    curve = dqdv(derived, cs.cycle_index, direction, dv=0.02)
                except (BadBinWidth, DegenerateCycle):
                    continue
                total = float(np.sum(curve.dqdv) * curve.bin_width)
                assert abs(total - cap) <= 0.01 * cap, \
                    f"{direction} cycle {cs.cycle_index}: {total} vs {cap}"
                conserved += 1
    assert conserved > 20

    # two plateaus at 3.4 / 3.9 V holding 0.6 / 0.4 Ah
    def q_of_v(v, w=0.02):
        return (0.6 / (1 + math.exp(-(v - 3.4) / w))
                + 0.4 / (1 + math.exp(-(v - 3.9) / w)))

    samples = [(float(k), 3.0 + 1.2 * k / 2399, 1.0, None, 1,
                q_of_v(3.0 + 1.2 * k / 2399)) for k in range(2400)]
    curve = dqdv(make_dataset(samples), 1, "charge", dv=0.01)
    peaks = find_peaks(curve)
    assert len(peaks) == 2, [p.position for p in peaks]
    left = float(np.sum(curve.dqdv[curve.voltage_bins < 3.65])
                 * curve.bin_width)
    right = float(np.sum(curve.dqdv[curve.voltage_bins >= 3.65])
                  * curve.bin_width)
    ratio = left / right
    assert abs(ratio - 1.5) <= 0.05 * 1.5, ratio

    linear = dqdv(engine.process_dataset(d1_dataset())[0], 1, "charge",
                  dv=0.01)
    interior = linear.dqdv[1:-1]
    assert np.max(np.abs(interior - 1.0)) < 1e-6
    print(f"\nACCEPTANCE PASS: dQ/dV ({conserved} half-cycles conserved "
          f"within 1%, plateau area ratio {ratio:.4f} ~ 1.5, linear flat "
          f"within 1e-6)")


def test_gitt_criteria():
    """Reference diffusivity within 1e-6 relative and exact quadratic
    scaling in the voltage-change ratio over 1000 random draws."""
    samples = []
    t = 0.0
    for _ in range(11):
        samples.append((t, 3.000, 0.0))
        t += 60.0
    n = 60
    for k in range(n + 1):
        v = (3.045 if k == 0 else 3.050 + 0.040 * (k - 1) / (n - 1))
        samples.append((t, v, 0.5))
        t += 60.0
    for _ in range(40):
        samples.append((t, 3.010, 0.0))
        t += 60.0
    steps = gitt(make_dataset(samples),
                 GittConfig(molar_volume_term=1.0, contact_area=1.0))
    assert len(steps) == 1
    expected = 4.0 / (math.pi * 3600.0) * (0.010 / 0.040) ** 2
    got = steps[0].diffusivity
    assert rel_close(got, expected, rtol=1e-6), (got, expected)
    assert rel_close(got, 2.2105e-5, rtol=1e-4)

    rng = random.Random(2024)
    for _ in range(1000):
        tau = rng.uniform(10.0, 1e5)
        des = rng.uniform(1e-4, 0.3)
        det = rng.uniform(1e-4, 0.3)
        geom = rng.uniform(1e-3, 10.0)
        assert diffusivity(tau, 2 * des, det, geom) == \
            4.0 * diffusivity(tau, des, det, geom)
    print(f"\nACCEPTANCE PASS: GITT (D = {got:.6e} cm^2/s vs "
          f"{expected:.6e}, scaling exact over 1000 draws)")


def _upload(client, headers, data: bytes, file_name: str, project: str,
            n_chunks=3, seed=1) -> dict:
    chunk_size = max(1, (len(data) + n_chunks - 1) // n_chunks)
    doc = client.post("/api/uploads", json={
        "file_name": file_name, "project_name": project,
        "declared_size": len(data), "chunk_size": chunk_size},
        headers=headers).json()
    order = list(range(doc["n_chunks"]))
    random.Random(seed).shuffle(order)
    for n in order:
        chunk = data[n * chunk_size:(n + 1) * chunk_size]
        r = client.put(f"/api/uploads/{doc['upload_id']}/chunks/{n}",
                       params={"digest": hashlib.sha256(chunk).hexdigest()},
                       content=chunk, headers=headers)
        assert r.status_code == 200
    done = client.post(f"/api/uploads/{doc['upload_id']}/complete",
                       headers=headers)
    assert done.status_code == 200, done.text
    return done.json()


def test_end_to_end_service():
    """Shuffled 3-chunk upload -> job Succeeded -> project listing with the
    right cycle count -> capacity+CE plot; cycle payloads byte-identical
    across repeat uploads; under 30 s."""
    import tempfile

    t0 = time.monotonic()
    with tempfile.TemporaryDirectory() as tmp:
        users = Users(f"{tmp}/master/users.jsonl")
        users.add_user("e2e", api_key="key-e2e", user_id="e2e")
        headers = {"Authorization": "Bearer key-e2e"}
        app = create_app(tmp, workers=2)
        client = TestClient(app)

        data = (FIXTURES / "arbin_single.csv").read_bytes()
        job = _upload(client, headers, data, "arbin_single.csv", "E2E-A",
                      n_chunks=3, seed=11)
        deadline = time.monotonic() + 25
        state = None
        while time.monotonic() < deadline:
            state = client.get(f"/api/jobs/{job['job_id']}",
                               headers=headers).json()
            if state["state"] in ("Succeeded", "Failed"):
                break
            time.sleep(0.02)
        assert state["state"] == "Succeeded", state

        rows = client.get("/api/projects", headers=headers).json()["projects"]
        row = next(r for r in rows if r["id"] == job["project_id"])
        assert row["num_cycles"] == 3
        assert row["status"] == "Ready"

        plot = client.post("/api/plot-data", json={
            "project_ids": [job["project_id"]], "x": "cycle_index",
            "y1": "discharge_capacity", "y2": "coulombic_efficiency"},
            headers=headers)
        assert plot.status_code == 200
        series = plot.json()["series"]
        assert len(series) == 2
        assert series[0]["x"] == [1.0, 2.0, 3.0]
        assert all(v and v > 0 for v in series[0]["y"])

        # repeatability: same bytes to a second fresh project
        job2 = _upload(client, headers, data, "arbin_single.csv", "E2E-B",
                       n_chunks=3, seed=99)
        app.state.jobs.wait_all(timeout=25)
        store: Store = app.state.store
        payload_a = store.get_cycles_bytes(job["project_id"])
        payload_b = store.get_cycles_bytes(job2["project_id"])
        normalized_a = payload_a.replace(job["project_id"].encode(), b"PID")
        normalized_b = payload_b.replace(job2["project_id"].encode(), b"PID")
        assert normalized_a == normalized_b

    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    print(f"\nACCEPTANCE PASS: end-to-end service "
          f"(3 shuffled chunks, 3 cycles, byte-identical payloads, "
          f"{elapsed:.2f} s < 30 s)")


def test_store_criteria(tmp_path):
    """Retention boundary at 364/365/366 days, shard-count invariance of
    query results, and a clean fsck after 1000 random put/query operations."""
    from datetime import datetime, timedelta, timezone

    # retention boundaries
    store = Store(tmp_path / "retention")
    now = datetime.now(timezone.utc)
    outcomes = {}
    for age in (364, 365, 366):
        pid = store.create_project(ProjectRecord(id="", name=f"age{age}"))
        store.store_file_version(
            pid, b"old", stored_at=(now - timedelta(days=age)).isoformat())
        store.store_file_version(pid, b"new", stored_at=now.isoformat())
        outcomes[age] = pid
    deleted = {v.project_id for v in store.retention_sweep(now=now,
                                                           period_days=365)}
    assert outcomes[364] not in deleted
    assert outcomes[365] not in deleted  # age == period is not "older than"
    assert outcomes[366] in deleted
    assert store.retention_sweep(now=now, period_days=365) == []

    # shard invariance
    rng = random.Random(31337)
    datasets = [random_piecewise_dataset(rng, max_cycles=3) for _ in range(5)]
    snapshots = []
    for shards in (1, 4):
        s = Store(tmp_path / f"shards{shards}", shard_count=shards)
        for k, d in enumerate(datasets):
            pid = f"inv-{k:02d}"
            s.create_project(ProjectRecord(id=pid, name=f"inv{k}",
                                           file_name=f"inv{k}.csv"))
            indexed, _, stats, rollup, _ = engine.process_dataset(d)
            s.put_dataset(pid, indexed, stats, rollup)
        results = s.query(Query(include_cycles=True, include_datapoints=True,
                                include_tags=True))
        snapshot = []
        for r in results:
            project = {k: v for k, v in r.project.items()
                       if k not in ("Shard_Id", "CreatedAt", "UpdatedAt",
                                    "ProcessDate")}
            snapshot.append((project, r.cycles, r.datapoints, r.tags))
        snapshots.append(snapshot)
    assert snapshots[0] == snapshots[1]

    # 1000 random operations, then fsck
    ops_store = Store(tmp_path / "ops", shard_count=3)
    rng = random.Random(4242)
    small = [engine.process_dataset(random_piecewise_dataset(rng, max_cycles=2))
             for _ in range(4)]
    project_ids: list[str] = []
    op_counts = {"create": 0, "put": 0, "query": 0, "tag": 0}
    for _ in range(1000):
        op = rng.choices(("create", "put", "query", "tag"),
                         weights=(2, 3, 4, 1))[0]
        if op == "create" or not project_ids:
            pid = ops_store.create_project(
                ProjectRecord(id="", name=f"op{len(project_ids)}",
                              file_name=f"op{len(project_ids)}.csv"))
            project_ids.append(pid)
            op_counts["create"] += 1
        elif op == "put":
            indexed, _, stats, rollup, _ = rng.choice(small)
            ops_store.put_dataset(rng.choice(project_ids), indexed, stats,
                                  rollup)
            op_counts["put"] += 1
        elif op == "query":
            q = Query(
                filename_like=rng.choice([None, "op", "op1", "zz"]),
                include_cycles=rng.random() < 0.3,
                include_tags=rng.random() < 0.3,
                offset=rng.choice([0, 1, 5]),
                limit=rng.choice([None, 3, 10]),
            )
            ops_store.query(q)
            op_counts["query"] += 1
        else:
            ops_store.set_tag(rng.choice(project_ids),
                              rng.choice(["a", "b", "c"]), str(rng.random()))
            op_counts["tag"] += 1
    issues = ops_store.fsck()
    assert issues == [], issues
    assert sum(op_counts.values()) == 1000
    print(f"\nACCEPTANCE PASS: store (retention 364/365/366 kept/kept/deleted, "
          f"query invariant across 1 vs 4 shards, fsck clean after "
          f"{op_counts} = 1000 ops)")
