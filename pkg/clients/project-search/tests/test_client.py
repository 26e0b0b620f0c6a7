"""Integration tests against a live cyclebench server.

The server package is a test dependency only; the client itself speaks pure
HTTP and never touches the store.
"""

from __future__ import annotations

import random
import socket
import threading
import time

import httpx
import pandas as pd
import pytest
import uvicorn

import project_search as ps

from cyclebench import engine
from cyclebench.model import DataPoint, CanonicalDataset, ProjectRecord
from cyclebench.service import create_app
from cyclebench.service.auth import Users

# The cycle-table column contract, in order.
CYCLE_TABLE_COLUMNS = [
    "ProjectId", "Index", "ChargeCapacity", "ChargeCapacityRetention",
    "ChargeEnergy", "DischargeCapacity", "DischargeCapacityRetention",
    "DischargeEndCurrent", "DischargeEndVoltage", "DischargeEnergy",
    "DischargePower", "DischargeResistance", "EndCurrent", "EndRestVoltage",
    "EndVoltage", "FirstPointIndex", "MidVoltage", "PointCount", "Power",
    "ResistanceOhms", "StartChargeVoltage", "StartCurrent",
    "StartDischargeCurrent", "StartDischargeVoltage", "StatisticMetaData",
    "Temperature", "MinimumPower", "MaximumPower", "MinimumDischargePower",
    "MaximumDischargePower", "AverageDischargePower", "AveragePower",
]

DATAPOINT_TABLE_COLUMNS = [
    "Id", "Capacity", "Current", "CycleIndex", "CycleStep", "Energy",
    "Index", "Power", "ProjectId", "Temperature", "Time", "Voltage",
    "StepIndex", "WallTime", "Resistance",
]


def _random_dataset(rng: random.Random) -> CanonicalDataset:
    points = []
    t = 0.0
    idx = 0
    for _ in range(rng.randint(2, 4)):
        for current, n in ((rng.uniform(0.5, 1.5), rng.randint(4, 9)),
                           (-rng.uniform(0.5, 1.5), rng.randint(4, 9))):
            for k in range(n):
                points.append(DataPoint(
                    index=idx, time=t,
                    voltage=3.2 + 0.5 * rng.random(),
                    current=current))
                idx += 1
                t += rng.uniform(5.0, 30.0)
    return CanonicalDataset(points=tuple(points))


def _seed(store, name: str, file_name: str, rng: random.Random,
          user_id="notebook", tags: dict | None = None) -> str:
    rec = ProjectRecord(id="", name=name)
    rec.file_name = file_name
    rec.user_id = user_id
    pid = store.create_project(rec)
    indexed, _, stats, rollup, _ = engine.process_dataset(_random_dataset(rng))
    store.put_dataset(pid, indexed, stats, rollup)
    for tag_name, value in (tags or {}).items():
        store.set_tag(pid, tag_name, value)
    return pid


def _start_server(data_dir, shard_count: int):
    users = Users(data_dir / "master" / "users.jsonl")
    users.add_user("notebook", api_key="nb-key", user_id="notebook")
    app = create_app(data_dir, shard_count=shard_count, workers=1)
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                           log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{port}"
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline:
        try:
            httpx.get(f"{url}/api/health", timeout=1.0)
            break
        except httpx.TransportError:
            time.sleep(0.05)
    return url, app, server, thread


@pytest.fixture()
def server(tmp_path):
    url, app, server, thread = _start_server(tmp_path / "data", shard_count=1)
    rng = random.Random(2718)
    store = app.state.store
    _seed(store, "cellA", "cellA_181116_ch01.csv", rng,
          tags={"electrolyte": "LP57"})
    _seed(store, "cellB", "cellB_181116_ch02.csv", rng)
    _seed(store, "other", "unrelated_200101.csv", rng)
    yield url, app
    server.should_exit = True
    thread.join(timeout=5)


def test_filename_like_with_cycles_column_parity(server):
    url, _ = server
    query = ps.OrganizationProjectSearch(base_url=url, api_key="nb-key")
    query.withFileNameLike("181116")
    query.includeCycles()
    data = query.executeDictionary()
    assert len(data) == 2
    df = data[0]["cycles"]
    assert isinstance(df, pd.DataFrame)
    assert list(df.columns) == CYCLE_TABLE_COLUMNS
    assert df["Index"].tolist() == list(range(1, len(df) + 1))
    assert (df["ChargeCapacity"] > 0).all()


def test_no_filters_returns_metadata_only(server):
    url, _ = server
    data = ps.OrganizationProjectSearch(base_url=url,
                                        api_key="nb-key").executeDictionary()
    assert len(data) == 3
    for entry in data:
        assert set(entry) == {"project"}
        assert "Name" in entry["project"]


def test_chained_includes_yield_all_tables(server):
    url, _ = server
    data = (ps.OrganizationProjectSearch(base_url=url, api_key="nb-key")
            .withFileNameLike("cellA")
            .includeCycles()
            .includeDataPointData()
            .includeProjectTags()
            .executeDictionary())
    assert len(data) == 1
    entry = data[0]
    assert list(entry["dataPoints"].columns) == DATAPOINT_TABLE_COLUMNS
    assert len(entry["dataPoints"]) > 0
    tags = entry["projectTags"]
    assert tags.loc[0, "Name"] == "electrolyte"
    assert tags.loc[0, "Value"] == "LP57"
    # execute is the same dictionary form
    assert ps.OrganizationProjectSearch.execute \
        is ps.OrganizationProjectSearch.executeDictionary


def test_bad_api_key_raises_with_detail(server):
    url, _ = server
    query = ps.OrganizationProjectSearch(base_url=url, api_key="wrong")
    with pytest.raises(ps.ProjectSearchError) as err:
        query.executeDictionary()
    assert err.value.status_code == 401
    assert "API key" in str(err.value)


def test_connection_error_raises(tmp_path):
    query = ps.OrganizationProjectSearch(base_url="http://127.0.0.1:9",
                                         api_key="x")
    with pytest.raises(ps.ProjectSearchError, match="connection failed"):
        query.executeDictionary()


def test_missing_configuration_raises(monkeypatch):
    monkeypatch.delenv("CYCLEBENCH_URL", raising=False)
    with pytest.raises(ps.ProjectSearchError, match="CYCLEBENCH_URL"):
        ps.OrganizationProjectSearch()


def test_shard_agnosticism(tmp_path):
    """The client sees identical results whatever the server's shard count."""
    snapshots = []
    for shards in (1, 4):
        url, app, server, thread = _start_server(
            tmp_path / f"shards{shards}", shard_count=shards)
        rng = random.Random(9999)  # same data both times
        store = app.state.store
        for k in range(3):
            rec = ProjectRecord(id=f"agnostic-{k}", name=f"proj{k}")
            rec.file_name = f"proj{k}.csv"
            rec.user_id = "notebook"
            store.create_project(rec)
            indexed, _, stats, rollup, _ = engine.process_dataset(
                _random_dataset(rng))
            store.put_dataset(f"agnostic-{k}", indexed, stats, rollup)
        data = (ps.OrganizationProjectSearch(base_url=url, api_key="nb-key")
                .includeCycles().executeDictionary())
        snapshot = []
        for entry in data:
            project = {k: v for k, v in entry["project"].items()
                       if k not in ("Shard_Id", "CreatedAt", "UpdatedAt",
                                    "ProcessDate")}
            snapshot.append((project, entry["cycles"].to_csv(index=False)))
        snapshots.append(snapshot)
        server.should_exit = True
        thread.join(timeout=5)
    assert snapshots[0] == snapshots[1]
