from __future__ import annotations

import hashlib
import json
import random
import time

import pytest
from fastapi.testclient import TestClient

from cyclebench import engine
from cyclebench.model import ProjectRecord
from cyclebench.service import create_app
from cyclebench.service.auth import Users
from cyclebench.service.jobs import JobQueue

from conftest import FIXTURES
from synth import random_piecewise_dataset

ALICE = {"Authorization": "Bearer key-alice"}
BOB = {"Authorization": "Bearer key-bob"}
CAROL = {"Authorization": "Bearer key-carol"}


@pytest.fixture()
def client(data_dir):
    users = Users(data_dir / "master" / "users.jsonl")
    users.add_user("alice", org_ids=["org1"], api_key="key-alice",
                   user_id="alice")
    users.add_user("bob", org_ids=["org1", "org2"], api_key="key-bob",
                   user_id="bob")
    users.add_user("carol", org_ids=[], api_key="key-carol", user_id="carol")
    app = create_app(data_dir, workers=2)
    with TestClient(app) as c:
        c.app = app
        yield c


def upload_file(client, data: bytes, file_name: str, project_name: str,
                n_chunks: int = 3, headers=ALICE, shuffle_seed=None) -> dict:
    chunk_size = max(1, (len(data) + n_chunks - 1) // n_chunks)
    declared = client.post("/api/uploads", json={
        "file_name": file_name,
        "project_name": project_name,
        "declared_size": len(data),
        "chunk_size": chunk_size,
    }, headers=headers)
    assert declared.status_code == 200, declared.text
    doc = declared.json()
    order = list(range(doc["n_chunks"]))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(order)
    for n in order:
        chunk = data[n * chunk_size:(n + 1) * chunk_size]
        r = client.put(
            f"/api/uploads/{doc['upload_id']}/chunks/{n}",
            params={"digest": hashlib.sha256(chunk).hexdigest()},
            content=chunk, headers=headers)
        assert r.status_code == 200, r.text
    done = client.post(f"/api/uploads/{doc['upload_id']}/complete",
                       headers=headers)
    assert done.status_code == 200, done.text
    return done.json()


def wait_job(client, job_id: str, headers=ALICE, timeout=30.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        job = client.get(f"/api/jobs/{job_id}", headers=headers).json()
        if job["state"] in ("Succeeded", "Failed"):
            return job
        time.sleep(0.02)
    raise TimeoutError(f"job {job_id} did not finish")


def seed_project(client, name: str, dataset, user_id="alice", org=None) -> str:
    """Put a processed dataset directly into the app's store."""
    store = client.app.state.store
    rec = ProjectRecord(id="", name=name)
    rec.user_id = user_id
    rec.organization_id = org
    rec.file_name = f"{name}.csv"
    pid = store.create_project(rec)
    indexed, _, stats, rollup, _ = engine.process_dataset(dataset)
    store.put_dataset(pid, indexed, stats, rollup)
    return pid


# -- auth ---------------------------------------------------------------------

def test_requires_api_key(client):
    assert client.get("/api/projects").status_code == 401
    assert client.get("/api/projects",
                      headers={"Authorization": "Bearer nope"}).status_code == 401
    assert client.get("/api/health").status_code == 200


# -- upload + job lifecycle ------------------------------------------------------

def test_chunked_upload_end_to_end(client):
    data = (FIXTURES / "arbin_single.csv").read_bytes()
    job = upload_file(client, data, "arbin_single.csv", "Silicon Anode",
                      n_chunks=3, shuffle_seed=7)
    final = wait_job(client, job["job_id"])
    assert final["state"] == "Succeeded", final
    rows = client.get("/api/projects", headers=ALICE).json()["projects"]
    row = next(r for r in rows if r["id"] == job["project_id"])
    assert row["status"] == "Ready"
    assert row["num_cycles"] == 3
    assert row["file_size"] == len(data)
    # reassembled bytes identical to the source
    stored = client.app.state.store.get_file_version(job["project_id"])
    assert hashlib.sha256(stored).hexdigest() == \
        hashlib.sha256(data).hexdigest()


def test_chunk_order_independence(client):
    data = (FIXTURES / "maccor_export.csv").read_bytes()
    digests = set()
    for seed in (None, 1, 2):
        job = upload_file(client, data, "maccor_export.csv", f"perm{seed}",
                          n_chunks=4, shuffle_seed=seed)
        wait_job(client, job["job_id"])
        stored = client.app.state.store.get_file_version(job["project_id"])
        digests.add(hashlib.sha256(stored).hexdigest())
    assert len(digests) == 1


def test_single_chunk_upload(client):
    data = (FIXTURES / "admiral_squidstat.txt").read_bytes()
    job = upload_file(client, data, "admiral_squidstat.txt", "OneChunk",
                      n_chunks=1)
    assert wait_job(client, job["job_id"])["state"] == "Succeeded"


def test_three_files_three_jobs(client):
    names = ["arbin_single.csv", "maccor_export.csv", "novonix_cycling.csv"]
    jobs = [upload_file(client, (FIXTURES / n).read_bytes(), n, "Batch")
            for n in names]
    assert len({j["job_id"] for j in jobs}) == 3
    for j in jobs:
        assert wait_job(client, j["job_id"])["state"] == "Succeeded"


def test_multichannel_file_creates_sibling_projects(client):
    data = (FIXTURES / "arbin_multichannel.csv").read_bytes()
    job = upload_file(client, data, "arbin_multichannel.csv", "MultiCh")
    final = wait_job(client, job["job_id"])
    assert len(final["result_project_ids"]) == 2
    rows = client.get("/api/projects", headers=ALICE,
                      params={"filter": "MultiCh"}).json()["projects"]
    assert sorted(r["channel"] for r in rows) == [4, 7]
    assert all(r["status"] == "Ready" for r in rows)
    assert all(r["name"] == "MultiCh" for r in rows)


def test_upload_requires_project_name(client):
    r = client.post("/api/uploads", json={
        "file_name": "x.csv", "project_name": "  ", "declared_size": 10},
        headers=ALICE)
    assert r.status_code == 400


def test_duplicate_chunk_same_digest_idempotent(client):
    declared = client.post("/api/uploads", json={
        "file_name": "x.csv", "project_name": "p", "declared_size": 6,
        "chunk_size": 3}, headers=ALICE).json()
    for _ in range(2):
        r = client.put(f"/api/uploads/{declared['upload_id']}/chunks/0",
                       content=b"abc", headers=ALICE)
        assert r.status_code == 200


def test_duplicate_chunk_mismatched_content_conflicts(client):
    declared = client.post("/api/uploads", json={
        "file_name": "x.csv", "project_name": "p", "declared_size": 6,
        "chunk_size": 3}, headers=ALICE).json()
    assert client.put(f"/api/uploads/{declared['upload_id']}/chunks/0",
                      content=b"abc", headers=ALICE).status_code == 200
    r = client.put(f"/api/uploads/{declared['upload_id']}/chunks/0",
                   content=b"xyz", headers=ALICE)
    assert r.status_code == 409


def test_complete_with_missing_chunks_conflicts(client):
    declared = client.post("/api/uploads", json={
        "file_name": "x.csv", "project_name": "p", "declared_size": 6,
        "chunk_size": 3}, headers=ALICE).json()
    client.put(f"/api/uploads/{declared['upload_id']}/chunks/0",
               content=b"abc", headers=ALICE)
    r = client.post(f"/api/uploads/{declared['upload_id']}/complete",
                    headers=ALICE)
    assert r.status_code == 409


def test_unknown_format_fails_job_with_red_status(client):
    job = upload_file(client, b"garbage content here", "random.weird",
                      "BadFile", n_chunks=1)
    final = wait_job(client, job["job_id"])
    assert final["state"] == "Failed"
    assert "no registered profile" in final["error"]
    row = client.get(f"/api/projects/{job['project_id']}",
                     headers=ALICE).json()
    assert row["status"] == "Failed"
    assert row["error"]


def test_job_state_never_regresses(client):
    data = (FIXTURES / "arbin_single.csv").read_bytes()
    job = upload_file(client, data, "arbin_single.csv", "Mono")
    states = []
    final = wait_job(client, job["job_id"])
    states.append(final["state"])
    for _ in range(3):
        again = client.get(f"/api/jobs/{job['job_id']}", headers=ALICE).json()
        states.append(again["state"])
    assert set(states) == {"Succeeded"}


# -- job journal resume ------------------------------------------------------------

def test_queued_jobs_resume_after_restart(tmp_path):
    journal = tmp_path / "jobs.jsonl"
    ran = []

    stalled = JobQueue(journal, runner=lambda job: ran.append(job.job_id))
    job = stalled.submit("p1", "f.csv")  # no start(): stays Queued on disk
    assert json.loads(journal.read_text().splitlines()[0])["state"] == "Queued"

    resumed = JobQueue(journal, runner=lambda j: (ran.append(j.job_id), [])[1])
    resumed.start()
    assert resumed.wait_all(timeout=10)
    assert ran == [job.job_id]
    assert resumed.get(job.job_id).state == "Succeeded"
    resumed.stop()


# -- project list -------------------------------------------------------------------

def test_project_list_status_progression(client):
    rows = client.get("/api/projects", headers=ALICE).json()["projects"]
    assert rows == []
    data = (FIXTURES / "basytec_run.txt").read_bytes()
    job = upload_file(client, data, "basytec_run.txt", "StatusCheck")
    wait_job(client, job["job_id"])
    rows = client.get("/api/projects", headers=ALICE).json()["projects"]
    assert [r["status"] for r in rows] == ["Ready"]
    assert rows[0]["num_cycles"] == 2


def test_project_list_grouped_by_name(client):
    rng = random.Random(4)
    seed_project(client, "zeta", random_piecewise_dataset(rng, 2))
    seed_project(client, "alpha", random_piecewise_dataset(rng, 2))
    seed_project(client, "alpha", random_piecewise_dataset(rng, 2))
    rows = client.get("/api/projects", headers=ALICE).json()["projects"]
    assert [r["name"] for r in rows] == ["alpha", "alpha", "zeta"]


# -- plotting ------------------------------------------------------------------------

def test_plot_capacity_and_ce(client):
    rng = random.Random(21)
    pid = seed_project(client, "plotme", random_piecewise_dataset(rng, 5))
    r = client.post("/api/plot-data", json={
        "project_ids": [pid], "x": "cycle_index",
        "y1": "discharge_capacity", "y2": "coulombic_efficiency"},
        headers=ALICE)
    assert r.status_code == 200, r.text
    doc = r.json()
    assert doc["x_variable"] == "cycle_index"
    assert len(doc["series"]) == 2
    assert {s["axis"] for s in doc["series"]} == {1, 2}
    assert doc["series"][0]["x"] == doc["series"][1]["x"]


def test_plot_time_series(client):
    rng = random.Random(22)
    pid = seed_project(client, "points", random_piecewise_dataset(rng, 2))
    r = client.post("/api/plot-data", json={
        "project_ids": [pid], "x": "time", "y1": "voltage"}, headers=ALICE)
    assert r.status_code == 200
    assert len(r.json()["series"][0]["x"]) > 0


def test_plot_mixed_domain_rejected(client):
    rng = random.Random(23)
    pid = seed_project(client, "mix", random_piecewise_dataset(rng, 2))
    r = client.post("/api/plot-data", json={
        "project_ids": [pid], "x": "cycle_index", "y1": "voltage"},
        headers=ALICE)
    assert r.status_code == 422


def test_plot_unknown_variable_rejected(client):
    rng = random.Random(24)
    pid = seed_project(client, "unk", random_piecewise_dataset(rng, 2))
    r = client.post("/api/plot-data", json={
        "project_ids": [pid], "x": "cycle_index", "y1": "bogus"},
        headers=ALICE)
    assert r.status_code == 422


def test_plot_empty_projects_rejected(client):
    r = client.post("/api/plot-data", json={
        "project_ids": [], "x": "cycle_index", "y1": "discharge_capacity"},
        headers=ALICE)
    assert r.status_code == 422


def test_plot_unknown_project_404(client):
    r = client.post("/api/plot-data", json={
        "project_ids": ["missing"], "x": "cycle_index",
        "y1": "discharge_capacity"}, headers=ALICE)
    assert r.status_code == 404


# -- templates -----------------------------------------------------------------------

def _long_dataset(n_cycles=120):
    samples = []
    t = 0.0
    for c in range(n_cycles):
        for k in range(3):
            samples.append((t, 3.2 + 0.2 * k, 1.0))
            t += 10.0
        for k in range(3):
            samples.append((t, 3.6 - 0.2 * k, -1.0))
            t += 10.0
    from synth import make_dataset
    return make_dataset(samples)


def test_template_interval_applied_to_120_cycles(client):
    pid = seed_project(client, "tmpl", _long_dataset(120))
    created = client.post("/api/templates", json={
        "name": "profiles", "plot_kind": "voltage_profile",
        "selector": {"mode": "interval", "start": 1, "step": 50}},
        headers=ALICE)
    assert created.status_code == 200, created.text
    tid = created.json()["template_id"]
    applied = client.post(f"/api/templates/{tid}/apply",
                          json={"project_ids": [pid]}, headers=ALICE)
    assert applied.status_code == 200, applied.text
    assert applied.json()["profiles"][0]["cycles"] == [1, 51, 101]


def test_template_reapplication_is_deterministic(client):
    rng = random.Random(31)
    pid = seed_project(client, "repro", random_piecewise_dataset(rng, 6))
    tid = client.post("/api/templates", json={
        "name": "caps", "plot_kind": "cycle_stats",
        "x": "cycle_index", "y1": "discharge_capacity", "y2": "ce",
        "selector": {"mode": "all"}}, headers=ALICE).json()["template_id"]
    first = client.post(f"/api/templates/{tid}/apply",
                        json={"project_ids": [pid]}, headers=ALICE)
    second = client.post(f"/api/templates/{tid}/apply",
                         json={"project_ids": [pid]}, headers=ALICE)
    assert first.content == second.content


def test_template_invalid_selector_rejected(client):
    r = client.post("/api/templates", json={
        "name": "bad", "plot_kind": "voltage_profile",
        "selector": {"mode": "range", "lo": 5, "hi": 2}}, headers=ALICE)
    assert r.status_code == 422


def test_plot_data_honors_template_defaults(client):
    rng = random.Random(32)
    pid = seed_project(client, "defaults", random_piecewise_dataset(rng, 4))
    tid = client.post("/api/templates", json={
        "name": "def", "plot_kind": "cycle_stats", "x": "cycle_index",
        "y1": "discharge_capacity", "selector": {"mode": "all"},
        "formatting": {"title": "Capacity"}}, headers=ALICE).json()["template_id"]
    r = client.post("/api/plot-data", json={
        "project_ids": [pid], "template_id": tid}, headers=ALICE)
    assert r.status_code == 200
    doc = r.json()
    assert doc["series"][0]["variable"] == "discharge_capacity"
    assert doc["formatting"] == {"title": "Capacity"}


# -- organizations & visibility --------------------------------------------------------

def test_org_sharing_flow(client):
    rng = random.Random(41)
    pid = seed_project(client, "shared", random_piecewise_dataset(rng, 2),
                       user_id="alice")
    # bob can't see it yet
    assert client.get(f"/api/projects/{pid}", headers=BOB).status_code == 404
    r = client.post(f"/api/projects/{pid}/organization",
                    json={"org_id": "org1"}, headers=ALICE)
    assert r.status_code == 200
    assert client.get(f"/api/projects/{pid}", headers=BOB).status_code == 200
    # carol is in no orgs
    assert client.get(f"/api/projects/{pid}", headers=CAROL).status_code == 404
    # unassign: owner-only again
    client.post(f"/api/projects/{pid}/organization", json={"org_id": None},
                headers=ALICE)
    assert client.get(f"/api/projects/{pid}", headers=BOB).status_code == 404


def test_non_member_cannot_assign(client):
    rng = random.Random(42)
    pid = seed_project(client, "mine", random_piecewise_dataset(rng, 2),
                       user_id="alice")
    r = client.post(f"/api/projects/{pid}/organization",
                    json={"org_id": "org2"}, headers=ALICE)
    assert r.status_code == 403  # alice is not in org2


def test_non_owner_cannot_assign(client):
    rng = random.Random(43)
    pid = seed_project(client, "alices", random_piecewise_dataset(rng, 2),
                       user_id="alice", org="org1")
    r = client.post(f"/api/projects/{pid}/organization",
                    json={"org_id": "org1"}, headers=BOB)
    assert r.status_code == 403


def test_visibility_fuzzing_never_leaks(client):
    rng = random.Random(44)
    owners = ["alice", "bob", "carol"]
    orgs = {"alice": {"org1"}, "bob": {"org1", "org2"}, "carol": set()}
    created = []
    for k in range(12):
        owner = rng.choice(owners)
        org = rng.choice([None, "org1", "org2"])
        pid = seed_project(client, f"fz{k}",
                           random_piecewise_dataset(rng, 2),
                           user_id=owner, org=org)
        created.append((pid, owner, org))
    headers = {"alice": ALICE, "bob": BOB, "carol": CAROL}
    for user in owners:
        allowed = {pid for pid, owner, org in created
                   if owner == user or (org is not None and org in orgs[user])}
        for _ in range(30):
            body = {
                "filename_like": rng.choice([None, "", "fz", "csv", "ZZ"]),
                "project_ids": rng.choice([
                    None, [c[0] for c in created],
                    [rng.choice(created)[0]]]),
                "include_cycles": rng.random() < 0.5,
                "include_tags": rng.random() < 0.5,
                "offset": rng.choice([0, 1]),
            }
            r = client.post("/api/query", json=body, headers=headers[user])
            assert r.status_code == 200
            seen = {entry["project"]["Id"] for entry in r.json()["results"]}
            assert seen <= allowed, f"{user} saw {seen - allowed}"
        listed = {row["id"] for row in client.get(
            "/api/projects", headers=headers[user]).json()["projects"]}
        assert listed <= allowed


# -- query endpoint ---------------------------------------------------------------------

def test_query_endpoint_sections(client):
    rng = random.Random(51)
    pid = seed_project(client, "q", random_piecewise_dataset(rng, 3))
    client.post(f"/api/projects/{pid}/tags",
                json={"name": "electrolyte", "value": "LP57"}, headers=ALICE)
    r = client.post("/api/query", json={
        "include_cycles": True, "include_datapoints": True,
        "include_tags": True}, headers=ALICE)
    entry = r.json()["results"][0]
    assert entry["project"]["Id"] == pid
    assert entry["cycles"]
    assert entry["dataPoints"]
    assert entry["projectTags"][0]["Name"] == "electrolyte"


def test_dqdv_endpoint(client):
    rng = random.Random(61)
    pid = seed_project(client, "ica", random_piecewise_dataset(rng, 4))
    r = client.post("/api/dqdv", json={
        "project_id": pid, "cycles": [1, 2], "direction": "discharge",
        "dv": 0.02, "with_peaks": True}, headers=ALICE)
    assert r.status_code == 200, r.text
    doc = r.json()
    assert [c["cycle"] for c in doc["curves"]] == [1, 2]
    assert all(len(c["voltage"]) == len(c["dqdv"]) for c in doc["curves"])
    missing = client.post("/api/dqdv", json={
        "project_id": pid, "cycles": [99]}, headers=ALICE)
    assert missing.status_code == 422


def test_openapi_document_served(client):
    doc = client.get("/openapi.json").json()
    assert "/api/plot-data" in doc["paths"]
    assert "/api/uploads/{upload_id}/chunks/{n}" in doc["paths"]


def test_committed_openapi_document_is_current(client):
    # the frontend validates against docs/openapi.json; keep it in sync via
    # scripts/export_openapi.py
    from pathlib import Path
    committed = json.loads(
        (Path(__file__).parent.parent / "docs" / "openapi.json")
        .read_text("utf-8"))
    live = client.get("/openapi.json").json()
    assert json.dumps(committed, sort_keys=True) == \
        json.dumps(live, sort_keys=True), \
        "docs/openapi.json is stale; rerun scripts/export_openapi.py"
