"""File-backed persistence: master metadata, sharded time-series storage,
raw-file versioning with retention sweep, and the query layer.

Reference backend: one directory per shard plus a master manifest, all under
a single data directory.  Many concurrent readers are fine; writes are
serialized per project, and master manifest updates are atomic
(write-temp-then-rename).  The layout is documented in docs/storage.md.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
import threading
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .errors import NotFound, ValidationError
from .model import (
    CanonicalDataset,
    CycleStats,
    DataPoint,
    ProjectRecord,
    ProjectStatus,
    ProjectTag,
    ROLLUP_KEYS,
    StatisticRollup,
    canonical_json,
    cycle_stats_row,
    extra_csv_bytes,
    extra_from_csv_bytes,
    points_csv_bytes,
    points_from_csv_bytes,
    utcnow_iso,
)

DEFAULT_RETENTION_DAYS = 365

DATAPOINT_COLUMNS = (
    "Id", "Capacity", "Current", "CycleIndex", "CycleStep", "Energy",
    "Index", "Power", "ProjectId", "Temperature", "Time", "Voltage",
    "StepIndex", "WallTime", "Resistance",
)

PROJECT_COLUMNS = (
    "Id", "ActiveMaterialFraction", "Area", "Channel", "Comments",
    "CreatedAt", "Error", "Failed", "FileName", "FileSize",
    "InternalFileName", "IsAveragePlot", "IsPartialGathering", "IsReady",
    "JobId", "Mass", "Name", "StitchedFrom", "StitchedFromNames", "Tag",
    "TestName", "TestType", "TheoreticalCapacity", "TraceId", "UpdatedAt",
    "UserId", "NumCycles", "TestDate", "PAMMass", "NAMMass", "IsRealTime",
    "ProcessDate", "IsProcessing", "ProcessingMessage", "DataPointStartDate",
    "Shard_Id", "Organization_OrganizationId", "ExtraDataNameJSON",
    "ErrorDetailed",
)


def stable_hash(text: str) -> int:
    """Stable across processes and runs (unlike builtin hash)."""
    return int.from_bytes(hashlib.sha1(text.encode("utf-8")).digest()[:8], "big")


@dataclass(frozen=True)
class ShardMap:
    shard_count: int

    def shard_of(self, project_id: str) -> int:
        return stable_hash(project_id) % self.shard_count


def assign_shard(project_id: str, shard_map: ShardMap) -> int:
    """Deterministic shard assignment: hash(project_id) mod shard_count."""
    return shard_map.shard_of(project_id)


@dataclass(frozen=True)
class FileVersion:
    project_id: str
    version: int
    stored_at: str
    digest: str
    size: int


@dataclass(frozen=True)
class Query:
    """One query against the store, mirroring the client builder flags."""

    filename_like: Optional[str] = None
    project_ids: Optional[list[str]] = None
    include_cycles: bool = False
    include_datapoints: bool = False
    include_tags: bool = False
    offset: int = 0
    limit: Optional[int] = None


@dataclass(frozen=True)
class Caller:
    """Identity used for visibility checks; None caller means internal."""

    user_id: str
    org_ids: frozenset[str] = frozenset()


@dataclass
class QueryResult:
    project: dict
    cycles: Optional[list[dict]] = None
    datapoints: Optional[list[dict]] = None
    tags: Optional[list[dict]] = None


def project_appendix_row(rec: ProjectRecord) -> dict:
    """ProjectRecord as a wire row with the canonical column names."""
    extra = rec.extra or {}
    return {
        "Id": rec.id,
        "ActiveMaterialFraction": rec.active_material_fraction,
        "Area": rec.area,
        "Channel": rec.channel,
        "Comments": rec.comments,
        "CreatedAt": rec.created_at,
        "Error": rec.error,
        "Failed": rec.status == ProjectStatus.FAILED,
        "FileName": rec.file_name,
        "FileSize": rec.file_size,
        "InternalFileName": rec.internal_file_name,
        "IsAveragePlot": extra.get("IsAveragePlot", False),
        "IsPartialGathering": extra.get("IsPartialGathering", False),
        "IsReady": rec.status == ProjectStatus.READY,
        "JobId": rec.job_id,
        "Mass": rec.mass,
        "Name": rec.name,
        "StitchedFrom": list(rec.stitched_from),
        "StitchedFromNames": list(rec.stitched_from_names),
        "Tag": rec.tag,
        "TestName": rec.test_name,
        "TestType": rec.test_type,
        "TheoreticalCapacity": rec.theoretical_capacity,
        "TraceId": extra.get("TraceId"),
        "UpdatedAt": rec.updated_at,
        "UserId": rec.user_id,
        "NumCycles": rec.num_cycles,
        "TestDate": rec.test_date,
        "PAMMass": rec.pam_mass,
        "NAMMass": rec.nam_mass,
        "IsRealTime": rec.is_real_time,
        "ProcessDate": rec.process_date,
        "IsProcessing": rec.status in (ProjectStatus.PENDING, ProjectStatus.PROCESSING),
        "ProcessingMessage": rec.processing_message,
        "DataPointStartDate": rec.data_point_start_date,
        "Shard_Id": rec.shard_id,
        "Organization_OrganizationId": rec.organization_id,
        "ExtraDataNameJSON": canonical_json(rec.extra_data_names),
        "ErrorDetailed": rec.error_detailed,
    }


def _record_to_doc(rec: ProjectRecord) -> dict:
    doc = asdict(rec)
    doc["status"] = rec.status.value
    return doc


def _record_from_doc(doc: dict) -> ProjectRecord:
    doc = dict(doc)
    doc["status"] = ProjectStatus(doc["status"])
    return ProjectRecord(**doc)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def datapoint_row(p: DataPoint, project_id: str) -> dict:
    wall = None
    if p.wall_time is not None:
        wall = datetime.fromtimestamp(p.wall_time, tz=timezone.utc).isoformat()
    return {
        "Id": p.index,
        "Capacity": p.capacity,
        "Current": p.current,
        "CycleIndex": p.cycle_index,
        "CycleStep": p.cycle_step,
        "Energy": p.energy,
        "Index": p.index,
        "Power": p.power,
        "ProjectId": project_id,
        "Temperature": p.temperature,
        "Time": p.time,
        "Voltage": p.voltage,
        "StepIndex": p.step_index,
        "WallTime": wall,
        "Resistance": p.resistance,
    }


class Store:
    """Single-node reference store.

    The public methods form the storage interface; a networked relational
    backend could substitute behind the same signatures.
    """

    def __init__(self, data_dir: Path | str, shard_count: Optional[int] = None):
        self.data_dir = Path(data_dir)
        self.master_dir = self.data_dir / "master"
        self.shards_dir = self.data_dir / "shards"
        self.files_dir = self.data_dir / "files"
        self.master_dir.mkdir(parents=True, exist_ok=True)
        self.shards_dir.mkdir(parents=True, exist_ok=True)
        self.files_dir.mkdir(parents=True, exist_ok=True)

        self._lock = threading.RLock()
        self._project_locks: dict[str, threading.RLock] = {}
        self._config_path = self.master_dir / "config.json"
        if self._config_path.exists():
            config = json.loads(self._config_path.read_text("utf-8"))
            stored = int(config.get("shard_count", 1))
            if shard_count is not None and shard_count != stored:
                # records keep their stored shard_id, so changing the count
                # only affects newly created projects
                config["shard_count"] = shard_count
                _atomic_write(self._config_path,
                              canonical_json(config).encode("utf-8"))
                self.shard_count = shard_count
            else:
                self.shard_count = stored
        else:
            self.shard_count = shard_count if shard_count is not None else 1
            _atomic_write(self._config_path, canonical_json(
                {"shard_count": self.shard_count}).encode("utf-8"))

        self._projects: dict[str, ProjectRecord] = {}
        self._tags: dict[tuple[str, str], ProjectTag] = {}
        self._load_master()

    # -- master manifest ----------------------------------------------------

    def _load_master(self) -> None:
        projects_path = self.master_dir / "projects.jsonl"
        if projects_path.exists():
            for line in projects_path.read_text("utf-8").splitlines():
                if line.strip():
                    rec = _record_from_doc(json.loads(line))
                    self._projects[rec.id] = rec
        tags_path = self.master_dir / "tags.jsonl"
        if tags_path.exists():
            for line in tags_path.read_text("utf-8").splitlines():
                if line.strip():
                    doc = json.loads(line)
                    tag = ProjectTag(**doc)
                    self._tags[(tag.project_id, tag.name)] = tag

    def _flush_projects(self) -> None:
        lines = [canonical_json(_record_to_doc(rec))
                 for _, rec in sorted(self._projects.items())]
        _atomic_write(self.master_dir / "projects.jsonl",
                      ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")

    def _flush_tags(self) -> None:
        lines = [canonical_json(asdict(tag))
                 for _, tag in sorted(self._tags.items())]
        _atomic_write(self.master_dir / "tags.jsonl",
                      ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")

    def _project_lock(self, project_id: str) -> threading.RLock:
        with self._lock:
            if project_id not in self._project_locks:
                self._project_locks[project_id] = threading.RLock()
            return self._project_locks[project_id]

    # -- projects ------------------------------------------------------------

    def shard_map(self) -> ShardMap:
        return ShardMap(shard_count=self.shard_count)

    def create_project(self, meta: ProjectRecord) -> str:
        if not meta.name or not meta.name.strip():
            raise ValidationError("a Name is a required field")
        with self._lock:
            project_id = meta.id or uuid.uuid4().hex
            now = utcnow_iso()
            rec = ProjectRecord(**{
                **asdict(meta),
                "id": project_id,
                "created_at": meta.created_at or now,
                "updated_at": now,
                "shard_id": assign_shard(project_id, self.shard_map()),
                "status": meta.status or ProjectStatus.PENDING,
            })
            self._projects[project_id] = rec
            self._flush_projects()
            return project_id

    def get_project(self, project_id: str) -> ProjectRecord:
        with self._lock:
            rec = self._projects.get(project_id)
            if rec is None:
                raise NotFound(f"project {project_id}")
            return rec

    def update_project(self, project_id: str, **changes) -> ProjectRecord:
        with self._lock:
            rec = self.get_project(project_id)
            doc = asdict(rec)
            doc.update(changes)
            doc["updated_at"] = utcnow_iso()
            new = ProjectRecord(**{
                **doc,
                "status": ProjectStatus(doc["status"]) if isinstance(
                    doc["status"], str) else doc["status"],
            })
            self._projects[project_id] = new
            self._flush_projects()
            return new

    def list_projects(self, caller: Optional[Caller] = None,
                      name_filter: Optional[str] = None) -> list[ProjectRecord]:
        with self._lock:
            records = list(self._projects.values())
        records = [r for r in records if self._visible(r, caller)]
        if name_filter:
            needle = name_filter.lower()
            records = [r for r in records
                       if needle in r.name.lower() or needle in r.file_name.lower()]
        records.sort(key=lambda r: (r.name, r.channel, r.created_at or "", r.id))
        return records

    @staticmethod
    def _visible(rec: ProjectRecord, caller: Optional[Caller]) -> bool:
        if caller is None:
            return True
        if rec.user_id == caller.user_id:
            return True
        return rec.organization_id is not None and rec.organization_id in caller.org_ids

    # -- tags ----------------------------------------------------------------

    def set_tag(self, project_id: str, name: str, value: str) -> None:
        with self._lock:
            self.get_project(project_id)
            existing = self._tags.get((project_id, name))
            tag_id = existing.id if existing else uuid.uuid4().hex
            self._tags[(project_id, name)] = ProjectTag(
                id=tag_id, project_id=project_id, name=name, value=value)
            self._flush_tags()

    def tags_for(self, project_id: str) -> list[ProjectTag]:
        with self._lock:
            return sorted(
                (t for (pid, _), t in self._tags.items() if pid == project_id),
                key=lambda t: t.name)

    # -- shard data ----------------------------------------------------------

    def _dataset_dir(self, rec: ProjectRecord) -> Path:
        return self.shards_dir / str(rec.shard_id) / rec.id

    def put_dataset(self, project_id: str, dataset: CanonicalDataset,
                    stats: list[CycleStats], rollup: StatisticRollup) -> None:
        """Write points, extra data, cycles, and rollup atomically, then mark
        the project Ready on the master."""
        rec = self.get_project(project_id)
        meta_json = rollup.to_meta_json()
        cycle_rows = [cycle_stats_row(cs, project_id, meta_json) for cs in stats]
        rollup_doc = {
            "columns": {k: rollup.columns.get(k) for k in ROLLUP_KEYS},
            "n_cycles": rollup.n_cycles,
            "single_cycle": rollup.single_cycle,
        }
        dataset_meta = {
            "channel": dataset.channel,
            "source_format": dataset.source_format,
            "unit_provenance": dict(sorted(dataset.unit_provenance.items())),
            "stitched_from": list(dataset.stitched_from),
        }
        with self._project_lock(project_id):
            final = self._dataset_dir(rec)
            final.parent.mkdir(parents=True, exist_ok=True)
            tmp = final.parent / f".tmp-{project_id}-{uuid.uuid4().hex[:8]}"
            tmp.mkdir()
            try:
                (tmp / "points.csv").write_bytes(points_csv_bytes(dataset.points))
                (tmp / "extra.csv").write_bytes(extra_csv_bytes(dataset.extra))
                (tmp / "cycles.json").write_bytes(
                    canonical_json(cycle_rows).encode("utf-8"))
                (tmp / "rollup.json").write_bytes(
                    canonical_json(rollup_doc).encode("utf-8"))
                (tmp / "meta.json").write_bytes(
                    canonical_json(dataset_meta).encode("utf-8"))
                if final.exists():
                    trash = final.parent / f".old-{project_id}-{uuid.uuid4().hex[:8]}"
                    os.rename(final, trash)
                    os.rename(tmp, final)
                    shutil.rmtree(trash)
                else:
                    os.rename(tmp, final)
            except BaseException:
                if tmp.exists():
                    shutil.rmtree(tmp, ignore_errors=True)
                raise
            start_date = None
            if dataset.points and dataset.points[0].wall_time is not None:
                start_date = datetime.fromtimestamp(
                    dataset.points[0].wall_time, tz=timezone.utc).isoformat()
            self.update_project(
                project_id,
                num_cycles=len(stats),
                status=ProjectStatus.READY,
                error="",
                error_detailed="",
                processing_message="",
                process_date=utcnow_iso(),
                channel=dataset.channel,
                data_point_start_date=start_date,
                extra_data_names=sorted({e.name for e in dataset.extra}),
            )

    def has_dataset(self, project_id: str) -> bool:
        return (self._dataset_dir(self.get_project(project_id)) / "points.csv").exists()

    def get_dataset(self, project_id: str) -> CanonicalDataset:
        rec = self.get_project(project_id)
        with self._project_lock(project_id):
            base = self._dataset_dir(rec)
            if not (base / "points.csv").exists():
                raise NotFound(f"project {project_id} has no dataset")
            points = points_from_csv_bytes((base / "points.csv").read_bytes())
            extra = extra_from_csv_bytes((base / "extra.csv").read_bytes()) \
                if (base / "extra.csv").exists() else ()
            meta = json.loads((base / "meta.json").read_text("utf-8")) \
                if (base / "meta.json").exists() else {}
            return CanonicalDataset(
                points=points,
                extra=extra,
                channel=int(meta.get("channel", rec.channel)),
                source_format=meta.get("source_format", ""),
                unit_provenance=dict(meta.get("unit_provenance", {})),
                stitched_from=tuple(meta.get("stitched_from", ())),
            )

    def get_cycles(self, project_id: str) -> list[dict]:
        rec = self.get_project(project_id)
        with self._project_lock(project_id):
            path = self._dataset_dir(rec) / "cycles.json"
            if not path.exists():
                raise NotFound(f"project {project_id} has no cycles")
            return json.loads(path.read_text("utf-8"))

    def get_cycles_bytes(self, project_id: str) -> bytes:
        rec = self.get_project(project_id)
        with self._project_lock(project_id):
            path = self._dataset_dir(rec) / "cycles.json"
            if not path.exists():
                raise NotFound(f"project {project_id} has no cycles")
            return path.read_bytes()

    def get_rollup(self, project_id: str) -> dict:
        rec = self.get_project(project_id)
        with self._project_lock(project_id):
            path = self._dataset_dir(rec) / "rollup.json"
            if not path.exists():
                raise NotFound(f"project {project_id} has no rollup")
            return json.loads(path.read_text("utf-8"))

    # -- query ---------------------------------------------------------------

    def query(self, q: Query, caller: Optional[Caller] = None) -> list[QueryResult]:
        """Run one query; results ordered by (created_at, id).

        filename_like is a case-insensitive substring match on the file
        name; an empty string matches everything visible.
        """
        with self._lock:
            records = list(self._projects.values())
        records = [r for r in records if self._visible(r, caller)]
        if q.filename_like:
            needle = q.filename_like.lower()
            records = [r for r in records if needle in r.file_name.lower()]
        if q.project_ids is not None:
            wanted = set(q.project_ids)
            records = [r for r in records if r.id in wanted]
        records.sort(key=lambda r: (r.created_at or "", r.id))
        if q.offset:
            records = records[q.offset:]
        if q.limit is not None:
            records = records[:q.limit]

        out = []
        for rec in records:
            result = QueryResult(project=project_appendix_row(rec))
            if q.include_cycles:
                try:
                    result.cycles = self.get_cycles(rec.id)
                except NotFound:
                    result.cycles = []
            if q.include_datapoints:
                try:
                    ds = self.get_dataset(rec.id)
                    result.datapoints = [datapoint_row(p, rec.id) for p in ds.points]
                except NotFound:
                    result.datapoints = []
            if q.include_tags:
                result.tags = [
                    {"Id": t.id, "Name": t.name, "Value": t.value,
                     "ProjectId": t.project_id}
                    for t in self.tags_for(rec.id)
                ]
            out.append(result)
        return out

    # -- raw file versions ----------------------------------------------------

    def _versions_path(self, project_id: str) -> Path:
        return self.files_dir / project_id / "versions.jsonl"

    def _load_versions(self, project_id: str) -> list[FileVersion]:
        path = self._versions_path(project_id)
        if not path.exists():
            return []
        out = []
        for line in path.read_text("utf-8").splitlines():
            if line.strip():
                out.append(FileVersion(**json.loads(line)))
        return out

    def _flush_versions(self, project_id: str, versions: list[FileVersion]) -> None:
        lines = [canonical_json(asdict(v)) for v in versions]
        _atomic_write(self._versions_path(project_id),
                      ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")

    def store_file_version(self, project_id: str, data: bytes,
                           stored_at: Optional[str] = None) -> FileVersion:
        self.get_project(project_id)
        with self._project_lock(project_id):
            versions = self._load_versions(project_id)
            number = versions[-1].version + 1 if versions else 1
            version = FileVersion(
                project_id=project_id,
                version=number,
                stored_at=stored_at or utcnow_iso(),
                digest=hashlib.sha256(data).hexdigest(),
                size=len(data),
            )
            path = self.files_dir / project_id / f"v{number:03d}.bin"
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, data)
            versions.append(version)
            self._flush_versions(project_id, versions)
            return version

    def get_file_version(self, project_id: str,
                         version: Optional[int] = None) -> bytes:
        with self._project_lock(project_id):
            versions = self._load_versions(project_id)
            if not versions:
                raise NotFound(f"project {project_id} has no stored files")
            number = version if version is not None else versions[-1].version
            path = self.files_dir / project_id / f"v{number:03d}.bin"
            if not path.exists():
                raise NotFound(f"project {project_id} version {number}")
            return path.read_bytes()

    def retention_sweep(self, now: Optional[datetime] = None,
                        period_days: int = DEFAULT_RETENTION_DAYS
                        ) -> list[FileVersion]:
        """Delete non-latest file versions strictly older than the period.

        The latest version of each project is always retained.  Idempotent
        for a fixed ``now``.
        """
        if now is None:
            now = datetime.now(timezone.utc)
        cutoff_seconds = period_days * 86400
        deleted: list[FileVersion] = []
        with self._lock:
            project_ids = [p.name for p in self.files_dir.iterdir() if p.is_dir()]
        for project_id in sorted(project_ids):
            with self._project_lock(project_id):
                versions = self._load_versions(project_id)
                if len(versions) < 2:
                    continue
                keep = []
                for v in versions:
                    stored = datetime.fromisoformat(v.stored_at)
                    age = (now - stored).total_seconds()
                    is_latest = v.version == versions[-1].version
                    if not is_latest and age > cutoff_seconds:
                        path = self.files_dir / project_id / f"v{v.version:03d}.bin"
                        if path.exists():
                            path.unlink()
                        deleted.append(v)
                    else:
                        keep.append(v)
                if len(keep) != len(versions):
                    self._flush_versions(project_id, keep)
        return deleted

    # -- integrity ------------------------------------------------------------

    def fsck(self) -> list[str]:
        """Master/shard referential-integrity check; empty list when clean."""
        issues: list[str] = []
        with self._lock:
            records = dict(self._projects)
            tags = list(self._tags.values())
        for shard_dir in sorted(self.shards_dir.iterdir()) \
                if self.shards_dir.exists() else []:
            if not shard_dir.is_dir():
                continue
            for project_dir in sorted(shard_dir.iterdir()):
                if not project_dir.is_dir() or project_dir.name.startswith("."):
                    continue
                pid = project_dir.name
                rec = records.get(pid)
                if rec is None:
                    issues.append(f"shard {shard_dir.name}: orphan data for "
                                  f"unknown project {pid}")
                elif str(rec.shard_id) != shard_dir.name:
                    issues.append(f"project {pid}: data in shard "
                                  f"{shard_dir.name} but assigned {rec.shard_id}")
        for pid, rec in sorted(records.items()):
            if rec.status == ProjectStatus.READY:
                base = self._dataset_dir(rec)
                for name in ("points.csv", "extra.csv", "cycles.json",
                             "rollup.json"):
                    if not (base / name).exists():
                        issues.append(f"project {pid}: Ready but missing {name}")
        for tag in tags:
            if tag.project_id not in records:
                issues.append(f"tag {tag.name!r} references unknown project "
                              f"{tag.project_id}")
        if self.files_dir.exists():
            for project_dir in sorted(self.files_dir.iterdir()):
                if project_dir.is_dir() and project_dir.name not in records:
                    issues.append(f"file versions for unknown project "
                                  f"{project_dir.name}")
        return issues
