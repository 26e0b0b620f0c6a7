"""HTTP service: chunked uploads, parse jobs, project listing, plot data,
templates, organization sharing, and the query endpoint."""

from __future__ import annotations

import logging
import os
from functools import partial
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from ..analysis import (
    CycleSelector,
    PlotSource,
    VARIABLE_CATALOG,
    dqdv,
    find_peaks,
    lookup_variable,
    plot_series,
    resolve_cycles,
    voltage_profile,
)
from ..errors import (
    CyclebenchError,
    EmptySelection,
    MixedDomain,
    NotFound,
    UnknownVariable,
)
from ..model import ProjectRecord, ProjectStatus
from ..parsers import ProfileRegistry, builtin_registry
from ..store import Caller, Query, Store
from .auth import Users
from .jobs import JobQueue
from .pipeline import run_parse_job
from .templates import TemplateStore
from .uploads import ChunkConflict, DigestMismatch, UploadManager

log = logging.getLogger("cyclebench.service")


class UploadDeclareRequest(BaseModel):
    file_name: str = Field(min_length=1)
    project_name: str
    declared_size: int = Field(gt=0)
    chunk_size: Optional[int] = Field(default=None, gt=0)
    metadata: dict = Field(default_factory=dict)


class UploadDeclareResponse(BaseModel):
    upload_id: str
    chunk_size: int
    n_chunks: int


class UploadStatusResponse(BaseModel):
    upload_id: str
    received: list[bool]
    complete: bool


class JobResponse(BaseModel):
    job_id: str
    project_id: str
    state: str
    error: str = ""
    result_project_ids: list[str] = Field(default_factory=list)


class ProjectRow(BaseModel):
    id: str
    name: str
    file_name: str
    test_name: str
    test_type: str
    file_size: int
    channel: int
    num_cycles: int
    created_at: Optional[str]
    status: str
    error: str
    processing_message: str
    organization_id: Optional[str]


class ProjectListResponse(BaseModel):
    projects: list[ProjectRow]


class PlotDataRequest(BaseModel):
    project_ids: list[str]
    x: Optional[str] = None
    y1: Optional[str] = None
    y2: Optional[str] = None
    template_id: Optional[str] = None
    max_points: int = Field(default=2000, ge=4)


class SeriesPayload(BaseModel):
    project_id: str
    project_label: str
    variable: str
    axis: int
    x: list[float]
    y: list[Optional[float]]


class PlotDataResponse(BaseModel):
    x_variable: str
    series: list[SeriesPayload]
    formatting: dict = Field(default_factory=dict)


class TemplateCreateRequest(BaseModel):
    name: str = Field(min_length=1)
    plot_kind: str
    selector: dict = Field(default_factory=lambda: {"mode": "all"})
    x: Optional[str] = None
    y1: Optional[str] = None
    y2: Optional[str] = None
    formatting: dict = Field(default_factory=dict)


class TemplateResponse(BaseModel):
    template_id: str
    name: str
    plot_kind: str
    selector: dict
    x: Optional[str]
    y1: Optional[str]
    y2: Optional[str]
    formatting: dict


class TemplateApplyRequest(BaseModel):
    project_ids: list[str]


class OrgAssignRequest(BaseModel):
    org_id: Optional[str] = None


class DqdvRequest(BaseModel):
    project_id: str
    cycles: list[int] = Field(min_length=1)
    direction: str = "discharge"
    dv: float = Field(default=0.005, gt=0)
    smooth_window: int = Field(default=0, ge=0)
    with_peaks: bool = False


class DqdvCurvePayload(BaseModel):
    cycle: int
    direction: str
    voltage: list[float]
    dqdv: list[float]
    peaks: list[dict] = Field(default_factory=list)


class DqdvResponse(BaseModel):
    project_id: str
    curves: list[DqdvCurvePayload]


class QueryRequest(BaseModel):
    filename_like: Optional[str] = None
    project_ids: Optional[list[str]] = None
    include_cycles: bool = False
    include_datapoints: bool = False
    include_tags: bool = False
    offset: int = 0
    limit: Optional[int] = None


class TagRequest(BaseModel):
    name: str = Field(min_length=1)
    value: str


class VariableInfo(BaseModel):
    id: str
    domain: str
    label: str


def _project_row(rec: ProjectRecord) -> ProjectRow:
    return ProjectRow(
        id=rec.id,
        name=rec.name,
        file_name=rec.file_name,
        test_name=rec.test_name,
        test_type=rec.test_type,
        file_size=rec.file_size,
        channel=rec.channel,
        num_cycles=rec.num_cycles,
        created_at=rec.created_at,
        status=rec.status.value,
        error=rec.error,
        processing_message=rec.processing_message,
        organization_id=rec.organization_id,
    )


_META_FIELDS = (
    "test_name", "test_type", "comments", "tag", "mass", "pam_mass",
    "nam_mass", "area", "active_material_fraction", "theoretical_capacity",
    "test_date", "is_real_time",
)


def create_app(data_dir: Path | str,
               shard_count: Optional[int] = None,
               workers: int = 2,
               registry: Optional[ProfileRegistry] = None,
               chunk_size: Optional[int] = None,
               retention_days: Optional[int] = None,
               run_startup_sweep: bool = False) -> FastAPI:
    """Build the service around one data directory.

    Environment defaults: CYCLEBENCH_SHARDS, CYCLEBENCH_RETENTION_DAYS,
    CYCLEBENCH_WORKERS, CYCLEBENCH_CHUNK_SIZE.
    """
    data_dir = Path(data_dir)
    if shard_count is None:
        shard_count = int(os.environ.get("CYCLEBENCH_SHARDS", "1"))
    if retention_days is None:
        retention_days = int(os.environ.get("CYCLEBENCH_RETENTION_DAYS", "365"))
    if chunk_size is None:
        chunk_size = int(os.environ.get("CYCLEBENCH_CHUNK_SIZE",
                                        str(8 * 1024 * 1024)))
    registry = registry or builtin_registry()

    store = Store(data_dir, shard_count=shard_count)
    users = Users(data_dir / "master" / "users.jsonl")
    created = users.ensure_admin()
    if created:
        log.warning("created default admin user; api key: %s", created.api_key)
    uploads = UploadManager(data_dir / "uploads", chunk_size=chunk_size)
    templates = TemplateStore(data_dir / "master" / "templates.jsonl")
    jobs = JobQueue(
        data_dir / "master" / "jobs.jsonl",
        runner=partial(run_parse_job, store, registry),
        workers=workers,
    )
    jobs.start()
    if run_startup_sweep:
        deleted = store.retention_sweep(period_days=retention_days)
        if deleted:
            log.info("retention sweep removed %d old file versions", len(deleted))

    app = FastAPI(title="cyclebench", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store
    app.state.jobs = jobs
    app.state.users = users
    app.state.uploads = uploads

    def require_caller(authorization: Optional[str] = Header(default=None)) -> Caller:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer API key")
        caller = users.authenticate(authorization[len("Bearer "):])
        if caller is None:
            raise HTTPException(401, "invalid API key")
        return caller

    def visible_project(project_id: str, caller: Caller) -> ProjectRecord:
        try:
            rec = store.get_project(project_id)
        except NotFound:
            raise HTTPException(404, f"unknown project {project_id}")
        if not Store._visible(rec, caller):
            raise HTTPException(404, f"unknown project {project_id}")
        return rec

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok"}

    # -- uploads -------------------------------------------------------------

    @app.post("/api/uploads", response_model=UploadDeclareResponse)
    def declare_upload(body: UploadDeclareRequest,
                       caller: Caller = Depends(require_caller)):
        if not body.project_name.strip():
            raise HTTPException(400, "a Name is a required field")
        session = uploads.declare(
            file_name=body.file_name,
            project_name=body.project_name,
            declared_size=body.declared_size,
            user_id=caller.user_id,
            metadata=body.metadata,
            chunk_size=body.chunk_size,
        )
        return UploadDeclareResponse(
            upload_id=session.session_id,
            chunk_size=session.chunk_size,
            n_chunks=session.n_chunks,
        )

    @app.put("/api/uploads/{upload_id}/chunks/{n}",
             response_model=UploadStatusResponse)
    async def put_chunk(upload_id: str, n: int, request: Request,
                        digest: Optional[str] = None,
                        caller: Caller = Depends(require_caller)):
        body = await request.body()
        try:
            session = uploads.put_chunk(upload_id, n, body,
                                        declared_digest=digest)
        except KeyError:
            raise HTTPException(404, f"unknown upload {upload_id}")
        except IndexError as exc:
            raise HTTPException(400, str(exc))
        except DigestMismatch as exc:
            raise HTTPException(400, str(exc))
        except ChunkConflict as exc:
            raise HTTPException(409, str(exc))
        return UploadStatusResponse(
            upload_id=upload_id,
            received=session.received,
            complete=session.complete,
        )

    @app.get("/api/uploads/{upload_id}", response_model=UploadStatusResponse)
    def upload_status(upload_id: str, caller: Caller = Depends(require_caller)):
        session = uploads.get(upload_id)
        if session is None:
            raise HTTPException(404, f"unknown upload {upload_id}")
        return UploadStatusResponse(
            upload_id=upload_id,
            received=session.received,
            complete=session.complete,
        )

    @app.post("/api/uploads/{upload_id}/complete", response_model=JobResponse)
    def complete_upload(upload_id: str, caller: Caller = Depends(require_caller)):
        session = uploads.get(upload_id)
        if session is None:
            raise HTTPException(404, f"unknown upload {upload_id}")
        if not session.complete:
            missing = [i for i, ok in enumerate(session.received) if not ok]
            raise HTTPException(
                409, f"upload incomplete; missing chunks {missing[:16]}")
        data = uploads.assemble(upload_id)

        # a re-upload of the same file for the same project name versions the
        # existing project (actively growing tests) instead of forking a new one
        existing = [r for r in store.list_projects()
                    if r.user_id == session.user_id
                    and r.name == session.project_name
                    and r.file_name == session.file_name]
        if existing:
            primary = sorted(existing, key=lambda r: (r.created_at or "", r.id))[0]
            project_id = primary.id
            store.update_project(project_id, file_size=len(data),
                                 status=ProjectStatus.PENDING, error="",
                                 error_detailed="")
        else:
            draft = ProjectRecord(id="", name=session.project_name)
            draft.file_name = session.file_name
            draft.internal_file_name = f"{upload_id}-{session.file_name}"
            draft.file_size = len(data)
            draft.user_id = session.user_id
            for key in _META_FIELDS:
                if key in session.metadata and session.metadata[key] is not None:
                    setattr(draft, key, session.metadata[key])
            project_id = store.create_project(draft)
        store.store_file_version(project_id, data)
        job = jobs.submit(project_id, session.file_name)
        store.update_project(project_id, job_id=job.job_id)
        uploads.discard(upload_id)
        return JobResponse(
            job_id=job.job_id,
            project_id=project_id,
            state=job.state,
            error=job.error,
            result_project_ids=job.result_project_ids,
        )

    # -- jobs ----------------------------------------------------------------

    @app.get("/api/jobs/{job_id}", response_model=JobResponse)
    def job_status(job_id: str, caller: Caller = Depends(require_caller)):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return JobResponse(
            job_id=job.job_id,
            project_id=job.project_id,
            state=job.state,
            error=job.error,
            result_project_ids=job.result_project_ids,
        )

    # -- projects ------------------------------------------------------------

    @app.get("/api/projects", response_model=ProjectListResponse)
    def list_projects(filter: Optional[str] = None, offset: int = 0,
                      limit: Optional[int] = None,
                      caller: Caller = Depends(require_caller)):
        records = store.list_projects(caller=caller, name_filter=filter)
        if offset:
            records = records[offset:]
        if limit is not None:
            records = records[:limit]
        return ProjectListResponse(projects=[_project_row(r) for r in records])

    @app.get("/api/projects/{project_id}", response_model=ProjectRow)
    def get_project(project_id: str, caller: Caller = Depends(require_caller)):
        return _project_row(visible_project(project_id, caller))

    @app.post("/api/projects/{project_id}/organization")
    def assign_organization(project_id: str, body: OrgAssignRequest,
                            caller: Caller = Depends(require_caller)):
        rec = visible_project(project_id, caller)
        if rec.user_id != caller.user_id:
            raise HTTPException(403, "only the owner may share a project")
        if body.org_id is not None and body.org_id not in caller.org_ids:
            raise HTTPException(403, "caller does not belong to that organization")
        store.update_project(project_id, organization_id=body.org_id)
        return {"project_id": project_id, "organization_id": body.org_id}

    @app.post("/api/projects/{project_id}/tags")
    def set_tag(project_id: str, body: TagRequest,
                caller: Caller = Depends(require_caller)):
        visible_project(project_id, caller)
        store.set_tag(project_id, body.name, body.value)
        return {"project_id": project_id, "name": body.name, "value": body.value}

    # -- plotting ------------------------------------------------------------

    def _assemble_plot(caller: Caller, project_ids: list[str], x: str,
                       y1: str, y2: Optional[str], max_points: int,
                       formatting: Optional[dict] = None) -> PlotDataResponse:
        if not project_ids:
            raise HTTPException(422, "project_ids must not be empty")
        sources = []
        recs = []
        for pid in project_ids:
            rec = visible_project(pid, caller)
            recs.append(rec)
        try:
            x_pv = lookup_variable(x)
            needs_points = x_pv.domain == "point"
        except UnknownVariable as exc:
            raise HTTPException(422, str(exc))
        for rec in recs:
            cycle_rows: list[dict] = []
            dataset = None
            try:
                if needs_points:
                    dataset = store.get_dataset(rec.id)
                else:
                    cycle_rows = store.get_cycles(rec.id)
            except NotFound:
                raise HTTPException(
                    422, f"project {rec.id} has no processed data yet")
            label = f"{rec.name} (ch {rec.channel})"
            sources.append((rec.id, PlotSource(
                label=label, cycle_rows=cycle_rows, dataset=dataset)))
        try:
            assembled = plot_series(
                [s for _, s in sources], x, y1, y2, max_points=max_points)
        except (MixedDomain, UnknownVariable) as exc:
            raise HTTPException(422, str(exc))
        payload = []
        per_project = len(assembled.series) // len(sources)
        for i, series in enumerate(assembled.series):
            pid = sources[i // per_project][0]
            payload.append(SeriesPayload(
                project_id=pid,
                project_label=series.project_label,
                variable=series.variable,
                axis=series.axis,
                x=series.x,
                y=series.y,
            ))
        return PlotDataResponse(x_variable=assembled.x_variable,
                                series=payload,
                                formatting=formatting or {})

    @app.post("/api/plot-data", response_model=PlotDataResponse)
    def plot_data(body: PlotDataRequest,
                  caller: Caller = Depends(require_caller)):
        x, y1, y2 = body.x, body.y1, body.y2
        formatting: dict = {}
        if body.template_id:
            template = templates.get(body.template_id)
            if template is None or template.user_id != caller.user_id:
                raise HTTPException(404, f"unknown template {body.template_id}")
            x = x or template.x
            y1 = y1 or template.y1
            y2 = y2 if y2 is not None else template.y2
            formatting = template.formatting
        if not x or not y1:
            raise HTTPException(422, "x and y1 are required (directly or via "
                                     "a template)")
        return _assemble_plot(caller, body.project_ids, x, y1, y2,
                              body.max_points, formatting)

    @app.post("/api/dqdv", response_model=DqdvResponse)
    def dqdv_data(body: DqdvRequest, caller: Caller = Depends(require_caller)):
        rec = visible_project(body.project_id, caller)
        if body.direction not in ("charge", "discharge"):
            raise HTTPException(422, "direction must be charge or discharge")
        try:
            dataset = store.get_dataset(rec.id)
        except NotFound:
            raise HTTPException(422, f"project {rec.id} has no processed data")
        curves = []
        for cycle in sorted(set(body.cycles)):
            try:
                curve = dqdv(dataset, cycle, body.direction, dv=body.dv,
                             smooth_window=body.smooth_window)
            except CyclebenchError as exc:
                raise HTTPException(422, f"cycle {cycle}: {exc}")
            peaks = []
            if body.with_peaks:
                peaks = [{"position": p.position, "intensity": p.intensity,
                          "prominence": p.prominence}
                         for p in find_peaks(curve)]
            curves.append(DqdvCurvePayload(
                cycle=cycle,
                direction=body.direction,
                voltage=[float(v) for v in curve.voltage_bins],
                dqdv=[float(v) for v in curve.dqdv],
                peaks=peaks,
            ))
        return DqdvResponse(project_id=rec.id, curves=curves)

    @app.get("/api/variables", response_model=list[VariableInfo])
    def variables(caller: Caller = Depends(require_caller)):
        return [VariableInfo(id=v.var_id, domain=v.domain, label=v.label)
                for v in VARIABLE_CATALOG.values()]

    # -- templates -----------------------------------------------------------

    def _template_response(t) -> TemplateResponse:
        return TemplateResponse(
            template_id=t.template_id, name=t.name, plot_kind=t.plot_kind,
            selector=t.selector, x=t.x, y1=t.y1, y2=t.y2,
            formatting=t.formatting)

    @app.post("/api/templates", response_model=TemplateResponse)
    def create_template(body: TemplateCreateRequest,
                        caller: Caller = Depends(require_caller)):
        try:
            template = templates.create(
                user_id=caller.user_id, name=body.name,
                plot_kind=body.plot_kind, selector=body.selector,
                x=body.x, y1=body.y1, y2=body.y2, formatting=body.formatting)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return _template_response(template)

    @app.get("/api/templates", response_model=list[TemplateResponse])
    def list_templates(caller: Caller = Depends(require_caller)):
        return [_template_response(t) for t in templates.for_user(caller.user_id)]

    @app.get("/api/templates/{template_id}", response_model=TemplateResponse)
    def get_template(template_id: str, caller: Caller = Depends(require_caller)):
        template = templates.get(template_id)
        if template is None or template.user_id != caller.user_id:
            raise HTTPException(404, f"unknown template {template_id}")
        return _template_response(template)

    @app.post("/api/templates/{template_id}/apply")
    def apply_template(template_id: str, body: TemplateApplyRequest,
                       caller: Caller = Depends(require_caller)):
        template = templates.get(template_id)
        if template is None or template.user_id != caller.user_id:
            raise HTTPException(404, f"unknown template {template_id}")
        if not body.project_ids:
            raise HTTPException(422, "project_ids must not be empty")
        selector = CycleSelector.from_dict(template.selector)
        if template.plot_kind == "cycle_stats":
            x = template.x or "cycle_index"
            y1 = template.y1 or "discharge_capacity"
            plot = _assemble_plot(caller, body.project_ids, x, y1,
                                  template.y2, 2000, template.formatting)
            return {"template_id": template_id, "plot": plot.model_dump()}
        # voltage_profile
        result: dict = {"template_id": template_id, "profiles": []}
        for pid in body.project_ids:
            rec = visible_project(pid, caller)
            try:
                dataset = store.get_dataset(pid)
            except NotFound:
                raise HTTPException(422, f"project {pid} has no processed data")
            try:
                cycles = resolve_cycles(selector, rec.num_cycles)
            except EmptySelection as exc:
                raise HTTPException(422, str(exc))
            series = []
            for cycle in cycles:
                try:
                    q, v = voltage_profile(dataset, cycle, "discharge")
                except CyclebenchError:
                    continue
                series.append({
                    "cycle": cycle,
                    "capacity": [float(x) for x in q],
                    "voltage": [float(x) for x in v],
                })
            result["profiles"].append({
                "project_id": pid,
                "cycles": cycles,
                "series": series,
                "formatting": template.formatting,
            })
        return result

    # -- query ---------------------------------------------------------------

    @app.post("/api/query")
    def run_query(body: QueryRequest, caller: Caller = Depends(require_caller)):
        q = Query(
            filename_like=body.filename_like,
            project_ids=body.project_ids,
            include_cycles=body.include_cycles,
            include_datapoints=body.include_datapoints,
            include_tags=body.include_tags,
            offset=body.offset,
            limit=body.limit,
        )
        results = store.query(q, caller=caller)
        payload = []
        for r in results:
            entry: dict = {"project": r.project}
            if r.cycles is not None:
                entry["cycles"] = r.cycles
            if r.datapoints is not None:
                entry["dataPoints"] = r.datapoints
            if r.tags is not None:
                entry["projectTags"] = r.tags
            payload.append(entry)
        return {"results": payload}

    return app
