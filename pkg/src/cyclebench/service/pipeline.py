"""The ingest pipeline shared by the HTTP job runner and the local CLI:
detect -> parse -> normalize -> derive -> segment -> stats -> put_dataset.
"""

from __future__ import annotations

import logging
from typing import Optional

from .. import engine
from ..errors import CyclebenchError
from ..model import ProjectRecord, ProjectStatus
from ..parsers import ProfileRegistry, builtin_registry, detect_format, parse_and_normalize
from ..store import Store
from .jobs import ParseJob

log = logging.getLogger("cyclebench.pipeline")

# metadata fields copied onto sibling records for extra channels
_SIBLING_FIELDS = (
    "name", "file_name", "internal_file_name", "file_size", "test_name",
    "test_type", "comments", "tag", "mass", "pam_mass", "nam_mass", "area",
    "active_material_fraction", "theoretical_capacity", "test_date",
    "organization_id", "user_id", "job_id", "is_real_time",
)


def ingest_bytes(store: Store, project_id: str, data: bytes, file_name: str,
                 registry: Optional[ProfileRegistry] = None) -> list[str]:
    """Parse uploaded bytes into one Ready project per channel.

    The given project takes the first channel; extra channels get sibling
    records cloned from it.  Returns the ids of every project written.
    """
    registry = registry or builtin_registry()
    rec = store.get_project(project_id)
    store.update_project(project_id, status=ProjectStatus.PROCESSING,
                         processing_message="detecting format")
    format_id = detect_format(file_name, data[:4096], registry)
    profile = registry.get(format_id)
    store.update_project(project_id, status=ProjectStatus.PROCESSING,
                         processing_message=f"parsing as {format_id}")
    datasets = parse_and_normalize(data, profile, file_name=file_name)

    # re-uploads reuse existing sibling rows (matched by channel) so growing
    # multi-channel files keep one project per channel
    siblings = {
        r.channel: r.id for r in store.list_projects()
        if r.user_id == rec.user_id and r.name == rec.name
        and r.file_name == rec.file_name and r.id != project_id
    }

    written: list[str] = []
    for i, dataset in enumerate(datasets):
        if i == 0:
            target = project_id
        elif dataset.channel in siblings:
            target = siblings[dataset.channel]
        else:
            sibling = ProjectRecord(id="", name=rec.name)
            for name in _SIBLING_FIELDS:
                setattr(sibling, name, getattr(rec, name))
            sibling.channel = dataset.channel
            target = store.create_project(sibling)
        indexed, _, stats, rollup, _ = engine.process_dataset(dataset)
        store.put_dataset(target, indexed, stats, rollup)
        written.append(target)
    return written


def run_parse_job(store: Store, registry: Optional[ProfileRegistry],
                  job: ParseJob) -> list[str]:
    """Job-queue runner: loads the stored file and ingests it, recording
    failure on the project row (red status in the UI)."""
    try:
        data = store.get_file_version(job.project_id)
        return ingest_bytes(store, job.project_id, data, job.file_name,
                            registry=registry)
    except CyclebenchError as exc:
        store.update_project(
            job.project_id,
            status=ProjectStatus.FAILED,
            error=str(exc),
            error_detailed=f"{type(exc).__name__}: {exc}",
            processing_message="",
        )
        raise
    except Exception as exc:
        store.update_project(
            job.project_id,
            status=ProjectStatus.FAILED,
            error=f"internal error: {exc}",
            error_detailed=f"{type(exc).__name__}: {exc}",
            processing_message="",
        )
        raise
