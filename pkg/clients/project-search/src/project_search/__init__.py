"""Query client for the cyclebench HTTP API.

Composes one server-side query from chained builder calls and returns plain
dictionaries of pandas tables, so the server (not the notebook) stays the
single authority on statistics and on how data is sharded:

    import project_search as ps

    query = ps.OrganizationProjectSearch()
    query.withFileNameLike('181116')
    query.includeCycles()
    data = query.executeDictionary()
    data[0]['cycles'].columns
"""

from __future__ import annotations

import os
from typing import Optional

import httpx
import pandas as pd

__all__ = ["OrganizationProjectSearch", "ProjectSearchError"]
__version__ = "0.1.0"


class ProjectSearchError(Exception):
    """Connection or server-side failure, carrying the server's detail."""

    def __init__(self, message: str, status_code: Optional[int] = None):
        super().__init__(message)
        self.status_code = status_code


class OrganizationProjectSearch:
    """One query against the projects visible to the caller.

    Builder methods return self so calls chain; each execute composes a
    single request.  Configuration comes from CYCLEBENCH_URL and
    CYCLEBENCH_API_KEY unless passed explicitly.
    """

    def __init__(self, base_url: Optional[str] = None,
                 api_key: Optional[str] = None, timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self._base_url = (base_url or os.environ.get("CYCLEBENCH_URL", "")
                          ).rstrip("/")
        self._api_key = api_key or os.environ.get("CYCLEBENCH_API_KEY", "")
        if not self._base_url:
            raise ProjectSearchError(
                "no server configured: set CYCLEBENCH_URL or pass base_url")
        self._timeout = timeout
        self._transport = transport
        self._filename_like: Optional[str] = None
        self._project_ids: Optional[list[str]] = None
        self._include_cycles = False
        self._include_datapoints = False
        self._include_tags = False
        self._offset = 0
        self._limit: Optional[int] = None

    # -- builder -------------------------------------------------------------

    def withFileNameLike(self, fragment: str) -> "OrganizationProjectSearch":
        self._filename_like = fragment
        return self

    def withProjectIds(self, ids: list[str]) -> "OrganizationProjectSearch":
        self._project_ids = list(ids)
        return self

    def includeCycles(self) -> "OrganizationProjectSearch":
        self._include_cycles = True
        return self

    def includeDataPointData(self) -> "OrganizationProjectSearch":
        self._include_datapoints = True
        return self

    def includeProjectTags(self) -> "OrganizationProjectSearch":
        self._include_tags = True
        return self

    def withPaging(self, offset: int = 0,
                   limit: Optional[int] = None) -> "OrganizationProjectSearch":
        self._offset = offset
        self._limit = limit
        return self

    # -- execution -----------------------------------------------------------

    def _body(self) -> dict:
        return {
            "filename_like": self._filename_like,
            "project_ids": self._project_ids,
            "include_cycles": self._include_cycles,
            "include_datapoints": self._include_datapoints,
            "include_tags": self._include_tags,
            "offset": self._offset,
            "limit": self._limit,
        }

    def executeDictionary(self) -> list[dict]:
        """Run the query; one entry per project.

        Each entry maps 'project' to the metadata row and, where requested,
        'cycles' / 'dataPoints' / 'projectTags' to pandas DataFrames whose
        columns carry the server's canonical names.
        """
        try:
            with httpx.Client(timeout=self._timeout,
                              transport=self._transport) as client:
                response = client.post(
                    f"{self._base_url}/api/query",
                    json=self._body(),
                    headers={"Authorization": f"Bearer {self._api_key}"})
        except httpx.TransportError as exc:
            raise ProjectSearchError(f"connection failed: {exc}") from exc
        if response.status_code != 200:
            detail = response.text
            try:
                detail = response.json().get("detail", detail)
            except ValueError:
                pass
            raise ProjectSearchError(
                f"server returned {response.status_code}: {detail}",
                status_code=response.status_code)

        out = []
        for entry in response.json()["results"]:
            item: dict = {"project": entry["project"]}
            for key in ("cycles", "dataPoints", "projectTags"):
                if key in entry:
                    item[key] = pd.DataFrame(entry[key])
            out.append(item)
        return out

    # only the dictionary-of-tables form is implemented
    execute = executeDictionary
