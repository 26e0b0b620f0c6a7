"""Export the service's OpenAPI document to docs/openapi.json.

Run after changing any endpoint or request/response model:
    python scripts/export_openapi.py
The committed document is the contract the web frontend validates against.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from cyclebench.service import create_app


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        app = create_app(tmp, workers=1)
        doc = app.openapi()
        app.state.jobs.stop()
    out = Path(__file__).parent.parent / "docs" / "openapi.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
    print(f"wrote {out} ({len(doc['paths'])} paths)")


if __name__ == "__main__":
    main()
