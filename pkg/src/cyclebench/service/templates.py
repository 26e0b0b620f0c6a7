"""Per-user plot templates: a saved plot kind, variable choices, cycle
selector, and chart formatting that reproduce the same output on demand."""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from ..analysis import CycleSelector
from ..model import canonical_json

PLOT_KINDS = ("cycle_stats", "voltage_profile")


@dataclass
class PlotTemplate:
    template_id: str
    user_id: str
    name: str
    plot_kind: str
    x: Optional[str] = None
    y1: Optional[str] = None
    y2: Optional[str] = None
    selector: dict = field(default_factory=lambda: {"mode": "all"})
    formatting: dict = field(default_factory=dict)

    def cycle_selector(self) -> CycleSelector:
        return CycleSelector.from_dict(self.selector)


class TemplateStore:
    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._templates: dict[str, PlotTemplate] = {}
        if self.path.exists():
            for line in self.path.read_text("utf-8").splitlines():
                if line.strip():
                    t = PlotTemplate(**json.loads(line))
                    self._templates[t.template_id] = t

    def _flush(self) -> None:
        lines = [canonical_json(asdict(t))
                 for t in sorted(self._templates.values(),
                                 key=lambda t: t.template_id)]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")
        tmp.replace(self.path)

    def create(self, user_id: str, name: str, plot_kind: str,
               selector: dict, x: Optional[str] = None,
               y1: Optional[str] = None, y2: Optional[str] = None,
               formatting: Optional[dict] = None) -> PlotTemplate:
        if plot_kind not in PLOT_KINDS:
            raise ValueError(f"plot_kind must be one of {PLOT_KINDS}")
        sel = CycleSelector.from_dict(selector)
        sel.validate()
        template = PlotTemplate(
            template_id=uuid.uuid4().hex,
            user_id=user_id,
            name=name,
            plot_kind=plot_kind,
            x=x,
            y1=y1,
            y2=y2,
            selector=sel.to_dict(),
            formatting=formatting or {},
        )
        with self._lock:
            self._templates[template.template_id] = template
            self._flush()
        return template

    def get(self, template_id: str) -> Optional[PlotTemplate]:
        with self._lock:
            return self._templates.get(template_id)

    def for_user(self, user_id: str) -> list[PlotTemplate]:
        with self._lock:
            return sorted((t for t in self._templates.values()
                           if t.user_id == user_id), key=lambda t: t.name)
