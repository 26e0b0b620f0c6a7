"""Minimal five-field cron expressions for the watcher schedule.

Supports ``*``, numbers, ranges (``a-b``), steps (``*/n``, ``a-b/n``), and
comma lists in the usual minute/hour/day-of-month/month/day-of-week fields.
Day-of-week: 0 or 7 is Sunday.  As is conventional, when both day-of-month
and day-of-week are restricted a date matches if either does.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

_FIELD_RANGES = (
    ("minute", 0, 59),
    ("hour", 0, 23),
    ("day", 1, 31),
    ("month", 1, 12),
    ("weekday", 0, 6),
)


def _parse_field(text: str, lo: int, hi: int, name: str) -> frozenset[int]:
    values: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            raise ValueError(f"empty {name} component")
        step = 1
        if "/" in part:
            part, step_text = part.split("/", 1)
            step = int(step_text)
            if step < 1:
                raise ValueError(f"{name}: step must be >= 1")
        if part == "*":
            start, end = lo, hi
        elif "-" in part:
            a, b = part.split("-", 1)
            start, end = int(a), int(b)
        else:
            start = end = int(part)
        bound = 7 if name == "weekday" else hi  # weekday allows 7 == Sunday
        if start < lo or end > bound or start > end:
            raise ValueError(f"{name}: {part!r} outside {lo}..{bound}")
        expanded = range(start, end + 1, step)
        if name == "weekday":
            values.update(v % 7 for v in expanded)
        else:
            values.update(expanded)
    return frozenset(values)


@dataclass(frozen=True)
class CronExpr:
    minutes: frozenset[int]
    hours: frozenset[int]
    days: frozenset[int]
    months: frozenset[int]
    weekdays: frozenset[int]
    day_restricted: bool
    weekday_restricted: bool

    @staticmethod
    def parse(expression: str) -> "CronExpr":
        fields = expression.split()
        if len(fields) != 5:
            raise ValueError(
                f"cron expression needs 5 fields, got {len(fields)}: "
                f"{expression!r}")
        parsed = []
        for text, (name, lo, hi) in zip(fields, _FIELD_RANGES):
            parsed.append(_parse_field(text, lo, hi, name))
        return CronExpr(
            minutes=parsed[0],
            hours=parsed[1],
            days=parsed[2],
            months=parsed[3],
            weekdays=parsed[4],
            day_restricted=fields[2] != "*",
            weekday_restricted=fields[4] != "*",
        )

    def matches(self, when: datetime) -> bool:
        if when.minute not in self.minutes or when.hour not in self.hours \
                or when.month not in self.months:
            return False
        # python weekday(): Monday=0; cron: Sunday=0
        cron_weekday = (when.weekday() + 1) % 7
        day_ok = when.day in self.days
        weekday_ok = cron_weekday in self.weekdays
        if self.day_restricted and self.weekday_restricted:
            return day_ok or weekday_ok
        return day_ok and weekday_ok

    def next_after(self, when: datetime) -> datetime:
        """First matching minute strictly after ``when``."""
        probe = when.replace(second=0, microsecond=0) + timedelta(minutes=1)
        # 366 days of minutes bounds any satisfiable 5-field expression
        for _ in range(366 * 24 * 60):
            if self.matches(probe):
                return probe
            probe += timedelta(minutes=1)
        raise ValueError("cron expression never matches")
