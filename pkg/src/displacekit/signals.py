"""Daily location signals: external-mode ingestion and internal-mode derivation.

Both modes end in the same shape — at most one DailySignal per (user, date)
with a residential-like and an activity-like admin unit.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AbortThresholdExceeded, EmptyInput, ParseError
from .model import AdminHierarchy, AnalysisCalendar, LocationEvent, Params

DAILY_CSV_HEADER = ["user_id", "date", "admin_code"]
EVENTS_CSV_HEADER = ["user_id", "timestamp", "admin_code"]
SIGNALS_CSV_HEADER = ["user_id", "date", "residential", "activity", "quality"]

# Above this malformed-row share the feed is treated as the wrong file.
MALFORMED_ABORT_FRACTION = 0.5


class Quality(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    NOT_AVAILABLE = "not_available"


@dataclass(frozen=True)
class DailySignal:
    user_id: str
    date: dt.date
    residential: str | None
    activity: str | None
    quality: Quality

    @property
    def observed(self) -> str | None:
        """The unit used for detection: residential when present, else activity."""
        return self.residential if self.residential is not None else self.activity


@dataclass
class IngestReport:
    """Row counts per rejection reason; merging partition reports is plain addition."""

    accepted: int = 0
    duplicate: int = 0
    out_of_window: int = 0
    unknown_code: int = 0
    malformed: int = 0

    def merge(self, other: "IngestReport") -> "IngestReport":
        return IngestReport(
            accepted=self.accepted + other.accepted,
            duplicate=self.duplicate + other.duplicate,
            out_of_window=self.out_of_window + other.out_of_window,
            unknown_code=self.unknown_code + other.unknown_code,
            malformed=self.malformed + other.malformed,
        )

    @property
    def total(self) -> int:
        return self.accepted + self.duplicate + self.out_of_window + self.unknown_code + self.malformed

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def mode_with_seeded_tiebreak(values: Iterable[str], user_id: str, purpose: str, seed: int) -> str:
    """Most frequent value; ties broken uniformly by a (seed, user, purpose) hash.

    Values are sorted before the draw, so the result never depends on input
    order, and the per-user hash keeps draws stable when other users' data
    changes.
    """
    counts = Counter(values)
    if not counts:
        raise EmptyInput(f"no values to take a mode over (user {user_id!r}, {purpose})")
    top = max(counts.values())
    tied = sorted(v for v, c in counts.items() if c == top)
    if len(tied) == 1:
        return tied[0]
    digest = hashlib.blake2b(f"{seed}|{user_id}|{purpose}".encode("utf-8"), digest_size=8).digest()
    return tied[int.from_bytes(digest, "big") % len(tied)]


def ingest_daily(
    rows: Iterable[Sequence[str]],
    hierarchy: AdminHierarchy,
    calendar: AnalysisCalendar,
) -> tuple[list[DailySignal], IngestReport]:
    """External-mode ingestion of raw (user_id, date, admin_code) rows.

    Keeps the first occurrence per (user, date); counts every rejection.
    Raises AbortThresholdExceeded when malformed rows dominate the feed.
    """
    report = IngestReport()
    seen: dict[tuple[str, dt.date], str] = {}
    order: list[tuple[str, dt.date]] = []
    for row in rows:
        if len(row) < 3:
            report.malformed += 1
            continue
        user_id, date_s, code = row[0].strip(), row[1].strip(), row[2].strip()
        if not user_id or not code:
            report.malformed += 1
            continue
        try:
            day = dt.date.fromisoformat(date_s)
        except ValueError:
            report.malformed += 1
            continue
        if not calendar.in_window(day):
            report.out_of_window += 1
            continue
        if code not in hierarchy:
            report.unknown_code += 1
            continue
        key = (user_id, day)
        if key in seen:
            report.duplicate += 1
            continue
        seen[key] = code
        order.append(key)
        report.accepted += 1
    if report.total > 0 and report.malformed / report.total > MALFORMED_ABORT_FRACTION:
        raise AbortThresholdExceeded(
            f"{report.malformed} of {report.total} rows malformed; refusing to continue"
        )
    signals = [
        DailySignal(u, d, seen[(u, d)], seen[(u, d)], Quality.NOT_AVAILABLE)
        for (u, d) in sorted(seen)
    ]
    return signals, report


def read_daily_csv(path: str | Path) -> Iterable[list[str]]:
    """Yield raw rows from a `user_id,date,admin_code` CSV, enforcing the header."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != DAILY_CSV_HEADER:
            raise ParseError(f"{path}: expected header user_id,date,admin_code")
        for row in reader:
            if row and any(c.strip() for c in row):
                yield row


def ingest_daily_csv(
    path: str | Path, hierarchy: AdminHierarchy, calendar: AnalysisCalendar
) -> tuple[list[DailySignal], IngestReport]:
    return ingest_daily(read_daily_csv(path), hierarchy, calendar)


def read_events_csv(
    path: str | Path, hierarchy: AdminHierarchy, report: IngestReport | None = None
) -> tuple[list[LocationEvent], IngestReport]:
    """Parse internal-mode `user_id,timestamp,admin_code` events.

    Malformed rows and unknown codes are counted, not fatal; window filtering
    happens later, after nighttime attribution decides the owning date.
    """
    path = Path(path)
    report = report if report is not None else IngestReport()
    events = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != EVENTS_CSV_HEADER:
            raise ParseError(f"{path}: expected header user_id,timestamp,admin_code")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) < 3:
                report.malformed += 1
                continue
            user_id, ts_s, code = row[0].strip(), row[1].strip(), row[2].strip()
            if not user_id or not code:
                report.malformed += 1
                continue
            try:
                ts = dt.datetime.fromisoformat(ts_s)
            except ValueError:
                report.malformed += 1
                continue
            if code not in hierarchy:
                report.unknown_code += 1
                continue
            events.append(LocationEvent(user_id, ts, code))
    if report.total > 0 and report.malformed / report.total > MALFORMED_ABORT_FRACTION:
        raise AbortThresholdExceeded(
            f"{report.malformed} of {report.total} rows malformed; refusing to continue"
        )
    return events, report


def _attribute_event(ts: dt.datetime, params: Params) -> tuple[dt.date, bool]:
    """Assign an event to its owning date and nighttime flag.

    A window that wraps midnight (start > end) attributes the post-midnight
    tail to the previous calendar date: one sleep period, one night.
    """
    start, end = params.nighttime_start, params.nighttime_end
    t = ts.time()
    if start > end:
        if t >= start:
            return ts.date(), True
        if t <= end:
            return ts.date() - dt.timedelta(days=1), True
        return ts.date(), False
    if start <= t <= end:
        return ts.date(), True
    return ts.date(), False


def derive_internal(
    events: Iterable[LocationEvent],
    params: Params,
    calendar: AnalysisCalendar,
    report: IngestReport | None = None,
) -> list[DailySignal]:
    """Internal-mode daily signals via the nighttime-priority procedure.

    residential = modal unit among the date's nighttime events, falling back to
    the daytime modal when no nighttime event exists; activity = daytime modal.
    Quality: low when a date has fewer than 2 events, else high with nighttime
    data and medium with daytime only.
    """
    nights: dict[tuple[str, dt.date], list[str]] = defaultdict(list)
    days: dict[tuple[str, dt.date], list[str]] = defaultdict(list)
    totals: Counter = Counter()
    for ev in events:
        owned, is_night = _attribute_event(ev.timestamp, params)
        if not calendar.in_window(owned):
            if report is not None:
                report.out_of_window += 1
            continue
        key = (ev.user_id, owned)
        (nights if is_night else days)[key].append(ev.location)
        totals[key] += 1
        if report is not None:
            report.accepted += 1
    signals = []
    for key in sorted(set(nights) | set(days)):
        user_id, owned = key
        night_units = nights.get(key, [])
        day_units = days.get(key, [])
        iso = owned.isoformat()
        if night_units:
            residential = mode_with_seeded_tiebreak(
                night_units, user_id, f"internal_residential:{iso}", params.rng_seed
            )
        else:
            residential = mode_with_seeded_tiebreak(
                day_units, user_id, f"internal_residential:{iso}", params.rng_seed
            )
        activity = (
            mode_with_seeded_tiebreak(day_units, user_id, f"internal_activity:{iso}", params.rng_seed)
            if day_units
            else None
        )
        if totals[key] < 2:
            quality = Quality.LOW
        elif night_units:
            quality = Quality.HIGH
        else:
            quality = Quality.MEDIUM
        signals.append(DailySignal(user_id, owned, residential, activity, quality))
    return signals


def group_by_user(signals: Iterable[DailySignal]) -> dict[str, list[DailySignal]]:
    """Per-user signal lists, date-sorted; the unit of per-user parallel work."""
    grouped: dict[str, list[DailySignal]] = defaultdict(list)
    for sig in signals:
        grouped[sig.user_id].append(sig)
    for sigs in grouped.values():
        sigs.sort(key=lambda s: s.date)
    return dict(grouped)


def write_signals_csv(signals: Iterable[DailySignal], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIGNALS_CSV_HEADER)
        for sig in signals:
            writer.writerow(
                [sig.user_id, sig.date.isoformat(), sig.residential or "", sig.activity or "", sig.quality.value]
            )


def read_signals_csv(path: str | Path) -> list[DailySignal]:
    path = Path(path)
    signals = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:5]] != SIGNALS_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(SIGNALS_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) < 5:
                raise ParseError(f"{path}:{lineno}: expected 5 columns")
            try:
                day = dt.date.fromisoformat(row[1])
                quality = Quality(row[4])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            signals.append(DailySignal(row[0], day, row[2] or None, row[3] or None, quality))
    return signals
