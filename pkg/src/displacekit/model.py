"""Core domain types: administrative hierarchy, analysis calendar, parameters.

Everything here is immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError, HierarchyGap, ParseError, UnknownCode

# Finest-to-coarsest ranks; parents must be exactly one step coarser.
_LEVEL_RANK = {"ADM1": 1, "ADM2": 2, "ADM3": 3, "ADM4": 4}

MIN_BASELINE_DAYS = 42


class Level(str, Enum):
    ADM1 = "ADM1"
    ADM2 = "ADM2"
    ADM3 = "ADM3"
    ADM4 = "ADM4"

    @property
    def rank(self) -> int:
        return _LEVEL_RANK[self.value]


class DayType(str, Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"


@dataclass(frozen=True)
class AdminUnit:
    code: str
    name: str
    level: Level
    parent_code: str | None = None


@dataclass(frozen=True)
class DailyLocation:
    """One (user, date, admin unit) observation — the atomic external-mode input."""

    user_id: str
    date: dt.date
    location: str


@dataclass(frozen=True)
class LocationEvent:
    """One timestamped network event, local time, for internal-mode derivation."""

    user_id: str
    timestamp: dt.datetime
    location: str


class AdminHierarchy:
    """Indexed admin-unit tree with city-level (ADM3) resolution.

    Codes are opaque strings; no national coding scheme is assumed.
    """

    def __init__(self, units: Iterable[AdminUnit]):
        self._units: dict[str, AdminUnit] = {}
        for unit in units:
            if unit.code in self._units:
                raise ParseError(f"duplicate admin code {unit.code!r}")
            self._units[unit.code] = unit
        for unit in self._units.values():
            if unit.level is Level.ADM1:
                if unit.parent_code is not None:
                    raise ParseError(f"ADM1 unit {unit.code!r} must not have a parent")
                continue
            parent = self._units.get(unit.parent_code or "")
            if parent is None:
                raise ParseError(f"unit {unit.code!r} references unknown parent {unit.parent_code!r}")
            if parent.level.rank != unit.level.rank - 1:
                raise ParseError(
                    f"unit {unit.code!r} ({unit.level.value}) has parent {parent.code!r} "
                    f"({parent.level.value}); parent must be exactly one level coarser"
                )
        self._city_cache: dict[str, str] = {}

    def __contains__(self, code: str) -> bool:
        return code in self._units

    def __len__(self) -> int:
        return len(self._units)

    def get(self, code: str) -> AdminUnit:
        try:
            return self._units[code]
        except KeyError:
            raise UnknownCode(f"admin code {code!r} not in hierarchy") from None

    def city_of(self, code: str) -> str:
        """Resolve a code to its enclosing ADM3 (identity on ADM3 codes)."""
        cached = self._city_cache.get(code)
        if cached is not None:
            return cached
        unit = self.get(code)
        if unit.level.rank < Level.ADM3.rank:
            raise HierarchyGap(f"{code!r} is {unit.level.value}; no enclosing city exists")
        walked = unit
        while walked.level is not Level.ADM3:
            if walked.parent_code is None:
                raise HierarchyGap(f"no ADM3 ancestor for {code!r}")
            walked = self.get(walked.parent_code)
        self._city_cache[code] = walked.code
        return walked.code

    def codes_at(self, level: Level) -> list[str]:
        return sorted(u.code for u in self._units.values() if u.level is level)

    @property
    def has_adm4(self) -> bool:
        return any(u.level is Level.ADM4 for u in self._units.values())

    @classmethod
    def from_csv(cls, path: str | Path) -> "AdminHierarchy":
        """Load from `code,name,level,parent_code` CSV (header mandatory, UTF-8)."""
        path = Path(path)
        units = []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:4]] != ["code", "name", "level", "parent_code"]:
                raise ParseError(f"{path}: expected header code,name,level,parent_code")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) < 4:
                    raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
                code, name, level_s, parent = (c.strip() for c in row[:4])
                try:
                    level = Level(level_s)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: unknown level {level_s!r}") from None
                units.append(AdminUnit(code, name, level, parent or None))
        return cls(units)


def _parse_date(value: str) -> dt.date:
    return dt.date.fromisoformat(value.strip())


def load_holidays(path: str | Path) -> frozenset[dt.date]:
    """Read a holiday file: one ISO-8601 date per line, blank lines ignored."""
    path = Path(path)
    days = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            days.add(_parse_date(line))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad date {line!r}") from None
    return frozenset(days)


@dataclass(frozen=True)
class AnalysisCalendar:
    """Baseline / onset / observation windows plus holiday flags.

    Holidays inside the post-disaster window are flagged on outputs but never
    excluded by the engine; exclusion is the analyst's call.
    """

    baseline_start: dt.date
    baseline_end: dt.date
    disaster_onset: dt.date
    observation_end: dt.date
    holidays: frozenset[dt.date] = frozenset()
    cv_window: tuple[dt.date, dt.date] | None = None
    warnings: tuple[str, ...] = field(init=False, default=())

    def __post_init__(self):
        if not (self.baseline_start <= self.baseline_end < self.disaster_onset <= self.observation_end):
            raise ConfigError(
                "calendar requires baseline_start <= baseline_end < disaster_onset <= observation_end"
            )
        if self.cv_window is not None and self.cv_window[0] > self.cv_window[1]:
            raise ConfigError("cv_window start is after its end")
        object.__setattr__(self, "holidays", frozenset(self.holidays))
        span = sum(1 for d in self.baseline_days(include_holidays=False))
        warnings = ()
        if span < MIN_BASELINE_DAYS:
            warnings = (
                f"baseline covers {span} non-holiday days, below the recommended {MIN_BASELINE_DAYS}",
            )
        object.__setattr__(self, "warnings", warnings)

    def day_type(self, day: dt.date) -> DayType:
        return DayType.WEEKEND if day.weekday() >= 5 else DayType.WEEKDAY

    def is_holiday(self, day: dt.date) -> bool:
        return day in self.holidays

    def in_baseline(self, day: dt.date) -> bool:
        return self.baseline_start <= day <= self.baseline_end

    def in_observation(self, day: dt.date) -> bool:
        return self.disaster_onset <= day <= self.observation_end

    def in_window(self, day: dt.date) -> bool:
        return self.baseline_start <= day <= self.observation_end

    def baseline_days(self, include_holidays: bool = True) -> Iterator[dt.date]:
        yield from self._days(self.baseline_start, self.baseline_end, include_holidays)

    def observation_days(self, include_holidays: bool = True) -> Iterator[dt.date]:
        yield from self._days(self.disaster_onset, self.observation_end, include_holidays)

    def _days(self, start: dt.date, end: dt.date, include_holidays: bool) -> Iterator[dt.date]:
        day = start
        one = dt.timedelta(days=1)
        while day <= end:
            if include_holidays or day not in self.holidays:
                yield day
            day += one


def day_type(day: dt.date, calendar: AnalysisCalendar) -> tuple[DayType, bool]:
    """Weekday/weekend classification plus the holiday flag for one date."""
    return calendar.day_type(day), calendar.is_holiday(day)


@dataclass(frozen=True)
class Params:
    """Tunable pipeline parameters with the operational defaults."""

    nighttime_start: dt.time = dt.time(21, 0)
    nighttime_end: dt.time = dt.time(4, 59)
    weekend_min_days: int = 2
    weekday_min_days: int = 5
    cv_multiplier: float = 2.0
    z_factor: float = 1.96
    suppression_k: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.weekend_min_days < 1:
            raise ConfigError("weekend_min_days must be >= 1")
        if self.weekday_min_days < 1:
            raise ConfigError("weekday_min_days must be >= 1")
        if self.cv_multiplier <= 0:
            raise ConfigError("cv_multiplier must be > 0")
        if self.z_factor <= 0:
            raise ConfigError("z_factor must be > 0")
        if self.suppression_k < 0:
            raise ConfigError("suppression_k must be >= 0")

    @property
    def nighttime_window(self) -> tuple[dt.time, dt.time]:
        return self.nighttime_start, self.nighttime_end
