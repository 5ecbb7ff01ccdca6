"""Per-user-per-day displacement verdicts.

Two rules run side by side: the context-aware matrix, which excuses
inter-city commuters observed at their work city on weekdays, and the naive
uniform displaced-if-not-at-home rule used as the comparison baseline.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ParseError, UnknownCode
from .model import AdminHierarchy, AnalysisCalendar
from .profile import MobilityProfile, ProfileKind, ResidentialBaseline
from .signals import DailySignal

STATUS_CSV_HEADER = ["user_id", "date", "method", "verdict", "observed_city", "rule_fired"]

# Users observed in admin units outside the loaded hierarchy are displaced
# somewhere, not missing; they get this synthetic destination city.
OUT_OF_COVERAGE = "OUT_OF_COVERAGE"


class Method(str, Enum):
    CONTEXT_AWARE = "context_aware"
    NAIVE = "naive"


class Verdict(str, Enum):
    AT_EXPECTED = "at_expected"
    DISPLACED = "displaced"
    MISSING = "missing"


class Rule(str, Enum):
    """Which row of the detection matrix governed the expectation."""

    LOCAL_ANY = "local_any"
    INTRA_CITY_ANY = "intra_city_any"
    INTER_CITY_WEEKDAY = "inter_city_weekday"
    INTER_CITY_WEEKEND = "inter_city_weekend"
    WEEKEND_ONLY_ANY = "weekend_only_any"
    NAIVE_UNIFORM = "naive_uniform"


@dataclass(frozen=True)
class DayStatus:
    user_id: str
    date: dt.date
    method: Method
    verdict: Verdict
    observed_city: str | None
    rule_fired: Rule


def expected_cities(profile: MobilityProfile, home_city: str, day: dt.date) -> frozenset[str]:
    """Cities where the user's presence is unremarkable on this date.

    Only inter-city commuters on weekdays get a second expected city; holidays
    deliberately do not alter the set (they are flagged downstream instead).
    """
    if profile.kind is ProfileKind.INTER_CITY_COMMUTER and day.weekday() < 5:
        assert profile.work_city is not None
        return frozenset({home_city, profile.work_city})
    return frozenset({home_city})


def _rule_for(profile: MobilityProfile, day: dt.date) -> Rule:
    if profile.kind is ProfileKind.LOCAL_RESIDENT:
        return Rule.LOCAL_ANY
    if profile.kind is ProfileKind.INTRA_CITY_COMMUTER:
        return Rule.INTRA_CITY_ANY
    if profile.kind is ProfileKind.INTER_CITY_COMMUTER:
        return Rule.INTER_CITY_WEEKDAY if day.weekday() < 5 else Rule.INTER_CITY_WEEKEND
    return Rule.WEEKEND_ONLY_ANY


def observed_city_of(signal: DailySignal, hierarchy: AdminHierarchy) -> str:
    """City of the day's observation, residential signal preferred.

    Displacement is about where one stays; the activity unit only fills in
    when no residential-like value exists.
    """
    unit = signal.observed
    assert unit is not None
    try:
        return hierarchy.city_of(unit)
    except UnknownCode:
        return OUT_OF_COVERAGE


def detect_day(
    signal: DailySignal | None,
    profile: MobilityProfile,
    baseline: ResidentialBaseline,
    day: dt.date,
    method: Method,
    hierarchy: AdminHierarchy,
) -> DayStatus:
    """One verdict for one user on one date under one method."""
    rule = _rule_for(profile, day) if method is Method.CONTEXT_AWARE else Rule.NAIVE_UNIFORM
    if signal is None or signal.observed is None:
        return DayStatus(profile.user_id, day, method, Verdict.MISSING, None, rule)
    city = observed_city_of(signal, hierarchy)
    if method is Method.CONTEXT_AWARE:
        displaced = city not in expected_cities(profile, baseline.home_city, day)
    else:
        displaced = city != baseline.home_city
    verdict = Verdict.DISPLACED if displaced else Verdict.AT_EXPECTED
    return DayStatus(profile.user_id, day, method, verdict, city, rule)


def detect_period(
    signals_by_user: Mapping[str, Sequence[DailySignal]],
    profiles: Mapping[str, MobilityProfile],
    baselines: Mapping[str, ResidentialBaseline],
    calendar: AnalysisCalendar,
    hierarchy: AdminHierarchy,
    methods: Sequence[Method] = (Method.CONTEXT_AWARE, Method.NAIVE),
    window: Sequence[dt.date] | None = None,
) -> list[DayStatus]:
    """Complete verdict matrix over (cohort users x window days x methods).

    The cohort is exactly the profiled users; excluded users produce no rows.
    Default window is the post-disaster observation period.
    """
    days = list(window) if window is not None else list(calendar.observation_days())
    statuses: list[DayStatus] = []
    for user_id in sorted(profiles):
        profile = profiles[user_id]
        baseline = baselines[user_id]
        sig_by_date = {s.date: s for s in signals_by_user.get(user_id, ())}
        for day in days:
            signal = sig_by_date.get(day)
            for method in methods:
                statuses.append(detect_day(signal, profile, baseline, day, method, hierarchy))
    return statuses


def write_statuses_csv(statuses: Iterable[DayStatus], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATUS_CSV_HEADER)
        for st in statuses:
            writer.writerow(
                [
                    st.user_id,
                    st.date.isoformat(),
                    st.method.value,
                    st.verdict.value,
                    st.observed_city or "",
                    st.rule_fired.value,
                ]
            )


def read_statuses_csv(path: str | Path) -> list[DayStatus]:
    path = Path(path)
    statuses = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != STATUS_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(STATUS_CSV_HEADER)}")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            statuses.append(
                DayStatus(
                    row[0],
                    dt.date.fromisoformat(row[1]),
                    Method(row[2]),
                    Verdict(row[3]),
                    row[4] or None,
                    Rule(row[5]),
                )
            )
    return statuses
