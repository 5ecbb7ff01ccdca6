"""Residential baselines and mobility-profile classification.

The baseline prioritizes weekend observations (people are typically home on
weekends); weekday locations are confounded by work and serve only as a
fallback residential proxy. Profiles compare the weekend home against the
modal weekday activity location.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import MissingBaseline, ParseError
from .model import AdminHierarchy, AnalysisCalendar, DayType, Params
from .signals import DailySignal, mode_with_seeded_tiebreak

PROFILE_CSV_HEADER = ["user_id", "home", "home_city", "source", "kind", "work_city"]
BASELINE_CSV_HEADER = ["user_id", "home", "home_city", "source", "weekend_days", "weekday_days"]


class BaselineSource(str, Enum):
    WEEKEND = "weekend"
    WEEKDAY_FALLBACK = "weekday_fallback"


class ProfileKind(str, Enum):
    LOCAL_RESIDENT = "local_resident"
    INTRA_CITY_COMMUTER = "intra_city_commuter"
    INTER_CITY_COMMUTER = "inter_city_commuter"
    WEEKEND_ONLY = "weekend_only"


@dataclass(frozen=True)
class ResidentialBaseline:
    user_id: str
    home: str
    home_city: str
    source: BaselineSource
    weekend_days_observed: int
    weekday_days_observed: int


@dataclass(frozen=True)
class ExcludedBaseline:
    """User with too few observations for a stable home assignment."""

    user_id: str
    weekend_days_observed: int
    weekday_days_observed: int


@dataclass(frozen=True)
class MobilityProfile:
    user_id: str
    kind: ProfileKind
    work_city: str | None = None
    weekday_modal: str | None = None


def baseline_period_signals(
    signals: Iterable[DailySignal], calendar: AnalysisCalendar
) -> list[DailySignal]:
    """Restrict to the baseline window with holiday days removed."""
    return [
        s
        for s in signals
        if calendar.in_baseline(s.date) and not calendar.is_holiday(s.date)
    ]


def establish_baseline(
    user_id: str,
    signals: Sequence[DailySignal],
    calendar: AnalysisCalendar,
    params: Params,
    hierarchy: AdminHierarchy,
) -> ResidentialBaseline | ExcludedBaseline:
    """Home assignment: weekend residential mode first, weekday fallback, else excluded.

    `signals` must already be restricted to the baseline period with holidays
    removed (see baseline_period_signals).
    """
    weekend_values = [
        s.residential
        for s in signals
        if s.residential is not None and calendar.day_type(s.date) is DayType.WEEKEND
    ]
    weekday_values = [
        s.residential
        for s in signals
        if s.residential is not None and calendar.day_type(s.date) is DayType.WEEKDAY
    ]
    n_weekend, n_weekday = len(weekend_values), len(weekday_values)
    if n_weekend >= params.weekend_min_days:
        home = mode_with_seeded_tiebreak(weekend_values, user_id, "home_weekend", params.rng_seed)
        source = BaselineSource.WEEKEND
    elif n_weekday >= params.weekday_min_days:
        home = mode_with_seeded_tiebreak(weekday_values, user_id, "home_weekday", params.rng_seed)
        source = BaselineSource.WEEKDAY_FALLBACK
    else:
        return ExcludedBaseline(user_id, n_weekend, n_weekday)
    return ResidentialBaseline(
        user_id=user_id,
        home=home,
        home_city=hierarchy.city_of(home),
        source=source,
        weekend_days_observed=n_weekend,
        weekday_days_observed=n_weekday,
    )


def classify_profile(
    baseline: ResidentialBaseline | ExcludedBaseline,
    signals: Sequence[DailySignal],
    calendar: AnalysisCalendar,
    params: Params,
    hierarchy: AdminHierarchy,
) -> MobilityProfile:
    """Assign one of the four mobility profiles from baseline-period signals.

    The weekday comparison uses the activity signal: the question is where the
    user spends working days, not where they sleep.
    """
    if isinstance(baseline, ExcludedBaseline):
        raise MissingBaseline(f"user {baseline.user_id!r} has no valid residential baseline")
    weekday_values = [
        s.activity
        for s in signals
        if s.activity is not None and calendar.day_type(s.date) is DayType.WEEKDAY
    ]
    if not weekday_values:
        return MobilityProfile(baseline.user_id, ProfileKind.WEEKEND_ONLY)
    modal = mode_with_seeded_tiebreak(weekday_values, baseline.user_id, "weekday_modal", params.rng_seed)
    if modal == baseline.home:
        return MobilityProfile(baseline.user_id, ProfileKind.LOCAL_RESIDENT, weekday_modal=modal)
    modal_city = hierarchy.city_of(modal)
    if modal_city == baseline.home_city:
        return MobilityProfile(baseline.user_id, ProfileKind.INTRA_CITY_COMMUTER, weekday_modal=modal)
    return MobilityProfile(
        baseline.user_id, ProfileKind.INTER_CITY_COMMUTER, work_city=modal_city, weekday_modal=modal
    )


@dataclass(frozen=True)
class AttritionReport:
    """Pipeline attrition as percentages of the starting population."""

    starting_count: int
    valid_baseline_count: int
    observed_post_count: int

    def _pct(self, count: int) -> float | None:
        if self.starting_count == 0:
            return None
        return 100.0 * count / self.starting_count

    @property
    def starting_pct(self) -> float | None:
        return self._pct(self.starting_count)

    @property
    def valid_baseline_pct(self) -> float | None:
        return self._pct(self.valid_baseline_count)

    @property
    def observed_post_pct(self) -> float | None:
        return self._pct(self.observed_post_count)

    def rows(self) -> list[tuple[str, str]]:
        def fmt(p: float | None) -> str:
            return "n/a" if p is None else f"{p:.1f}%"

        return [
            ("observed in city during baseline", fmt(self.starting_pct)),
            ("valid residential baseline", fmt(self.valid_baseline_pct)),
            ("observed at least once post-disaster", fmt(self.observed_post_pct)),
        ]


def attrition_report(
    starting_users: Iterable[str],
    baselines: Mapping[str, ResidentialBaseline | ExcludedBaseline],
    observed_post_users: Iterable[str],
) -> AttritionReport:
    """Staged attrition for one focal city.

    `starting_users` are the users ever observed in the city during baseline;
    stage three counts users that both hold a valid baseline and show up at
    least once post-disaster, so the series is non-increasing.
    """
    starting = set(starting_users)
    observed = set(observed_post_users)
    valid = {
        u for u in starting if isinstance(baselines.get(u), ResidentialBaseline)
    }
    return AttritionReport(
        starting_count=len(starting),
        valid_baseline_count=len(valid),
        observed_post_count=len(valid & observed),
    )


def write_baselines_csv(
    baselines: Mapping[str, ResidentialBaseline | ExcludedBaseline], path: str | Path
) -> None:
    """All users with their counts; excluded users carry empty home columns."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BASELINE_CSV_HEADER)
        for user_id in sorted(baselines):
            b = baselines[user_id]
            if isinstance(b, ResidentialBaseline):
                writer.writerow(
                    [user_id, b.home, b.home_city, b.source.value, b.weekend_days_observed, b.weekday_days_observed]
                )
            else:
                writer.writerow([user_id, "", "", "", b.weekend_days_observed, b.weekday_days_observed])


def read_baselines_csv(path: str | Path) -> dict[str, ResidentialBaseline | ExcludedBaseline]:
    path = Path(path)
    out: dict[str, ResidentialBaseline | ExcludedBaseline] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != BASELINE_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(BASELINE_CSV_HEADER)}")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            user_id, home, home_city, source, n_we, n_wd = row[:6]
            if home:
                out[user_id] = ResidentialBaseline(
                    user_id, home, home_city, BaselineSource(source), int(n_we), int(n_wd)
                )
            else:
                out[user_id] = ExcludedBaseline(user_id, int(n_we), int(n_wd))
    return out


def write_profiles_csv(
    baselines: Mapping[str, ResidentialBaseline | ExcludedBaseline],
    profiles: Mapping[str, MobilityProfile],
    path: str | Path,
) -> None:
    """Baseline/profile snapshot: the hand-off that feeds displacement detection."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_CSV_HEADER)
        for user_id in sorted(profiles):
            b = baselines[user_id]
            p = profiles[user_id]
            assert isinstance(b, ResidentialBaseline)
            writer.writerow([user_id, b.home, b.home_city, b.source.value, p.kind.value, p.work_city or ""])


def read_profiles_csv(
    path: str | Path,
) -> tuple[dict[str, ResidentialBaseline], dict[str, MobilityProfile]]:
    """Read the snapshot back; day counts are not round-tripped (zeroed)."""
    path = Path(path)
    baselines: dict[str, ResidentialBaseline] = {}
    profiles: dict[str, MobilityProfile] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != PROFILE_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(PROFILE_CSV_HEADER)}")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            user_id, home, home_city, source, kind, work_city = row[:6]
            baselines[user_id] = ResidentialBaseline(
                user_id, home, home_city, BaselineSource(source), 0, 0
            )
            profiles[user_id] = MobilityProfile(user_id, ProfileKind(kind), work_city or None)
    return baselines, profiles
