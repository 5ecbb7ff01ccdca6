import datetime as dt
import random

import pytest

from displacekit.errors import MissingBaseline
from displacekit.model import Params
from displacekit.profile import (
    BaselineSource,
    ExcludedBaseline,
    ProfileKind,
    ResidentialBaseline,
    attrition_report,
    baseline_period_signals,
    classify_profile,
    establish_baseline,
    read_baselines_csv,
    write_baselines_csv,
)
from displacekit.signals import DailySignal, Quality


def sig(user, day, residential, activity=None):
    return DailySignal(user, day, residential, activity or residential, Quality.NOT_AVAILABLE)


# weekend days inside the default baseline window
SAT1, SUN1, SAT2 = dt.date(2025, 8, 16), dt.date(2025, 8, 17), dt.date(2025, 8, 23)
# weekdays
MON, TUE, WED, THU, FRI = (dt.date(2025, 8, 11) + dt.timedelta(days=i) for i in range(5))
MON2, TUE2 = dt.date(2025, 8, 18), dt.date(2025, 8, 19)


class TestEstablishBaseline:
    def test_weekend_branch(self, hier, calendar, params):
        signals = [
            sig("u1", SAT1, "C1-B1"),
            sig("u1", SUN1, "C1-B1"),
            sig("u1", SAT2, "C1-B2"),
            sig("u1", MON, "C2-B1"),
        ]
        b = establish_baseline("u1", signals, calendar, params, hier)
        assert isinstance(b, ResidentialBaseline)
        assert b.home == "C1-B1"
        assert b.home_city == "C1"
        assert b.source is BaselineSource.WEEKEND
        assert b.weekend_days_observed == 3

    def test_weekday_fallback_branch(self, hier, calendar, params):
        signals = [sig("u1", SAT1, "C1-B1")] + [
            sig("u1", day, "C2-B1") for day in (MON, TUE, WED, THU, FRI, MON2)
        ]
        b = establish_baseline("u1", signals, calendar, params, hier)
        assert isinstance(b, ResidentialBaseline)
        assert b.home == "C2-B1"
        assert b.source is BaselineSource.WEEKDAY_FALLBACK
        assert b.weekend_days_observed == 1
        assert b.weekday_days_observed == 6

    def test_excluded_branch(self, hier, calendar, params):
        signals = [sig("u1", SAT1, "C1-B1")] + [
            sig("u1", day, "C2-B1") for day in (MON, TUE, WED, THU)
        ]
        b = establish_baseline("u1", signals, calendar, params, hier)
        assert isinstance(b, ExcludedBaseline)
        assert b.weekend_days_observed == 1
        assert b.weekday_days_observed == 4

    def test_threshold_monotonicity(self, hier, calendar):
        rng = random.Random(99)
        cohort = []
        for i in range(120):
            days = sorted(
                rng.sample(
                    [calendar.baseline_start + dt.timedelta(days=j) for j in range(42)],
                    rng.randrange(1, 14),
                )
            )
            cohort.append((f"u{i}", [sig(f"u{i}", d, "C1-B1") for d in days]))

        def valid_count(weekend_min, weekday_min):
            p = Params(weekend_min_days=weekend_min, weekday_min_days=weekday_min)
            return sum(
                isinstance(establish_baseline(u, sigs, calendar, p, hier), ResidentialBaseline)
                for u, sigs in cohort
            )

        for we in (1, 2, 3):
            counts = [valid_count(we, wd) for wd in (3, 5, 7)]
            assert counts == sorted(counts, reverse=True)
        for wd in (3, 5, 7):
            counts = [valid_count(we, wd) for we in (1, 2, 3)]
            assert counts == sorted(counts, reverse=True)

    def test_stable_under_signal_permutation(self, hier, calendar, params):
        signals = [
            sig("u1", SAT1, "C1-B1"),
            sig("u1", SUN1, "C1-B2"),  # weekend tie C1-B1 vs C1-B2
            sig("u1", MON, "C2-B1"),
        ]
        results = set()
        rng = random.Random(3)
        for _ in range(6):
            rng.shuffle(signals)
            results.add(establish_baseline("u1", list(signals), calendar, params, hier))
        assert len(results) == 1

    def test_holidays_removed_before_thresholds(self, hier, params):
        from displacekit.model import AnalysisCalendar

        cal = AnalysisCalendar(
            dt.date(2025, 8, 10), dt.date(2025, 9, 21), dt.date(2025, 9, 22), dt.date(2025, 10, 6),
            holidays=frozenset({SAT1}),
        )
        signals = [sig("u1", SAT1, "C1-B1"), sig("u1", SUN1, "C1-B1"), sig("u1", SAT2, "C1-B1")]
        kept = baseline_period_signals(signals, cal)
        assert len(kept) == 2
        b = establish_baseline("u1", kept, cal, params, hier)
        assert isinstance(b, ResidentialBaseline)
        assert b.weekend_days_observed == 2


class TestClassifyProfile:
    def _baseline(self, hier, calendar, params, home="C1-B1", extra=()):
        signals = [sig("u1", SAT1, home), sig("u1", SUN1, home), *extra]
        b = establish_baseline("u1", signals, calendar, params, hier)
        return b, signals

    def test_local_resident(self, hier, calendar, params):
        b, signals = self._baseline(hier, calendar, params, extra=[sig("u1", MON, "C1-B1")])
        p = classify_profile(b, signals, calendar, params, hier)
        assert p.kind is ProfileKind.LOCAL_RESIDENT
        assert p.work_city is None

    def test_intra_city_commuter(self, hier, calendar, params):
        b, signals = self._baseline(hier, calendar, params, extra=[sig("u1", MON, "C1-B2")])
        p = classify_profile(b, signals, calendar, params, hier)
        assert p.kind is ProfileKind.INTRA_CITY_COMMUTER

    def test_inter_city_commuter(self, hier, calendar, params):
        b, signals = self._baseline(hier, calendar, params, extra=[sig("u1", MON, "C2-B1")])
        p = classify_profile(b, signals, calendar, params, hier)
        assert p.kind is ProfileKind.INTER_CITY_COMMUTER
        assert p.work_city == "C2"

    def test_weekend_only(self, hier, calendar, params):
        b, signals = self._baseline(hier, calendar, params)
        p = classify_profile(b, signals, calendar, params, hier)
        assert p.kind is ProfileKind.WEEKEND_ONLY
        assert p.weekday_modal is None

    def test_weekday_modal_uses_activity_signal(self, hier, calendar, params):
        # sleeps at home (residential) but works across the city line (activity)
        signals = [
            sig("u1", SAT1, "C1-B1"),
            sig("u1", SUN1, "C1-B1"),
            DailySignal("u1", MON, "C1-B1", "C2-B1", Quality.HIGH),
            DailySignal("u1", TUE, "C1-B1", "C2-B1", Quality.HIGH),
        ]
        b = establish_baseline("u1", signals, calendar, params, hier)
        p = classify_profile(b, signals, calendar, params, hier)
        assert p.kind is ProfileKind.INTER_CITY_COMMUTER
        assert p.work_city == "C2"

    def test_excluded_raises(self, hier, calendar, params):
        with pytest.raises(MissingBaseline):
            classify_profile(ExcludedBaseline("u1", 0, 0), [], calendar, params, hier)

    def test_every_cohort_user_gets_exactly_one_kind(self, hier, calendar, params):
        rng = random.Random(4)
        units = ["C1-B1", "C1-B2", "C1-B3", "C2-B1", "C3-B2"]
        for i in range(50):
            n_days = rng.randrange(2, 20)
            days = sorted(
                rng.sample([calendar.baseline_start + dt.timedelta(days=j) for j in range(42)], n_days)
            )
            signals = [sig(f"u{i}", d, rng.choice(units)) for d in days]
            b = establish_baseline(f"u{i}", signals, calendar, params, hier)
            if isinstance(b, ExcludedBaseline):
                continue
            p = classify_profile(b, signals, calendar, params, hier)
            assert p.kind in ProfileKind


class TestAttrition:
    def test_no_attrition(self):
        baselines = {f"u{i}": ResidentialBaseline(f"u{i}", "C1-B1", "C1", BaselineSource.WEEKEND, 3, 0) for i in range(4)}
        report = attrition_report(baselines.keys(), baselines, baselines.keys())
        assert report.rows() == [
            ("observed in city during baseline", "100.0%"),
            ("valid residential baseline", "100.0%"),
            ("observed at least once post-disaster", "100.0%"),
        ]

    def test_staged_percentages_non_increasing(self):
        baselines = {}
        for i in range(10):
            if i < 8:
                baselines[f"u{i}"] = ResidentialBaseline(f"u{i}", "C1-B1", "C1", BaselineSource.WEEKEND, 3, 0)
            else:
                baselines[f"u{i}"] = ExcludedBaseline(f"u{i}", 1, 2)
        observed_post = {f"u{i}" for i in range(6)} | {"u9"}  # u9 observed but excluded
        report = attrition_report(baselines.keys(), baselines, observed_post)
        assert report.valid_baseline_pct == 80.0
        assert report.observed_post_pct == 60.0
        assert report.valid_baseline_pct >= report.observed_post_pct

    def test_empty_denominator_renders_na(self):
        report = attrition_report([], {}, [])
        assert all(pct == "n/a" for _, pct in report.rows())

    def test_observed_but_invalid_does_not_count(self):
        baselines = {"u1": ExcludedBaseline("u1", 0, 0)}
        report = attrition_report(["u1"], baselines, ["u1"])
        assert report.observed_post_count == 0


def test_baselines_csv_round_trip(tmp_path):
    baselines = {
        "u1": ResidentialBaseline("u1", "C1-B1", "C1", BaselineSource.WEEKEND, 4, 10),
        "u2": ExcludedBaseline("u2", 1, 3),
    }
    path = tmp_path / "baselines.csv"
    write_baselines_csv(baselines, path)
    assert read_baselines_csv(path) == baselines
