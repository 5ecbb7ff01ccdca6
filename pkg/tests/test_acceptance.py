"""Acceptance gate: the release criteria, one test per criterion.

Each test prints a [PASS] line on success (visible with pytest -s); a failed
assertion is the corresponding [FAIL]. Closed-form arithmetic is checked
exactly; everything data-driven runs against seeded synthetic scenarios with
planted ground truth.
"""

import csv
import datetime as dt
import json
import random
from pathlib import Path

import numpy as np
import pytest

from displacekit.detect import Method, Verdict
from displacekit.metrics import CvModel, cv_bounds, return_series
from displacekit.model import AnalysisCalendar, Params
from displacekit.pipeline import (
    RunConfig,
    compare_intervals_run,
    cv_multiplier_table,
    run_pipeline,
    sensitivity_sweep,
)
from displacekit.profile import (
    BaselineSource,
    ExcludedBaseline,
    ResidentialBaseline,
    establish_baseline,
)
from displacekit.signals import DailySignal, Quality
from displacekit.synth import CitySpec, ScenarioSpec, generate

from conftest import BASELINE_START, BASELINE_END, ONSET, OBS_END


def ok(name):
    print(f"[PASS] {name}")


def read_rows(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_footnote_cv_bound_arithmetic():
    """baseline CV 0.035 x multiplier 2.0 on a 6.7% rate -> 5.8%-7.6%."""
    params = Params()
    model = CvModel("APR", 0.035, 0.035 * params.cv_multiplier, 90)
    lo, hi = cv_bounds(6.7, model, params)
    assert abs(round(lo, 1) - 5.8) <= 0.05
    assert abs(round(hi, 1) - 7.6) <= 0.05
    ok("footnote arithmetic: cv 0.035 x 2.0 on 6.7% -> 5.8%-7.6%")


def test_cv_multiplier_width_table():
    """Multipliers 1.5 / 2.0 / 2.5 on cv 0.035 -> widths +/-10% / 14% / 17%."""
    rows = cv_multiplier_table(0.035, [1.5, 2.0, 2.5], Params())
    targets = {1.5: 10, 2.0: 14, 2.5: 17}
    for row in rows:
        assert abs(round(row.relative_width_pct) - targets[row.multiplier]) <= 1
    assert [r.is_default for r in rows] == [False, True, False]
    ok("multiplier table: widths round to +/-10%, +/-14%, +/-17%")


def test_city_day_row_arithmetic(aparri_run):
    """Every emitted city-day: Upper == CA rate + missing rate exactly; Naive >= CA."""
    rows = read_rows(aparri_run.out_dir / "metrics.csv")
    by_key = {}
    for r in rows:
        by_key.setdefault((r["city"], r["date"]), {})[r["method"]] = r
    assert len(by_key) == 15  # observation days for the focal city
    cohort = {m.n_baseline for m in aparri_run.metrics}
    assert all(9_000 <= n <= 11_000 for n in cohort)
    for (city, day), methods in by_key.items():
        ca = methods["context_aware"]
        naive = methods["naive"]
        rate = float(ca["rate_pct"])
        missing = float(ca["missing_pct"])
        assert float(ca["scen_hi"]) == rate + missing  # exact float identity
        assert float(naive["rate_pct"]) - rate >= 0.0
    ok("city-day arithmetic: upper = rate + missing exactly, naive - CA >= 0 (10k cohort, 15 days)")


def test_weekend_convergence(aparri_run):
    """Naive and context-aware verdicts coincide exactly on weekend days."""
    weekend = {}
    for st in aparri_run.statuses:
        if st.date.weekday() < 5:
            continue
        weekend.setdefault((st.user_id, st.date), {})[st.method] = st.verdict
    assert weekend
    for verdicts in weekend.values():
        assert verdicts[Method.CONTEXT_AWARE] == verdicts[Method.NAIVE]
    ok("weekend convergence: verdict matrices identical on all weekend days")


@pytest.fixture(scope="module")
def commuter_gap(tmp_path_factory):
    calendar = AnalysisCalendar(BASELINE_START, BASELINE_END, ONSET, OBS_END)
    spec = ScenarioSpec(
        cities=(CitySpec("FOC", "Focal", 60000, 6), CitySpec("WRK", "Workplace", 25000, 8)),
        archetype_mix={
            "local_resident": 0.771,
            "intra_city_commuter": 0.104,
            "inter_city_daily": 0.121,
            "weekend_only": 0.004,
        },
        n_users=6000,
        calendar=calendar,
        missing_daily_prob=0.10,
        seed=91,
    )
    gen = generate(spec, tmp_path_factory.mktemp("gap"), include_internal=False)
    config = RunConfig.from_file(gen.run_config)
    return gen, run_pipeline(config)


def test_commuter_gap_oracle(commuter_gap):
    """12.1% planted commuters, zero displacement: naive weekday rate equals the
    planted at-work fraction within 0.2 pp; context-aware rate is exactly 0."""
    gen, result = commuter_gap
    truth = gen.truth
    cohort = set(result.estimator.baselines_)
    focal_cohort = {u for u in cohort if result.estimator.baselines_[u].home_city == "FOC"}
    by_method = {}
    for m in result.metrics:
        by_method.setdefault(m.method, {})[m.date] = m
    weekdays = [d for d in by_method[Method.NAIVE] if d.weekday() < 5]
    assert weekdays
    for day in weekdays:
        naive = by_method[Method.NAIVE][day]
        ca = by_method[Method.CONTEXT_AWARE][day]
        assert ca.rate == 0.0
        at_work = sum(
            1
            for u in focal_cohort
            if truth.users[u].archetype == "inter_city_daily"
            and truth.labels[(u, day)][0] == "at_work"
        )
        oracle = 100.0 * at_work / naive.n_baseline
        assert abs(naive.rate - oracle) <= 0.2
    ok("commuter gap: naive weekday rate == planted at-work fraction (+/-0.2 pp), CA rate == 0")


def test_baseline_branch_coverage(hier, calendar, params):
    """The three home-assignment branches produce the specified outcomes exactly."""
    SAT1, SUN1, SAT2 = dt.date(2025, 8, 16), dt.date(2025, 8, 17), dt.date(2025, 8, 23)
    weekdays = [dt.date(2025, 8, 11) + dt.timedelta(days=i) for i in range(4)] + [
        dt.date(2025, 8, 18), dt.date(2025, 8, 19)
    ]

    def sig(day, unit):
        return DailySignal("u1", day, unit, unit, Quality.NOT_AVAILABLE)

    weekend_mode = establish_baseline(
        "u1",
        [sig(SAT1, "C1-B1"), sig(SUN1, "C1-B1"), sig(SAT2, "C1-B2"), sig(weekdays[0], "C2-B1")],
        calendar, params, hier,
    )
    assert isinstance(weekend_mode, ResidentialBaseline)
    assert weekend_mode.home == "C1-B1" and weekend_mode.source is BaselineSource.WEEKEND

    fallback = establish_baseline(
        "u1",
        [sig(SAT1, "C1-B1")] + [sig(d, "C2-B1") for d in weekdays],
        calendar, params, hier,
    )
    assert isinstance(fallback, ResidentialBaseline)
    assert fallback.home == "C2-B1" and fallback.source is BaselineSource.WEEKDAY_FALLBACK

    excluded = establish_baseline(
        "u1",
        [sig(SAT1, "C1-B1")] + [sig(d, "C2-B1") for d in weekdays[:4]],
        calendar, params, hier,
    )
    assert isinstance(excluded, ExcludedBaseline)
    assert (excluded.weekend_days_observed, excluded.weekday_days_observed) == (1, 4)
    ok("home-assignment branches: weekend mode, weekday fallback, excluded")


def _enumerate_returns(verdicts):
    """Independent hand enumeration of the return formulas over one history."""
    d_series = [1 if v == "D" else 0 for v in verdicts]
    r_series = [0] * len(verdicts)
    for t in range(1, len(verdicts)):
        if verdicts[t - 1] == "D" and verdicts[t] == "A":
            r_series[t] = 1
    cum, peak, cum_series = 0, 0, []
    for d, r in zip(d_series, r_series):
        cum += r
        cum_series.append(cum)
        peak = max(peak, d + cum)
    rates = [100.0 * c / peak if peak else 0.0 for c in cum_series]
    return r_series, peak, rates


def test_return_dynamics_oracle(aparri_run):
    """4-day re-displacement history matches the formula oracle; retrospective
    series monotone and bounded on synthetic data.

    Hand enumeration of the stated formulas over Displaced/AtExpected/
    Displaced/AtExpected gives two return events and a peak person-event count
    of 2 (each episode closes before the next opens, so no prefix ever holds
    three concurrent episode-events); the oracle output is asserted.
    """
    from displacekit.detect import DayStatus, Rule

    start = dt.date(2025, 9, 22)
    history = "DADA"
    statuses = []
    for i, v in enumerate(history):
        verdict = {"D": Verdict.DISPLACED, "A": Verdict.AT_EXPECTED}[v]
        city = "C2" if v == "D" else "C1"
        statuses.append(
            DayStatus("u1", start + dt.timedelta(days=i), Method.CONTEXT_AWARE, verdict, city, Rule.LOCAL_ANY)
        )
    r_series, peak, rates = _enumerate_returns(history)
    series = return_series(statuses, {"u1": "C1"}, "C1")
    assert sum(series.returns) == sum(r_series) == 2
    assert series.max_displaced == peak
    assert list(series.returns) == r_series
    assert list(series.cumulative_rate) == rates

    home_cities = aparri_run.estimator.home_cities()
    synthetic = return_series(aparri_run.statuses, home_cities, "APR")
    series_vals = synthetic.cumulative_rate
    assert all(a <= b for a, b in zip(series_vals, series_vals[1:]))
    assert all(0.0 <= x <= 100.0 for x in series_vals)
    ok("return dynamics: 4-day oracle (2 return events) and monotone bounded retrospective series")


def _separate_cv_series(path: Path, city: str, cv_target: float, seed: int = 5150) -> None:
    """A longer stand-alone daily-count series with the requested CV, mirroring
    the practice of estimating CV from a separate pre-baseline window."""
    rng = np.random.default_rng(seed)
    days = [dt.date(2025, 5, 1) + dt.timedelta(days=i) for i in range(92)]
    mean_count = 8500.0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "admin_code", "count"])
        for day in days:
            count = max(1, round(mean_count * (1.0 + cv_target * rng.standard_normal())))
            writer.writerow([day.isoformat(), city, count])


def test_interval_method_ordering(aparri_scenario, tmp_path):
    """Average widths: binomial < {CV, bootstrap} < overdispersion.

    The CV model comes from a separate 92-day count series with CV ~ 0.035;
    the dispersion factor comes from the scenario's own baseline-day rates.
    """
    cv_counts = tmp_path / "cv_counts.csv"
    _separate_cv_series(cv_counts, "APR", 0.035)
    config = RunConfig.from_file(
        aparri_scenario.run_config, overrides={"cv_counts_csv": str(cv_counts)}
    )
    tables = compare_intervals_run(config)
    t = tables["APR"]
    rates = [row.rate for row in t.rows]
    assert 5.0 < sum(rates) / len(rates) < 10.0  # the ~7% regime
    cp = t.average("clopper_pearson")
    wi = t.average("wilson")
    cv = t.average("cv_based")
    boot = t.average("bootstrap")
    over = t.average("overdispersion")
    assert max(cp, wi) < cv
    assert max(cp, wi) < boot
    assert cv < over
    assert boot < over
    ok(
        "interval ordering: binomial (%.2f/%.2f) < CV %.2f ~ bootstrap %.2f < overdispersion %.2f pp"
        % (cp, wi, cv, boot, over)
    )


COUNT_COLUMNS = {
    "metrics.csv": ("N", "D", "M"),
    "flows.csv": ("count",),
    "returns.csv": ("R",),
    "scaled.csv": ("displaced_subscribers",),
}


def test_suppression_soundness_fuzz(tmp_path):
    """100 random scenarios: no emitted count column ever shows 0 < value < k."""
    rng = np.random.default_rng(424242)
    calendar = AnalysisCalendar(
        dt.date(2025, 8, 18), dt.date(2025, 9, 21), dt.date(2025, 9, 22), dt.date(2025, 9, 26)
    )
    for trial in range(100):
        k = int(rng.integers(2, 14))
        spec = ScenarioSpec(
            cities=(
                CitySpec("A", "A", 5000 + int(rng.integers(5000)), 3),
                CitySpec("B", "B", 2000 + int(rng.integers(3000)), 3),
                CitySpec("C", "C", 1000 + int(rng.integers(2000)), 3),
            ),
            archetype_mix={
                "local_resident": 0.7,
                "intra_city_commuter": 0.1,
                "inter_city_daily": 0.15,
                "weekend_only": 0.05,
            },
            n_users=int(rng.integers(60, 150)),
            calendar=calendar,
            displacement_fraction={"A": float(rng.uniform(0, 0.3))},
            destination_distribution={"B": 0.6, "C": 0.4},
            missing_daily_prob=float(rng.uniform(0, 0.3)),
            return_hazard=float(rng.uniform(0, 0.5)),
            observation_noise=float(rng.uniform(0, 0.1)),
            seed=int(rng.integers(1, 2**31)),
        )
        gen = generate(spec, tmp_path / f"fuzz{trial}", include_internal=False)
        config = RunConfig.from_file(gen.run_config, overrides={"suppression_k": k})
        result = run_pipeline(config)
        for name, columns in COUNT_COLUMNS.items():
            path = result.out_dir / name
            if not path.exists():
                continue
            for row in read_rows(path):
                for col in columns:
                    value = row[col].strip()
                    if value:
                        assert not (0 < int(value) < k), (trial, name, col, value, k)
    ok("suppression soundness: 100 fuzzed scenarios emit no positive count below k")


DETERMINISM_SKIP = {"metadata.json"}


def _bundle_bytes(out_dir: Path):
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name not in DETERMINISM_SKIP
    }


def test_pipeline_determinism(tmp_path):
    """Same seed -> byte-identical bundles; shuffled input rows -> byte-identical."""
    calendar = AnalysisCalendar(BASELINE_START, BASELINE_END, ONSET, OBS_END)
    spec = ScenarioSpec(
        cities=(CitySpec("A", "A", 40000, 5), CitySpec("B", "B", 15000, 5)),
        archetype_mix={"local_resident": 0.8, "inter_city_daily": 0.2},
        n_users=1000,
        calendar=calendar,
        displacement_fraction={"A": 0.1},
        destination_distribution={"B": 1.0},
        missing_daily_prob=0.1,
        return_hazard=0.05,
        observation_noise=0.02,
        missing_day_sd=0.02,
        seed=77,
    )
    gen = generate(spec, tmp_path / "scen", include_internal=False)
    base_cfg = json.loads(gen.run_config.read_text())

    def run_into(out_name, daily=None):
        cfg = dict(base_cfg)
        cfg["out_dir"] = str(tmp_path / out_name)
        if daily:
            cfg["daily_csv"] = str(daily)
        path = tmp_path / f"{out_name}.json"
        path.write_text(json.dumps(cfg))
        return run_pipeline(RunConfig.from_file(path)).out_dir

    first = _bundle_bytes(run_into("out1"))
    second = _bundle_bytes(run_into("out2"))
    assert first.keys() == second.keys()
    assert first == second

    lines = gen.daily_csv.read_text(encoding="utf-8").splitlines()
    header, rows = lines[0], lines[1:]
    random.Random(123).shuffle(rows)
    shuffled = tmp_path / "daily_shuffled.csv"
    shuffled.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    third = _bundle_bytes(run_into("out3", daily=shuffled))
    assert first == third
    ok("determinism: rerun and row-shuffle both reproduce the bundle byte-for-byte")


def test_threshold_sweep_stability(tmp_path):
    """Nine threshold configurations keep the mean weekday gap in a 0.5 pp band."""
    calendar = AnalysisCalendar(BASELINE_START, BASELINE_END, ONSET, OBS_END)
    spec = ScenarioSpec(
        cities=(
            CitySpec("FOC", "Focal", 50000, 6),
            CitySpec("WRK", "Workplace", 20000, 8),
            CitySpec("DST", "Destination", 1500, 4),
        ),
        archetype_mix={
            "local_resident": 0.771,
            "intra_city_commuter": 0.104,
            "inter_city_daily": 0.121,
            "weekend_only": 0.004,
        },
        n_users=4200,
        calendar=calendar,
        displacement_fraction={"FOC": 0.08},
        destination_distribution={"DST": 1.0},
        missing_daily_prob=0.05,
        return_hazard=0.03,
        observation_noise=0.01,
        seed=55,
    )
    gen = generate(spec, tmp_path / "scen", include_internal=False)
    config = RunConfig.from_file(gen.run_config)
    rows = sensitivity_sweep(config, (1, 2, 3), (3, 5, 7))
    assert len(rows) == 9
    assert sum(r.is_default for r in rows) == 1
    default = next(r for r in rows if r.is_default)
    assert default.weekend_min == 2 and default.weekday_min == 5
    assert default.qualifying_delta_pct == 0.0
    gaps = [r.mean_gap for r in rows]
    band = max(gaps) - min(gaps)
    assert band < 0.5, f"gap band {band:.3f} pp"
    ok(f"threshold sweep: 9 configurations, mean weekday gap band {band:.3f} pp < 0.5 pp")
