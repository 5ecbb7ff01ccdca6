import datetime as dt
import json

import pytest

from displacekit.detect import Method
from displacekit.model import AnalysisCalendar
from displacekit.pipeline import OUT_DIR_ENV, RunConfig, run_pipeline
from displacekit.profile import ProfileKind
from displacekit.synth import CitySpec, ScenarioSpec, generate

CAL = AnalysisCalendar(
    dt.date(2025, 8, 10), dt.date(2025, 9, 21), dt.date(2025, 9, 22), dt.date(2025, 10, 6)
)


def null_scenario(tmp_path, n_users=80):
    spec = ScenarioSpec(
        cities=(CitySpec("C1", "One", 10000, 3),),
        archetype_mix={"local_resident": 1.0},
        n_users=n_users,
        calendar=CAL,
        seed=2,
    )
    return generate(spec, tmp_path / "null", include_internal=False)


def test_null_scenario_report_is_all_zero(tmp_path):
    gen = null_scenario(tmp_path)
    result = run_pipeline(RunConfig.from_file(gen.run_config))
    assert all(m.rate == 0.0 and m.missing_rate == 0.0 for m in result.metrics)
    assert all(m.scen_hi == 0.0 for m in result.metrics)
    summary = (result.out_dir / "summary.txt").read_text()
    assert "observed in city during baseline: 100.0%" in summary
    assert "valid residential baseline: 100.0%" in summary
    assert "observed at least once post-disaster: 100.0%" in summary


def test_summary_carries_quality_trio_and_comparison_table(aparri_run):
    summary = (aparri_run.out_dir / "summary.txt").read_text()
    assert "Naive   Context-Aware  Diff (N-CA)  Missing  Upper" in summary
    assert "Daily coverage (% of baseline users observed):" in summary
    assert "Attrition (% of users observed in city during baseline):" in summary
    # every displacement table row carries that day's missing rate
    table_lines = [l for l in summary.splitlines() if l.startswith("2025-") and "%" in l and "pp" in l]
    assert len(table_lines) == 15


def test_external_mode_caveat_in_warnings(aparri_run):
    assert any("vendor" in w and "weekly" in w for w in aparri_run.warnings)


def test_plots_json_structure(aparri_run):
    data = json.loads((aparri_run.out_dir / "plots.json").read_text())
    city = data["APR"]
    assert {"timeseries", "scenario_band", "return_curve"} <= set(city)
    assert len(city["timeseries"]) == 15
    first = city["timeseries"][0]
    assert {"date", "naive_rate_pct", "context_aware_rate_pct", "missing_pct", "holiday"} <= set(first)
    band = city["scenario_band"][0]
    assert band["lower_pct"] <= band["mid_pct"] <= band["upper_pct"]
    curve = city["return_curve"]
    rates = [p["cumulative_return_pct"] for p in curve]
    assert rates == sorted(rates)  # retrospective series is monotone


def test_out_dir_env_override(tmp_path, monkeypatch):
    gen = null_scenario(tmp_path)
    target = tmp_path / "env_out"
    monkeypatch.setenv(OUT_DIR_ENV, str(target))
    result = run_pipeline(RunConfig.from_file(gen.run_config))
    assert result.out_dir == target
    assert (target / "metrics.csv").exists()


def test_gap_arises_only_from_inter_city_commuters_on_weekdays(aparri_run):
    """Masking the inter-city commuter subgroup makes both methods agree everywhere."""
    profiles = aparri_run.estimator.profiles_
    by_key = {}
    for st in aparri_run.statuses:
        by_key.setdefault((st.user_id, st.date), {})[st.method] = st.verdict
    disagreements = 0
    for (user, day), verdicts in by_key.items():
        if verdicts[Method.CONTEXT_AWARE] == verdicts[Method.NAIVE]:
            continue
        disagreements += 1
        assert profiles[user].kind is ProfileKind.INTER_CITY_COMMUTER
        assert day.weekday() < 5
    assert disagreements > 0  # the scenario plants commuters, so the gap exists


def test_destination_distribution_recovered(aparri_run, aparri_scenario):
    """Planted destination shares are recovered within sampling error."""
    import csv

    planted = aparri_scenario.spec.destination_distribution
    first_day = CAL.disaster_onset.isoformat()
    with (aparri_run.out_dir / "flows.csv").open(newline="") as fh:
        rows = [
            r for r in csv.DictReader(fh)
            if r["date"] == first_day and r["origin"] == "APR" and r["destination"] in planted
        ]
    assert rows
    for r in rows:
        share = float(r["share_pct"]) / 100.0
        assert share == pytest.approx(planted[r["destination"]], abs=0.05)


def test_run_result_counts_reconcile(aparri_run):
    from collections import Counter

    homes = aparri_run.estimator.home_cities()
    n_focal = sum(1 for c in homes.values() if c == "APR")
    tallies = Counter()
    for st in aparri_run.statuses:
        if homes[st.user_id] == "APR" and st.method is Method.CONTEXT_AWARE:
            tallies[st.date] += 1
    assert set(tallies.values()) == {n_focal}
    for m in aparri_run.metrics:
        if m.method is Method.CONTEXT_AWARE:
            assert m.n_baseline == n_focal
