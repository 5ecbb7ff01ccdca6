"""End-to-end orchestration: config, staged execution, sweeps.

Every stage persists its output under the run's out_dir so stages can be
re-run independently; the full report bundle is byte-stable across reruns
except metadata.json (the only timestamped artifact).
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import report as rpt
from .detect import OUT_OF_COVERAGE, Method, detect_period, write_statuses_csv
from .errors import ConfigError
from .estimator import DisplacementEstimator
from .metrics import (
    CvModel,
    IntervalTable,
    baseline_daily_averages,
    build_cv_model,
    city_daily_counts,
    comparison_intervals,
    day_counts_for_city,
    daily_rates,
    od_flows,
    population_scale,
    read_cv_counts_csv,
    read_population_csv,
    return_series,
    ReturnVariant,
    scale_population,
)
from .model import AdminHierarchy, AnalysisCalendar, Params, load_holidays
from .profile import attrition_report, write_baselines_csv, write_profiles_csv
from .signals import (
    IngestReport,
    derive_internal,
    group_by_user,
    ingest_daily_csv,
    read_events_csv,
    write_signals_csv,
)

__version__ = "0.1.0"

OUT_DIR_ENV = "DISPLACEKIT_OUT_DIR"

FILE_SIGNALS = "signals.csv"
FILE_INGEST_REPORT = "ingest_report.json"
FILE_BASELINES = "baselines.csv"
FILE_PROFILES = "profiles.csv"
FILE_STATUSES = "statuses.csv"
FILE_METRICS = "metrics.csv"
FILE_FLOWS = "flows.csv"
FILE_RETURNS = "returns.csv"
FILE_SCALED = "scaled.csv"
FILE_INTERVALS = "intervals.csv"
FILE_PLOTS = "plots.json"
FILE_SUMMARY = "summary.txt"
FILE_METADATA = "metadata.json"

_CONFIG_KEYS = {
    "mode", "daily_csv", "events_csv", "hierarchy_csv", "holidays_file",
    "population_csv", "cv_counts_csv", "baseline_start", "baseline_end",
    "disaster_onset", "observation_end", "cv_window_start", "cv_window_end",
    "focal_cities", "out_dir", "nighttime_start", "nighttime_end",
    "weekend_min_days", "weekday_min_days", "cv_multiplier", "z_factor",
    "suppression_k", "rng_seed", "scenario_mid_fraction", "bootstrap_replicates",
    "threads",
}

_REQUIRED_KEYS = ("hierarchy_csv", "baseline_start", "baseline_end", "disaster_onset", "observation_end")


@dataclass
class RunConfig:
    """Flat run configuration; file paths resolve relative to the config file."""

    mode: str = "external"
    daily_csv: str | None = None
    events_csv: str | None = None
    hierarchy_csv: str | None = None
    holidays_file: str | None = None
    population_csv: str | None = None
    cv_counts_csv: str | None = None
    baseline_start: str | None = None
    baseline_end: str | None = None
    disaster_onset: str | None = None
    observation_end: str | None = None
    cv_window_start: str | None = None
    cv_window_end: str | None = None
    focal_cities: list[str] = field(default_factory=list)
    out_dir: str = "out"
    nighttime_start: str = "21:00"
    nighttime_end: str = "04:59"
    weekend_min_days: int = 2
    weekday_min_days: int = 5
    cv_multiplier: float = 2.0
    z_factor: float = 1.96
    suppression_k: int = 10
    rng_seed: int = 0
    scenario_mid_fraction: float = 0.5
    bootstrap_replicates: int = 1000
    threads: int = 1
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def from_file(cls, path: str | Path, overrides: Mapping | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config: file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent, overrides=overrides)

    @classmethod
    def from_dict(
        cls, data: Mapping, base_dir: Path | None = None, overrides: Mapping | None = None
    ) -> "RunConfig":
        merged = {k: v for k, v in data.items() if v is not None}
        if overrides:
            merged.update(overrides)
        unknown = set(merged) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"config: unknown keys: {', '.join(sorted(unknown))}")
        cfg = cls(base_dir=base_dir or Path())
        for key, value in merged.items():
            setattr(cfg, key, value)
        cfg._validate()
        return cfg

    def _validate(self) -> None:
        if self.mode not in ("external", "internal"):
            raise ConfigError(f"mode: must be external or internal, got {self.mode!r}")
        for key in _REQUIRED_KEYS:
            if getattr(self, key) in (None, ""):
                raise ConfigError(f"{key}: required")
        if self.mode == "external" and not self.daily_csv:
            raise ConfigError("daily_csv: required in external mode")
        if self.mode == "internal" and not self.events_csv:
            raise ConfigError("events_csv: required in internal mode")
        for key in ("baseline_start", "baseline_end", "disaster_onset", "observation_end",
                    "cv_window_start", "cv_window_end"):
            value = getattr(self, key)
            if value is not None:
                try:
                    dt.date.fromisoformat(value)
                except ValueError:
                    raise ConfigError(f"{key}: bad date {value!r}") from None
        if (self.cv_window_start is None) != (self.cv_window_end is None):
            raise ConfigError("cv_window_start/cv_window_end: set both or neither")
        for key in ("daily_csv", "events_csv", "hierarchy_csv", "holidays_file",
                    "population_csv", "cv_counts_csv"):
            value = getattr(self, key)
            if value is not None and not self.resolve(value).exists():
                raise ConfigError(f"{key}: file not found: {value}")
        if not isinstance(self.focal_cities, list):
            raise ConfigError("focal_cities: must be a list of city codes")
        if not 0.0 <= float(self.scenario_mid_fraction) <= 1.0:
            raise ConfigError("scenario_mid_fraction: must be in [0, 1]")
        if int(self.bootstrap_replicates) < 1:
            raise ConfigError("bootstrap_replicates: must be >= 1")
        if int(self.threads) < 1:
            raise ConfigError("threads: must be >= 1")

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def resolved_out_dir(self) -> Path:
        env = os.environ.get(OUT_DIR_ENV)
        return Path(env) if env else self.resolve(self.out_dir)

    def params(self) -> Params:
        try:
            night_start = dt.time.fromisoformat(self.nighttime_start)
            night_end = dt.time.fromisoformat(self.nighttime_end)
        except ValueError as exc:
            raise ConfigError(f"nighttime window: {exc}") from None
        return Params(
            nighttime_start=night_start,
            nighttime_end=night_end,
            weekend_min_days=int(self.weekend_min_days),
            weekday_min_days=int(self.weekday_min_days),
            cv_multiplier=float(self.cv_multiplier),
            z_factor=float(self.z_factor),
            suppression_k=int(self.suppression_k),
            rng_seed=int(self.rng_seed),
        )

    def echo(self) -> dict:
        data = {k: getattr(self, k) for k in sorted(_CONFIG_KEYS)}
        return data


@dataclass
class LoadedInputs:
    hierarchy: AdminHierarchy
    calendar: AnalysisCalendar
    params: Params
    population: dict[str, float] | None
    cv_counts: dict[str, dict[dt.date, int]] | None


def load_inputs(config: RunConfig) -> LoadedInputs:
    hierarchy = AdminHierarchy.from_csv(config.resolve(config.hierarchy_csv))
    holidays = (
        load_holidays(config.resolve(config.holidays_file)) if config.holidays_file else frozenset()
    )
    cv_window = None
    if config.cv_window_start is not None:
        cv_window = (
            dt.date.fromisoformat(config.cv_window_start),
            dt.date.fromisoformat(config.cv_window_end),
        )
    calendar = AnalysisCalendar(
        baseline_start=dt.date.fromisoformat(config.baseline_start),
        baseline_end=dt.date.fromisoformat(config.baseline_end),
        disaster_onset=dt.date.fromisoformat(config.disaster_onset),
        observation_end=dt.date.fromisoformat(config.observation_end),
        holidays=holidays,
        cv_window=cv_window,
    )
    for city in config.focal_cities:
        if city not in hierarchy:
            raise ConfigError(f"focal_cities: {city!r} not in hierarchy")
    population = (
        read_population_csv(config.resolve(config.population_csv)) if config.population_csv else None
    )
    cv_counts = (
        read_cv_counts_csv(config.resolve(config.cv_counts_csv)) if config.cv_counts_csv else None
    )
    return LoadedInputs(hierarchy, calendar, config.params(), population, cv_counts)


def stage_ingest(config: RunConfig, inputs: LoadedInputs, out_dir: Path):
    """Mode-appropriate ingestion; persists signals.csv and the ingest report."""
    if config.mode == "external":
        signals, ingest_rep = ingest_daily_csv(
            config.resolve(config.daily_csv), inputs.hierarchy, inputs.calendar
        )
    else:
        events, ingest_rep = read_events_csv(config.resolve(config.events_csv), inputs.hierarchy)
        signals = derive_internal(events, inputs.params, inputs.calendar, ingest_rep)
    write_signals_csv(signals, out_dir / FILE_SIGNALS)
    (out_dir / FILE_INGEST_REPORT).write_text(ingest_rep.to_json(), encoding="utf-8")
    return signals, ingest_rep


def _cv_series_days(calendar: AnalysisCalendar) -> tuple[list[dt.date], bool]:
    """Days whose counts feed the CV estimate; True when falling back to baseline."""
    if calendar.cv_window is not None:
        start, end = calendar.cv_window
        days = []
        day = start
        while day <= end:
            if not calendar.is_holiday(day):
                days.append(day)
            day += dt.timedelta(days=1)
        return days, False
    return list(calendar.baseline_days(include_holidays=False)), True


def build_cv_models(
    config: RunConfig,
    inputs: LoadedInputs,
    signals,
    cities: Sequence[str],
) -> tuple[dict[str, CvModel], list[str]]:
    warnings: list[str] = []
    days, fell_back = _cv_series_days(inputs.calendar)
    if inputs.cv_counts is not None:
        counts_by_city = inputs.cv_counts
        if inputs.calendar.cv_window is None:
            # A supplied series defines its own window.
            days = None
    else:
        if fell_back:
            warnings.append(
                "no cv_counts_csv and no cv window configured; CV estimated from the main baseline window"
            )
        counts_by_city = city_daily_counts(signals, inputs.hierarchy, days=days)
    models: dict[str, CvModel] = {}
    for city in cities:
        series_map = counts_by_city.get(city, {})
        if days is None:
            series = [
                series_map[d] for d in sorted(series_map) if not inputs.calendar.is_holiday(d)
            ]
        else:
            series = [series_map.get(d, 0) for d in days]
        model = build_cv_model(series, city, inputs.params)
        warnings.extend(model.warnings)
        models[city] = model
    return models, warnings


@dataclass
class RunResult:
    out_dir: Path
    ingest_report: IngestReport
    estimator: DisplacementEstimator
    statuses: list
    metrics: list
    focal_cities: list[str]
    cv_models: dict[str, CvModel]
    warnings: list[str]


def run_pipeline(config: RunConfig) -> RunResult:
    """ingest -> signals -> baseline/profile -> detect -> metrics -> reports."""
    inputs = load_inputs(config)
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    k = inputs.params.suppression_k

    signals, ingest_rep = stage_ingest(config, inputs, out_dir)

    est = DisplacementEstimator(inputs.hierarchy, inputs.calendar, inputs.params).fit(signals)
    all_baselines = {**est.baselines_, **est.excluded_}
    write_baselines_csv(all_baselines, out_dir / FILE_BASELINES)
    write_profiles_csv(est.baselines_, est.profiles_, out_dir / FILE_PROFILES)

    statuses = est.predict_statuses(signals)
    write_statuses_csv(statuses, out_dir / FILE_STATUSES)

    home_cities = est.home_cities()
    focal = list(config.focal_cities) or sorted(set(home_cities.values()))
    for city in focal:
        if city not in inputs.hierarchy:
            raise ConfigError(f"focal_cities: {city!r} not in hierarchy")

    cv_models, warnings = build_cv_models(config, inputs, signals, focal)
    warnings = list(est.warnings_) + warnings
    if config.mode == "external":
        warnings.append(
            "external mode: the vendor's daily-location weighting is opaque, so "
            "weekday-weekend variation may reflect weekly rather than daily commuting"
        )

    metrics, rate_warnings = daily_rates(
        statuses,
        home_cities,
        inputs.calendar,
        cv_models,
        inputs.params,
        mid_fraction=float(config.scenario_mid_fraction),
        cities=focal,
    )
    warnings.extend(rate_warnings)
    rpt.write_metrics_csv(metrics, out_dir / FILE_METRICS, k)

    by_date: dict[dt.date, list] = {}
    for st in statuses:
        by_date.setdefault(st.date, []).append(st)
    flows = [
        od_flows(by_date[d], home_cities, d, inputs.params) for d in sorted(by_date)
    ]
    rpt.write_flows_csv(flows, out_dir / FILE_FLOWS, k, origins=focal)

    returns = []
    for city in focal:
        for variant in (ReturnVariant.RETROSPECTIVE, ReturnVariant.RUNNING_MAX):
            returns.append(return_series(statuses, home_cities, city, variant))
    rpt.write_returns_csv(returns, out_dir / FILE_RETURNS, k)

    if inputs.population is not None:
        scaled_rows = []
        counts_by_city = city_daily_counts(signals, inputs.hierarchy)
        for city in focal:
            if city not in inputs.population:
                warnings.append(f"{city}: no population entry; scaling skipped")
                continue
            weekday_avg, weekend_avg = baseline_daily_averages(
                counts_by_city.get(city, {}), inputs.calendar
            )
            scale = population_scale(city, inputs.population[city], weekday_avg, weekend_avg)
            for m in metrics:
                if m.city != city:
                    continue
                est_persons, lo, hi = scale_population(
                    float(m.displaced), scale, cv_models.get(city), inputs.params
                )
                scaled_rows.append(
                    (city, m.date, m.method.value, m.displaced, scale.scaling_factor, est_persons, lo, hi)
                )
        rpt.write_scaled_csv(scaled_rows, out_dir / FILE_SCALED, k)
    else:
        warnings.append("no population_csv configured; population scaling skipped")

    starting_by_city: dict[str, set] = {c: set() for c in focal}
    observed_post: set = set()
    for sig in signals:
        if sig.observed is None:
            continue
        if inputs.calendar.in_baseline(sig.date):
            try:
                city = inputs.hierarchy.city_of(sig.observed)
            except Exception:
                city = OUT_OF_COVERAGE
            if city in starting_by_city:
                starting_by_city[city].add(sig.user_id)
        elif inputs.calendar.in_observation(sig.date):
            observed_post.add(sig.user_id)
    attrition = {
        city: attrition_report(starting_by_city[city], all_baselines, observed_post)
        for city in focal
    }

    rpt.write_plots_json(metrics, returns, out_dir / FILE_PLOTS, focal)
    out_of_coverage = sum(
        1 for st in statuses if st.method is Method.CONTEXT_AWARE and st.observed_city == OUT_OF_COVERAGE
    )
    calendar_lines = [
        f"mode: {config.mode}",
        f"baseline: {inputs.calendar.baseline_start} .. {inputs.calendar.baseline_end}",
        f"observation: {inputs.calendar.disaster_onset} .. {inputs.calendar.observation_end}",
        f"focal cities: {', '.join(focal)}",
        f"cohort: {len(home_cities)} users with valid baselines "
        f"({len(est.excluded_)} excluded), {ingest_rep.accepted} signals accepted",
    ]
    summary = rpt.render_summary(calendar_lines, warnings, attrition, metrics, focal, out_of_coverage)
    (out_dir / FILE_SUMMARY).write_text(summary, encoding="utf-8")
    rpt.write_metadata(out_dir / FILE_METADATA, config.echo(), __version__)

    return RunResult(
        out_dir=out_dir,
        ingest_report=ingest_rep,
        estimator=est,
        statuses=statuses,
        metrics=metrics,
        focal_cities=focal,
        cv_models=cv_models,
        warnings=warnings,
    )


def _clean_weekdays(
    calendar: AnalysisCalendar, exclude: Sequence[dt.date]
) -> list[dt.date]:
    """Observation weekdays, non-holiday, minus explicit exclusions."""
    skip = set(exclude)
    return [
        d
        for d in calendar.observation_days()
        if d.weekday() < 5 and not calendar.is_holiday(d) and d not in skip
    ]


@dataclass(frozen=True)
class SweepRow:
    weekend_min: int
    weekday_min: int
    qualifying_count: int
    qualifying_delta_pct: float
    mean_ca_rate: float
    mean_gap: float
    is_default: bool


def sensitivity_sweep(
    config: RunConfig,
    weekend_set: Sequence[int] = (1, 2, 3),
    weekday_set: Sequence[int] = (3, 5, 7),
    exclude_dates: Sequence[dt.date] = (),
) -> list[SweepRow]:
    """Re-run baseline -> metrics per threshold pair; stability table for the focal city.

    Mean rates/gaps are taken over the configured clean weekdays. The default
    (weekend_min_days, weekday_min_days) row is the reference for the
    qualifying-baseline delta and is run even when outside the grid.
    """
    inputs = load_inputs(config)
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    signals, _rep = stage_ingest(config, inputs, out_dir)
    default_pair = (inputs.params.weekend_min_days, inputs.params.weekday_min_days)
    grid = [(we, wd) for we in weekend_set for wd in weekday_set]
    pairs = list(grid)
    if default_pair not in pairs:
        pairs.append(default_pair)
    focal = (config.focal_cities or [None])[0]
    clean_days = _clean_weekdays(inputs.calendar, exclude_dates)

    results: dict[tuple[int, int], tuple[int, float, float]] = {}
    for we, wd in pairs:
        params = replace(inputs.params, weekend_min_days=we, weekday_min_days=wd)
        est = DisplacementEstimator(inputs.hierarchy, inputs.calendar, params).fit(signals)
        home_cities = est.home_cities()
        city = focal or (sorted(set(home_cities.values())) or [""])[0]
        statuses = est.predict_statuses(signals, window=clean_days)
        counts = day_counts_for_city(statuses, home_cities, city, Method.CONTEXT_AWARE)
        naive_counts = day_counts_for_city(statuses, home_cities, city, Method.NAIVE)
        ca_rates = [100.0 * d / n for _, d, _m, n in counts]
        naive_rates = [100.0 * d / n for _, d, _m, n in naive_counts]
        mean_ca = sum(ca_rates) / len(ca_rates)
        mean_gap = sum(nv - ca for nv, ca in zip(naive_rates, ca_rates)) / len(ca_rates)
        # qualifying = users ever observed in the focal city during baseline
        # that pass the thresholds
        starting = set()
        for sig in signals:
            if (
                sig.observed is not None
                and inputs.calendar.in_baseline(sig.date)
                and inputs.hierarchy.city_of(sig.observed) == city
            ):
                starting.add(sig.user_id)
        qualifying = sum(1 for u in starting if u in est.baselines_)
        results[(we, wd)] = (qualifying, mean_ca, mean_gap)

    ref_qualifying = results[default_pair][0]
    rows = []
    for we, wd in grid:
        qualifying, mean_ca, mean_gap = results[(we, wd)]
        delta = 100.0 * (qualifying - ref_qualifying) / ref_qualifying if ref_qualifying else 0.0
        rows.append(
            SweepRow(
                weekend_min=we,
                weekday_min=wd,
                qualifying_count=qualifying,
                qualifying_delta_pct=delta,
                mean_ca_rate=mean_ca,
                mean_gap=mean_gap,
                is_default=(we, wd) == default_pair,
            )
        )
    return rows


@dataclass(frozen=True)
class CvTableRow:
    multiplier: float
    disaster_cv: float
    bounds_lo_pct: float
    bounds_hi_pct: float
    relative_width_pct: float
    change_vs_default_pct: float
    is_default: bool


def cv_multiplier_table(
    cv_baseline: float, multipliers: Sequence[float], params: Params
) -> list[CvTableRow]:
    """Bound width as a share of the estimate, per disaster multiplier."""
    default_cv = cv_baseline * params.cv_multiplier
    rows = []
    for mult in multipliers:
        disaster_cv = cv_baseline * mult
        rel = 100.0 * params.z_factor * disaster_cv
        change = 100.0 * (disaster_cv / default_cv - 1.0) if default_cv > 0 else 0.0
        rows.append(
            CvTableRow(
                multiplier=mult,
                disaster_cv=disaster_cv,
                bounds_lo_pct=100.0 - rel,
                bounds_hi_pct=100.0 + rel,
                relative_width_pct=rel,
                change_vs_default_pct=change,
                is_default=abs(mult - params.cv_multiplier) < 1e-12,
            )
        )
    return rows


def compare_intervals_run(config: RunConfig) -> dict[str, IntervalTable]:
    """Four interval methods on the focal cities' context-aware series.

    Baseline-window detection supplies the daily-rate series behind the
    dispersion estimate.
    """
    inputs = load_inputs(config)
    out_dir = config.resolved_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    signals, _rep = stage_ingest(config, inputs, out_dir)
    est = DisplacementEstimator(inputs.hierarchy, inputs.calendar, inputs.params).fit(signals)
    home_cities = est.home_cities()
    focal = list(config.focal_cities) or sorted(set(home_cities.values()))
    cv_models, _warnings = build_cv_models(config, inputs, signals, focal)
    statuses = est.predict_statuses(signals)
    baseline_days = list(inputs.calendar.baseline_days(include_holidays=False))
    baseline_statuses = detect_period(
        group_by_user(signals),
        est.profiles_,
        est.baselines_,
        inputs.calendar,
        inputs.hierarchy,
        methods=(Method.CONTEXT_AWARE,),
        window=baseline_days,
    )
    tables = {}
    for city in focal:
        day_counts = day_counts_for_city(statuses, home_cities, city, Method.CONTEXT_AWARE)
        base_counts = [
            (d, n)
            for _, d, _m, n in day_counts_for_city(
                baseline_statuses, home_cities, city, Method.CONTEXT_AWARE
            )
        ]
        tables[city] = comparison_intervals(
            day_counts,
            base_counts,
            cv_models.get(city),
            inputs.params,
            n_replicates=int(config.bootstrap_replicates),
        )
    rpt.write_intervals_csv(tables, out_dir / FILE_INTERVALS)
    return tables
