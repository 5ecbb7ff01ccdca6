"""Command-line interface: one subcommand per pipeline stage plus the sweeps.

Exit codes: 0 ok, 2 config error, 3 input parse error, 4 malformed-row abort,
5 internal invariant violation.
"""

from __future__ import annotations

import datetime as dt
import json
import sys
from pathlib import Path

import click

from . import pipeline as pl
from . import report as rpt
from .detect import read_statuses_csv, write_statuses_csv, detect_period
from .errors import ConfigError, DisplaceKitError
from .estimator import DisplacementEstimator
from .metrics import ReturnVariant, baseline_daily_averages, city_daily_counts, daily_rates, od_flows, population_scale, return_series, scale_population
from .profile import classify_profile, read_baselines_csv, write_baselines_csv, write_profiles_csv, read_profiles_csv, ResidentialBaseline
from .signals import group_by_user, read_signals_csv
from .synth import ScenarioSpec, generate, read_truth_csv, score


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def config_options(f):
    f = click.option("--threads", type=int, default=None, help="Worker cap (stages currently run single-process).")(f)
    f = click.option("-o", "--out-dir", default=None, help="Override the configured output directory.")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key (value parsed as JSON when possible).")(f)
    f = click.option("-c", "--config", "config_path", required=True, type=click.Path(), help="Run configuration JSON.")(f)
    return f


def _load(config_path, overrides, out_dir, threads) -> pl.RunConfig:
    ov = _parse_overrides(overrides)
    if out_dir is not None:
        ov["out_dir"] = str(Path(out_dir).absolute())
    if threads is not None:
        ov["threads"] = threads
    return pl.RunConfig.from_file(config_path, ov)


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path.name}: not found in {path.parent}; run the {stage} stage first")
    return path


@click.group()
def cli():
    """Commuter-aware displacement estimation from daily mobility records."""


@cli.command()
@config_options
def ingest(config_path, overrides, out_dir, threads):
    """Ingest raw inputs into daily signals (signals.csv + ingest_report.json)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    _signals, report = pl.stage_ingest(config, inputs, out)
    click.echo(
        f"accepted {report.accepted} rows "
        f"(duplicate {report.duplicate}, out_of_window {report.out_of_window}, "
        f"unknown_code {report.unknown_code}, malformed {report.malformed})"
    )


@cli.command()
@config_options
def baseline(config_path, overrides, out_dir, threads):
    """Establish residential baselines (baselines.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    signals = read_signals_csv(_need(out / pl.FILE_SIGNALS, "ingest"))
    est = DisplacementEstimator(inputs.hierarchy, inputs.calendar, inputs.params).fit(signals)
    write_baselines_csv({**est.baselines_, **est.excluded_}, out / pl.FILE_BASELINES)
    click.echo(f"{len(est.baselines_)} valid baselines, {len(est.excluded_)} excluded")


@cli.command()
@config_options
def profile(config_path, overrides, out_dir, threads):
    """Classify mobility profiles from baselines + signals (profiles.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    signals = read_signals_csv(_need(out / pl.FILE_SIGNALS, "ingest"))
    baselines = read_baselines_csv(_need(out / pl.FILE_BASELINES, "baseline"))
    from .profile import baseline_period_signals

    by_user = group_by_user(baseline_period_signals(signals, inputs.calendar))
    valid = {u: b for u, b in baselines.items() if isinstance(b, ResidentialBaseline)}
    profiles = {
        u: classify_profile(b, by_user.get(u, []), inputs.calendar, inputs.params, inputs.hierarchy)
        for u, b in sorted(valid.items())
    }
    write_profiles_csv(valid, profiles, out / pl.FILE_PROFILES)
    click.echo(f"{len(profiles)} profiles written")


@cli.command()
@config_options
def detect(config_path, overrides, out_dir, threads):
    """Produce the per-user-per-day verdict matrix, both methods (statuses.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    signals = read_signals_csv(_need(out / pl.FILE_SIGNALS, "ingest"))
    baselines, profiles = read_profiles_csv(_need(out / pl.FILE_PROFILES, "profile"))
    statuses = detect_period(
        group_by_user(signals), profiles, baselines, inputs.calendar, inputs.hierarchy
    )
    write_statuses_csv(statuses, out / pl.FILE_STATUSES)
    click.echo(f"{len(statuses)} statuses written")


def _home_cities_from_profiles(out: Path) -> dict[str, str]:
    baselines, _profiles = read_profiles_csv(_need(out / pl.FILE_PROFILES, "profile"))
    return {u: b.home_city for u, b in baselines.items()}


@cli.command()
@config_options
def metrics(config_path, overrides, out_dir, threads):
    """Aggregate statuses into city-day metrics (metrics.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    signals = read_signals_csv(_need(out / pl.FILE_SIGNALS, "ingest"))
    statuses = read_statuses_csv(_need(out / pl.FILE_STATUSES, "detect"))
    home_cities = _home_cities_from_profiles(out)
    focal = list(config.focal_cities) or sorted(set(home_cities.values()))
    cv_models, warnings = pl.build_cv_models(config, inputs, signals, focal)
    table, rate_warnings = daily_rates(
        statuses, home_cities, inputs.calendar, cv_models, inputs.params,
        mid_fraction=float(config.scenario_mid_fraction), cities=focal,
    )
    rpt.write_metrics_csv(table, out / pl.FILE_METRICS, inputs.params.suppression_k)
    for w in warnings + rate_warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"{len(table)} city-day metric rows written")


@cli.command()
@config_options
def flows(config_path, overrides, out_dir, threads):
    """Origin-destination flow matrices per observation day (flows.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    statuses = read_statuses_csv(_need(out / pl.FILE_STATUSES, "detect"))
    home_cities = _home_cities_from_profiles(out)
    focal = list(config.focal_cities) or sorted(set(home_cities.values()))
    by_date: dict[dt.date, list] = {}
    for st in statuses:
        by_date.setdefault(st.date, []).append(st)
    tables = [od_flows(by_date[d], home_cities, d, inputs.params) for d in sorted(by_date)]
    rpt.write_flows_csv(tables, out / pl.FILE_FLOWS, inputs.params.suppression_k, origins=focal)
    click.echo(f"{len(tables)} daily flow matrices written")


@cli.command()
@config_options
def returns(config_path, overrides, out_dir, threads):
    """Return dynamics per focal city, both variants (returns.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    statuses = read_statuses_csv(_need(out / pl.FILE_STATUSES, "detect"))
    home_cities = _home_cities_from_profiles(out)
    focal = list(config.focal_cities) or sorted(set(home_cities.values()))
    series = [
        return_series(statuses, home_cities, city, variant)
        for city in focal
        for variant in (ReturnVariant.RETROSPECTIVE, ReturnVariant.RUNNING_MAX)
    ]
    rpt.write_returns_csv(series, out / pl.FILE_RETURNS, inputs.params.suppression_k)
    click.echo(f"{len(series)} return series written")


@cli.command()
@config_options
def scale(config_path, overrides, out_dir, threads):
    """Population-scale displaced subscriber counts (scaled.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    if inputs.population is None:
        raise ConfigError("population_csv: population table required for scale stage")
    out = config.resolved_out_dir()
    signals = read_signals_csv(_need(out / pl.FILE_SIGNALS, "ingest"))
    statuses = read_statuses_csv(_need(out / pl.FILE_STATUSES, "detect"))
    home_cities = _home_cities_from_profiles(out)
    focal = list(config.focal_cities) or sorted(set(home_cities.values()))
    cv_models, _warnings = pl.build_cv_models(config, inputs, signals, focal)
    table, _w = daily_rates(
        statuses, home_cities, inputs.calendar, cv_models, inputs.params, cities=focal
    )
    counts_by_city = city_daily_counts(signals, inputs.hierarchy)
    rows = []
    for city in focal:
        if city not in inputs.population:
            click.echo(f"warning: {city}: no population entry; skipped", err=True)
            continue
        weekday_avg, weekend_avg = baseline_daily_averages(counts_by_city.get(city, {}), inputs.calendar)
        pscale = population_scale(city, inputs.population[city], weekday_avg, weekend_avg)
        for m in table:
            if m.city != city:
                continue
            est_persons, lo, hi = scale_population(float(m.displaced), pscale, cv_models.get(city), inputs.params)
            rows.append((city, m.date, m.method.value, m.displaced, pscale.scaling_factor, est_persons, lo, hi))
    rpt.write_scaled_csv(rows, out / pl.FILE_SCALED, inputs.params.suppression_k)
    click.echo(f"{len(rows)} scaled rows written")


@cli.command()
@config_options
def report(config_path, overrides, out_dir, threads):
    """Run the full pipeline and emit the report bundle."""
    config = _load(config_path, overrides, out_dir, threads)
    result = pl.run_pipeline(config)
    for w in result.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"report bundle written to {result.out_dir}")


@cli.command()
@click.argument("scenario", type=click.Path())
@click.option("-o", "--out-dir", required=True, help="Directory for the generated input files.")
@click.option("--no-internal", is_flag=True, help="Skip the internal-mode event CSV.")
def simulate(scenario, out_dir, no_internal):
    """Generate a synthetic scenario with planted ground truth."""
    spec = ScenarioSpec.from_json(scenario)
    generated = generate(spec, out_dir, include_internal=not no_internal)
    click.echo(f"scenario written to {generated.out_dir} ({spec.n_users} users)")
    click.echo(f"run config: {generated.run_config}")


@cli.command(name="score")
@config_options
@click.option("--truth", "truth_path", required=True, type=click.Path(), help="truth.csv from simulate.")
@click.option("--users", "users_path", required=True, type=click.Path(), help="users.csv from simulate.")
def score_cmd(config_path, overrides, out_dir, threads, truth_path, users_path):
    """Score detector output against planted ground truth (score.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    out = config.resolved_out_dir()
    statuses = read_statuses_csv(_need(out / pl.FILE_STATUSES, "detect"))
    truth = read_truth_csv(truth_path, users_path)
    rows = score(statuses, truth)
    rpt.write_score_csv(rows, out / "score.csv")
    click.echo(f"{len(rows)} score rows written")


def _parse_int_list(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


@cli.command(name="sweep-thresholds")
@config_options
@click.option("--weekend-set", default="1,2,3", show_default=True)
@click.option("--weekday-set", default="3,5,7", show_default=True)
@click.option("--exclude-dates", default="", help="Comma-separated ISO dates to drop from the clean-weekday mean.")
def sweep_thresholds(config_path, overrides, out_dir, threads, weekend_set, weekday_set, exclude_dates):
    """Observation-threshold sensitivity sweep (sweep_thresholds.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    excludes = [dt.date.fromisoformat(x) for x in exclude_dates.split(",") if x.strip()]
    rows = pl.sensitivity_sweep(
        config, _parse_int_list(weekend_set), _parse_int_list(weekday_set), excludes
    )
    out = config.resolved_out_dir()
    rpt.write_sweep_csv(rows, out / "sweep_thresholds.csv")
    for r in rows:
        marker = " (default)" if r.is_default else ""
        click.echo(
            f"weekend>={r.weekend_min} weekday>={r.weekday_min}: "
            f"baseline {r.qualifying_delta_pct:+.1f}%, mean CA {r.mean_ca_rate:.2f}%, "
            f"mean gap {r.mean_gap:.2f} pp{marker}"
        )


@cli.command(name="sweep-cv")
@config_options
@click.option("--multipliers", default="1.5,2.0,2.5", show_default=True)
@click.option("--cv-baseline", type=float, default=None, help="Use this baseline CV instead of estimating from data.")
def sweep_cv(config_path, overrides, out_dir, threads, multipliers, cv_baseline):
    """Disaster-multiplier sensitivity of the CV bound width (cv_multiplier_table.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    inputs = pl.load_inputs(config)
    out = config.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    if cv_baseline is None:
        signals_path = out / pl.FILE_SIGNALS
        if signals_path.exists():
            signals = read_signals_csv(signals_path)
        else:
            signals, _rep = pl.stage_ingest(config, inputs, out)
        focal = config.focal_cities
        if not focal:
            raise ConfigError("focal_cities: required for sweep-cv unless --cv-baseline is given")
        models, _warnings = pl.build_cv_models(config, inputs, signals, focal)
        cv_baseline = models[focal[0]].cv_baseline
    try:
        mults = [float(x) for x in multipliers.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--multipliers: expected comma-separated numbers, got {multipliers!r}") from None
    rows = pl.cv_multiplier_table(cv_baseline, mults, inputs.params)
    rpt.write_cv_table_csv(rows, out / "cv_multiplier_table.csv")
    for r in rows:
        marker = " (default)" if r.is_default else ""
        click.echo(
            f"multiplier {r.multiplier:g}: disaster CV {r.disaster_cv:.3f}, "
            f"bounds {r.bounds_lo_pct:.0f}%-{r.bounds_hi_pct:.0f}%, width ±{r.relative_width_pct:.0f}%{marker}"
        )


@cli.command(name="compare-intervals")
@config_options
def compare_intervals_cmd(config_path, overrides, out_dir, threads):
    """Clopper-Pearson / Wilson / overdispersion / bootstrap widths (intervals.csv)."""
    config = _load(config_path, overrides, out_dir, threads)
    tables = pl.compare_intervals_run(config)
    for city in sorted(tables):
        t = tables[city]
        click.echo(
            f"{city}: avg widths (pp) CP {t.average('clopper_pearson'):.2f}, "
            f"Wilson {t.average('wilson'):.2f}, CV {t.average('cv_based'):.2f}, "
            f"bootstrap {t.average('bootstrap'):.2f}, overdispersion {t.average('overdispersion'):.2f}"
        )


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 2
    except click.ClickException as exc:
        exc.show()
        return 2
    except DisplaceKitError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
