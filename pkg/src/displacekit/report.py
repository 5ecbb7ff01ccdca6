"""Report-bundle emission: CSVs, plot-data JSON, and the summary text file.

This is the privacy boundary: every raw count column passes through the
k-threshold mask here, so no emitted artifact carries a positive count below
the suppression threshold. Rates and person-equivalent estimates are emitted
as-is, mirroring the practice of publishing percentages while withholding
subscriber counts.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from pathlib import Path
from typing import Mapping, Sequence

from .metrics import CityDayMetrics, FlowMatrix, IntervalTable, ReturnSeries
from .profile import AttritionReport
from .synth import ScoreRow

METRICS_CSV_HEADER = [
    "city", "date", "method", "N", "D", "M", "rate_pct", "missing_pct",
    "cv_lo", "cv_hi", "scen_lo", "scen_mid", "scen_hi", "holiday_flag",
]
FLOWS_CSV_HEADER = ["date", "origin", "destination", "count", "share_pct", "suppressed"]
RETURNS_CSV_HEADER = ["city", "date", "R", "cum_return_pct", "variant"]
SCALED_CSV_HEADER = [
    "city", "date", "method", "displaced_subscribers",
    "scaling_factor", "est_displaced_persons", "lo_persons", "hi_persons",
]
INTERVALS_CSV_HEADER = [
    "city", "date", "rate_pct", "width_clopper_pearson", "width_wilson",
    "width_cv_based", "width_bootstrap", "width_overdispersion",
]
SCORE_CSV_HEADER = [
    "method", "subgroup", "day_type", "tp", "fp", "fn", "tn",
    "precision", "recall", "false_positive_rate",
]

DOW = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]


def mask_count(value: int, k: int) -> str:
    """Suppress positive counts below the k-threshold; zero stays visible."""
    return "" if 0 < value < k else str(value)


def _num(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_metrics_csv(metrics: Sequence[CityDayMetrics], path: str | Path, k: int) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for m in metrics:
            writer.writerow(
                [
                    m.city,
                    m.date.isoformat(),
                    m.method.value,
                    mask_count(m.n_baseline, k),
                    mask_count(m.displaced, k),
                    mask_count(m.missing, k),
                    _num(m.rate),
                    _num(m.missing_rate),
                    _num(m.cv_lo),
                    _num(m.cv_hi),
                    _num(m.scen_lo),
                    _num(m.scen_mid),
                    _num(m.scen_hi),
                    "1" if m.holiday else "0",
                ]
            )


def write_flows_csv(
    flows: Sequence[FlowMatrix], path: str | Path, k: int, origins: Sequence[str] | None = None
) -> None:
    """Per-day O-D rows with small cells folded into OTHER and masked below k."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FLOWS_CSV_HEADER)
        for flow in flows:
            flow_origins = flow.origins() if origins is None else [o for o in origins if o in flow.origins()]
            for origin in flow_origins:
                for dest, count, share, suppressed in flow.origin_rows(origin):
                    writer.writerow(
                        [
                            flow.date.isoformat(),
                            origin,
                            dest,
                            mask_count(count, k),
                            _num(share),
                            "1" if suppressed else "0",
                        ]
                    )


def write_returns_csv(series: Sequence[ReturnSeries], path: str | Path, k: int) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RETURNS_CSV_HEADER)
        for s in series:
            for day, r, rate in zip(s.dates, s.returns, s.cumulative_rate):
                writer.writerow([s.city, day.isoformat(), mask_count(r, k), _num(rate), s.variant.value])


def write_scaled_csv(
    rows: Sequence[tuple[str, dt.date, str, int, float, float, float | None, float | None]],
    path: str | Path,
    k: int,
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCALED_CSV_HEADER)
        for city, day, method, displaced, factor, est, lo, hi in rows:
            writer.writerow(
                [city, day.isoformat(), method, mask_count(displaced, k), _num(factor), _num(est), _num(lo), _num(hi)]
            )


def write_intervals_csv(tables: Mapping[str, IntervalTable], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(INTERVALS_CSV_HEADER)
        for city in sorted(tables):
            for row in tables[city].rows:
                writer.writerow(
                    [
                        city,
                        row.date.isoformat(),
                        _num(row.rate),
                        _num(row.clopper_pearson),
                        _num(row.wilson),
                        _num(row.cv_based),
                        _num(row.bootstrap),
                        _num(row.overdispersion),
                    ]
                )


def write_score_csv(rows: Sequence[ScoreRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.method.value,
                    r.subgroup,
                    r.day_type,
                    r.true_positive,
                    r.false_positive,
                    r.false_negative,
                    r.true_negative,
                    _num(r.precision),
                    _num(r.recall),
                    _num(r.false_positive_rate),
                ]
            )


def write_plots_json(
    metrics: Sequence[CityDayMetrics],
    returns: Sequence[ReturnSeries],
    path: str | Path,
    cities: Sequence[str],
) -> None:
    """Figure-ready series: rate time series, scenario band, return curve."""
    from .detect import Method
    from .metrics import ReturnVariant

    data: dict = {}
    for city in sorted(cities):
        ca = {m.date: m for m in metrics if m.city == city and m.method is Method.CONTEXT_AWARE}
        naive = {m.date: m for m in metrics if m.city == city and m.method is Method.NAIVE}
        days = sorted(ca)
        retro = next(
            (s for s in returns if s.city == city and s.variant is ReturnVariant.RETROSPECTIVE), None
        )
        data[city] = {
            "timeseries": [
                {
                    "date": d.isoformat(),
                    "naive_rate_pct": naive[d].rate if d in naive else None,
                    "context_aware_rate_pct": ca[d].rate,
                    "missing_pct": ca[d].missing_rate,
                    "holiday": ca[d].holiday,
                }
                for d in days
            ],
            "scenario_band": [
                {
                    "date": d.isoformat(),
                    "lower_pct": ca[d].scen_lo,
                    "mid_pct": ca[d].scen_mid,
                    "upper_pct": ca[d].scen_hi,
                }
                for d in days
            ],
            "return_curve": [
                {"date": d.isoformat(), "cumulative_return_pct": r}
                for d, r in (zip(retro.dates, retro.cumulative_rate) if retro else ())
            ],
        }
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def render_summary(
    calendar_lines: Sequence[str],
    warnings: Sequence[str],
    attrition: Mapping[str, AttritionReport],
    metrics: Sequence[CityDayMetrics],
    cities: Sequence[str],
    out_of_coverage_days: int,
) -> str:
    """Human-readable run summary with the mandatory quality trio per city:
    daily coverage, daily missing rate, and the attrition table."""
    from .detect import Method

    lines: list[str] = []
    lines.append("displacekit run summary")
    lines.append("=======================")
    lines.extend(calendar_lines)
    lines.append("")
    if warnings:
        lines.append("Warnings:")
        lines.extend(f"  - {w}" for w in warnings)
        lines.append("")
    if out_of_coverage_days:
        lines.append(f"Observations outside the loaded hierarchy: {out_of_coverage_days} user-days")
        lines.append("")
    for city in sorted(cities):
        lines.append(f"City {city}")
        lines.append("-" * (5 + len(city)))
        report = attrition.get(city)
        if report is not None:
            lines.append("Attrition (% of users observed in city during baseline):")
            for stage, pct in report.rows():
                lines.append(f"  {stage}: {pct}")
        ca = {m.date: m for m in metrics if m.city == city and m.method is Method.CONTEXT_AWARE}
        naive = {m.date: m for m in metrics if m.city == city and m.method is Method.NAIVE}
        if ca:
            lines.append("")
            lines.append("Date        Day  Naive   Context-Aware  Diff (N-CA)  Missing  Upper")
            for d in sorted(ca):
                m = ca[d]
                n_rate = naive[d].rate if d in naive else float("nan")
                diff = n_rate - m.rate
                flag = " (holiday)" if m.holiday else ""
                lines.append(
                    f"{d.isoformat()}  {DOW[d.weekday()]}  {n_rate:5.1f}%  {m.rate:12.1f}%  "
                    f"{diff:9.1f} pp  {m.missing_rate:6.1f}%  {m.scen_hi:5.1f}%{flag}"
                )
            lines.append("")
            lines.append("Daily coverage (% of baseline users observed):")
            for d in sorted(ca):
                lines.append(f"  {d.isoformat()}: {ca[d].coverage:.1f}%")
        lines.append("")
    return "\n".join(lines) + "\n"


SWEEP_CSV_HEADER = [
    "weekend_min", "weekday_min", "qualifying_delta_pct",
    "mean_ca_rate_pct", "mean_gap_pp", "is_default",
]
CV_TABLE_CSV_HEADER = [
    "multiplier", "disaster_cv", "bounds_lo_pct", "bounds_hi_pct",
    "relative_width_pct", "change_vs_default_pct", "is_default",
]


def write_sweep_csv(rows, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.weekend_min,
                    r.weekday_min,
                    _num(r.qualifying_delta_pct),
                    _num(r.mean_ca_rate),
                    _num(r.mean_gap),
                    "1" if r.is_default else "0",
                ]
            )


def write_cv_table_csv(rows, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CV_TABLE_CSV_HEADER)
        for r in rows:
            writer.writerow(
                [
                    _num(r.multiplier),
                    _num(r.disaster_cv),
                    _num(r.bounds_lo_pct),
                    _num(r.bounds_hi_pct),
                    _num(r.relative_width_pct),
                    _num(r.change_vs_default_pct),
                    "1" if r.is_default else "0",
                ]
            )


def write_metadata(path: str | Path, config_echo: Mapping, version: str) -> None:
    """The only artifact that carries a timestamp; excluded from determinism checks."""
    payload = {
        "generated_at": dt.datetime.now().isoformat(timespec="seconds"),
        "displacekit_version": version,
        "config": dict(config_echo),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
