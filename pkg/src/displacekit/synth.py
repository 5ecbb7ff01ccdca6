"""Seeded synthetic populations with planted ground truth.

Generates external-mode daily CSVs and internal-mode event CSVs that realize
one latent truth, so detector output can be scored against what was planted:
archetypes, displacement events, missingness, noise, and returns.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import GridMismatch, InvalidScenario, ParseError
from .detect import DayStatus, Method, Verdict
from .model import AdminHierarchy, AnalysisCalendar, AdminUnit, Level

ARCHETYPES = (
    "local_resident",
    "intra_city_commuter",
    "inter_city_daily",
    "inter_city_weekly",
    "weekend_only",
)

DAYTIME_MODAL = "daytime_modal"
NIGHTTIME_WEIGHTED = "nighttime_weighted"

TRUTH_CSV_HEADER = ["user_id", "date", "label", "city"]
USERS_CSV_HEADER = ["user_id", "archetype", "home", "home_city", "work_unit", "work_city"]

_DAY_STREAM = 0
_USER_STREAM = 1

# Fixed intra-day event times for internal-mode rendering: two nighttime
# events (same-date attribution) and two daytime events.
_NIGHT_TIMES = (dt.time(22, 10), dt.time(23, 40))
_DAY_TIMES = (dt.time(10, 15), dt.time(14, 45))

LABEL_HOME = "home"
LABEL_AT_WORK = "at_work"
LABEL_DISPLACED = "displaced"
LABEL_MISSING = "missing"


@dataclass(frozen=True)
class CitySpec:
    code: str
    name: str
    population: float
    n_barangays: int


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of a synthetic world.

    Day-level jitters (missing_day_sd, noise_day_sd) plant between-day
    variability: without them daily counts fluctuate only binomially, which no
    real subscriber series does.
    """

    cities: tuple[CitySpec, ...]
    archetype_mix: Mapping[str, float]
    n_users: int
    calendar: AnalysisCalendar
    displacement_fraction: Mapping[str, float] = field(default_factory=dict)
    destination_distribution: Mapping[str, float] = field(default_factory=dict)
    missing_daily_prob: float = 0.0
    return_hazard: float = 0.0
    observation_noise: float = 0.0
    vendor_emulation: str = DAYTIME_MODAL
    missing_day_sd: float = 0.0
    noise_day_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.cities:
            raise InvalidScenario("at least one city is required")
        if self.n_users < 1:
            raise InvalidScenario("n_users must be >= 1")
        codes = [c.code for c in self.cities]
        if len(set(codes)) != len(codes):
            raise InvalidScenario("duplicate city codes")
        for c in self.cities:
            if c.n_barangays < 1:
                raise InvalidScenario(f"{c.code}: n_barangays must be >= 1")
            if c.population <= 0:
                raise InvalidScenario(f"{c.code}: population must be positive")
        unknown = set(self.archetype_mix) - set(ARCHETYPES)
        if unknown:
            raise InvalidScenario(f"unknown archetypes {sorted(unknown)}")
        if abs(sum(self.archetype_mix.values()) - 1.0) > 1e-9:
            raise InvalidScenario("archetype_mix must sum to 1")
        if any(f < 0 for f in self.archetype_mix.values()):
            raise InvalidScenario("archetype_mix fractions must be >= 0")
        if self.archetype_mix.get("intra_city_commuter", 0.0) > 0 and any(
            c.n_barangays < 2 for c in self.cities
        ):
            raise InvalidScenario("intra_city_commuter archetype requires n_barangays >= 2 everywhere")
        if (
            self.archetype_mix.get("inter_city_daily", 0.0) > 0
            or self.archetype_mix.get("inter_city_weekly", 0.0) > 0
        ) and len(self.cities) < 2:
            raise InvalidScenario("inter-city commuter archetypes require at least two cities")
        for city, frac in self.displacement_fraction.items():
            if city not in codes:
                raise InvalidScenario(f"displacement_fraction references unknown city {city!r}")
            if not 0.0 <= frac <= 1.0:
                raise InvalidScenario("displacement fractions must be in [0, 1]")
        if self.displacement_fraction and any(f > 0 for f in self.displacement_fraction.values()):
            if abs(sum(self.destination_distribution.values()) - 1.0) > 1e-9:
                raise InvalidScenario("destination_distribution must sum to 1")
            for city in self.destination_distribution:
                if city not in codes:
                    raise InvalidScenario(f"destination {city!r} is not a known city")
        for name, value in (
            ("missing_daily_prob", self.missing_daily_prob),
            ("return_hazard", self.return_hazard),
            ("observation_noise", self.observation_noise),
        ):
            if not 0.0 <= value <= 1.0:
                raise InvalidScenario(f"{name} must be in [0, 1]")
        if self.missing_day_sd < 0 or self.noise_day_sd < 0:
            raise InvalidScenario("day-level jitter sds must be >= 0")
        if self.vendor_emulation not in (DAYTIME_MODAL, NIGHTTIME_WEIGHTED):
            raise InvalidScenario(f"unknown vendor_emulation {self.vendor_emulation!r}")

    def to_json_dict(self) -> dict:
        cal = self.calendar
        return {
            "seed": self.seed,
            "n_users": self.n_users,
            "cities": [
                {"code": c.code, "name": c.name, "population": c.population, "n_barangays": c.n_barangays}
                for c in self.cities
            ],
            "archetype_mix": dict(sorted(self.archetype_mix.items())),
            "baseline_start": cal.baseline_start.isoformat(),
            "baseline_end": cal.baseline_end.isoformat(),
            "disaster_onset": cal.disaster_onset.isoformat(),
            "observation_end": cal.observation_end.isoformat(),
            "holidays": sorted(d.isoformat() for d in cal.holidays),
            "displacement_fraction": dict(sorted(self.displacement_fraction.items())),
            "destination_distribution": dict(sorted(self.destination_distribution.items())),
            "missing_daily_prob": self.missing_daily_prob,
            "missing_day_sd": self.missing_day_sd,
            "observation_noise": self.observation_noise,
            "noise_day_sd": self.noise_day_sd,
            "return_hazard": self.return_hazard,
            "vendor_emulation": self.vendor_emulation,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "ScenarioSpec":
        try:
            calendar = AnalysisCalendar(
                baseline_start=dt.date.fromisoformat(data["baseline_start"]),
                baseline_end=dt.date.fromisoformat(data["baseline_end"]),
                disaster_onset=dt.date.fromisoformat(data["disaster_onset"]),
                observation_end=dt.date.fromisoformat(data["observation_end"]),
                holidays=frozenset(dt.date.fromisoformat(d) for d in data.get("holidays", [])),
            )
            cities = tuple(
                CitySpec(c["code"], c.get("name", c["code"]), c["population"], c["n_barangays"])
                for c in data["cities"]
            )
            return cls(
                cities=cities,
                archetype_mix=dict(data["archetype_mix"]),
                n_users=int(data["n_users"]),
                calendar=calendar,
                displacement_fraction=dict(data.get("displacement_fraction", {})),
                destination_distribution=dict(data.get("destination_distribution", {})),
                missing_daily_prob=float(data.get("missing_daily_prob", 0.0)),
                return_hazard=float(data.get("return_hazard", 0.0)),
                observation_noise=float(data.get("observation_noise", 0.0)),
                vendor_emulation=data.get("vendor_emulation", DAYTIME_MODAL),
                missing_day_sd=float(data.get("missing_day_sd", 0.0)),
                noise_day_sd=float(data.get("noise_day_sd", 0.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScenario(f"bad scenario JSON: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidScenario(f"{path}: {exc}") from exc
        return cls.from_json_dict(data)


@dataclass(frozen=True)
class TruthUser:
    user_id: str
    archetype: str
    home: str
    home_city: str
    work_unit: str | None
    work_city: str | None


@dataclass
class GroundTruth:
    """Planted per-user attributes and per-user-day labels."""

    users: dict[str, TruthUser]
    labels: dict[tuple[str, dt.date], tuple[str, str | None]]


@dataclass(frozen=True)
class GeneratedScenario:
    spec: ScenarioSpec
    out_dir: Path
    hierarchy_csv: Path
    holidays_file: Path
    population_csv: Path
    daily_csv: Path
    events_csv: Path | None
    truth_csv: Path
    users_csv: Path
    run_config: Path
    truth: GroundTruth


def _largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Integer quotas that sum to total, proportional to weights."""
    weight_sum = float(sum(weights))
    raw = [w / weight_sum * total for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    short = total - sum(counts)
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def build_hierarchy(cities: Sequence[CitySpec]) -> AdminHierarchy:
    """One region/province over the scenario cities and their barangays."""
    units = [
        AdminUnit("SYN-R1", "Synthetic Region", Level.ADM1, None),
        AdminUnit("SYN-P1", "Synthetic Province", Level.ADM2, "SYN-R1"),
    ]
    for city in cities:
        units.append(AdminUnit(city.code, city.name, Level.ADM3, "SYN-P1"))
        for b in range(city.n_barangays):
            units.append(
                AdminUnit(f"{city.code}-B{b + 1:03d}", f"{city.name} B{b + 1}", Level.ADM4, city.code)
            )
    return AdminHierarchy(units)


def _barangay(city: CitySpec, index: int) -> str:
    return f"{city.code}-B{index + 1:03d}"


@dataclass
class _UserPlan:
    user: TruthUser
    work_unit: str | None
    displaced: bool
    dest_city: str | None
    dest_unit: str | None
    return_day: dt.date | None  # first day back at the normal pattern
    missing_u: np.ndarray
    noise_u: np.ndarray
    noise_idx: np.ndarray


def _plan_user(
    index: int,
    archetype: str,
    home_city: CitySpec,
    spec: ScenarioSpec,
    cities_by_code: Mapping[str, CitySpec],
    unit_pool: Sequence[str],
    n_days: int,
) -> _UserPlan:
    rng = np.random.default_rng([spec.seed, _USER_STREAM, index])
    user_id = f"u{index:06d}"
    home = _barangay(home_city, int(rng.integers(home_city.n_barangays)))
    work_unit = None
    work_city_code = None
    if archetype == "intra_city_commuter":
        offset = int(rng.integers(home_city.n_barangays - 1))
        choices = [b for b in range(home_city.n_barangays) if _barangay(home_city, b) != home]
        work_unit = _barangay(home_city, choices[offset])
        work_city_code = home_city.code
    elif archetype in ("inter_city_daily", "inter_city_weekly"):
        others = sorted(c for c in cities_by_code if c != home_city.code)
        work_city_code = others[int(rng.integers(len(others)))]
        work_city = cities_by_code[work_city_code]
        work_unit = _barangay(work_city, int(rng.integers(work_city.n_barangays)))
    frac = spec.displacement_fraction.get(home_city.code, 0.0)
    displaced = bool(rng.random() < frac)
    dest_city = dest_unit = None
    return_day = None
    if displaced:
        options = sorted(c for c in spec.destination_distribution if c != home_city.code)
        if not options:
            raise InvalidScenario(
                f"no destination other than {home_city.code!r} has positive mass"
            )
        probs = np.array([spec.destination_distribution[c] for c in options], dtype=float)
        probs /= probs.sum()
        dest_city = options[int(rng.choice(len(options), p=probs))]
        dest = cities_by_code[dest_city]
        dest_unit = _barangay(dest, int(rng.integers(dest.n_barangays)))
        h = spec.return_hazard
        u = float(rng.random())
        if h >= 1.0:
            days_displaced = 1
        elif h <= 0.0:
            days_displaced = n_days + 1  # never returns inside the window
        else:
            days_displaced = 1 + int(math.floor(math.log(1.0 - u) / math.log(1.0 - h)))
        return_day = spec.calendar.disaster_onset + dt.timedelta(days=days_displaced)
    return _UserPlan(
        user=TruthUser(user_id, archetype, home, home_city.code, work_unit, work_city_code),
        work_unit=work_unit,
        displaced=displaced,
        dest_city=dest_city,
        dest_unit=dest_unit,
        return_day=return_day,
        missing_u=rng.random(n_days),
        noise_u=rng.random(n_days),
        noise_idx=rng.integers(0, len(unit_pool), size=n_days),
    )


def _base_pattern(plan: _UserPlan, is_weekend: bool) -> tuple[str | None, str | None, str, str | None]:
    """(residential_unit, activity_unit, label, label_city) absent displacement."""
    user = plan.user
    if user.archetype == "weekend_only" and not is_weekend:
        return None, None, LABEL_MISSING, None
    if is_weekend or user.archetype in ("local_resident", "weekend_only"):
        return user.home, user.home, LABEL_HOME, user.home_city
    if user.archetype == "inter_city_weekly":
        return plan.work_unit, plan.work_unit, LABEL_AT_WORK, user.work_city
    # intra-city and daily inter-city commuters sleep at home
    return user.home, plan.work_unit, LABEL_AT_WORK, user.work_city


def generate(
    spec: ScenarioSpec, out_dir: str | Path, include_internal: bool = True
) -> GeneratedScenario:
    """Materialize a scenario: input files for the pipeline plus planted truth.

    Deterministic given the seed: per-user RNG streams are derived from
    (seed, user index), day effects from a separate stream, so file bytes do
    not depend on generation order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calendar = spec.calendar
    days = []
    day = calendar.baseline_start
    while day <= calendar.observation_end:
        days.append(day)
        day += dt.timedelta(days=1)
    n_days = len(days)
    weekend_flags = [d.weekday() >= 5 for d in days]

    day_rng = np.random.default_rng([spec.seed, _DAY_STREAM])
    missing_p = np.clip(
        spec.missing_daily_prob + spec.missing_day_sd * day_rng.standard_normal(n_days), 0.0, 1.0
    )
    noise_p = np.clip(
        spec.observation_noise + spec.noise_day_sd * day_rng.standard_normal(n_days), 0.0, 1.0
    )

    hierarchy = build_hierarchy(spec.cities)
    unit_pool = hierarchy.codes_at(Level.ADM4)
    cities_by_code = {c.code: c for c in spec.cities}

    city_counts = _largest_remainder([c.population for c in spec.cities], spec.n_users)
    mix = [spec.archetype_mix.get(a, 0.0) for a in ARCHETYPES]

    truth = GroundTruth(users={}, labels={})
    daily_path = out_dir / "daily.csv"
    events_path = out_dir / "events.csv" if include_internal else None
    truth_path = out_dir / "truth.csv"
    users_path = out_dir / "users.csv"

    daily_fh = daily_path.open("w", newline="", encoding="utf-8")
    truth_fh = truth_path.open("w", newline="", encoding="utf-8")
    users_fh = users_path.open("w", newline="", encoding="utf-8")
    events_fh = events_path.open("w", newline="", encoding="utf-8") if events_path else None
    try:
        daily_w = csv.writer(daily_fh)
        daily_w.writerow(["user_id", "date", "admin_code"])
        truth_w = csv.writer(truth_fh)
        truth_w.writerow(TRUTH_CSV_HEADER)
        users_w = csv.writer(users_fh)
        users_w.writerow(USERS_CSV_HEADER)
        events_w = None
        if events_fh:
            events_w = csv.writer(events_fh)
            events_w.writerow(["user_id", "timestamp", "admin_code"])

        index = 0
        for city, city_n in zip(spec.cities, city_counts):
            arch_counts = _largest_remainder(mix, city_n) if city_n else [0] * len(ARCHETYPES)
            for archetype, arch_n in zip(ARCHETYPES, arch_counts):
                for _ in range(arch_n):
                    plan = _plan_user(index, archetype, city, spec, cities_by_code, unit_pool, n_days)
                    index += 1
                    user = plan.user
                    truth.users[user.user_id] = user
                    users_w.writerow(
                        [user.user_id, user.archetype, user.home, user.home_city, user.work_unit or "", user.work_city or ""]
                    )
                    for t, (d, is_weekend) in enumerate(zip(days, weekend_flags)):
                        res, act, label, label_city = _base_pattern(plan, is_weekend)
                        if (
                            plan.displaced
                            and d >= calendar.disaster_onset
                            and (plan.return_day is None or d < plan.return_day)
                        ):
                            res = act = plan.dest_unit
                            label, label_city = LABEL_DISPLACED, plan.dest_city
                        if label != LABEL_MISSING and plan.missing_u[t] < missing_p[t]:
                            res = act = None
                            label, label_city = LABEL_MISSING, None
                        if res is not None and plan.noise_u[t] < noise_p[t]:
                            glitch = unit_pool[int(plan.noise_idx[t])]
                            if glitch == res:
                                glitch = unit_pool[(int(plan.noise_idx[t]) + 1) % len(unit_pool)]
                            res = act = glitch
                        truth.labels[(user.user_id, d)] = (label, label_city)
                        truth_w.writerow([user.user_id, d.isoformat(), label, label_city or ""])
                        if res is None:
                            continue
                        vendor_value = act if spec.vendor_emulation == DAYTIME_MODAL and act else res
                        daily_w.writerow([user.user_id, d.isoformat(), vendor_value])
                        if events_w:
                            for tm in _NIGHT_TIMES:
                                events_w.writerow(
                                    [user.user_id, dt.datetime.combine(d, tm).isoformat(sep=" "), res]
                                )
                            if act:
                                for tm in _DAY_TIMES:
                                    events_w.writerow(
                                        [user.user_id, dt.datetime.combine(d, tm).isoformat(sep=" "), act]
                                    )
    finally:
        daily_fh.close()
        truth_fh.close()
        users_fh.close()
        if events_fh:
            events_fh.close()

    hierarchy_path = out_dir / "hierarchy.csv"
    with hierarchy_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["code", "name", "level", "parent_code"])
        writer.writerow(["SYN-R1", "Synthetic Region", "ADM1", ""])
        writer.writerow(["SYN-P1", "Synthetic Province", "ADM2", "SYN-R1"])
        for city in spec.cities:
            writer.writerow([city.code, city.name, "ADM3", "SYN-P1"])
            for b in range(city.n_barangays):
                writer.writerow([_barangay(city, b), f"{city.name} B{b + 1}", "ADM4", city.code])

    holidays_path = out_dir / "holidays.txt"
    holidays_path.write_text(
        "".join(d.isoformat() + "\n" for d in sorted(calendar.holidays)), encoding="utf-8"
    )

    population_path = out_dir / "population.csv"
    with population_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["admin_code", "population"])
        for city in spec.cities:
            writer.writerow([city.code, city.population])

    focal = sorted(c for c, f in spec.displacement_fraction.items() if f > 0)
    if not focal:
        focal = [max(spec.cities, key=lambda c: (c.population, c.code)).code]
    config = {
        "mode": "external",
        "daily_csv": str(daily_path),
        "events_csv": str(events_path) if events_path else None,
        "hierarchy_csv": str(hierarchy_path),
        "holidays_file": str(holidays_path),
        "population_csv": str(population_path),
        "baseline_start": calendar.baseline_start.isoformat(),
        "baseline_end": calendar.baseline_end.isoformat(),
        "disaster_onset": calendar.disaster_onset.isoformat(),
        "observation_end": calendar.observation_end.isoformat(),
        "focal_cities": focal,
        "out_dir": str(out_dir / "out"),
        "rng_seed": spec.seed,
    }
    run_config = out_dir / "run_config.json"
    run_config.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (out_dir / "scenario.json").write_text(
        json.dumps(spec.to_json_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    return GeneratedScenario(
        spec=spec,
        out_dir=out_dir,
        hierarchy_csv=hierarchy_path,
        holidays_file=holidays_path,
        population_csv=population_path,
        daily_csv=daily_path,
        events_csv=events_path,
        truth_csv=truth_path,
        users_csv=users_path,
        run_config=run_config,
        truth=truth,
    )


def read_truth_csv(truth_path: str | Path, users_path: str | Path) -> GroundTruth:
    truth = GroundTruth(users={}, labels={})
    with Path(users_path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != USERS_CSV_HEADER:
            raise ParseError(f"{users_path}: expected header {','.join(USERS_CSV_HEADER)}")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            truth.users[row[0]] = TruthUser(row[0], row[1], row[2], row[3], row[4] or None, row[5] or None)
    with Path(truth_path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != TRUTH_CSV_HEADER:
            raise ParseError(f"{truth_path}: expected header {','.join(TRUTH_CSV_HEADER)}")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            truth.labels[(row[0], dt.date.fromisoformat(row[1]))] = (row[2], row[3] or None)
    return truth


@dataclass(frozen=True)
class ScoreRow:
    method: Method
    subgroup: str
    day_type: str
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    def _ratio(self, num: int, den: int) -> float | None:
        return num / den if den else None

    @property
    def precision(self) -> float | None:
        return self._ratio(self.true_positive, self.true_positive + self.false_positive)

    @property
    def recall(self) -> float | None:
        return self._ratio(self.true_positive, self.true_positive + self.false_negative)

    @property
    def false_positive_rate(self) -> float | None:
        return self._ratio(self.false_positive, self.false_positive + self.true_negative)


_SUBGROUPS = {
    "all": lambda u: True,
    "inter_city_commuters": lambda u: u.archetype in ("inter_city_daily", "inter_city_weekly"),
    "intra_city_commuters": lambda u: u.archetype == "intra_city_commuter",
}


def score(statuses: Iterable[DayStatus], truth: GroundTruth) -> list[ScoreRow]:
    """Confusion metrics for the displaced class against planted truth.

    Days that are missing (in truth, equivalently in the verdicts) carry no
    location information and are excluded. Statuses must lie on the truth grid.
    """
    cells: dict[tuple[Method, str, str, bool, bool], int] = {}
    for st in statuses:
        key = (st.user_id, st.date)
        if key not in truth.labels:
            raise GridMismatch(f"status for {key} has no ground-truth label")
        label, _city = truth.labels[key]
        if label == LABEL_MISSING or st.verdict is Verdict.MISSING:
            continue
        user = truth.users[st.user_id]
        actual = label == LABEL_DISPLACED
        predicted = st.verdict is Verdict.DISPLACED
        day_type = "weekend" if st.date.weekday() >= 5 else "weekday"
        for subgroup, pred in _SUBGROUPS.items():
            if not pred(user):
                continue
            for dt_key in ("all", day_type):
                cell = (st.method, subgroup, dt_key, predicted, actual)
                cells[cell] = cells.get(cell, 0) + 1
    rows = []
    for method in (Method.CONTEXT_AWARE, Method.NAIVE):
        for subgroup in _SUBGROUPS:
            for dt_key in ("all", "weekday", "weekend"):
                tp = cells.get((method, subgroup, dt_key, True, True), 0)
                fp = cells.get((method, subgroup, dt_key, True, False), 0)
                fn = cells.get((method, subgroup, dt_key, False, True), 0)
                tn = cells.get((method, subgroup, dt_key, False, False), 0)
                rows.append(ScoreRow(method, subgroup, dt_key, tp, fp, fn, tn))
    return rows
