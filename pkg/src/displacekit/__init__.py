"""Commuter-aware population displacement estimation from daily mobility records.

The pipeline learns each user's pre-disaster residential baseline and mobility
profile, applies context-aware displacement rules that excuse inter-city
commuters at their work city on weekdays, and aggregates the verdicts into
rates with uncertainty bounds, origin-destination flows, return dynamics, and
population-scaled estimates. A seeded synthetic generator with planted truth
backs the test suite.
"""

from .detect import DayStatus, Method, Rule, Verdict, detect_day, detect_period, expected_cities
from .errors import DisplaceKitError
from .estimator import DisplacementEstimator
from .metrics import (
    CityDayMetrics,
    CvModel,
    FlowMatrix,
    PopulationScale,
    ReturnSeries,
    ReturnVariant,
    build_cv_model,
    comparison_intervals,
    cv_bounds,
    daily_rates,
    od_flows,
    population_scale,
    return_series,
    scale_population,
)
from .model import AdminHierarchy, AdminUnit, AnalysisCalendar, DayType, Level, Params, day_type
from .pipeline import RunConfig, cv_multiplier_table, run_pipeline, sensitivity_sweep
from .profile import (
    AttritionReport,
    BaselineSource,
    ExcludedBaseline,
    MobilityProfile,
    ProfileKind,
    ResidentialBaseline,
    attrition_report,
    classify_profile,
    establish_baseline,
)
from .signals import (
    DailySignal,
    IngestReport,
    Quality,
    derive_internal,
    ingest_daily,
    mode_with_seeded_tiebreak,
)
from .synth import GroundTruth, ScenarioSpec, generate, score

__version__ = "0.1.0"

__all__ = [
    "AdminHierarchy",
    "AdminUnit",
    "AnalysisCalendar",
    "AttritionReport",
    "BaselineSource",
    "CityDayMetrics",
    "CvModel",
    "DailySignal",
    "DayStatus",
    "DayType",
    "DisplaceKitError",
    "DisplacementEstimator",
    "ExcludedBaseline",
    "FlowMatrix",
    "GroundTruth",
    "IngestReport",
    "Level",
    "Method",
    "MobilityProfile",
    "Params",
    "PopulationScale",
    "ProfileKind",
    "Quality",
    "ResidentialBaseline",
    "ReturnSeries",
    "ReturnVariant",
    "Rule",
    "RunConfig",
    "ScenarioSpec",
    "Verdict",
    "attrition_report",
    "build_cv_model",
    "classify_profile",
    "comparison_intervals",
    "cv_bounds",
    "cv_multiplier_table",
    "daily_rates",
    "day_type",
    "derive_internal",
    "detect_day",
    "detect_period",
    "establish_baseline",
    "expected_cities",
    "generate",
    "ingest_daily",
    "mode_with_seeded_tiebreak",
    "od_flows",
    "population_scale",
    "return_series",
    "run_pipeline",
    "scale_population",
    "score",
    "sensitivity_sweep",
]
