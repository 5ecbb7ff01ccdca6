"""Scikit-learn style estimator wrapping the baseline -> profile -> detect core.

fit() learns each user's residential baseline and mobility profile from
baseline-window signals; predict() emits the per-user-per-day verdict matrix
for the observation window. Accepts either DailySignal records or a DataFrame
with columns (user_id, date, residential, activity[, quality]).
"""

from __future__ import annotations

import datetime as dt
from typing import Sequence

import pandas as pd
from sklearn.base import BaseEstimator

from .detect import DayStatus, Method, detect_period
from .errors import ConfigError
from .model import AdminHierarchy, AnalysisCalendar, Params
from .profile import (
    ExcludedBaseline,
    MobilityProfile,
    ResidentialBaseline,
    baseline_period_signals,
    classify_profile,
    establish_baseline,
)
from .signals import DailySignal, Quality, group_by_user


def coerce_signals(X) -> list[DailySignal]:
    """Normalize estimator input to DailySignal records."""
    if isinstance(X, pd.DataFrame):
        missing = {"user_id", "date"} - set(X.columns)
        if missing:
            raise ConfigError(f"signal frame lacks columns {sorted(missing)}")
        has_res = "residential" in X.columns
        has_act = "activity" in X.columns
        if not has_res and not has_act:
            raise ConfigError("signal frame needs a residential and/or activity column")
        has_quality = "quality" in X.columns
        out = []
        for row in X.itertuples(index=False):
            day = row.date
            if not isinstance(day, dt.date) or isinstance(day, dt.datetime):
                day = pd.Timestamp(day).date()
            res = getattr(row, "residential", None) if has_res else None
            act = getattr(row, "activity", None) if has_act else None
            res = None if res in (None, "") or pd.isna(res) else str(res)
            act = None if act in (None, "") or pd.isna(act) else str(act)
            if res is None and act is None:
                continue
            if res is None:
                res = act if not has_res else None
            quality = Quality(row.quality) if has_quality else Quality.NOT_AVAILABLE
            out.append(DailySignal(str(row.user_id), day, res, act, quality))
        return out
    return list(X)


def statuses_to_frame(statuses: Sequence[DayStatus]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "user_id": [s.user_id for s in statuses],
            "date": [s.date for s in statuses],
            "method": [s.method.value for s in statuses],
            "verdict": [s.verdict.value for s in statuses],
            "observed_city": [s.observed_city for s in statuses],
            "rule_fired": [s.rule_fired.value for s in statuses],
        }
    )


class DisplacementEstimator(BaseEstimator):
    """Commuter-aware displacement detector with a fit/predict surface.

    Parameters
    ----------
    hierarchy : AdminHierarchy
        Loaded admin-unit tree; required before fit.
    calendar : AnalysisCalendar
        Baseline and observation windows plus holidays.
    params : Params, optional
        Threshold and seed parameters (library defaults when omitted).
    methods : sequence of str
        Which detection rules predict() should emit ("context_aware", "naive").

    Attributes (after fit)
    ----------------------
    baselines_ : dict of user_id -> ResidentialBaseline
    excluded_ : dict of user_id -> ExcludedBaseline
    profiles_ : dict of user_id -> MobilityProfile
    warnings_ : list of str
    """

    def __init__(
        self,
        hierarchy: AdminHierarchy | None = None,
        calendar: AnalysisCalendar | None = None,
        params: Params | None = None,
        methods: Sequence[str] = ("context_aware", "naive"),
    ):
        self.hierarchy = hierarchy
        self.calendar = calendar
        self.params = params
        self.methods = methods

    def _check_ready(self) -> tuple[AdminHierarchy, AnalysisCalendar, Params]:
        if self.hierarchy is None or self.calendar is None:
            raise ConfigError("DisplacementEstimator requires hierarchy and calendar")
        return self.hierarchy, self.calendar, self.params or Params()

    def fit(self, X, y=None):
        """Learn residential baselines and mobility profiles from baseline signals."""
        hierarchy, calendar, params = self._check_ready()
        signals = coerce_signals(X)
        by_user = group_by_user(baseline_period_signals(signals, calendar))
        self.baselines_: dict[str, ResidentialBaseline] = {}
        self.excluded_: dict[str, ExcludedBaseline] = {}
        self.profiles_: dict[str, MobilityProfile] = {}
        self.warnings_: list[str] = list(calendar.warnings)
        if not hierarchy.has_adm4:
            self.warnings_.append(
                "hierarchy has no ADM4 units: intra-city commuters are indistinguishable "
                "from local residents at city-level inputs"
            )
        for user_id in sorted(by_user):
            result = establish_baseline(user_id, by_user[user_id], calendar, params, hierarchy)
            if isinstance(result, ExcludedBaseline):
                self.excluded_[user_id] = result
                continue
            self.baselines_[user_id] = result
            self.profiles_[user_id] = classify_profile(
                result, by_user[user_id], calendar, params, hierarchy
            )
        self.n_users_ = len(by_user)
        return self

    def _fitted(self):
        if not hasattr(self, "profiles_"):
            raise ConfigError("estimator is not fitted; call fit() first")

    def predict_statuses(
        self, X, window: Sequence[dt.date] | None = None
    ) -> list[DayStatus]:
        """Verdict records over (cohort x days x methods); default window is observation."""
        self._fitted()
        hierarchy, calendar, _params = self._check_ready()
        signals = coerce_signals(X)
        methods = tuple(Method(m) for m in self.methods)
        return detect_period(
            group_by_user(signals),
            self.profiles_,
            self.baselines_,
            calendar,
            hierarchy,
            methods=methods,
            window=window,
        )

    def predict(self, X, window: Sequence[dt.date] | None = None) -> pd.DataFrame:
        """Same as predict_statuses, shaped as a DataFrame for downstream tooling."""
        return statuses_to_frame(self.predict_statuses(X, window=window))

    def fit_predict(self, X, y=None) -> pd.DataFrame:
        return self.fit(X).predict(X)

    def home_cities(self) -> dict[str, str]:
        """Cohort user -> home city mapping used by every aggregation stage."""
        self._fitted()
        return {u: b.home_city for u, b in self.baselines_.items()}
