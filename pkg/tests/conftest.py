import datetime as dt

import pytest

from displacekit.model import AdminHierarchy, AdminUnit, AnalysisCalendar, Level, Params
from displacekit.pipeline import RunConfig, run_pipeline
from displacekit.synth import CitySpec, ScenarioSpec, generate

BASELINE_START = dt.date(2025, 8, 10)
BASELINE_END = dt.date(2025, 9, 21)
ONSET = dt.date(2025, 9, 22)
OBS_END = dt.date(2025, 10, 6)


def make_hierarchy() -> AdminHierarchy:
    units = [
        AdminUnit("R1", "Region", Level.ADM1, None),
        AdminUnit("P1", "Province", Level.ADM2, "R1"),
        AdminUnit("C1", "City One", Level.ADM3, "P1"),
        AdminUnit("C2", "City Two", Level.ADM3, "P1"),
        AdminUnit("C3", "City Three", Level.ADM3, "P1"),
    ]
    for city in ("C1", "C2", "C3"):
        for b in range(1, 4):
            units.append(AdminUnit(f"{city}-B{b}", f"{city} brgy {b}", Level.ADM4, city))
    return AdminHierarchy(units)


@pytest.fixture
def hier() -> AdminHierarchy:
    return make_hierarchy()


@pytest.fixture
def calendar() -> AnalysisCalendar:
    return AnalysisCalendar(BASELINE_START, BASELINE_END, ONSET, OBS_END)


@pytest.fixture
def params() -> Params:
    return Params()


def aparri_like_spec(seed: int = 20250922) -> ScenarioSpec:
    """Typhoon-landfall shape: ~10k-user focal cohort, ~7% rate, baseline CV ~0.035.

    Day-level jitters plant genuine between-day variability in missingness and
    stray-signal noise, which the CV estimate and the dispersion factor need.
    """
    calendar = AnalysisCalendar(BASELINE_START, BASELINE_END, ONSET, OBS_END)
    return ScenarioSpec(
        cities=(
            CitySpec("APR", "Focal town", 68839, 8),
            CitySpec("TUG", "Capital", 12000, 12),
            CitySpec("LAL", "Neighbor A", 5000, 6),
            CitySpec("CAM", "Neighbor B", 4000, 5),
            CitySpec("BUG", "Neighbor C", 3000, 5),
            CitySpec("STE", "Neighbor D", 2500, 4),
        ),
        archetype_mix={
            "local_resident": 0.771,
            "intra_city_commuter": 0.104,
            "inter_city_daily": 0.121,
            "weekend_only": 0.004,
        },
        n_users=14000,
        calendar=calendar,
        displacement_fraction={"APR": 0.09},
        destination_distribution={"TUG": 0.28, "LAL": 0.25, "CAM": 0.17, "BUG": 0.17, "STE": 0.13},
        missing_daily_prob=0.15,
        return_hazard=0.03,
        observation_noise=0.02,
        vendor_emulation="daytime_modal",
        missing_day_sd=0.025,
        noise_day_sd=0.006,
        seed=seed,
    )


@pytest.fixture(scope="session")
def aparri_scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("aparri")
    return generate(aparri_like_spec(), out, include_internal=False)


@pytest.fixture(scope="session")
def aparri_run(aparri_scenario):
    config = RunConfig.from_file(aparri_scenario.run_config)
    return run_pipeline(config)
