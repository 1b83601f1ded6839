"""Scenario configuration: YAML parsing, validation, overrides, serialization.

The accepted key set is exactly the production scenario file format
(demographics, stage seeding, R, testing blocks, DCT/MCT, quarantine,
vaccination, logic toggles, run control) plus a documented set of optional
keys with defaults: network degrees, compliance sigma, bed capacity,
prices, and the declared-assumption disease tables.  Unknown keys are
rejected by name; all validation happens at load time so the engine never
raises mid-run.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .disease import (
    DEFAULT_ASYMPTOMATIC_PROBS,
    DEFAULT_BETA,
    DEFAULT_DEATH_PROBS,
    DEFAULT_DURATIONS,
    DEFAULT_HOSPITALIZATION_PROBS,
    DEFAULT_ICU_PROBS,
    DEFAULT_NETWORK_WEIGHTS,
    DEFAULT_REL_INFECTIOUSNESS,
    DEFAULT_REL_SUSCEPTIBILITY,
    DEFAULT_SEVERE_PROBS,
    NUM_STAGES,
    DiseaseParams,
)
from .interventions import QuarantinePolicy, TestingPolicy, TracingPolicy, VaccinePolicy
from .networks import NetworkParams

log = logging.getLogger(__name__)

PROB_SUM_TOL = 1e-6


class ConfigError(ValueError):
    """A scenario file failed validation; the message names the key."""


CANONICAL_STAGES = {
    0: "SUSCEPTIBLE",
    1: "ASYMPTOMATIC",
    2: "PRESYMPTOMATIC_MILD",
    3: "PRESYMPTOMATIC_SEVERE",
    4: "MILD_SYMPTOMS",
    5: "SEVERE_SYMPTOMS",
    6: "HOSPITALIZED",
    7: "CRITICAL_ICU",
    8: "DEATH",
    9: "HOSPITALIZED_RECOVERING",
    10: "RECOVERED",
}

CANONICAL_AGE_GROUPS = {
    "AGE_0_9": 0,
    "AGE_10_19": 1,
    "AGE_20_29": 2,
    "AGE_30_39": 3,
    "AGE_40_49": 4,
    "AGE_50_59": 5,
    "AGE_60_69": 6,
    "AGE_70_79": 7,
    "AGE_80": 8,
}

NUM_AGE_GROUPS = 9
NUM_OCCUPATION_CATEGORIES = 21
NUM_OCCUPATION_PROBS = 19

DURATION_KEYS = tuple(DEFAULT_DURATIONS)

# Scenario-file keys (the production format, preserved verbatim including
# historical spellings), mapped to a coarse expected type for early checks.
SCENARIO_KEYS: dict[str, type | tuple[type, ...]] = {
    "ADULT_Upper_Index": int,
    "CHILD_Upper_Index": int,
    "R": (int, float),
    "age_groups_to_ix_dict": dict,
    "age_ix_pop_dict": dict,
    "age_ix_prob_list": list,
    "app_user_agewise_probs_dict": dict,
    "debug": bool,
    "genrerated_params_file_name": str,
    "households_sizes_list": list,
    "households_sizes_prob_list": list,
    "num_agents": int,
    "num_runs": int,
    "num_stages": int,
    "num_steps": int,
    "occupation_ix_to_occupations_dict": dict,
    "occupations_sizes_prob_list": list,
    "seed": int,
    "stage_ix_pop_dict": dict,
    "stage_ix_to_stages_dict": dict,
    "type": str,
    "use_gpu": bool,
    "poc_test_on_symptoms": bool,
    "poc_test_start_date": int,
    "poc_test_true_positive": (int, float),
    "poc_test_false_positive": (int, float),
    "rtpcr_test_start_date": int,
    "test_false_positive": (int, float),
    "test_results_dates": list,
    "test_results_dates_probs": list,
    "test_true_positive": (int, float),
    "test_validity_days": int,
    "app_adoption_rate": (int, float),
    "use_app_age_dist": bool,
    "max_den_contact_days": int,
    "poc_den_inform_prob": (int, float),
    "dct_poc_comply_prob": (int, float),
    "dct_rtpcr_comply_prob": (int, float),
    "poc_mct_inform_prob": (int, float),
    "max_mct_contact_days": int,
    "mct_recall_prob": (int, float),
    "mct_reachable_prob": (int, float),
    "mct_poc_comply_prob": (int, float),
    "mct_rtpcr_comply_prob": (int, float),
    "en_quarantine_enter_prob": (int, float),
    "mct_quarantine_enter_prob": (int, float),
    "quarantine_break_prob": (int, float),
    "quarantine_days": int,
    "vaccine_daily_production": int,
    "vaccine_drop_prob_before_second_dose": (int, float),
    "vaccine_first_dose_effectivness": (int, float),
    "vaccine_first_dose_kick_in_days": int,
    "vaccine_first_dose_priority": bool,
    "vaccine_second_dose_delay": int,
    "vaccine_second_dose_effectiveness": (int, float),
    "vaccine_shelf_life": int,
    "vaccine_start_date": int,
    "use_den_logic": bool,
    "use_gps_logic": bool,
    "use_mct_logic": bool,
    "use_hybrid_logic": bool,
    "use_poc_test_on_ct_logic": bool,
    "use_rtpcr_test_on_ct_logic": bool,
    "use_rtpcr_test_logic": bool,
    "use_quarantine_logic": bool,
    "use_vaccination_logic": bool,
    "results_file_postfix": str,
}

# Optional keys, each with a default.  The disease tables are declared
# assumptions (nothing upstream pins them) and fully overridable.
OPTIONAL_KEYS: dict[str, Any] = {
    "beta": DEFAULT_BETA,
    "scale_random_interact": 1.0,
    "occupation_mean_contacts": 0.25,
    "random_mean_contacts": 3.0,
    "compliance_sigma": 0.0,
    "hospital_beds_per_100k": 55.0,
    "test_cost": 5.0,
    "poc_test_cost": 5.0,
    "vacc_price": 20.0,
    "poc_test_results_dates": [0],
    "poc_test_results_dates_probs": [1.0],
    "infectiousness_by_stage": list(DEFAULT_REL_INFECTIOUSNESS),
    "susceptibility_by_age": list(DEFAULT_REL_SUSCEPTIBILITY),
    "asymptomatic_probs_by_age": list(DEFAULT_ASYMPTOMATIC_PROBS),
    "severe_probs_by_age": list(DEFAULT_SEVERE_PROBS),
    "hospitalization_probs_by_age": list(DEFAULT_HOSPITALIZATION_PROBS),
    "icu_probs_by_age": list(DEFAULT_ICU_PROBS),
    "death_probs_by_age": list(DEFAULT_DEATH_PROBS),
    "stage_durations": {k: list(v) for k, v in DEFAULT_DURATIONS.items()},
    "network_weights": dict(DEFAULT_NETWORK_WEIGHTS),
    "calibration_index_cases": 2000,
    "calibration_max_days": 100,
}

KNOWN_KEYS = set(SCENARIO_KEYS) | set(OPTIONAL_KEYS)


@dataclass
class ScenarioConfig:
    """Fully validated scenario: demographics, disease, interventions, run control."""

    raw: dict[str, Any]

    # run control
    num_agents: int
    num_steps: int
    num_runs: int
    seed: int
    debug: bool
    results_file_postfix: str
    generated_params_file_name: str
    population_type: str

    # demographics
    age_probs: np.ndarray
    child_upper_index: int
    adult_upper_index: int
    household_sizes: np.ndarray
    household_size_probs: np.ndarray
    occupation_names: dict[str, int]
    occupation_probs: np.ndarray
    stage_seed_counts: np.ndarray

    # dynamics
    disease: DiseaseParams
    network: NetworkParams

    # interventions
    rtpcr: TestingPolicy
    poc: TestingPolicy
    use_rtpcr_testing: bool
    use_poc_testing: bool
    quarantine: QuarantinePolicy
    use_quarantine: bool
    vaccine: VaccinePolicy
    use_vaccination: bool
    tracing: TracingPolicy

    # misc
    hospital_beds_per_100k: float
    compliance_sigma: float
    calibration_index_cases: int
    calibration_max_days: int
    config_hash: str = field(default="")

    @property
    def testing_enabled(self) -> bool:
        return self.use_rtpcr_testing or self.use_poc_testing

    def active_testing_policy(self) -> TestingPolicy | None:
        """RT-PCR takes precedence when both test pathways are switched on."""
        if self.use_rtpcr_testing:
            return self.rtpcr
        if self.use_poc_testing:
            return self.poc
        return None

    @property
    def hospital_beds(self) -> float:
        return self.hospital_beds_per_100k * self.num_agents / 1e5


def _fail(key: str, message: str) -> None:
    raise ConfigError(f"{key}: {message}")


def _get(raw: dict, key: str) -> Any:
    if key not in raw:
        _fail(key, "required key missing")
    value = raw[key]
    expected = SCENARIO_KEYS[key]
    if expected is int and isinstance(value, bool):
        _fail(key, "expected integer, got boolean")
    if not isinstance(value, expected):
        _fail(key, f"expected {expected}, got {type(value).__name__}")
    return value


def _opt(raw: dict, key: str) -> Any:
    return raw.get(key, OPTIONAL_KEYS[key])


def _prob(key: str, value: Any) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        _fail(key, f"probability must lie in [0, 1], got {value}")
    return value


def _prob_list(key: str, values: Any, length: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        _fail(key, "expected a flat list of probabilities")
    if length is not None and len(arr) != length:
        _fail(key, f"expected {length} entries, got {len(arr)}")
    if (arr < 0).any() or (arr > 1).any():
        _fail(key, "entries must lie in [0, 1]")
    if abs(arr.sum() - 1.0) > PROB_SUM_TOL:
        _fail(key, f"entries must sum to 1 (got {arr.sum():.8f})")
    return arr


def _nonneg(key: str, value: Any) -> float:
    value = float(value)
    if value < 0:
        _fail(key, f"must be non-negative, got {value}")
    return value


def _check_exact_dict(key: str, value: dict, canonical: dict) -> None:
    normalized = {k: v for k, v in value.items()}
    if normalized != canonical:
        _fail(key, f"must match the canonical mapping {canonical}")


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a YAML scenario document."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must be a YAML mapping")
    return build_config(raw)


def load_config(path) -> ScenarioConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def build_config(raw: dict[str, Any]) -> ScenarioConfig:
    for key in raw:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{key}: unknown configuration key")

    num_agents = _get(raw, "num_agents")
    if num_agents < 1:
        _fail("num_agents", "must be at least 1")
    num_steps = _get(raw, "num_steps")
    if num_steps < 0:
        _fail("num_steps", "must be non-negative")
    num_runs = _get(raw, "num_runs")
    if num_runs < 1:
        _fail("num_runs", "must be at least 1")
    seed = _get(raw, "seed")
    if seed < 0:
        _fail("seed", "must be non-negative")

    if _get(raw, "num_stages") != NUM_STAGES:
        _fail("num_stages", f"this model has exactly {NUM_STAGES} stages")
    _check_exact_dict(
        "stage_ix_to_stages_dict", _get(raw, "stage_ix_to_stages_dict"), CANONICAL_STAGES
    )
    _check_exact_dict(
        "age_groups_to_ix_dict", _get(raw, "age_groups_to_ix_dict"), CANONICAL_AGE_GROUPS
    )

    population_type = _get(raw, "type")
    if population_type != "generated":
        _fail("type", f"only 'generated' populations are supported, got {population_type!r}")

    if _get(raw, "use_gpu"):
        warnings.warn("use_gpu: accepted and ignored (CPU implementation)", stacklevel=2)

    # -- demographics -------------------------------------------------------
    if "age_ix_prob_list" in raw:
        age_probs = _prob_list("age_ix_prob_list", raw["age_ix_prob_list"], NUM_AGE_GROUPS)
    else:
        pops = _get(raw, "age_ix_pop_dict")
        counts = np.zeros(NUM_AGE_GROUPS)
        for k, v in pops.items():
            if int(k) not in range(NUM_AGE_GROUPS):
                _fail("age_ix_pop_dict", f"age band index {k} out of range")
            counts[int(k)] = float(v)
        if counts.sum() <= 0:
            _fail("age_ix_pop_dict", "population counts must be positive")
        age_probs = counts / counts.sum()

    child_upper = _get(raw, "CHILD_Upper_Index")
    adult_upper = _get(raw, "ADULT_Upper_Index")
    if not 0 <= child_upper < adult_upper < NUM_AGE_GROUPS:
        _fail("CHILD_Upper_Index", "need 0 <= CHILD_Upper_Index < ADULT_Upper_Index < 9")

    sizes = np.asarray(_get(raw, "households_sizes_list"), dtype=np.int64)
    if len(sizes) == 0 or (sizes < 1).any() or (sizes > 6).any():
        _fail("households_sizes_list", "household sizes must lie in {1..6}")
    size_probs = _prob_list(
        "households_sizes_prob_list", _get(raw, "households_sizes_prob_list"), len(sizes)
    )

    occ_names = _get(raw, "occupation_ix_to_occupations_dict")
    occ_values = sorted(occ_names.values())
    if occ_values != list(range(NUM_OCCUPATION_CATEGORIES)):
        _fail(
            "occupation_ix_to_occupations_dict",
            f"must map {NUM_OCCUPATION_CATEGORIES} names onto indices 0..20 exactly",
        )
    if occ_names.get("CHILD") != 20 or occ_names.get("ELDERLY") != 19:
        _fail("occupation_ix_to_occupations_dict", "CHILD must be 20 and ELDERLY 19")
    occ_probs = _prob_list(
        "occupations_sizes_prob_list",
        _get(raw, "occupations_sizes_prob_list"),
        NUM_OCCUPATION_PROBS,
    )

    stage_seed = np.zeros(NUM_STAGES, dtype=np.int64)
    for k, v in _get(raw, "stage_ix_pop_dict").items():
        ik = int(k)
        if ik not in range(NUM_STAGES):
            _fail("stage_ix_pop_dict", f"stage index {k} out of range 0..10")
        if int(v) < 0:
            _fail("stage_ix_pop_dict", f"count for stage {k} must be non-negative")
        stage_seed[ik] = int(v)
    if stage_seed.sum() != num_agents:
        _fail(
            "stage_ix_pop_dict",
            f"stage counts sum to {stage_seed.sum()} but num_agents is {num_agents}",
        )

    # -- disease ------------------------------------------------------------
    target_r = _nonneg("R", _get(raw, "R"))
    beta = _nonneg("beta", _opt(raw, "beta"))

    def table(key: str, length: int, probs: bool) -> np.ndarray:
        values = _opt(raw, key)
        if probs:
            arr = np.asarray(values, dtype=np.float64)
            if len(arr) != length:
                _fail(key, f"expected {length} entries, got {len(arr)}")
            if (arr < 0).any() or (arr > 1).any():
                _fail(key, "entries must lie in [0, 1]")
            return arr
        arr = np.asarray(values, dtype=np.float64)
        if len(arr) != length:
            _fail(key, f"expected {length} entries, got {len(arr)}")
        if (arr < 0).any():
            _fail(key, "entries must be non-negative")
        return arr

    rel_inf = table("infectiousness_by_stage", NUM_STAGES, probs=False)
    rel_susc = table("susceptibility_by_age", NUM_AGE_GROUPS, probs=False)
    p_asym = table("asymptomatic_probs_by_age", NUM_AGE_GROUPS, probs=True)
    p_severe = table("severe_probs_by_age", NUM_AGE_GROUPS, probs=True)
    if ((p_asym + p_severe) > 1.0 + PROB_SUM_TOL).any():
        _fail(
            "severe_probs_by_age",
            "asymptomatic + severe probability exceeds 1 for some age band",
        )
    p_hosp = table("hospitalization_probs_by_age", NUM_AGE_GROUPS, probs=True)
    p_icu = table("icu_probs_by_age", NUM_AGE_GROUPS, probs=True)
    p_death = table("death_probs_by_age", NUM_AGE_GROUPS, probs=True)

    durations_raw = _opt(raw, "stage_durations")
    if not isinstance(durations_raw, dict):
        _fail("stage_durations", "expected a mapping of stage name -> [mean, sd]")
    durations = dict(DEFAULT_DURATIONS)
    for name, pair in durations_raw.items():
        if name not in DURATION_KEYS:
            _fail("stage_durations", f"unknown stage name {name!r}; known: {DURATION_KEYS}")
        mean, sd = float(pair[0]), float(pair[1])
        if mean <= 0 or sd <= 0:
            _fail("stage_durations", f"{name}: mean and sd must be positive")
        durations[name] = (mean, sd)

    weights_raw = _opt(raw, "network_weights")
    if not isinstance(weights_raw, dict) or set(weights_raw) - set(DEFAULT_NETWORK_WEIGHTS):
        _fail("network_weights", "expected mapping with keys household/occupation/random")
    weights = dict(DEFAULT_NETWORK_WEIGHTS)
    weights.update({k: _nonneg(f"network_weights.{k}", v) for k, v in weights_raw.items()})

    disease = DiseaseParams(
        beta=beta,
        target_r=target_r,
        rel_infectiousness=rel_inf,
        rel_susceptibility=rel_susc,
        asymptomatic_probs=p_asym,
        severe_probs=p_severe,
        hospitalization_probs=p_hosp,
        icu_probs=p_icu,
        death_probs=p_death,
        durations=durations,
        network_weights=np.array(
            [weights["household"], weights["occupation"], weights["random"]]
        ),
    )

    network = NetworkParams(
        occupation_mean_contacts=_nonneg(
            "occupation_mean_contacts", _opt(raw, "occupation_mean_contacts")
        ),
        random_mean_contacts=_nonneg(
            "random_mean_contacts", _opt(raw, "random_mean_contacts")
        ),
        scale_random_interact=_nonneg(
            "scale_random_interact", _opt(raw, "scale_random_interact")
        ),
    )

    # -- testing ------------------------------------------------------------
    def testing_policy(kind: str) -> TestingPolicy:
        if kind == "rtpcr":
            dates_key, probs_key = "test_results_dates", "test_results_dates_probs"
            tp_key, fp_key = "test_true_positive", "test_false_positive"
            start_key, cost_key = "rtpcr_test_start_date", "test_cost"
            dates = _get(raw, dates_key)
            probs = _get(raw, probs_key)
            tp, fp = _get(raw, tp_key), _get(raw, fp_key)
            start = _get(raw, start_key)
        else:
            dates_key, probs_key = "poc_test_results_dates", "poc_test_results_dates_probs"
            tp_key, fp_key = "poc_test_true_positive", "poc_test_false_positive"
            start_key, cost_key = "poc_test_start_date", "poc_test_cost"
            dates = _opt(raw, dates_key)
            probs = _opt(raw, probs_key)
            tp, fp = _get(raw, tp_key), _get(raw, fp_key)
            start = _get(raw, start_key)
        dates = [int(d) for d in dates]
        if any(d < 0 for d in dates):
            _fail(dates_key, "result delays must be non-negative")
        probs_arr = _prob_list(probs_key, probs, len(dates))
        validity = _get(raw, "test_validity_days")
        if validity < -1:
            _fail("test_validity_days", "must be -1 (indefinite) or >= 0")
        if start < 0:
            _fail(start_key, "must be non-negative")
        return TestingPolicy(
            name=kind,
            start_date=start,
            true_positive=_prob(tp_key, tp),
            false_positive=_prob(fp_key, fp),
            results_dates=tuple(dates),
            results_dates_probs=tuple(probs_arr.tolist()),
            validity_days=validity,
            cost=_nonneg(cost_key, _opt(raw, cost_key)),
        )

    rtpcr = testing_policy("rtpcr")
    poc = testing_policy("poc")
    use_rtpcr = _get(raw, "use_rtpcr_test_logic")
    use_poc = _get(raw, "poc_test_on_symptoms")

    # -- quarantine ---------------------------------------------------------
    quarantine_days = _get(raw, "quarantine_days")
    if quarantine_days < 0:
        _fail("quarantine_days", "must be non-negative")
    quarantine = QuarantinePolicy(
        enter_prob=_prob("en_quarantine_enter_prob", _get(raw, "en_quarantine_enter_prob")),
        break_prob=_prob("quarantine_break_prob", _get(raw, "quarantine_break_prob")),
        days=quarantine_days,
    )
    use_quarantine = _get(raw, "use_quarantine_logic")

    # -- vaccination --------------------------------------------------------
    for key in (
        "vaccine_daily_production",
        "vaccine_first_dose_kick_in_days",
        "vaccine_second_dose_delay",
        "vaccine_shelf_life",
        "vaccine_start_date",
    ):
        if _get(raw, key) < 0:
            _fail(key, "must be non-negative")
    vaccine = VaccinePolicy(
        start_date=raw["vaccine_start_date"],
        daily_prod=raw["vaccine_daily_production"],
        shelf_life=raw["vaccine_shelf_life"],
        dose_delay=raw["vaccine_first_dose_kick_in_days"],
        dose1_priority=_get(raw, "vaccine_first_dose_priority"),
        dose1_eff=_prob(
            "vaccine_first_dose_effectivness", _get(raw, "vaccine_first_dose_effectivness")
        ),
        dose2_gap=raw["vaccine_second_dose_delay"],
        dose2_eff=_prob(
            "vaccine_second_dose_effectiveness",
            _get(raw, "vaccine_second_dose_effectiveness"),
        ),
        dose2_drop=_prob(
            "vaccine_drop_prob_before_second_dose",
            _get(raw, "vaccine_drop_prob_before_second_dose"),
        ),
        price=_nonneg("vacc_price", _opt(raw, "vacc_price")),
    )
    use_vaccination = _get(raw, "use_vaccination_logic")

    # -- tracing ------------------------------------------------------------
    use_den = _get(raw, "use_den_logic")
    use_mct = _get(raw, "use_mct_logic")
    if use_den and use_mct:
        mode = "hybrid"
    elif use_den:
        mode = "dct"
    elif use_mct:
        mode = "mct"
    else:
        mode = "off"

    if _get(raw, "use_gps_logic"):
        warnings.warn("use_gps_logic: GPS tracing is permanently off; ignored", stacklevel=2)
    for key in ("use_poc_test_on_ct_logic", "use_rtpcr_test_on_ct_logic"):
        if _get(raw, key):
            warnings.warn(f"{key}: test-on-trace pathway not implemented; ignored", stacklevel=2)

    app_age = _get(raw, "app_user_agewise_probs_dict")
    app_age_probs = np.zeros(NUM_AGE_GROUPS)
    for name, ix in CANONICAL_AGE_GROUPS.items():
        if name not in app_age:
            _fail("app_user_agewise_probs_dict", f"missing age band {name}")
        app_age_probs[ix] = _prob(f"app_user_agewise_probs_dict.{name}", app_age[name])

    den_window = _get(raw, "max_den_contact_days")
    mct_window = _get(raw, "max_mct_contact_days")
    if den_window < 1 or mct_window < 1:
        _fail("max_den_contact_days", "contact windows must be at least 1 day")

    active_test = "rtpcr" if use_rtpcr or not use_poc else "poc"
    dct_comply = (
        _prob("dct_rtpcr_comply_prob", _get(raw, "dct_rtpcr_comply_prob"))
        if active_test == "rtpcr"
        else _prob("dct_poc_comply_prob", _get(raw, "dct_poc_comply_prob"))
    )
    mct_comply = (
        _prob("mct_rtpcr_comply_prob", _get(raw, "mct_rtpcr_comply_prob"))
        if active_test == "rtpcr"
        else _prob("mct_poc_comply_prob", _get(raw, "mct_poc_comply_prob"))
    )

    tracing = TracingPolicy(
        mode=mode,
        app_adoption_rate=_prob("app_adoption_rate", _get(raw, "app_adoption_rate")),
        use_age_dist=_get(raw, "use_app_age_dist"),
        app_age_probs=app_age_probs,
        den_window=den_window,
        mct_window=mct_window,
        den_inform_prob=_prob("poc_den_inform_prob", _get(raw, "poc_den_inform_prob")),
        mct_inform_prob=_prob("poc_mct_inform_prob", _get(raw, "poc_mct_inform_prob")),
        mct_recall_prob=_prob("mct_recall_prob", _get(raw, "mct_recall_prob")),
        mct_reachable_prob=_prob("mct_reachable_prob", _get(raw, "mct_reachable_prob")),
        dct_sq_comply_prob=dct_comply,
        mct_sq_comply_prob=mct_comply,
        mct_quarantine_enter_prob=_prob(
            "mct_quarantine_enter_prob", _get(raw, "mct_quarantine_enter_prob")
        ),
        strict_handoff=_get(raw, "use_hybrid_logic"),
    )

    calibration_index_cases = int(_opt(raw, "calibration_index_cases"))
    if calibration_index_cases < 200:
        _fail("calibration_index_cases", "need at least 200 index cases")
    calibration_max_days = int(_opt(raw, "calibration_max_days"))
    if calibration_max_days < 1:
        _fail("calibration_max_days", "must be positive")

    resolved = resolved_raw_dict(raw)
    config = ScenarioConfig(
        raw=resolved,
        num_agents=num_agents,
        num_steps=num_steps,
        num_runs=num_runs,
        seed=seed,
        debug=_get(raw, "debug"),
        results_file_postfix=_get(raw, "results_file_postfix"),
        generated_params_file_name=_get(raw, "genrerated_params_file_name"),
        population_type=population_type,
        age_probs=age_probs,
        child_upper_index=child_upper,
        adult_upper_index=adult_upper,
        household_sizes=sizes,
        household_size_probs=size_probs,
        occupation_names=dict(occ_names),
        occupation_probs=occ_probs,
        stage_seed_counts=stage_seed,
        disease=disease,
        network=network,
        rtpcr=rtpcr,
        poc=poc,
        use_rtpcr_testing=use_rtpcr,
        use_poc_testing=use_poc,
        quarantine=quarantine,
        use_quarantine=use_quarantine,
        vaccine=vaccine,
        use_vaccination=use_vaccination,
        tracing=tracing,
        hospital_beds_per_100k=_nonneg(
            "hospital_beds_per_100k", _opt(raw, "hospital_beds_per_100k")
        ),
        compliance_sigma=_nonneg("compliance_sigma", _opt(raw, "compliance_sigma")),
        calibration_index_cases=calibration_index_cases,
        calibration_max_days=calibration_max_days,
    )
    config.config_hash = hash_raw(resolved)
    return config


def resolved_raw_dict(raw: dict[str, Any]) -> dict[str, Any]:
    """The scenario with every optional key filled in with its default."""
    resolved = {k: OPTIONAL_KEYS[k] for k in OPTIONAL_KEYS}
    resolved.update(raw)
    return copy.deepcopy(resolved)


def hash_raw(raw: dict[str, Any]) -> str:
    canonical = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def serialize_config(config: ScenarioConfig) -> str:
    """YAML text whose parse reproduces this configuration exactly."""
    return yaml.safe_dump(config.raw, sort_keys=True, default_flow_style=False)


def apply_overrides(raw: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Apply dot-path overrides (e.g. `network_weights.household=1.5`).

    Values given as strings are YAML-parsed, so `--set seed=7` yields an
    integer and `--set test_results_dates=[1,2]` a list.  Optional keys are
    resolved to their defaults first so nested paths always exist.
    """
    out = resolved_raw_dict(raw)
    for path, value in overrides.items():
        parts = path.split(".")
        if parts[0] not in KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown configuration key")
        if isinstance(value, str):
            value = yaml.safe_load(value)
        node = out
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"{path}: path does not resolve to a mapping")
            node = node[part]
        node[parts[-1]] = value
    return out
