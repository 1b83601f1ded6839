"""Infection dynamics and semi-Markov disease progression.

Agents move through eleven stages::

    0 SUSCEPTIBLE
    1 ASYMPTOMATIC            -> RECOVERED
    2 PRESYMPTOMATIC_MILD     -> MILD_SYMPTOMS
    3 PRESYMPTOMATIC_SEVERE   -> SEVERE_SYMPTOMS
    4 MILD_SYMPTOMS           -> RECOVERED
    5 SEVERE_SYMPTOMS         -> HOSPITALIZED | RECOVERED
    6 HOSPITALIZED            -> CRITICAL_ICU | HOSPITALIZED_RECOVERING
    7 CRITICAL_ICU            -> DEATH | HOSPITALIZED_RECOVERING
    8 DEATH                   (absorbing)
    9 HOSPITALIZED_RECOVERING -> RECOVERED
    10 RECOVERED              (absorbing)

Infection is Markovian: each susceptible agent accumulates a hazard
lambda over all of today's contacts and becomes infected with probability
1 - exp(-lambda).  Stage holding times are semi-Markov, sampled from
per-transition gamma distributions and rounded to whole days (minimum 1).
Vaccine-conferred immunity is a separate boolean flag that gates
susceptibility to zero; it is not a stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING

import numpy as np

from .networks import HOUSEHOLD, OCCUPATION, RANDOM, EdgeList
from .rng import CALIBRATION_RUN, substream

if TYPE_CHECKING:
    from .config import ScenarioConfig
    from .popgen import Population

log = logging.getLogger(__name__)


class Stage(IntEnum):
    SUSCEPTIBLE = 0
    ASYMPTOMATIC = 1
    PRESYMPTOMATIC_MILD = 2
    PRESYMPTOMATIC_SEVERE = 3
    MILD_SYMPTOMS = 4
    SEVERE_SYMPTOMS = 5
    HOSPITALIZED = 6
    CRITICAL_ICU = 7
    DEATH = 8
    HOSPITALIZED_RECOVERING = 9
    RECOVERED = 10


NUM_STAGES = 11

# Stages that shed infection (given a nonzero per-stage multiplier).
INFECTIOUS_STAGES = (
    Stage.ASYMPTOMATIC,
    Stage.PRESYMPTOMATIC_MILD,
    Stage.PRESYMPTOMATIC_SEVERE,
    Stage.MILD_SYMPTOMS,
    Stage.SEVERE_SYMPTOMS,
)

# Stages removed from every interaction layer (isolated in care or dead).
ISOLATED_STAGES = (
    Stage.HOSPITALIZED,
    Stage.CRITICAL_ICU,
    Stage.DEATH,
    Stage.HOSPITALIZED_RECOVERING,
)

SYMPTOMATIC_STAGES = (Stage.MILD_SYMPTOMS, Stage.SEVERE_SYMPTOMS)
ABSORBING_STAGES = (Stage.DEATH, Stage.RECOVERED)

# Stage entered -> key into DiseaseParams.durations.
DURATION_KEY_BY_STAGE = {
    Stage.ASYMPTOMATIC: "asymptomatic",
    Stage.PRESYMPTOMATIC_MILD: "presymptomatic",
    Stage.PRESYMPTOMATIC_SEVERE: "presymptomatic",
    Stage.MILD_SYMPTOMS: "mild",
    Stage.SEVERE_SYMPTOMS: "severe",
    Stage.HOSPITALIZED: "hospital",
    Stage.CRITICAL_ICU: "icu",
    Stage.HOSPITALIZED_RECOVERING: "hospital_recovering",
}

# ---------------------------------------------------------------------------
# Default parameter tables.
#
# The upstream disease-model literature this simulator follows does not pin
# these values, so they are declared assumptions: every table below is
# config-overridable and the shipped numbers were tuned so that a run
# calibrated to R = 5.02 reproduces the reference unmitigated epidemic
# (non-intervention cumulative infections near 81% with the peak inside the
# first 100 days).
# ---------------------------------------------------------------------------

# Gamma (mean, sd) holding times in days, keyed by the stage being entered.
# The presymptomatic stage spans the whole infection-to-symptoms window; its
# infectiousness multiplier below is scaled down so the transmission it
# contributes matches a short fully-infectious window near symptom onset.
DEFAULT_DURATIONS: dict[str, tuple[float, float]] = {
    "asymptomatic": (16.0, 5.0),
    "presymptomatic": (7.0, 2.5),
    "mild": (12.0, 4.0),
    "severe": (8.0, 3.0),
    "hospital": (8.0, 4.0),
    "icu": (10.0, 5.0),
    "hospital_recovering": (6.0, 3.0),
}

DEFAULT_REL_INFECTIOUSNESS = (
    0.0,   # SUSCEPTIBLE
    0.33,  # ASYMPTOMATIC
    0.45,  # PRESYMPTOMATIC_MILD
    0.45,  # PRESYMPTOMATIC_SEVERE
    1.0,   # MILD_SYMPTOMS
    1.0,   # SEVERE_SYMPTOMS
    0.0,   # HOSPITALIZED (isolated)
    0.0,   # CRITICAL_ICU
    0.0,   # DEATH
    0.0,   # HOSPITALIZED_RECOVERING
    0.0,   # RECOVERED
)

# Relative susceptibility by decade age band (0-9 ... 80+); the steep
# child/teen gradient is what keeps the unmitigated attack below ~90%
# once the transmission hazard is calibrated to the target R.
DEFAULT_REL_SUSCEPTIBILITY = (0.05, 0.15, 1.0, 1.0, 1.0, 1.0, 1.15, 1.30, 1.30)

# Branching at infection: P(asymptomatic) and P(presymptomatic-severe) by age
# band; the mild branch takes the remainder.
DEFAULT_ASYMPTOMATIC_PROBS = (0.45, 0.40, 0.35, 0.30, 0.27, 0.24, 0.21, 0.18, 0.15)
DEFAULT_SEVERE_PROBS = (0.001, 0.002, 0.006, 0.012, 0.022, 0.040, 0.080, 0.130, 0.200)

# Escalation branches by age band.
DEFAULT_HOSPITALIZATION_PROBS = (0.40, 0.40, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80)
DEFAULT_ICU_PROBS = (0.10, 0.10, 0.12, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40)
DEFAULT_DEATH_PROBS = (0.20, 0.20, 0.25, 0.30, 0.35, 0.40, 0.50, 0.60, 0.70)

# Per-layer transmission weight, indexed by layer code.
DEFAULT_NETWORK_WEIGHTS = {"household": 1.65, "occupation": 1.0, "random": 2.0}

# Baseline per-contact-per-day hazard shipped with the package; produced by
# calibrate_beta() against R = 5.02 under the default tables above.
DEFAULT_BETA = 0.06841459611677024


class CalibrationError(RuntimeError):
    """Raised when the hazard search cannot bracket the target R."""


@dataclass
class DiseaseParams:
    """All disease-dynamics inputs, fully resolved to arrays."""

    beta: float = DEFAULT_BETA
    target_r: float = 5.02
    rel_infectiousness: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_REL_INFECTIOUSNESS, dtype=np.float64)
    )
    rel_susceptibility: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_REL_SUSCEPTIBILITY, dtype=np.float64)
    )
    asymptomatic_probs: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_ASYMPTOMATIC_PROBS, dtype=np.float64)
    )
    severe_probs: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_SEVERE_PROBS, dtype=np.float64)
    )
    hospitalization_probs: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_HOSPITALIZATION_PROBS, dtype=np.float64)
    )
    icu_probs: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_ICU_PROBS, dtype=np.float64)
    )
    death_probs: np.ndarray = field(
        default_factory=lambda: np.asarray(DEFAULT_DEATH_PROBS, dtype=np.float64)
    )
    durations: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_DURATIONS)
    )
    network_weights: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                DEFAULT_NETWORK_WEIGHTS["household"],
                DEFAULT_NETWORK_WEIGHTS["occupation"],
                DEFAULT_NETWORK_WEIGHTS["random"],
            ]
        )
    )


@dataclass
class AgentArrays:
    """Column-oriented per-agent state.

    One numpy column per attribute, sized N.  The engine mutates these in
    barrier-ordered phases; nothing here owns RNG state.
    """

    n: int
    age_group: np.ndarray        # int8, 0..8
    occupation: np.ndarray       # int8, 0..20
    household_id: np.ndarray     # int32
    has_app: np.ndarray          # bool
    stage: np.ndarray            # int8
    stage_entry_step: np.ndarray  # int32
    stage_days_left: np.ndarray  # int32; 0 in absorbing/susceptible stages
    infectiousness_scale: np.ndarray  # float32; 0 after a completed quarantine
    immunized: np.ndarray        # bool
    quarantined: np.ndarray      # bool
    quarantine_days_left: np.ndarray  # int32
    quarantine_entry_step: np.ndarray  # int32; exit checks start the next day
    known_positive: np.ndarray   # bool; set on positive delivery, cleared on recovery
    has_result: np.ndarray       # bool; a delivered test result exists
    result_positive: np.ndarray  # bool
    result_valid_until: np.ndarray  # int32; inclusive step, INT32_MAX = indefinite
    dose_count: np.ndarray       # int8
    dose1_step: np.ndarray       # int32, -1 = never
    dose2_dropout: np.ndarray    # bool, decided once at dose 1
    compliance_offset: np.ndarray  # float32, added to compliance probabilities

    @classmethod
    def allocate(cls, pop: "Population", compliance_sigma: float, rng: np.random.Generator) -> "AgentArrays":
        n = pop.n
        if compliance_sigma > 0:
            offsets = rng.normal(0.0, compliance_sigma, n).astype(np.float32)
        else:
            offsets = np.zeros(n, dtype=np.float32)
        return cls(
            n=n,
            age_group=pop.age_group.copy(),
            occupation=pop.occupation.copy(),
            household_id=pop.household_id.copy(),
            has_app=pop.has_app.copy(),
            stage=np.zeros(n, dtype=np.int8),
            stage_entry_step=np.zeros(n, dtype=np.int32),
            stage_days_left=np.zeros(n, dtype=np.int32),
            infectiousness_scale=np.ones(n, dtype=np.float32),
            immunized=np.zeros(n, dtype=bool),
            quarantined=np.zeros(n, dtype=bool),
            quarantine_days_left=np.zeros(n, dtype=np.int32),
            quarantine_entry_step=np.full(n, -1, dtype=np.int32),
            known_positive=np.zeros(n, dtype=bool),
            has_result=np.zeros(n, dtype=bool),
            result_positive=np.zeros(n, dtype=bool),
            result_valid_until=np.zeros(n, dtype=np.int32),
            dose_count=np.zeros(n, dtype=np.int8),
            dose1_step=np.full(n, -1, dtype=np.int32),
            dose2_dropout=np.zeros(n, dtype=bool),
            compliance_offset=offsets,
        )

    def eligibility_mask(self) -> np.ndarray:
        """Agents allowed to appear in interaction layers today."""
        isolated = np.isin(self.stage, np.asarray(ISOLATED_STAGES, dtype=np.int8))
        return ~(isolated | self.quarantined)

    def infected_mask(self) -> np.ndarray:
        """Agents currently carrying the infection (any non-terminal stage)."""
        return (self.stage != Stage.SUSCEPTIBLE) & (self.stage != Stage.RECOVERED) & (
            self.stage != Stage.DEATH
        )


def compliance_probs(agents: AgentArrays, idx: np.ndarray, base: float) -> np.ndarray:
    """Per-agent compliance probability: clip(base + offset, 0, 1)."""
    return np.clip(base + agents.compliance_offset[idx], 0.0, 1.0)


def sample_durations(
    stage_codes: np.ndarray, params: DiseaseParams, rng: np.random.Generator
) -> np.ndarray:
    """Draw whole-day holding times for agents entering the given stages."""
    out = np.zeros(len(stage_codes), dtype=np.int32)
    for code in np.unique(stage_codes):
        key = DURATION_KEY_BY_STAGE.get(Stage(code))
        if key is None:  # absorbing or susceptible
            continue
        mean, sd = params.durations[key]
        sel = stage_codes == code
        k = (mean / sd) ** 2
        theta = sd**2 / mean
        draws = rng.gamma(k, theta, int(sel.sum()))
        out[sel] = np.maximum(1, np.rint(draws)).astype(np.int32)
    return out


def enter_stage(
    agents: AgentArrays,
    idx: np.ndarray,
    stage_codes: np.ndarray,
    step: int,
    params: DiseaseParams,
    rng: np.random.Generator,
) -> None:
    """Move agents `idx` into `stage_codes`, drawing new holding times."""
    agents.stage[idx] = stage_codes.astype(np.int8)
    agents.stage_entry_step[idx] = step
    agents.stage_days_left[idx] = sample_durations(stage_codes, params, rng)


def accumulate_hazard(
    agents: AgentArrays, edges: EdgeList, params: DiseaseParams
) -> np.ndarray:
    """Total infection hazard per agent from one day of interactions.

    lambda_i = sum over edges (i, j) of
        beta * rel_infectiousness[stage_j] * infectiousness_scale_j
             * rel_susceptibility[age_i] * network_weight[layer]

    Hazards are additive across edges and across calls, so splitting a
    day's edges over several calls and summing the results is exact.
    """
    lam = np.zeros(agents.n, dtype=np.float64)
    if len(edges.src) == 0:
        return lam
    potency = (
        params.beta
        * params.rel_infectiousness[agents.stage]
        * agents.infectiousness_scale.astype(np.float64)
    )
    hot = potency > 0.0
    touched = hot[edges.src] | hot[edges.dst]
    if not touched.any():
        return lam
    e_src, e_dst = edges.src[touched], edges.dst[touched]
    weight = params.network_weights[edges.layer[touched]]
    # Each undirected edge pushes hazard both ways.
    for src, dst in ((e_src, e_dst), (e_dst, e_src)):
        h = potency[src] * weight
        live = h > 0.0
        if live.any():
            lam += np.bincount(dst[live], weights=h[live], minlength=agents.n)
    lam *= params.rel_susceptibility[agents.age_group]
    return lam


def branch_initial_stage(
    age_groups: np.ndarray, params: DiseaseParams, rng: np.random.Generator
) -> np.ndarray:
    """Assign ASYMPTOMATIC / PRESYMPTOMATIC_{MILD,SEVERE} at infection."""
    p_asym = params.asymptomatic_probs[age_groups]
    p_severe = params.severe_probs[age_groups]
    u = rng.random(len(age_groups))
    codes = np.full(len(age_groups), Stage.PRESYMPTOMATIC_MILD, dtype=np.int8)
    codes[u < p_asym] = Stage.ASYMPTOMATIC
    codes[u >= 1.0 - p_severe] = Stage.PRESYMPTOMATIC_SEVERE
    return codes


def infection_step(
    agents: AgentArrays,
    edges: EdgeList,
    params: DiseaseParams,
    step: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run one day of transmission; returns newly infected agent indices."""
    lam = accumulate_hazard(agents, edges, params)
    susceptible = (agents.stage == Stage.SUSCEPTIBLE) & ~agents.immunized
    at_risk = susceptible & (lam > 0.0)
    idx = np.flatnonzero(at_risk)
    if len(idx) == 0:
        return idx
    p = -np.expm1(-lam[idx])
    hit = rng.random(len(idx)) < p
    new_idx = idx[hit]
    if len(new_idx):
        codes = branch_initial_stage(agents.age_group[new_idx], params, rng)
        enter_stage(agents, new_idx, codes, step, params, rng)
    return new_idx


def _branch(
    rng: np.random.Generator, probs: np.ndarray, idx: np.ndarray, age: np.ndarray
) -> np.ndarray:
    return rng.random(len(idx)) < probs[age]


def progression_step(
    agents: AgentArrays, params: DiseaseParams, step: int, rng: np.random.Generator
) -> None:
    """Advance the semi-Markov stage machine by one day.

    Agents whose holding time elapses transition along the stage graph;
    everyone else just counts down.  DEATH and RECOVERED never change.
    """
    transient = (
        (agents.stage != Stage.SUSCEPTIBLE)
        & (agents.stage != Stage.DEATH)
        & (agents.stage != Stage.RECOVERED)
    )
    t_idx = np.flatnonzero(transient)
    if len(t_idx) == 0:
        return
    agents.stage_days_left[t_idx] -= 1
    due = t_idx[agents.stage_days_left[t_idx] <= 0]
    if len(due) == 0:
        return

    stage = agents.stage[due]
    age = agents.age_group[due]
    nxt = np.empty(len(due), dtype=np.int8)

    for code, target in (
        (Stage.ASYMPTOMATIC, Stage.RECOVERED),
        (Stage.PRESYMPTOMATIC_MILD, Stage.MILD_SYMPTOMS),
        (Stage.PRESYMPTOMATIC_SEVERE, Stage.SEVERE_SYMPTOMS),
        (Stage.MILD_SYMPTOMS, Stage.RECOVERED),
        (Stage.HOSPITALIZED_RECOVERING, Stage.RECOVERED),
    ):
        nxt[stage == code] = target

    sel = stage == Stage.SEVERE_SYMPTOMS
    if sel.any():
        up = _branch(rng, params.hospitalization_probs, due[sel], age[sel])
        nxt[sel] = np.where(up, Stage.HOSPITALIZED, Stage.RECOVERED)

    sel = stage == Stage.HOSPITALIZED
    if sel.any():
        up = _branch(rng, params.icu_probs, due[sel], age[sel])
        nxt[sel] = np.where(up, Stage.CRITICAL_ICU, Stage.HOSPITALIZED_RECOVERING)

    sel = stage == Stage.CRITICAL_ICU
    if sel.any():
        up = _branch(rng, params.death_probs, due[sel], age[sel])
        nxt[sel] = np.where(up, Stage.DEATH, Stage.HOSPITALIZED_RECOVERING)

    enter_stage(agents, due, nxt, step, params, rng)


def seed_initial_infections(
    agents: AgentArrays, stage_counts: np.ndarray, params: DiseaseParams, rng: np.random.Generator
) -> None:
    """Place exactly the configured number of agents into each stage.

    Agents are chosen uniformly at random; non-susceptible seeds get fresh
    holding times for their stage.
    """
    counts = np.asarray(stage_counts, dtype=np.int64)
    if counts.sum() != agents.n:
        raise ValueError(
            f"stage seeding must sum to num_agents: got {counts.sum()} for n={agents.n}"
        )
    order = rng.permutation(agents.n)
    pos = counts[Stage.SUSCEPTIBLE]  # susceptible block needs no initialization
    for code in range(NUM_STAGES):
        if code == Stage.SUSCEPTIBLE or counts[code] == 0:
            continue
        chosen = order[pos : pos + counts[code]]
        pos += counts[code]
        enter_stage(agents, chosen, np.full(len(chosen), code, dtype=np.int8), 0, params, rng)


# ---------------------------------------------------------------------------
# Reproduction-number measurement and hazard calibration.
# ---------------------------------------------------------------------------


def _collect_pair_hazard_units(
    config: "ScenarioConfig", n_index: int, seed_key: tuple[int, ...]
) -> tuple[np.ndarray, int]:
    """Accumulated hazard units (beta excluded) per (index case, contact) pair.

    Seeds `n_index` index cases in an otherwise susceptible population with
    every intervention disabled, lets them progress naturally, and sums the
    per-day hazard multipliers each index case exerts on each distinct
    neighbour.  Second-generation transmission never happens (nobody else is
    infectious), so for a single index case the probability that a given
    neighbour is ever infected is 1 - exp(-beta * units), exactly as in an
    independent one-index simulation.
    """
    from . import networks, popgen  # deferred to avoid cycles

    params = config.disease
    pop = popgen.sample_population(config, substream(*seed_key, 0))
    agents = AgentArrays.allocate(pop, 0.0, substream(*seed_key, 1))

    rng_seed = substream(*seed_key, 2)
    index_idx = rng_seed.choice(pop.n, size=n_index, replace=False)
    codes = branch_initial_stage(agents.age_group[index_idx], params, rng_seed)
    enter_stage(agents, index_idx, codes, 0, params, rng_seed)

    is_index = np.zeros(pop.n, dtype=bool)
    is_index[index_idx] = True
    index_rank = np.full(pop.n, -1, dtype=np.int64)
    index_rank[index_idx] = np.arange(n_index)

    hh_edges = networks.build_household_edges(pop)
    susc = params.rel_susceptibility
    weights = params.network_weights

    day_keys: list[np.ndarray] = []
    day_units: list[np.ndarray] = []
    infectious_codes = np.asarray(INFECTIOUS_STAGES, dtype=np.int8)

    step = 0
    max_days = config.calibration_max_days
    while step < max_days:
        step += 1
        shedding = np.isin(agents.stage, infectious_codes)
        if not (shedding & is_index).any():
            break
        mask = agents.eligibility_mask()
        edges = networks.merge_edge_lists(
            [
                networks.filter_edges(hh_edges, mask),
                networks.sample_occupation_edges(
                    pop, config.network, step, substream(*seed_key, 3, step), mask
                ),
                networks.sample_random_edges(
                    pop, config.network, step, substream(*seed_key, 4, step), mask
                ),
            ],
            step,
        )
        potency = params.rel_infectiousness[agents.stage] * agents.infectiousness_scale
        for src, dst in ((edges.src, edges.dst), (edges.dst, edges.src)):
            sel = is_index[src] & (agents.stage[dst] == Stage.SUSCEPTIBLE)
            if not sel.any():
                continue
            s, d = src[sel], dst[sel]
            units = potency[s] * weights[edges.layer[sel]] * susc[agents.age_group[d]]
            day_keys.append(index_rank[s] * pop.n + d)
            day_units.append(units)
        progression_step(agents, params, step, substream(*seed_key, 5, step))

    if not day_keys:
        return np.zeros(0, dtype=np.float64), n_index
    keys = np.concatenate(day_keys)
    units = np.concatenate(day_units)
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.bincount(inverse, weights=units, minlength=len(uniq))
    return sums, n_index


def measure_r(
    config: "ScenarioConfig", beta: float, n_index: int = 2000, salt: int = 1
) -> float:
    """Mean first-generation secondary infections per index case at `beta`."""
    units, k = _collect_pair_hazard_units(
        config, n_index, (config.seed, CALIBRATION_RUN + salt)
    )
    return float(np.sum(-np.expm1(-beta * units)) / k)


def calibrate_beta(config: "ScenarioConfig", target_r: float | None = None) -> float:
    """Find beta such that index cases cause `target_r` secondary infections.

    One simulation pass collects per-(index, contact) hazard units; the
    expected secondary-infection count is then the analytic, strictly
    increasing function R(beta) = sum(1 - exp(-beta * u)) / n_index, which
    is solved by bisection to relative precision 1e-6.
    """
    from scipy.optimize import brentq

    if target_r is None:
        target_r = config.disease.target_r
    if target_r < 0:
        raise CalibrationError(f"target R must be non-negative, got {target_r}")
    if target_r == 0:
        return 0.0

    n_index = config.calibration_index_cases
    units, k = _collect_pair_hazard_units(config, n_index, (config.seed, CALIBRATION_RUN))
    r_max = len(units) / k
    if r_max <= target_r:
        raise CalibrationError(
            f"target R={target_r} is unreachable: the contact process offers at most "
            f"{r_max:.2f} distinct secondary contacts per index case; "
            "increase network degrees or lower the target"
        )

    def gap(beta: float) -> float:
        return float(np.sum(-np.expm1(-beta * units)) / k) - target_r

    hi = 0.1
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise CalibrationError(
                f"could not bracket target R={target_r} with beta <= 1e6 "
                f"(R at upper bound: {gap(hi / 2) + target_r:.3f})"
            )
    beta = float(brentq(gap, 0.0, hi, xtol=1e-12, rtol=1e-10))
    log.info("calibrated beta=%.8g for target R=%.4g over %d index cases", beta, target_r, k)
    return beta
