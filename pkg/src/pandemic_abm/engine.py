"""Per-step pipeline, ensemble runner, and run aggregation.

Each simulated day executes, in fixed order: edge sampling with an
eligibility mask, interaction logging, transmission, stage progression,
test-result delivery and testing, quarantine of fresh positives,
immunization onset and vaccination, digital then manual contact tracing,
quarantine of traced contacts, and finally daily quarantine bookkeeping.
Day 0 only seeds the initial stages; interactions begin on day 1.

Every phase draws from a Philox substream keyed by
(seed, run, step, phase), so a (config, seed) pair reproduces identically
no matter how runs are scheduled across processes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import networks, popgen
from .config import ScenarioConfig
from .costs import CostLedger, total_cost
from .disease import (
    AgentArrays,
    Stage,
    infection_step,
    progression_step,
    seed_initial_infections,
)
from .interventions import (
    EventLog,
    InteractionLog,
    VaccineSupply,
    clear_stale_positive_flags,
    dct_notify,
    deliver_immunizations,
    deliver_test_results,
    mct_trace,
    quarantine_daily,
    quarantine_step,
    testing_step,
    vaccination_step,
)
from .rng import substream

log = logging.getLogger(__name__)

# Phase codes for RNG substreams (seed, run, step, phase).
PH_POPULATION = 0
PH_APP = 1
PH_COMPLIANCE = 2
PH_SEEDING = 3
PH_OCC_EDGES = 4
PH_RAND_EDGES = 5
PH_INFECTION = 6
PH_PROGRESSION = 7
PH_TESTING = 8
PH_QUAR_POSITIVE = 9
PH_IMMUNIZATION = 10
PH_VACCINATION = 11
PH_DCT = 12
PH_MCT = 13
PH_QUAR_DCT = 14
PH_QUAR_MCT = 15
PH_QUAR_DAILY = 16

# Quarantine entry reasons (event detail field).
REASON_POSITIVE = 0
REASON_DCT = 1
REASON_MCT = 2

SERIES_NAMES = (
    "new_infections",
    "cumulative_infections",
    "hospitalized_count",
    "icu_count",
    "deaths",
    "recovered",
    "immunized",
    "quarantined_count",
    "tests_administered",
    "doses_administered",
    "cumulative_cost",
)


@dataclass
class Hooks:
    """Optional inspection callbacks; forcing serial execution when set."""

    on_edges: Callable | None = None        # (world, step, edges)
    pre_vaccination: Callable | None = None  # (world, step)
    on_step_end: Callable | None = None     # (world, step)


@dataclass
class World:
    """All mutable state of one simulation run."""

    config: ScenarioConfig
    run_index: int
    pop: popgen.Population
    agents: AgentArrays
    household_edges: networks.EdgeList
    occupation_order: np.ndarray
    interaction_log: InteractionLog | None
    supply: VaccineSupply | None
    ledger: CostLedger
    events: EventLog
    result_queue: dict[int, list[tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    immunization_queue: dict[int, list[tuple[np.ndarray, np.ndarray]]] = field(
        default_factory=dict
    )
    step_index: int = 0
    new_infections_today: int = 0
    tests_today: int = 0
    doses_today: int = 0
    cumulative_infections: int = 0
    cumulative_infections_by_age: np.ndarray = field(
        default_factory=lambda: np.zeros(9, dtype=np.int64)
    )

    def rng(self, step: int, phase: int) -> np.random.Generator:
        return substream(self.config.seed, self.run_index, step, phase)


@dataclass
class RunResult:
    """Per-step time series for one run; rows are days 0..num_steps-1."""

    series: dict[str, np.ndarray]
    age_cumulative_infections: np.ndarray  # (num_steps, 9)
    num_agents: int = 0
    events: EventLog | None = None

    @property
    def num_steps(self) -> int:
        return len(self.series["new_infections"])


@dataclass
class Summary:
    """Ensemble mean/std series plus scalar summaries of the mean curves."""

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    age_mean: np.ndarray
    age_std: np.ndarray
    n_runs: int
    num_agents: int
    peak_hospitalizations: float
    peak_hospitalization_day: int
    peak_daily_infections: float
    peak_infection_day: int
    final_cumulative_fraction: float
    total_cost: float
    per_run: dict[str, list[float]]


def build_world(config: ScenarioConfig, run_index: int, record_events: bool = False) -> World:
    pop = popgen.sample_population(config, substream(config.seed, run_index, 0, PH_POPULATION))
    if config.tracing.mode in ("dct", "hybrid"):
        pop = popgen.assign_app_ownership(
            pop, config.tracing, config, substream(config.seed, run_index, 0, PH_APP)
        )
    agents = AgentArrays.allocate(
        pop, config.compliance_sigma, substream(config.seed, run_index, 0, PH_COMPLIANCE)
    )
    seed_initial_infections(
        agents,
        config.stage_seed_counts,
        config.disease,
        substream(config.seed, run_index, 0, PH_SEEDING),
    )
    needs_log = config.tracing.mode != "off"
    world = World(
        config=config,
        run_index=run_index,
        pop=pop,
        agents=agents,
        household_edges=networks.build_household_edges(pop),
        occupation_order=networks.occupation_sort_order(pop),
        interaction_log=InteractionLog(config.tracing.window) if needs_log else None,
        supply=VaccineSupply(config.vaccine.shelf_life) if config.use_vaccination else None,
        ledger=CostLedger(
            test_price=config.rtpcr.cost,
            poc_test_price=config.poc.cost,
            dose_price=config.vaccine.price,
        ),
        events=EventLog(enabled=record_events),
    )
    infected = agents.infected_mask() | (agents.stage == Stage.RECOVERED)
    world.cumulative_infections = int(infected.sum())
    world.cumulative_infections_by_age = np.bincount(
        agents.age_group[infected], minlength=9
    ).astype(np.int64)
    return world


def sample_day_edges(world: World, step: int) -> networks.EdgeList:
    """All three layers for one day, restricted to eligible agents."""
    eligible = world.agents.eligibility_mask()
    return networks.merge_edge_lists(
        [
            networks.filter_edges(world.household_edges, eligible),
            networks.sample_occupation_edges(
                world.pop,
                world.config.network,
                step,
                world.rng(step, PH_OCC_EDGES),
                eligible,
                order=world.occupation_order,
            ),
            networks.sample_random_edges(
                world.pop, world.config.network, step, world.rng(step, PH_RAND_EDGES), eligible
            ),
        ],
        step,
    )


def step(world: World, hooks: Hooks | None = None) -> None:
    """Advance the world by one day in the fixed pipeline order."""
    config = world.config
    agents = world.agents
    t = world.step_index + 1
    world.step_index = t
    world.new_infections_today = 0
    world.tests_today = 0
    world.doses_today = 0

    # (1) interactions, transmission, progression
    edges = sample_day_edges(world, t)
    if hooks and hooks.on_edges:
        hooks.on_edges(world, t, edges)
    if world.interaction_log is not None:
        world.interaction_log.append(edges, agents.has_app)

    new_idx = infection_step(agents, edges, config.disease, t, world.rng(t, PH_INFECTION))
    world.new_infections_today = len(new_idx)
    world.cumulative_infections += len(new_idx)
    if len(new_idx):
        world.cumulative_infections_by_age += np.bincount(
            agents.age_group[new_idx], minlength=9
        ).astype(np.int64)

    progression_step(agents, config.disease, t, world.rng(t, PH_PROGRESSION))
    clear_stale_positive_flags(agents, t)

    # (2) result delivery, then testing
    testing = config.active_testing_policy()
    delivered_positive = np.empty(0, dtype=np.int64)
    if testing is not None:
        for idx, positive in world.result_queue.pop(t, ()):
            pos = deliver_test_results(agents, idx, positive, testing, t, world.events)
            if len(pos):
                delivered_positive = np.concatenate([delivered_positive, pos])
        tested, offsets, outcome = testing_step(
            agents, testing, t, world.rng(t, PH_TESTING), world.ledger, world.events
        )
        world.tests_today = len(tested)
        for off in np.unique(offsets):
            sel = offsets == off
            world.result_queue.setdefault(t + int(off), []).append(
                (tested[sel], outcome[sel])
            )

    # (3a) fresh positives quarantine
    if config.use_quarantine and len(delivered_positive):
        quarantine_step(
            agents,
            config.quarantine,
            delivered_positive,
            config.quarantine.enter_prob,
            t,
            world.rng(t, PH_QUAR_POSITIVE),
            world.events,
            reason=REASON_POSITIVE,
        )

    # (3b) immunization onset, then vaccination
    if config.use_vaccination:
        for idx, dose in world.immunization_queue.pop(t, ()):
            deliver_immunizations(
                agents, idx, dose, config.vaccine, t, world.rng(t, PH_IMMUNIZATION), world.events
            )
        if hooks and hooks.pre_vaccination:
            hooks.pre_vaccination(world, t)
        if t >= config.vaccine.start_date:
            recipients, doses = vaccination_step(
                agents,
                config.vaccine,
                world.supply,
                t,
                world.rng(t, PH_VACCINATION),
                world.ledger,
                world.events,
            )
            world.doses_today = len(recipients)
            if len(recipients) and config.vaccine.dose_delay >= 0:
                world.immunization_queue.setdefault(t + config.vaccine.dose_delay, []).append(
                    (recipients, doses)
                )

    # (3c/4c) contact tracing on today's delivered positives
    if config.tracing.mode != "off" and len(delivered_positive):
        tracing = config.tracing
        notified = np.empty(0, dtype=np.int64)
        informers = np.empty(0, dtype=np.int64)
        if tracing.mode in ("dct", "hybrid"):
            informers, notified = dct_notify(
                world.interaction_log,
                delivered_positive,
                tracing,
                agents,
                t,
                world.rng(t, PH_DCT),
                world.events,
            )
        reached = np.empty(0, dtype=np.int64)
        if tracing.mode in ("mct", "hybrid"):
            if tracing.mode == "hybrid" and tracing.strict_handoff:
                mct_positives = np.setdiff1d(delivered_positive, informers)
            else:
                mct_positives = delivered_positive
            reached = mct_trace(
                world.interaction_log,
                mct_positives,
                tracing,
                agents,
                t,
                world.rng(t, PH_MCT),
                world.events,
            )
        # (5c) traced contacts opt into quarantine
        if config.use_quarantine:
            if len(notified):
                quarantine_step(
                    agents,
                    config.quarantine,
                    notified,
                    tracing.dct_sq_comply_prob,
                    t,
                    world.rng(t, PH_QUAR_DCT),
                    world.events,
                    reason=REASON_DCT,
                )
            if len(reached):
                rng = world.rng(t, PH_QUAR_MCT)
                p = tracing.mct_sq_comply_prob
                comply = reached[
                    rng.random(len(reached))
                    < np.clip(p + agents.compliance_offset[reached], 0, 1)
                ]
                quarantine_step(
                    agents,
                    config.quarantine,
                    comply,
                    tracing.mct_quarantine_enter_prob,
                    t,
                    rng,
                    world.events,
                    reason=REASON_MCT,
                )

    # daily quarantine countdown (same-day entrants excluded)
    quarantine_daily(agents, config.quarantine, t, world.rng(t, PH_QUAR_DAILY), world.events)

    if hooks and hooks.on_step_end:
        hooks.on_step_end(world, t)


def _record_row(world: World, out: dict[str, list], age_rows: list[np.ndarray]) -> None:
    agents = world.agents
    stage = agents.stage
    out["new_infections"].append(world.new_infections_today)
    out["cumulative_infections"].append(world.cumulative_infections)
    out["hospitalized_count"].append(
        int(((stage == Stage.HOSPITALIZED) | (stage == Stage.HOSPITALIZED_RECOVERING)).sum())
    )
    out["icu_count"].append(int((stage == Stage.CRITICAL_ICU).sum()))
    out["deaths"].append(int((stage == Stage.DEATH).sum()))
    out["recovered"].append(int((stage == Stage.RECOVERED).sum()))
    out["immunized"].append(int(agents.immunized.sum()))
    out["quarantined_count"].append(int(agents.quarantined.sum()))
    out["tests_administered"].append(world.tests_today)
    out["doses_administered"].append(world.doses_today)
    out["cumulative_cost"].append(total_cost(world.ledger))
    age_rows.append(world.cumulative_infections_by_age.copy())


def run(
    config: ScenarioConfig,
    run_index: int,
    hooks: Hooks | None = None,
    record_events: bool = False,
) -> RunResult:
    """Execute one seeded run of `num_steps` days."""
    world = build_world(config, run_index, record_events=record_events)
    out: dict[str, list] = {name: [] for name in SERIES_NAMES}
    age_rows: list[np.ndarray] = []

    for t in range(config.num_steps):
        if t > 0:
            step(world, hooks)
        _record_row(world, out, age_rows)

    series = {
        name: np.asarray(values, dtype=np.float64) for name, values in out.items()
    }
    age = (
        np.vstack(age_rows).astype(np.float64)
        if age_rows
        else np.zeros((0, 9), dtype=np.float64)
    )
    return RunResult(
        series=series,
        age_cumulative_infections=age,
        num_agents=config.num_agents,
        events=world.events if record_events else None,
    )


def _run_for_pool(args: tuple[ScenarioConfig, int]) -> RunResult:
    config, run_index = args
    return run(config, run_index)


def run_ensemble(
    config: ScenarioConfig,
    jobs: int = 1,
    hooks: Hooks | None = None,
    record_events: bool = False,
) -> list[RunResult]:
    """All `num_runs` runs, optionally across processes.

    Results are ordered by run index, so the ensemble is invariant to
    worker count and completion order.  Hooks and event recording force
    serial execution (callbacks and logs live in this process).
    """
    indices = list(range(config.num_runs))
    if jobs > 1 and hooks is None and not record_events and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_for_pool, [(config, i) for i in indices]))
    return [run(config, i, hooks=hooks, record_events=record_events) for i in indices]


def aggregate(results: list[RunResult]) -> Summary:
    """Pointwise mean and sample standard deviation across runs."""
    if not results:
        raise ValueError("aggregate needs at least one run")
    steps = results[0].num_steps
    if any(r.num_steps != steps for r in results):
        raise ValueError("all runs must have the same number of steps")

    mean: dict[str, np.ndarray] = {}
    std: dict[str, np.ndarray] = {}
    for name in SERIES_NAMES:
        stacked = np.vstack([r.series[name] for r in results])
        mean[name] = stacked.mean(axis=0)
        std[name] = stacked.std(axis=0, ddof=1) if len(results) > 1 else np.zeros(steps)

    age_stack = np.stack([r.age_cumulative_infections for r in results])
    age_mean = age_stack.mean(axis=0)
    age_std = (
        age_stack.std(axis=0, ddof=1) if len(results) > 1 else np.zeros_like(age_mean)
    )

    hosp = mean["hospitalized_count"]
    daily = mean["new_infections"]
    per_run = {
        "peak_hospitalizations": [float(r.series["hospitalized_count"].max()) for r in results]
        if steps
        else [],
        "peak_hospitalization_day": [
            int(r.series["hospitalized_count"].argmax()) for r in results
        ]
        if steps
        else [],
        "cumulative_infections": [
            float(r.series["cumulative_infections"][-1]) for r in results
        ]
        if steps
        else [],
        "total_cost": [float(r.series["cumulative_cost"][-1]) for r in results]
        if steps
        else [],
        "deaths": [float(r.series["deaths"][-1]) for r in results] if steps else [],
    }

    n_agents = results[0].num_agents
    final_fraction = (
        float(mean["cumulative_infections"][-1]) / n_agents if steps and n_agents else 0.0
    )
    return Summary(
        mean=mean,
        std=std,
        age_mean=age_mean,
        age_std=age_std,
        n_runs=len(results),
        num_agents=n_agents,
        peak_hospitalizations=float(hosp.max()) if steps else 0.0,
        peak_hospitalization_day=int(hosp.argmax()) if steps else -1,
        peak_daily_infections=float(daily.max()) if steps else 0.0,
        peak_infection_day=int(daily.argmax()) if steps else -1,
        final_cumulative_fraction=final_fraction,
        total_cost=float(mean["cumulative_cost"][-1]) if steps else 0.0,
        per_run=per_run,
    )
