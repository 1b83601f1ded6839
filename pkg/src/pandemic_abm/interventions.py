"""Intervention subsystems: testing, self-quarantine, vaccination, contact tracing.

Each step function mutates AgentArrays in a well-defined sub-phase and
draws only from the generator handed to it, so the engine's fixed phase
order fully determines the outcome.  Events of interest are appended to an
EventLog for audit-style cross-checks and optional CSV export.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .disease import AgentArrays, Stage, SYMPTOMATIC_STAGES, compliance_probs
from .networks import RANDOM, EdgeList

if TYPE_CHECKING:
    from .costs import CostLedger

INT32_MAX = np.iinfo(np.int32).max

# Event names used in the event log / CSV export.
EV_TEST_ADMINISTERED = "test_administered"
EV_TEST_RESULT = "test_result"
EV_QUARANTINE_ENTER = "quarantine_enter"
EV_QUARANTINE_BREAK = "quarantine_break"
EV_QUARANTINE_COMPLETE = "quarantine_complete"
EV_DOSE1 = "dose1"
EV_DOSE2 = "dose2"
EV_IMMUNIZED = "immunized"
EV_DCT_NOTIFIED = "dct_notified"
EV_MCT_REACHED = "mct_reached"


class EventLog:
    """Append-only `(step, event, agent, detail)` record, cheap to disable."""

    def __init__(self, enabled: bool = False):
        self.enabled = enabled
        self.rows: list[tuple[int, str, int, int]] = []

    def record(self, step: int, event: str, agents, details=None) -> None:
        if not self.enabled:
            return
        agents = np.atleast_1d(agents)
        if details is None:
            details = np.zeros(len(agents), dtype=np.int64)
        else:
            details = np.broadcast_to(np.atleast_1d(details), agents.shape)
        self.rows.extend(
            (step, event, int(a), int(d)) for a, d in zip(agents.tolist(), np.asarray(details).tolist())
        )

    def by_event(self, event: str) -> list[tuple[int, str, int, int]]:
        return [r for r in self.rows if r[1] == event]


def write_events_csv(events: EventLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "event", "agent", "detail"])
        writer.writerows(events.rows)


# ---------------------------------------------------------------------------
# Policies (parsed by the config module, consumed here and by the engine).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestingPolicy:
    name: str                      # "rtpcr" | "poc"
    start_date: int
    true_positive: float
    false_positive: float
    results_dates: tuple[int, ...]
    results_dates_probs: tuple[float, ...]
    validity_days: int             # -1 = a delivered result stays valid forever
    cost: float


@dataclass(frozen=True)
class QuarantinePolicy:
    enter_prob: float   # on a delivered positive result
    break_prob: float   # daily dropout
    days: int


@dataclass(frozen=True)
class VaccinePolicy:
    start_date: int
    daily_prod: int
    shelf_life: int
    dose_delay: int
    dose1_priority: bool
    dose1_eff: float
    dose2_gap: int
    dose2_eff: float
    dose2_drop: float
    price: float


@dataclass(frozen=True)
class TracingPolicy:
    mode: str                     # off | dct | mct | hybrid
    app_adoption_rate: float
    use_age_dist: bool
    app_age_probs: np.ndarray     # (9,), used when use_age_dist
    den_window: int
    mct_window: int
    den_inform_prob: float
    mct_inform_prob: float
    mct_recall_prob: float
    mct_reachable_prob: float
    dct_sq_comply_prob: float
    mct_sq_comply_prob: float
    mct_quarantine_enter_prob: float
    strict_handoff: bool          # hybrid: MCT only follows up DCT-unhandled positives

    @property
    def window(self) -> int:
        return max(self.den_window, self.mct_window)


# ---------------------------------------------------------------------------
# Interaction log.
# ---------------------------------------------------------------------------


@dataclass
class _DayRecord:
    step: int
    src: np.ndarray
    dst: np.ndarray
    layer: np.ndarray
    both_app: np.ndarray


class InteractionLog:
    """Ring buffer of the last `window` days of interactions.

    The digital view of a day contains an edge only when both endpoints
    own the app; the manual view excludes the random layer entirely.
    """

    def __init__(self, window: int):
        self.window = window
        self._days: deque[_DayRecord] = deque()

    def __len__(self) -> int:
        return len(self._days)

    @property
    def steps(self) -> list[int]:
        return [d.step for d in self._days]

    def append(self, edges: EdgeList, has_app: np.ndarray) -> None:
        both_app = has_app[edges.src] & has_app[edges.dst]
        self._days.append(
            _DayRecord(edges.step, edges.src, edges.dst, edges.layer, both_app)
        )
        while len(self._days) > self.window:
            self._days.popleft()

    def traced_pairs(
        self, source_mask: np.ndarray, window: int, digital: bool, n: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Unique (source, contact) pairs seen in the last `window` days.

        Digital view: both endpoints must own the app.  Manual view:
        household and occupation layers only.
        """
        src_parts: list[np.ndarray] = []
        dst_parts: list[np.ndarray] = []
        for day in list(self._days)[-window:]:
            base = day.both_app if digital else day.layer != RANDOM
            for a, b in ((day.src, day.dst), (day.dst, day.src)):
                sel = base & source_mask[a]
                if sel.any():
                    src_parts.append(a[sel])
                    dst_parts.append(b[sel])
        if not src_parts:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        key = np.unique(
            np.concatenate(src_parts).astype(np.int64) * n + np.concatenate(dst_parts)
        )
        return key // n, key % n


def log_interactions(log: InteractionLog, edges: EdgeList, has_app: np.ndarray) -> InteractionLog:
    log.append(edges, has_app)
    return log


# ---------------------------------------------------------------------------
# Testing.
# ---------------------------------------------------------------------------


def testing_step(
    agents: AgentArrays,
    policy: TestingPolicy,
    step: int,
    rng: np.random.Generator,
    ledger: "CostLedger",
    events: EventLog,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Test every symptomatic agent without a currently valid result.

    Agents keep testing daily until some result is delivered; a delivered
    result then shields them from retesting for `validity_days` (forever
    when -1).  Returns (tested indices, delivery offsets, outcome flags)
    for the engine to enqueue.
    """
    empty = np.empty(0, dtype=np.int64)
    if step < policy.start_date:
        return empty, empty, np.empty(0, dtype=bool)
    symptomatic = np.isin(agents.stage, np.asarray(SYMPTOMATIC_STAGES, dtype=np.int8))
    shielded = agents.has_result & (agents.result_valid_until >= step)
    tested = np.flatnonzero(symptomatic & ~shielded)
    if len(tested) == 0:
        return empty, empty, np.empty(0, dtype=bool)

    infected = agents.infected_mask()[tested]
    p_pos = np.where(infected, policy.true_positive, policy.false_positive)
    positive = rng.random(len(tested)) < p_pos
    offsets = rng.choice(
        np.asarray(policy.results_dates), size=len(tested), p=policy.results_dates_probs
    )
    ledger.record_tests(len(tested), poc=policy.name == "poc")
    events.record(step, EV_TEST_ADMINISTERED, tested, offsets)
    return tested, offsets, positive


def deliver_test_results(
    agents: AgentArrays,
    idx: np.ndarray,
    positive: np.ndarray,
    policy: TestingPolicy,
    step: int,
    events: EventLog,
) -> np.ndarray:
    """Mark results delivered; returns agents whose result came back positive."""
    agents.has_result[idx] = True
    agents.result_positive[idx] = positive
    if policy.validity_days < 0:
        agents.result_valid_until[idx] = INT32_MAX
    else:
        agents.result_valid_until[idx] = step + policy.validity_days
    pos_idx = idx[positive]
    agents.known_positive[pos_idx] = True
    events.record(step, EV_TEST_RESULT, idx, positive.astype(np.int64))
    return pos_idx


def clear_stale_positive_flags(agents: AgentArrays, step: int) -> None:
    """Recovered agents shed the known-positive flag; a never-infected
    (false-positive) flag expires with its test validity window."""
    recovered = agents.known_positive & (agents.stage == Stage.RECOVERED)
    stale = (
        agents.known_positive
        & (agents.stage == Stage.SUSCEPTIBLE)
        & (agents.result_valid_until < step)
    )
    drop = recovered | stale
    if drop.any():
        agents.known_positive[drop] = False


# ---------------------------------------------------------------------------
# Self-quarantine.
# ---------------------------------------------------------------------------

QUARANTINE_BLOCKED_STAGES = np.asarray(
    [Stage.HOSPITALIZED, Stage.CRITICAL_ICU, Stage.DEATH, Stage.HOSPITALIZED_RECOVERING],
    dtype=np.int8,
)


def quarantine_step(
    agents: AgentArrays,
    policy: QuarantinePolicy,
    triggered: np.ndarray,
    enter_prob: float,
    step: int,
    rng: np.random.Generator,
    events: EventLog,
    reason: int = 0,
) -> np.ndarray:
    """Enter triggered agents into quarantine with the trigger's own probability.

    Agents already quarantined, hospitalized, in ICU, or dead are skipped.
    Returns the indices that actually entered.
    """
    if policy.days <= 0 or len(triggered) == 0:
        return np.empty(0, dtype=np.int64)
    triggered = np.asarray(triggered)
    blocked = agents.quarantined[triggered] | np.isin(
        agents.stage[triggered], QUARANTINE_BLOCKED_STAGES
    )
    candidates = triggered[~blocked]
    if len(candidates) == 0:
        return np.empty(0, dtype=np.int64)
    p = compliance_probs(agents, candidates, enter_prob)
    entered = candidates[rng.random(len(candidates)) < p]
    agents.quarantined[entered] = True
    agents.quarantine_days_left[entered] = policy.days
    agents.quarantine_entry_step[entered] = step
    events.record(step, EV_QUARANTINE_ENTER, entered, reason)
    return entered


def quarantine_daily(
    agents: AgentArrays,
    policy: QuarantinePolicy,
    step: int,
    rng: np.random.Generator,
    events: EventLog,
) -> None:
    """Daily countdown: completion zeroes infectiousness, dropout just releases.

    Agents that entered earlier the same step are untouched, so exit
    checks begin the day after entry and a full quarantine spans exactly
    `days` isolated days with `days - 1` dropout opportunities.
    """
    active = np.flatnonzero(agents.quarantined & (agents.quarantine_entry_step < step))
    if len(active) == 0:
        return
    agents.quarantine_days_left[active] -= 1
    remaining = agents.quarantine_days_left[active]

    done = active[remaining <= 0]
    if len(done):
        agents.quarantined[done] = False
        agents.infectiousness_scale[done] = 0.0
        events.record(step, EV_QUARANTINE_COMPLETE, done)

    ongoing = active[remaining > 0]
    if len(ongoing) and policy.break_prob > 0:
        breaks = ongoing[rng.random(len(ongoing)) < policy.break_prob]
        if len(breaks):
            agents.quarantined[breaks] = False
            agents.quarantine_days_left[breaks] = 0
            events.record(step, EV_QUARANTINE_BREAK, breaks)


# ---------------------------------------------------------------------------
# Vaccination.
# ---------------------------------------------------------------------------


@dataclass
class VaccineSupply:
    """FIFO dose stockpile with shelf-life expiry."""

    shelf_life: int
    batches: deque = field(default_factory=deque)  # (produced_step, remaining)
    expired_total: int = 0

    def produce(self, step: int, count: int) -> None:
        if count > 0:
            self.batches.append([step, count])

    def expire(self, step: int) -> int:
        dropped = 0
        while self.batches and step - self.batches[0][0] >= self.shelf_life:
            dropped += self.batches.popleft()[1]
        self.expired_total += dropped
        return dropped

    @property
    def available(self) -> int:
        return sum(b[1] for b in self.batches)

    def take(self, n: int) -> int:
        taken = 0
        while n > 0 and self.batches:
            batch = self.batches[0]
            use = min(batch[1], n)
            batch[1] -= use
            taken += use
            n -= use
            if batch[1] == 0:
                self.batches.popleft()
        return taken


def vaccine_eligible_mask(agents: AgentArrays) -> np.ndarray:
    """Alive, out of hospital, not known positive, not quarantined."""
    blocked = (
        np.isin(agents.stage, QUARANTINE_BLOCKED_STAGES)
        | agents.known_positive
        | agents.quarantined
    )
    return ~blocked


def rank_vaccine_candidates(
    agents: AgentArrays, policy: VaccinePolicy, step: int
) -> np.ndarray:
    """Queue of agent indices in administration order.

    Dose-1 candidates precede dose-2 candidates when dose1_priority is
    set; within each class, oldest age band first, ties broken by agent
    index.
    """
    eligible = vaccine_eligible_mask(agents)
    dose1 = eligible & (agents.dose_count == 0)
    dose2 = (
        eligible
        & (agents.dose_count == 1)
        & ~agents.dose2_dropout
        & (step - agents.dose1_step >= policy.dose2_gap)
    )
    idx = np.flatnonzero(dose1 | dose2)
    if len(idx) == 0:
        return idx
    dose_class = np.where(dose1[idx], 0, 1) if policy.dose1_priority else np.zeros(len(idx))
    order = np.lexsort((idx, -agents.age_group[idx].astype(np.int64), dose_class))
    return idx[order]


def vaccination_step(
    agents: AgentArrays,
    policy: VaccinePolicy,
    supply: VaccineSupply,
    step: int,
    rng: np.random.Generator,
    ledger: "CostLedger",
    events: EventLog,
) -> tuple[np.ndarray, np.ndarray]:
    """Produce, expire, and administer today's doses in priority order.

    Returns (recipients, dose numbers); immunity onset is scheduled by the
    engine `dose_delay` days out.  Unfilled demand simply waits.
    """
    supply.produce(step, policy.daily_prod)
    supply.expire(step)
    queue = rank_vaccine_candidates(agents, policy, step)
    n = min(len(queue), supply.available)
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    recipients = queue[:n]
    supply.take(n)

    first = recipients[agents.dose_count[recipients] == 0]
    second = recipients[agents.dose_count[recipients] == 1]

    agents.dose_count[first] = 1
    agents.dose1_step[first] = step
    if len(first):
        agents.dose2_dropout[first] = rng.random(len(first)) < policy.dose2_drop
    agents.dose_count[second] = 2

    ledger.record_doses(n)
    events.record(step, EV_DOSE1, first)
    events.record(step, EV_DOSE2, second)
    doses = np.concatenate([np.ones(len(first), dtype=np.int64), np.full(len(second), 2)])
    return np.concatenate([first, second]), doses


def deliver_immunizations(
    agents: AgentArrays,
    idx: np.ndarray,
    dose: np.ndarray,
    policy: VaccinePolicy,
    step: int,
    rng: np.random.Generator,
    events: EventLog,
) -> None:
    """Run the per-dose efficacy trial `dose_delay` days after inoculation.

    The dose-2 trial applies only to agents dose 1 left unprotected.
    """
    alive = agents.stage[idx] != Stage.DEATH
    eff = np.where(dose == 1, policy.dose1_eff, policy.dose2_eff)
    fresh = ~agents.immunized[idx]
    hit = alive & fresh & (rng.random(len(idx)) < eff)
    winners = idx[hit]
    if len(winners):
        agents.immunized[winners] = True
        events.record(step, EV_IMMUNIZED, winners, dose[hit])


# ---------------------------------------------------------------------------
# Contact tracing.
# ---------------------------------------------------------------------------


def dct_notify(
    log: InteractionLog,
    positives: np.ndarray,
    policy: TracingPolicy,
    agents: AgentArrays,
    step: int,
    rng: np.random.Generator,
    events: EventLog,
) -> tuple[np.ndarray, np.ndarray]:
    """Exposure notifications from app-owning positives.

    Each app-owning positive opts to inform with `den_inform_prob`; the
    notified set is the union of their logged both-app contacts over the
    digital window.  Returns (informing positives, notified agents).
    """
    empty = np.empty(0, dtype=np.int64)
    positives = np.asarray(positives)
    with_app = positives[agents.has_app[positives]]
    if len(with_app) == 0:
        return empty, empty
    p = compliance_probs(agents, with_app, policy.den_inform_prob)
    informers = with_app[rng.random(len(with_app)) < p]
    if len(informers) == 0:
        return informers.astype(np.int64), empty
    mask = np.zeros(agents.n, dtype=bool)
    mask[informers] = True
    sources, contacts = log.traced_pairs(mask, policy.den_window, digital=True, n=agents.n)
    events.record(step, EV_DCT_NOTIFIED, contacts, sources)
    return informers.astype(np.int64), np.unique(contacts)


def mct_trace(
    log: InteractionLog,
    positives: np.ndarray,
    policy: TracingPolicy,
    agents: AgentArrays,
    step: int,
    rng: np.random.Generator,
    events: EventLog,
) -> np.ndarray:
    """Interview-based tracing over household and occupation contacts.

    Positives cooperate with `mct_inform_prob`; each candidate contact is
    recalled with `mct_recall_prob` and then reached with
    `mct_reachable_prob`.  Random-layer encounters are never recalled.
    """
    empty = np.empty(0, dtype=np.int64)
    positives = np.asarray(positives)
    if len(positives) == 0:
        return empty
    p = compliance_probs(agents, positives, policy.mct_inform_prob)
    cooperating = positives[rng.random(len(positives)) < p]
    if len(cooperating) == 0:
        return empty
    mask = np.zeros(agents.n, dtype=bool)
    mask[cooperating] = True
    sources, contacts = log.traced_pairs(mask, policy.mct_window, digital=False, n=agents.n)
    if len(sources) == 0:
        return empty
    keep = rng.random(len(sources)) < policy.mct_recall_prob * policy.mct_reachable_prob
    events.record(step, EV_MCT_REACHED, contacts[keep], sources[keep])
    return np.unique(contacts[keep])
