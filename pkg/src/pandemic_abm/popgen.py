"""Synthetic population assembly from categorical census distributions.

Ages, household sizes, and occupations are drawn independently from the
configured probability tables.  Households are filled by sampling a size
and then drawing that many agents uniformly from the remaining pool; the
final household may be truncated so the agent count is exact.  Children
(age bands 0..CHILD_Upper_Index) and the elderly (bands above
ADULT_Upper_Index) are forced into their dedicated occupation codes; all
other agents draw from the 19-category occupation distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .config import ScenarioConfig
    from .interventions import TracingPolicy

from .config import ConfigError

CHILD_OCCUPATION = 20
ELDERLY_OCCUPATION = 19
NUM_OCCUPATIONS = 21
NUM_AGE_GROUPS = 9


@dataclass(frozen=True)
class Population:
    """Immutable per-agent demographics; shareable across threads."""

    n: int
    age_group: np.ndarray     # int8, 0..8
    household_id: np.ndarray  # int32, dense 0..H-1
    occupation: np.ndarray    # int8, 0..20
    has_app: np.ndarray       # bool

    @property
    def num_households(self) -> int:
        return int(self.household_id.max()) + 1 if self.n else 0


def sample_population(config: "ScenarioConfig", rng: np.random.Generator) -> Population:
    """Draw a full synthetic population from the scenario's distributions."""
    n = config.num_agents
    if n < 1:
        raise ConfigError("num_agents must be at least 1")

    age_group = rng.choice(NUM_AGE_GROUPS, size=n, p=config.age_probs).astype(np.int8)

    # Sample household sizes until they cover n agents, truncating the last
    # household; membership is a uniform shuffle of the agent pool.
    sizes_list: list[np.ndarray] = []
    covered = 0
    mean_size = float(np.dot(config.household_sizes, config.household_size_probs))
    while covered < n:
        batch = max(64, int((n - covered) / mean_size * 1.1))
        draw = rng.choice(config.household_sizes, size=batch, p=config.household_size_probs)
        sizes_list.append(draw)
        covered += int(draw.sum())
    sizes = np.concatenate(sizes_list)
    ends = np.cumsum(sizes)
    last = int(np.searchsorted(ends, n))
    sizes = sizes[: last + 1].copy()
    sizes[-1] -= int(ends[last]) - n

    household_id = np.repeat(np.arange(len(sizes), dtype=np.int32), sizes)
    household_id = household_id[rng.permutation(n)]

    occupation = rng.choice(
        len(config.occupation_probs), size=n, p=config.occupation_probs
    ).astype(np.int8)
    occupation[age_group <= config.child_upper_index] = CHILD_OCCUPATION
    occupation[age_group > config.adult_upper_index] = ELDERLY_OCCUPATION

    return Population(
        n=n,
        age_group=age_group,
        household_id=household_id,
        occupation=occupation,
        has_app=np.zeros(n, dtype=bool),
    )


def app_rescale_factor(policy: "TracingPolicy", age_probs: np.ndarray) -> float:
    """Common factor s with sum_g s*p_g*f_g = app_adoption_rate.

    `age_probs` are the configured age-band frequencies, so the expected
    population-level ownership rate matches the flat target exactly.
    """
    expected = float(np.dot(policy.app_age_probs, age_probs))
    if expected <= 0:
        raise ConfigError("app_user_agewise_probs_dict: all-zero age profile")
    return policy.app_adoption_rate / expected


def assign_app_ownership(
    pop: Population, policy: "TracingPolicy", config: "ScenarioConfig", rng: np.random.Generator
) -> Population:
    """Bernoulli app ownership, flat or age-stratified.

    In age-stratified mode each band's probability is the configured value
    rescaled by a common factor so the population-level expectation equals
    `app_adoption_rate`.
    """
    if policy.use_age_dist:
        s = app_rescale_factor(policy, config.age_probs)
        probs = policy.app_age_probs * s
        bad = np.flatnonzero(probs > 1.0 + 1e-12)
        if len(bad):
            raise ConfigError(
                "app_user_agewise_probs_dict: rescaled ownership probability exceeds 1 "
                f"for age band {bad[0]} ({probs[bad[0]]:.4f}); lower app_adoption_rate "
                "or flatten the age profile"
            )
        p = probs[pop.age_group]
    else:
        p = policy.app_adoption_rate
    has_app = rng.random(pop.n) < p
    return replace(pop, has_app=has_app)
