"""Shared fixtures: compact scenario dictionaries for fast test runs."""

from __future__ import annotations

import copy
from pathlib import Path

import pytest
import yaml

from pandemic_abm.config import build_config

BASELINE_PATH = Path(__file__).resolve().parent.parent / "configs" / "ct_baseline.yaml"


def load_baseline_raw() -> dict:
    with open(BASELINE_PATH) as fh:
        return yaml.safe_load(fh.read())


def small_raw(
    n: int = 2000,
    steps: int = 60,
    runs: int = 1,
    seeds: tuple[int, int, int] = (3, 2, 0),
    **overrides,
) -> dict:
    """Baseline scenario shrunk to `n` agents with seed stages (asym, presym-mild, presym-severe)."""
    raw = load_baseline_raw()
    asym, mild, severe = seeds
    stage_pop = {i: 0 for i in range(11)}
    stage_pop[0] = n - asym - mild - severe
    stage_pop[1] = asym
    stage_pop[2] = mild
    stage_pop[3] = severe
    raw.update(
        num_agents=n,
        num_steps=steps,
        num_runs=runs,
        stage_ix_pop_dict=stage_pop,
    )
    raw.update(overrides)
    return raw


def scenario_toggles(name: str) -> dict:
    from pandemic_abm.cli import SCENARIO_PRESETS

    toggles = dict(SCENARIO_PRESETS[name])
    toggles["results_file_postfix"] = name
    return toggles


@pytest.fixture
def baseline_raw() -> dict:
    return load_baseline_raw()


@pytest.fixture
def small_config():
    return build_config(small_raw())


@pytest.fixture
def tiny_ni_config():
    raw = small_raw(n=500, steps=20, seeds=(1, 0, 0))
    raw.update(scenario_toggles("NI"))
    return build_config(raw)


def deep_copy_raw(raw: dict) -> dict:
    return copy.deepcopy(raw)
