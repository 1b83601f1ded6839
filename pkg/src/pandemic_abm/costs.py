"""Intervention expenditure accounting and fixed-budget scenario helpers.

Costs accrue at administration time (a test taken, a dose injected), never
at production, so unexpired unused vaccine doses cost nothing.  Totals are
exact count-times-price arithmetic; there is nothing sampled here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .interventions import VaccinePolicy

from .config import ConfigError


@dataclass
class CostLedger:
    """Per-run tally of administered tests and doses with their unit prices."""

    test_price: float = 5.0
    poc_test_price: float = 5.0
    dose_price: float = 20.0
    tests: int = 0
    poc_tests: int = 0
    doses: int = 0

    def record_tests(self, n: int, poc: bool = False) -> None:
        if poc:
            self.poc_tests += n
        else:
            self.tests += n

    def record_doses(self, n: int) -> None:
        self.doses += n


def total_cost(ledger: CostLedger) -> float:
    """Exact total: tests * test_price + doses * dose_price (per kind)."""
    return (
        ledger.tests * ledger.test_price
        + ledger.poc_tests * ledger.poc_test_price
        + ledger.doses * ledger.dose_price
    )


def budget_scaled_policy(
    budget: float, base: "VaccinePolicy", horizon: int
) -> "VaccinePolicy":
    """Cap daily vaccine production so worst-case spend never exceeds `budget`.

    daily_prod = floor(budget / (price * active days)), where the active
    days are those from the policy's start date to the end of the horizon.
    """
    if budget < 0:
        raise ConfigError(f"budget must be non-negative, got {budget}")
    if base.price <= 0:
        raise ConfigError("cannot scale a vaccination budget with a non-positive dose price")
    active_days = max(0, horizon - base.start_date)
    if active_days == 0:
        return replace(base, daily_prod=0)
    return replace(base, daily_prod=int(math.floor(budget / (base.price * active_days))))
