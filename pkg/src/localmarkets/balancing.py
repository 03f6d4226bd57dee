"""Imbalance settlement between actual dispatch and the day-ahead schedule.

Sign convention: the settlement is a signed cost to the aggregator.  Falling
short of schedule costs neg_price per MWh missing (positive settlement);
exceeding it is compensated at pos_price per MWh surplus (negative
settlement, i.e. revenue).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError


@dataclass
class BalancePrices:
    pos: np.ndarray  # (T,) EUR/MWh paid to positive deviations
    neg: np.ndarray  # (T,) EUR/MWh charged on negative deviations

    def __post_init__(self):
        self.pos = np.atleast_1d(np.asarray(self.pos, dtype=float))
        self.neg = np.atleast_1d(np.asarray(self.neg, dtype=float))
        if np.any(self.pos < 0.0) or np.any(self.neg < 0.0):
            raise SchemaError("balancing prices must be >= 0")


@dataclass
class BalanceResult:
    deviation: np.ndarray  # actual - schedule, MWh
    cost: np.ndarray  # EUR, positive = aggregator pays


def settle_imbalance(schedule, actual, prices: BalancePrices) -> BalanceResult:
    """Settle deviations hour by hour; broadcasts over leading axes."""
    schedule = np.asarray(schedule, dtype=float)
    actual = np.asarray(actual, dtype=float)
    deviation = actual - schedule
    cost = np.where(deviation <= 0.0, prices.neg * -deviation, -prices.pos * deviation)
    return BalanceResult(deviation=deviation, cost=cost)
