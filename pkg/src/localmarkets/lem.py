"""Day-ahead local electricity market clearing with quantity withholding.

Each aggregator cell (one aggregator, one hour) is independent: there is no
cross-aggregator constraint, so the cost-minimal dispatch follows a closed
greedy rule.  Self-generation is capped by the withheld offer a * gen_cap;
the remainder of demand is imported, surplus generation is exported.  The
whole module is vectorized over (aggregator, hour) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SchemaError


class InvalidBid(DomainError):
    """A withholding factor lies outside [0, 1]."""


class NegativeCapacity(DomainError):
    """A capacity or demand entry is negative."""


@dataclass
class LemInput:
    """Market data for |I| aggregators over T hours.

    marginal_cost and tan_theta are per aggregator, the price series are per
    hour, and everything else is (I, T).  Withhold factors scale the offered
    generation capacity: the quantity bid into the market is
    withhold * gen_cap.
    """

    marginal_cost: np.ndarray  # (I,) EUR/MWh
    demand: np.ndarray  # (I, T) MWh
    gen_cap: np.ndarray  # (I, T) MWh
    apparent_cap: np.ndarray  # (I, T) MVAh
    tan_theta: np.ndarray  # (I,)
    withhold: np.ndarray  # (I, T) in [0, 1]
    import_price: np.ndarray  # (T,) EUR/MWh
    export_price: np.ndarray  # (T,) EUR/MWh

    def __post_init__(self):
        self.marginal_cost = np.atleast_1d(np.asarray(self.marginal_cost, dtype=float))
        n_agg = self.marginal_cost.shape[0]
        for name in ("demand", "gen_cap", "apparent_cap", "withhold"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr.reshape(n_agg, -1))
        self.tan_theta = np.asarray(self.tan_theta, dtype=float).reshape(n_agg)
        self.import_price = np.atleast_1d(np.asarray(self.import_price, dtype=float))
        self.export_price = np.atleast_1d(np.asarray(self.export_price, dtype=float))

    def check(self) -> None:
        if np.any(self.withhold < 0.0) or np.any(self.withhold > 1.0):
            raise InvalidBid("withhold factors must lie in [0, 1]")
        if np.any(self.gen_cap < 0.0) or np.any(self.demand < 0.0):
            raise NegativeCapacity("gen_cap and demand must be >= 0")
        if np.any(self.apparent_cap + 1e-12 < self.gen_cap):
            raise SchemaError("apparent_cap must be >= gen_cap (data error)")


@dataclass
class LemResult:
    """Cleared dispatch, per-cell costs and nodal physical schedules.

    schedule is the local net physical injection (generation minus demand);
    imports and exports take place at the slack bus, so they do not enter
    the nodal schedule handed to the flexibility market.
    """

    g_gen: np.ndarray  # (I, T) cleared self-generation, MWh
    q_gen: np.ndarray  # (I, T) reactive dispatch, fixed at 0 here
    g_imp: np.ndarray  # (I, T)
    g_exp: np.ndarray  # (I, T)
    schedule: np.ndarray  # (I, T) = g_gen - demand
    cost: np.ndarray  # (I, T) EUR
    system_cost: float = field(default=0.0)

    def __post_init__(self):
        self.system_cost = float(self.cost.sum())


def clear_lem(inp: LemInput) -> LemResult:
    """Clear every (aggregator, hour) cell at minimal cost.

    Greedy rule per cell with offer cap = withhold * gen_cap: generate the
    full cap when the marginal cost does not exceed the export price, cover
    own demand when it does not exceed the import price, generate nothing
    otherwise.  Reactive output is costless and unconstrained across cells,
    so it is fixed at its canonical value 0; the reactive machinery lives in
    the flexibility market.
    """
    inp.check()
    cap = inp.withhold * inp.gen_cap
    mc = inp.marginal_cost[:, None]
    g_gen = np.where(
        mc <= inp.export_price[None, :],
        cap,
        np.where(mc <= inp.import_price[None, :], np.minimum(cap, inp.demand), 0.0),
    )
    g_imp = np.maximum(0.0, inp.demand - g_gen)
    g_exp = np.maximum(0.0, g_gen - inp.demand)
    cost = mc * g_gen + inp.import_price[None, :] * g_imp - inp.export_price[None, :] * g_exp
    return LemResult(
        g_gen=g_gen,
        q_gen=np.zeros_like(g_gen),
        g_imp=g_imp,
        g_exp=g_exp,
        schedule=g_gen - inp.demand,
        cost=cost,
    )


def reference_cost(inp: LemInput) -> np.ndarray:
    """Per-cell cost under truthful bidding: the withhold factor forced to 1."""
    truthful = LemInput(
        marginal_cost=inp.marginal_cost,
        demand=inp.demand,
        gen_cap=inp.gen_cap,
        apparent_cap=inp.apparent_cap,
        tan_theta=inp.tan_theta,
        withhold=np.ones_like(inp.gen_cap),
        import_price=inp.import_price,
        export_price=inp.export_price,
    )
    return clear_lem(truthful).cost
