"""Scenario configuration: one JSON file wiring data, agents and training.

A scenario names the network file, the price/aggregator data files, the
aggregator-to-node mapping with each aggregator's strategy, the week split
and all training hyperparameters.  The loader is strict: unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .errors import SchemaError
from .grid import Network, load_network
from .marketdata import (AggregatorSeries, PriceSeries, auto_week_split,
                         load_prices, load_series)

STRATEGIES = ("stand_alone", "arbitrage")


@dataclass
class TrainerConfig:
    """Learning hyperparameters; defaults follow the study's reported setup."""

    gamma: float = 0.99
    minibatch: int = 35
    buffer_capacity: int = 50_000
    critic_lr: float = 5e-4
    actor_lr: float = 1e-4
    tau: float = 0.001
    updates_per_episode: int = 5
    noise_sigma: float = 0.3
    noise_decay: float = 0.999
    episodes: int = 5000
    eval_every: int = 50
    hidden: tuple = (64, 64)

    def check(self) -> None:
        if not (0.0 <= self.gamma <= 1.0):
            raise SchemaError("gamma must lie in [0, 1]")
        for name in ("minibatch", "buffer_capacity", "updates_per_episode", "eval_every"):
            if getattr(self, name) <= 0:
                raise SchemaError(f"{name} must be positive")
        for name in ("critic_lr", "actor_lr", "tau", "noise_sigma", "noise_decay"):
            if getattr(self, name) < 0:
                raise SchemaError(f"{name} must be >= 0")
        if self.tau > 1.0 or self.noise_decay > 1.0:
            raise SchemaError("tau and noise_decay must be <= 1")


@dataclass
class AggregatorSpec:
    id: int
    node: int
    strategy: str
    marginal_cost: float

    def check(self) -> None:
        if self.strategy not in STRATEGIES:
            raise SchemaError(f"aggregator {self.id}: strategy must be one of {STRATEGIES}")
        if self.marginal_cost < 0:
            raise SchemaError(f"aggregator {self.id}: marginal_cost must be >= 0")


@dataclass
class ScenarioConfig:
    """A fully loaded scenario ready to train or evaluate."""

    network: Network
    prices: PriceSeries
    series: AggregatorSeries
    aggregators: list[AggregatorSpec]
    weeks: dict
    seed: int = 0
    settlement_mode: str = "margin"
    price_cap: float = 1000.0
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def check(self) -> None:
        self.trainer.check()
        if self.settlement_mode not in ("margin", "literal"):
            raise SchemaError("settlement_mode must be 'margin' or 'literal'")
        if self.price_cap <= 0:
            raise SchemaError("price_cap must be positive")
        non_slack = [n for n in self.network.node_ids() if n != self.network.slack_node]
        nodes = [a.node for a in self.aggregators]
        if sorted(nodes) != sorted(non_slack):
            raise SchemaError("need exactly one aggregator per non-slack node")
        ids = [a.id for a in self.aggregators]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate aggregator ids")
        if set(ids) != set(self.series.ids):
            raise SchemaError("aggregator ids do not match the series file")
        for agg in self.aggregators:
            agg.check()
        n_weeks = self.prices.n_weeks
        if self.series.gen_cap.shape[1] != len(self.prices.p_im):
            raise SchemaError("price and aggregator series lengths differ")
        for key in ("train", "eval", "test"):
            if key not in self.weeks:
                raise SchemaError(f"weeks missing '{key}'")
        train = set(self.weeks["train"])
        test = set(self.weeks["test"])
        ev = self.weeks["eval"]
        all_named = list(train) + [ev] + list(test)
        if any(w < 0 or w >= n_weeks for w in all_named):
            raise SchemaError("week index out of range")
        if train & test or ev in train or ev in test:
            raise SchemaError("train/eval/test weeks must be disjoint")

    @property
    def strategies(self) -> list[str]:
        return [a.strategy for a in self.aggregators]


_TOP_KEYS = {"network", "prices", "series", "aggregators", "weeks", "seed",
             "settlement_mode", "price_cap", "trainer"}
_AGG_KEYS = {"id", "node", "strategy", "marginal_cost"}


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"unknown scenario keys {sorted(unknown)}")
    for key in ("network", "prices", "series", "aggregators"):
        if key not in raw:
            raise SchemaError(f"scenario missing '{key}'")

    base = path.parent
    network = load_network(base / raw["network"])
    prices = load_prices(base / raw["prices"])
    series = load_series(base / raw["series"])

    aggs = []
    for item in raw["aggregators"]:
        unknown = set(item) - _AGG_KEYS
        if unknown:
            raise SchemaError(f"aggregator entry has unknown keys {sorted(unknown)}")
        aggs.append(AggregatorSpec(
            id=int(item["id"]), node=int(item["node"]),
            strategy=item.get("strategy", "stand_alone"),
            marginal_cost=float(item["marginal_cost"]),
        ))

    weeks = raw.get("weeks", "auto")
    if weeks == "auto":
        weeks = auto_week_split(prices.n_weeks)

    trainer_raw = raw.get("trainer", {})
    known = {f.name for f in dc_fields(TrainerConfig)}
    unknown = set(trainer_raw) - known
    if unknown:
        raise SchemaError(f"unknown trainer keys {sorted(unknown)}")
    if "hidden" in trainer_raw:
        trainer_raw = dict(trainer_raw, hidden=tuple(trainer_raw["hidden"]))
    trainer = TrainerConfig(**trainer_raw)

    scenario = ScenarioConfig(
        network=network, prices=prices, series=series, aggregators=aggs,
        weeks=weeks, seed=int(raw.get("seed", 0)),
        settlement_mode=raw.get("settlement_mode", "margin"),
        price_cap=float(raw.get("price_cap", 1000.0)),
        trainer=trainer,
    )
    scenario.check()
    return scenario


def save_scenario_file(path, network_file: str, prices_file: str, series_file: str,
                       aggregators: list[AggregatorSpec], weeks="auto", seed: int = 0,
                       settlement_mode: str = "margin", price_cap: float = 1000.0,
                       trainer: dict | None = None) -> None:
    raw = {
        "network": network_file,
        "prices": prices_file,
        "series": series_file,
        "aggregators": [
            {"id": a.id, "node": a.node, "strategy": a.strategy, "marginal_cost": a.marginal_cost}
            for a in aggregators
        ],
        "weeks": weeks,
        "seed": seed,
        "settlement_mode": settlement_mode,
        "price_cap": price_cap,
    }
    if trainer:
        raw["trainer"] = trainer
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=1)
        fh.write("\n")
