"""Sequentially cleared local electricity markets with learning bidders.

Simulates a day-ahead local electricity market, a LinDistFlow-based local
flexibility market with nodal dual prices, and a balancing settlement, and
trains one pair of actor-critic sub-agents per aggregator on top of the
resulting two-stage hourly game.
"""

__version__ = "0.1.0"
