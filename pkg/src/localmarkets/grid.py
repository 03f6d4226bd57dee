"""Radial distribution network model and topology services.

The network hosts the physical data used by the flexibility-market optimal
power flow: per-line impedances, per-node and per-line apparent power limits,
reactive ratio bounds and squared-voltage bounds.  All electrical quantities
are per-unit on ``base_power`` MVA (1 MVA by default), so hourly per-unit
power and MWh energy coincide numerically.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .errors import DomainError, SchemaError


class CycleDetected(DomainError):
    """The closed lines contain a loop."""


class Disconnected(DomainError):
    """Some node is unreachable from the slack over closed lines."""


@dataclass
class NodeSpec:
    """Electrical limits of one node.

    v_min / v_max bound the *squared* voltage magnitude.  q_demand is the
    node's constant reactive demand in pu; it defaults to zero because grids
    without reactive-demand data are common (a per-hour override can be
    passed to the flexibility market directly).
    """

    id: int
    s_max: float = 10.0
    g_max: float = 10.0
    tan_theta: float = 0.0
    v_min: float = 0.81
    v_max: float = 1.21
    q_demand: float = 0.0

    def check(self) -> None:
        if self.s_max < 0 or self.g_max < 0:
            raise SchemaError(f"node {self.id}: power limits must be >= 0")
        if self.tan_theta < 0:
            raise SchemaError(f"node {self.id}: tan_theta must be >= 0")
        if not (0.0 < self.v_min <= self.v_max):
            raise SchemaError(f"node {self.id}: need 0 < v_min <= v_max")


@dataclass
class LineSpec:
    """One branch: impedance, apparent limit and switch state."""

    from_node: int
    to_node: int
    r: float
    x: float
    s_max: float
    closed: bool = True

    def check(self) -> None:
        if self.r < 0 or self.x < 0:
            raise SchemaError(f"line {self.from_node}-{self.to_node}: r, x must be >= 0")
        if self.closed and self.s_max <= 0:
            raise SchemaError(f"line {self.from_node}-{self.to_node}: closed line needs s_max > 0")


@dataclass
class Network:
    """A distribution grid; radial over its closed lines once validated.

    Immutable after construction by convention: nothing in this package
    mutates a loaded network, so one instance can back any number of
    concurrent solver calls.
    """

    nodes: list[NodeSpec]
    lines: list[LineSpec]
    slack_node: int
    base_power: float = 1.0

    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def node(self, node_id: int) -> NodeSpec:
        return self._by_id()[node_id]

    def _by_id(self) -> dict[int, NodeSpec]:
        return {n.id: n for n in self.nodes}

    def closed_lines(self) -> list[LineSpec]:
        return [l for l in self.lines if l.closed]

    def to_mw(self, value_pu):
        """Convert a per-unit quantity to MW (or MWh per hour) for reporting."""
        return value_pu * self.base_power

    def check(self) -> None:
        if not self.nodes:
            raise SchemaError("network has no nodes")
        ids = self.node_ids()
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate node ids")
        if self.slack_node not in ids:
            raise SchemaError(f"slack node {self.slack_node} not among nodes")
        known = set(ids)
        for line in self.lines:
            line.check()
            if line.from_node not in known or line.to_node not in known:
                raise SchemaError(f"line {line.from_node}-{line.to_node} references unknown node")
        for node in self.nodes:
            node.check()


@dataclass
class TopologyOrder:
    """Breadth-first orientation of a validated radial network.

    ``order`` lists node ids from the slack outward; every closed line is
    oriented parent -> child, so each non-slack node has exactly one parent
    line (its sole incoming line) and zero or more child lines (outgoing).
    """

    order: list[int]
    parent: dict[int, int]
    parent_line: dict[int, LineSpec]
    children: dict[int, list[int]] = field(default_factory=dict)

    def depth_of(self, node_id: int) -> int:
        d = 0
        n = node_id
        while n in self.parent:
            n = self.parent[n]
            d += 1
        return d


def validate_and_order(network: Network) -> TopologyOrder:
    """Check radiality and return the parent map plus a breadth-first order.

    Raises CycleDetected if the closed lines contain a loop and Disconnected
    if any node cannot be reached from the slack.  Succeeds exactly when the
    closed lines form a spanning tree rooted at the slack.
    """
    network.check()
    adj: dict[int, list[tuple[int, LineSpec]]] = {n.id: [] for n in network.nodes}
    for line in network.closed_lines():
        adj[line.from_node].append((line.to_node, line))
        adj[line.to_node].append((line.from_node, line))

    order = [network.slack_node]
    parent: dict[int, int] = {}
    parent_line: dict[int, LineSpec] = {}
    children: dict[int, list[int]] = {n.id: [] for n in network.nodes}
    seen = {network.slack_node}
    queue = deque([network.slack_node])
    while queue:
        here = queue.popleft()
        for other, line in sorted(adj[here], key=lambda t: t[0]):
            if other == parent.get(here):
                continue
            if other in seen:
                raise CycleDetected(
                    f"closed lines form a loop through nodes {here} and {other}"
                )
            seen.add(other)
            parent[other] = here
            parent_line[other] = line
            children[here].append(other)
            order.append(other)
            queue.append(other)

    if len(seen) != len(network.nodes):
        missing = sorted(set(network.node_ids()) - seen)
        raise Disconnected(f"nodes {missing} unreachable from slack {network.slack_node}")
    # A tree on |N| nodes has |N|-1 edges; more closed lines would have
    # produced a cycle above, fewer a disconnection.
    assert len(network.closed_lines()) == len(network.nodes) - 1
    return TopologyOrder(order=order, parent=parent, parent_line=parent_line, children=children)


def downstream_voltage(v_parent: float, line: LineSpec, p_flow: float, q_flow: float) -> float:
    """Squared voltage at the child end of a line given the parent's.

    Linearized branch-flow drop: twice the resistive drop on active flow plus
    twice the reactive drop on reactive flow, both measured parent -> child.
    """
    return v_parent - 2.0 * line.r * p_flow - 2.0 * line.x * q_flow


# --- network file round trip -------------------------------------------------

_NODE_KEYS = {"id", "s_max", "g_max", "tan_theta", "v_min", "v_max", "q_demand"}
_LINE_KEYS = {"from", "to", "r", "x", "s_max", "closed"}
_TOP_KEYS = {"nodes", "lines", "slack", "base_mva"}


def load_network(path) -> Network:
    """Read a network from its JSON file; unknown keys are rejected."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise SchemaError("network file must hold a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"unknown top-level keys {sorted(unknown)}")
    for key in ("nodes", "lines", "slack"):
        if key not in raw:
            raise SchemaError(f"network file missing '{key}'")

    nodes = []
    for item in raw["nodes"]:
        unknown = set(item) - _NODE_KEYS
        if unknown:
            raise SchemaError(f"node entry has unknown keys {sorted(unknown)}")
        if "id" not in item:
            raise SchemaError("node entry missing 'id'")
        nodes.append(NodeSpec(**{k: item[k] for k in item}))

    lines = []
    for item in raw["lines"]:
        unknown = set(item) - _LINE_KEYS
        if unknown:
            raise SchemaError(f"line entry has unknown keys {sorted(unknown)}")
        for key in ("from", "to", "r", "x", "s_max"):
            if key not in item:
                raise SchemaError(f"line entry missing '{key}'")
        lines.append(
            LineSpec(
                from_node=item["from"],
                to_node=item["to"],
                r=item["r"],
                x=item["x"],
                s_max=item["s_max"],
                closed=item.get("closed", True),
            )
        )

    net = Network(
        nodes=nodes,
        lines=lines,
        slack_node=raw["slack"],
        base_power=raw.get("base_mva", 1.0),
    )
    net.check()
    return net


def save_network(network: Network, path) -> None:
    raw = {
        "slack": network.slack_node,
        "base_mva": network.base_power,
        "nodes": [
            {
                "id": n.id,
                "s_max": n.s_max,
                "g_max": n.g_max,
                "tan_theta": n.tan_theta,
                "v_min": n.v_min,
                "v_max": n.v_max,
                "q_demand": n.q_demand,
            }
            for n in network.nodes
        ],
        "lines": [
            {
                "from": l.from_node,
                "to": l.to_node,
                "r": l.r,
                "x": l.x,
                "s_max": l.s_max,
                "closed": l.closed,
            }
            for l in network.lines
        ],
    }
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=1)
        fh.write("\n")


def eleven_bus_network() -> Network:
    """Synthetic 11-bus feeder pair with two normally-open tie switches.

    Two feeders leave the slack (bus 1): 1-2-3-4-5 and 1-6-7-8-9-10-11.
    Tie switches at (3, 10) and (5, 6) are kept open for radial operation;
    closing either one creates a loop.  Limits are plausible placeholders,
    not measurements of any published test grid.
    """
    nodes = [NodeSpec(id=1, s_max=20.0, g_max=20.0, tan_theta=0.4, v_min=1.0, v_max=1.0)]
    nodes += [
        NodeSpec(id=i, s_max=6.0, g_max=5.0, tan_theta=0.4, v_min=0.9025, v_max=1.1025)
        for i in range(2, 12)
    ]
    spine = [(1, 2), (2, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8), (8, 9), (9, 10), (10, 11)]
    lines = [LineSpec(a, b, r=0.01, x=0.02, s_max=8.0) for a, b in spine]
    lines.append(LineSpec(3, 10, r=0.012, x=0.024, s_max=8.0, closed=False))
    lines.append(LineSpec(5, 6, r=0.012, x=0.024, s_max=8.0, closed=False))
    return Network(nodes=nodes, lines=lines, slack_node=1)
