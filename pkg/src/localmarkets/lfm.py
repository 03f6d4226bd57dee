"""Local flexibility market: LinDistFlow LP, nodal dual prices, settlement.

The grid operator buys up/down regulation so that day-ahead schedules can be
delivered without violating line, node, reactive-ratio or voltage limits.
Each hour clears as one linear program over the linearized branch-flow
model; hours are independent, so a horizon is solved as one shared-structure
batch.  Quadratic apparent-power limits are replaced by an inscribed regular
polygon (an inner approximation: LP-feasible points always satisfy the true
quadratic limits).

Dual prices: the dual of each nodal active-balance row is reported as the
nodal price eta, normalized as the marginal objective change per unit
increase of that node's scheduled injection.  Where up-regulation is bought,
that sensitivity is negative (more schedule means less regulation to buy),
so settlements use the payment orientation -eta: the price per MWh the
operator pays for regulation delivered at the node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .grid import Network, TopologyOrder, validate_and_order
from .lp import LpBatch, LpSolution, LpStatus, solve_lp_batch

DEFAULT_SIDES = 16
_DLMP_MARK = ":dlmp"


class MissingBid(DomainError):
    """Some non-slack node lacks a flexibility bid for some hour."""


class UnvalidatedNetwork(DomainError):
    """The network is not a valid radial grid."""


class NotOptimal(DomainError):
    """Dual extraction was attempted on a non-optimal solution."""


@dataclass
class FlexBid:
    """One node's offer for one hour: prices in EUR/MWh, caps in MWh."""

    node: int
    hour: int
    up_price: float
    dw_price: float
    up_cap: float
    dw_cap: float


@dataclass
class LfmStructure:
    """Constant part of the hourly LP for one network.

    Variable layout and row layout are fixed; only objective coefficients,
    balance targets and regulation caps change from hour to hour.
    """

    network: Network
    topo: TopologyOrder
    nodes: list[int]
    slack_idx: int
    bid_nodes: list[int]  # non-slack nodes in layout order
    lines: list[tuple[int, int, float, float, float]]  # (parent_idx, child_idx, r, x, s_max)
    k_sides: int
    reduced: bool  # reactive block dropped (valid when tan_theta = q_demand = 0)
    with_voltage: bool
    a_eq: np.ndarray = field(repr=False, default=None)
    a_in: np.ndarray = field(repr=False, default=None)
    lo_in: np.ndarray = field(repr=False, default=None)
    hi_in: np.ndarray = field(repr=False, default=None)
    eq_tags: list = field(default_factory=list)
    in_tags: list = field(default_factory=list)
    var_names: list = field(default_factory=list)
    slices: dict = field(default_factory=dict)
    bal_p_rows: np.ndarray = None
    n_var: int = 0
    lb_base: np.ndarray = None
    ub_base: np.ndarray = None


@dataclass
class LfmProblem:
    """A horizon of hourly clearings sharing one LfmStructure."""

    structure: LfmStructure
    batch: LpBatch
    hours: np.ndarray

    def member(self, k: int):
        return self.batch.member(k)


@dataclass
class FlexResult:
    """Cleared regulation, prices, state variables and money flows.

    Arrays are hour-major with node columns ordered like `nodes`.  dlmp holds
    the sensitivity-normalized dual (dObj per unit of scheduled injection);
    settlement used the payment orientation -dlmp.  Hours whose LP was
    infeasible are flagged and settle with zero flexibility.
    """

    nodes: list[int]
    hours: np.ndarray
    g_up: np.ndarray  # (T, N) MWh
    g_dw: np.ndarray  # (T, N) MWh
    dlmp: np.ndarray  # (T, N) EUR/MWh
    injection: np.ndarray  # (T, N) pu
    q_injection: np.ndarray  # (T, N) pu
    q_dispatch: np.ndarray  # (T, N) pu
    flow_p: np.ndarray  # (T, L) pu
    flow_q: np.ndarray  # (T, L) pu
    voltage: np.ndarray  # (T, N) pu^2
    settlement: np.ndarray  # (T, N) EUR, positive = node pays
    system_cost: np.ndarray  # (T,) EUR
    feasible: np.ndarray  # (T,) bool
    max_residual: np.ndarray  # (T,)
    statuses: list[LpStatus] = field(default_factory=list)
    degenerate: np.ndarray | None = None  # (T, N) bool, filled by dual checks

    def node_column(self, node_id: int) -> int:
        return self.nodes.index(node_id)


def prepare_lfm(network: Network, k_sides: int = DEFAULT_SIDES,
                reduced: bool = False, with_voltage: bool = True) -> LfmStructure:
    """Validate the grid and assemble the constant LP structure.

    k_sides must be a multiple of 4 so the polygon touches the circle on the
    axes and a purely active flow may use the full apparent rating.
    """
    if k_sides < 4 or k_sides % 4:
        raise ValueError("k_sides must be a positive multiple of 4")
    try:
        topo = validate_and_order(network)
    except DomainError as exc:
        raise UnvalidatedNetwork(str(exc)) from exc

    nodes = network.node_ids()
    idx = {nid: i for i, nid in enumerate(nodes)}
    slack_idx = idx[network.slack_node]
    bid_nodes = [nid for nid in nodes if nid != network.slack_node]
    lines = []
    for child in topo.order[1:]:
        line = topo.parent_line[child]
        lines.append((idx[topo.parent[child]], idx[child], line.r, line.x, line.s_max))

    st = LfmStructure(
        network=network, topo=topo, nodes=nodes, slack_idx=slack_idx,
        bid_nodes=bid_nodes, lines=lines, k_sides=k_sides,
        reduced=reduced, with_voltage=with_voltage,
    )
    _assemble(st)
    return st


def _assemble(st: LfmStructure) -> None:
    net = st.network
    nodes, lines = st.nodes, st.lines
    N, L, M = len(nodes), len(lines), len(st.bid_nodes)
    bid_idx = [st.nodes.index(nid) for nid in st.bid_nodes]
    specs = {n.id: n for n in net.nodes}

    blocks = [("g", N), ("up", M), ("dw", M), ("fg", L)]
    if not st.reduced:
        blocks += [("q", N), ("qp", M), ("fq", L)]
    if st.with_voltage:
        blocks += [("v", N)]
    slices, pos = {}, 0
    for name, size in blocks:
        slices[name] = slice(pos, pos + size)
        pos += size
    st.slices, st.n_var = slices, pos

    var_names = []
    for name, size in blocks:
        labels = nodes if size == N else (st.bid_nodes if size == M else [f"l{i}" for i in range(L)])
        var_names += [f"{name}_{labels[i]}" for i in range(size)]
    st.var_names = var_names

    eq_rows, eq_tags = [], []

    def eq(coefs: dict, tag: str):
        row = np.zeros(st.n_var)
        for j, val in coefs.items():
            row[j] = val
        eq_rows.append(row)
        eq_tags.append(tag)

    g0, up0, dw0 = slices["g"].start, slices["up"].start, slices["dw"].start
    fg0 = slices["fg"].start

    # Nodal active balance: g - up + dw = schedule.  These rows carry the
    # schedule on their right-hand side; their duals are the nodal prices.
    st.bal_p_rows = np.arange(M)
    for m, nid in enumerate(st.bid_nodes):
        eq({g0 + bid_idx[m]: 1.0, up0 + m: -1.0, dw0 + m: 1.0},
           f"balance-p:n{nid}{_DLMP_MARK}")

    if not st.reduced:
        q0, qp0 = slices["q"].start, slices["qp"].start
        for m, nid in enumerate(st.bid_nodes):
            eq({q0 + bid_idx[m]: 1.0, qp0 + m: -1.0}, f"balance-q:n{nid}")

    # Flow conservation: injection plus parent inflow equals child outflows.
    parent_line_of = {ci: li for li, (_, ci, *_rest) in enumerate(lines)}
    children_of = {i: [] for i in range(N)}
    for li, (pi, ci, *_rest) in enumerate(lines):
        children_of[pi].append(li)
    for i, nid in enumerate(nodes):
        coefs = {g0 + i: 1.0}
        if i in parent_line_of:
            coefs[fg0 + parent_line_of[i]] = 1.0
        for li in children_of[i]:
            coefs[fg0 + li] = -1.0
        eq(coefs, f"conservation-p:n{nid}")
    if not st.reduced:
        fq0, q0 = slices["fq"].start, slices["q"].start
        for i, nid in enumerate(nodes):
            coefs = {q0 + i: 1.0}
            if i in parent_line_of:
                coefs[fq0 + parent_line_of[i]] = 1.0
            for li in children_of[i]:
                coefs[fq0 + li] = -1.0
            eq(coefs, f"conservation-q:n{nid}")

    if st.with_voltage:
        v0 = slices["v"].start
        for li, (pi, ci, r, x, _s) in enumerate(lines):
            coefs = {v0 + ci: 1.0, v0 + pi: -1.0, fg0 + li: 2.0 * r}
            if not st.reduced:
                coefs[slices["fq"].start + li] = 2.0 * x
            eq(coefs, f"voltage-drop:l{li}")

    in_rows, in_lo, in_hi, in_tags = [], [], [], []

    def ineq(coefs: dict, lo: float, hi: float, tag: str):
        row = np.zeros(st.n_var)
        for j, val in coefs.items():
            row[j] = val
        in_rows.append(row)
        in_lo.append(lo)
        in_hi.append(hi)
        in_tags.append(tag)

    if not st.reduced:
        K = st.k_sides
        phi = (2.0 * np.arange(K) + 1.0) * np.pi / K
        shrink = np.cos(np.pi / K)
        q0, fq0 = slices["q"].start, slices["fq"].start
        for i, nid in enumerate(nodes):
            s_max = specs[nid].s_max
            for k in range(K):
                ineq({g0 + i: np.cos(phi[k]), q0 + i: np.sin(phi[k])},
                     -np.inf, s_max * shrink, f"apparent-node:n{nid}:k{k}")
        for li, (_pi, _ci, _r, _x, s_max) in enumerate(lines):
            for k in range(K):
                ineq({fg0 + li: np.cos(phi[k]), fq0 + li: np.sin(phi[k])},
                     -np.inf, s_max * shrink, f"apparent-line:l{li}:k{k}")
        for m, nid in enumerate(st.bid_nodes):
            tan = specs[nid].tan_theta
            i = bid_idx[m]
            ineq({q0 + i: 1.0, g0 + i: -tan}, -np.inf, 0.0, f"reactive-band-hi:n{nid}")
            ineq({q0 + i: -1.0, g0 + i: -tan}, -np.inf, 0.0, f"reactive-band-lo:n{nid}")

    st.a_eq = np.array(eq_rows) if eq_rows else np.zeros((0, st.n_var))
    st.a_in = np.array(in_rows) if in_rows else np.zeros((0, st.n_var))
    st.lo_in = np.array(in_lo)
    st.hi_in = np.array(in_hi)
    st.eq_tags, st.in_tags = eq_tags, in_tags

    lb = np.full(st.n_var, -np.inf)
    ub = np.full(st.n_var, np.inf)
    for i, nid in enumerate(nodes):
        spec = specs[nid]
        cap = spec.g_max if not st.reduced else min(spec.g_max, spec.s_max)
        lb[g0 + i], ub[g0 + i] = -cap, cap
    if st.reduced:
        for li, (_pi, _ci, _r, _x, s_max) in enumerate(lines):
            lb[fg0 + li], ub[fg0 + li] = -s_max, s_max
    if st.with_voltage:
        v0 = slices["v"].start
        for i, nid in enumerate(nodes):
            lb[v0 + i], ub[v0 + i] = specs[nid].v_min, specs[nid].v_max
    st.lb_base, st.ub_base = lb, ub


def voltage_never_binds(network: Network, topo: TopologyOrder) -> bool:
    """True when voltage bounds cannot bind for any flow within line limits.

    Worst-case squared-voltage drops are accumulated along each path with
    both flow components at their apparent ratings; used to decide whether
    the voltage block can be dropped from the reduced formulation.
    """
    specs = {n.id: n for n in network.nodes}
    slack = specs[network.slack_node]
    drop = {network.slack_node: 0.0}
    for child in topo.order[1:]:
        line = topo.parent_line[child]
        drop[child] = drop[topo.parent[child]] + 2.0 * (line.r + line.x) * line.s_max
    for nid, d in drop.items():
        if slack.v_min - d < specs[nid].v_min or slack.v_max + d > specs[nid].v_max:
            return False
    return True


def build_lfm(network: Network, schedule, q_demand, bids, hours=None,
              k_sides: int = DEFAULT_SIDES) -> LfmProblem:
    """Assemble the horizon LP from per-node schedules and flexibility bids.

    schedule / q_demand: mapping node id -> hourly array (MWh / MVArh), one
    entry per non-slack node (q_demand entries may be omitted, defaulting to
    zero).  bids: FlexBid instances covering every (non-slack node, hour)
    pair exactly once.
    """
    probe = prepare_lfm(network, k_sides=k_sides)  # validates; layout only
    bid_nodes = probe.bid_nodes
    missing = set(schedule) - set(bid_nodes)
    if missing:
        raise MissingBid(f"schedule given for unknown nodes {sorted(missing)}")
    if set(bid_nodes) - set(schedule):
        raise MissingBid(f"schedule missing for nodes {sorted(set(bid_nodes) - set(schedule))}")

    T = len(np.atleast_1d(next(iter(schedule.values()))))
    hours = np.arange(T) if hours is None else np.asarray(hours)
    sched = np.stack([np.atleast_1d(np.asarray(schedule[n], dtype=float)) for n in bid_nodes], axis=1)
    qdem = np.zeros_like(sched)
    for n, series in (q_demand or {}).items():
        qdem[:, bid_nodes.index(n)] = np.atleast_1d(np.asarray(series, dtype=float))

    table = {}
    for bid in bids:
        key = (bid.node, int(bid.hour))
        if key in table:
            raise MissingBid(f"duplicate bid for node {bid.node} hour {bid.hour}")
        table[key] = bid
    up_price = np.zeros_like(sched)
    dw_price = np.zeros_like(sched)
    up_cap = np.zeros_like(sched)
    dw_cap = np.zeros_like(sched)
    for t_pos, t in enumerate(hours):
        for m, nid in enumerate(bid_nodes):
            bid = table.pop((nid, int(t)), None)
            if bid is None:
                raise MissingBid(f"no bid for node {nid} hour {t}")
            up_price[t_pos, m] = bid.up_price
            dw_price[t_pos, m] = bid.dw_price
            up_cap[t_pos, m] = bid.up_cap
            dw_cap[t_pos, m] = bid.dw_cap

    specs = {n.id: n for n in network.nodes}
    reduced = all(specs[n].tan_theta == 0.0 for n in bid_nodes) and not qdem.any()
    st = prepare_lfm(network, k_sides=k_sides, reduced=reduced,
                     with_voltage=(not reduced) or not voltage_never_binds(network, probe.topo))
    batch = _hourly_batch(st, sched, qdem, up_price, dw_price, up_cap, dw_cap)
    return LfmProblem(structure=st, batch=batch, hours=hours)


def _hourly_batch(st: LfmStructure, sched_mwh, qdem_mvarh, up_price, dw_price,
                  up_cap_mwh, dw_cap_mwh) -> LpBatch:
    """Stack per-hour vectors into one batch; grid quantities go per-unit."""
    base = st.network.base_power
    T, M = sched_mwh.shape
    c = np.zeros((T, st.n_var))
    c[:, st.slices["up"]] = up_price * base
    c[:, st.slices["dw"]] = dw_price * base

    me = st.a_eq.shape[0]
    b_eq = np.zeros((T, me))
    b_eq[:, st.bal_p_rows] = sched_mwh / base
    if not st.reduced:
        b_eq[:, M:2 * M] = -qdem_mvarh / base

    lb = np.tile(st.lb_base, (T, 1))
    ub = np.tile(st.ub_base, (T, 1))
    lb[:, st.slices["up"]] = 0.0
    ub[:, st.slices["up"]] = np.maximum(up_cap_mwh, 0.0) / base
    lb[:, st.slices["dw"]] = 0.0
    ub[:, st.slices["dw"]] = np.maximum(dw_cap_mwh, 0.0) / base

    return LpBatch(
        a_eq=st.a_eq, a_in=st.a_in, c=c, b_eq=b_eq,
        lo_in=np.tile(st.lo_in, (T, 1)), hi_in=np.tile(st.hi_in, (T, 1)),
        lb=lb, ub=ub,
        eq_tags=st.eq_tags, in_tags=st.in_tags, var_names=st.var_names,
        meta={"kind": "lfm-hourly"},
    )


def extract_dlmp(solution: LpSolution) -> dict:
    """Nodal prices from one optimal hourly solution.

    Returns {node id: eta} where eta is the dual of the tagged nodal balance
    row, i.e. the marginal objective change per unit increase of the node's
    scheduled injection (EUR/MWh given unit base power).
    """
    if solution.status is not LpStatus.OPTIMAL:
        raise NotOptimal(f"solution status is {solution.status.value}")
    out = {}
    for row, tag in enumerate(solution.problem.eq_tags):
        if tag.endswith(_DLMP_MARK):
            node = int(tag.split(":n")[1].split(":")[0])
            out[node] = float(solution.y_eq[row])
    return out


def settle_flex(eta, bid, g_up, g_dw, mode: str = "margin"):
    """Flexibility settlement for one node-hour (arrays broadcast).

    margin (default): quantity-weighted margin, pay-as-price minus own bid
    cost; negative values are net revenue to the aggregator.  literal: the
    price-times-price form retained for fidelity checks only.
    """
    eta = np.asarray(eta, dtype=float)
    up_price = np.asarray(bid.up_price, dtype=float)
    dw_price = np.asarray(bid.dw_price, dtype=float)
    if mode == "margin":
        return -((eta - up_price) * np.asarray(g_up, dtype=float)
                 + (eta - dw_price) * np.asarray(g_dw, dtype=float))
    if mode == "literal":
        return (eta - up_price) * up_price + (eta - dw_price) * dw_price
    raise ValueError(f"unknown settlement mode {mode!r}")


def clear_lfm(network: Network, schedule, q_demand, bids, hours=None,
              k_sides: int = DEFAULT_SIDES, settlement_mode: str = "margin",
              check_duals: bool = False) -> FlexResult:
    """Build, solve and settle a horizon of hourly flexibility clearings."""
    problem = build_lfm(network, schedule, q_demand, bids, hours=hours, k_sides=k_sides)
    result = _clear_batch(problem, settlement_mode)
    if check_duals:
        result.degenerate = _dual_check(problem, result, tol=1e-3)
    return result


def _clear_batch(problem: LfmProblem, settlement_mode: str) -> FlexResult:
    st = problem.structure
    net = st.network
    base = net.base_power
    batch = problem.batch
    T = batch.size
    N, L, M = len(st.nodes), len(st.lines), len(st.bid_nodes)
    bid_cols = np.array([st.nodes.index(n) for n in st.bid_nodes])
    specs = {n.id: n for n in net.nodes}

    solutions = solve_lp_batch(batch)
    sched_pu = batch.b_eq[:, st.bal_p_rows]
    up_price = batch.c[:, st.slices["up"]] / base
    dw_price = batch.c[:, st.slices["dw"]] / base

    g_up = np.zeros((T, N))
    g_dw = np.zeros((T, N))
    dlmp = np.zeros((T, N))
    injection = np.zeros((T, N))
    q_injection = np.zeros((T, N))
    q_dispatch = np.zeros((T, N))
    flow_p = np.zeros((T, L))
    flow_q = np.zeros((T, L))
    voltage = np.zeros((T, N))
    system_cost = np.zeros(T)
    feasible = np.zeros(T, dtype=bool)
    max_residual = np.zeros(T)

    injection[:, bid_cols] = sched_pu  # fallback for infeasible hours
    injection[:, st.slack_idx] = -sched_pu.sum(axis=1)

    for t, sol in enumerate(solutions):
        if sol.status is LpStatus.OPTIMAL:
            feasible[t] = True
            x = sol.x
            g_up[t, bid_cols] = x[st.slices["up"]] * base
            g_dw[t, bid_cols] = x[st.slices["dw"]] * base
            dlmp[t, bid_cols] = sol.y_eq[st.bal_p_rows] / base
            injection[t] = x[st.slices["g"]]
            flow_p[t] = x[st.slices["fg"]]
            if not st.reduced:
                q_injection[t] = x[st.slices["q"]]
                q_dispatch[t, bid_cols] = x[st.slices["qp"]]
                flow_q[t] = x[st.slices["fq"]]
            if st.with_voltage:
                voltage[t] = x[st.slices["v"]]
            system_cost[t] = sol.objective
            max_residual[t] = sol.primal_residual

    if not st.with_voltage:
        voltage[:] = _propagate_voltage(st, flow_p, flow_q)
    else:
        bad = ~feasible
        if bad.any():
            voltage[bad] = _propagate_voltage(st, flow_p[bad], flow_q[bad])

    eta_pay = -dlmp  # payment orientation: EUR/MWh paid for delivered regulation
    if settlement_mode == "margin":
        settlement = -((eta_pay - _expand(up_price, bid_cols, N)) * g_up
                       + (eta_pay - _expand(dw_price, bid_cols, N)) * g_dw)
    elif settlement_mode == "literal":
        up_full = _expand(up_price, bid_cols, N)
        dw_full = _expand(dw_price, bid_cols, N)
        settlement = (eta_pay - up_full) * up_full + (eta_pay - dw_full) * dw_full
        settlement[:, st.slack_idx] = 0.0
    else:
        raise ValueError(f"unknown settlement mode {settlement_mode!r}")
    settlement[~feasible] = 0.0
    settlement[:, st.slack_idx] = 0.0

    return FlexResult(
        nodes=list(st.nodes), hours=problem.hours,
        g_up=g_up, g_dw=g_dw, dlmp=dlmp,
        injection=injection, q_injection=q_injection, q_dispatch=q_dispatch,
        flow_p=flow_p, flow_q=flow_q, voltage=voltage,
        settlement=settlement, system_cost=system_cost,
        feasible=feasible, max_residual=max_residual,
        statuses=[s.status for s in solutions],
    )


def _expand(arr_bid, bid_cols, n_total):
    out = np.zeros((arr_bid.shape[0], n_total))
    out[:, bid_cols] = arr_bid
    return out


def _propagate_voltage(st: LfmStructure, flow_p, flow_q):
    specs = {n.id: n for n in st.network.nodes}
    slack_spec = specs[st.network.slack_node]
    T = flow_p.shape[0]
    v = np.zeros((T, len(st.nodes)))
    v[:, st.slack_idx] = np.clip(1.0, slack_spec.v_min, slack_spec.v_max)
    for li, (pi, ci, r, x, _s) in enumerate(st.lines):
        v[:, ci] = v[:, pi] - 2.0 * r * flow_p[:, li] - 2.0 * x * flow_q[:, li]
    return v


def _dual_check(problem: LfmProblem, result: FlexResult, tol: float) -> np.ndarray:
    """Finite-difference verification of every nodal price.

    Re-solves the horizon with each node's schedule perturbed and flags
    entries whose dual deviates from the objective slope by more than tol
    (degenerate duals are reported, not smoothed).
    """
    st = problem.structure
    eps_pu = 1e-4 / st.network.base_power
    bid_cols = [st.nodes.index(n) for n in st.bid_nodes]
    T = problem.batch.size
    flags = np.zeros((T, len(st.nodes)), dtype=bool)
    for m, col in enumerate(bid_cols):
        shifted = LpBatch(
            a_eq=problem.batch.a_eq, a_in=problem.batch.a_in,
            c=problem.batch.c, b_eq=problem.batch.b_eq.copy(),
            lo_in=problem.batch.lo_in, hi_in=problem.batch.hi_in,
            lb=problem.batch.lb, ub=problem.batch.ub,
            eq_tags=problem.batch.eq_tags, in_tags=problem.batch.in_tags,
        )
        shifted.b_eq[:, st.bal_p_rows[m]] += eps_pu
        sols = solve_lp_batch(shifted)
        for t, sol in enumerate(sols):
            if not result.feasible[t]:
                continue
            if sol.status is not LpStatus.OPTIMAL:
                flags[t, col] = True
                continue
            slope = (sol.objective - result.system_cost[t]) / (eps_pu * st.network.base_power)
            if abs(slope - result.dlmp[t, col]) > tol:
                flags[t, col] = True
    return flags
