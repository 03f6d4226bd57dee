"""Two-stage hourly market game: energy bids, then flexibility bids.

Each hour an aggregator first chooses how much of its generation capacity to
withhold from the day-ahead energy market (stage one), observes the outcome,
then prices its up/down regulation offers into the flexibility market whose
clearing also fixes the balancing settlement (stage two).

Observations depend on exogenous data and the agent's own current-hour
choices only, never on earlier market outcomes, so a whole episode can be
cleared in vectorized form (run_episode) as well as stepped hour by hour.
Both paths use identical market code; the vectorized path batches the 168
hourly flexibility LPs into one solve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import lfm as lfm_mod
from .balancing import BalancePrices, BalanceResult, settle_imbalance
from .config import ScenarioConfig
from .errors import DomainError
from .grid import validate_and_order
from .lem import LemInput, LemResult, clear_lem, reference_cost
from .lfm import FlexResult, prepare_lfm, voltage_never_binds

EPISODE_HOURS = 168

LOG_COLUMNS = [
    "week", "hour", "agent", "a_lem", "p_up", "p_dw", "sched", "actual",
    "g_up", "g_dw", "dlmp", "p_bal_pos", "p_bal_neg",
    "c_lem", "c_lem_ref", "c_flx", "c_bal",
    "r_stage1", "r_stage2", "r_primary", "lfm_feasible",
]


class UnknownWeek(DomainError):
    """The requested week is not present in the dataset."""


@dataclass
class TwoStageTransition:
    """One hour of the game for all agents, both stages."""

    hour: int
    obs1: np.ndarray  # (I, 3)
    act1: np.ndarray  # (I,)
    reward1: np.ndarray  # (I,) stage-one reward, truthful-reference form
    obs2: np.ndarray  # (I, 5)
    act2: np.ndarray  # (I, 2)
    reward2: np.ndarray  # (I,)
    reward_primary: np.ndarray  # (I,) both-stage reward used by arbitrage agents
    obs1_next: np.ndarray | None
    terminal: bool


@dataclass
class EpisodeLog:
    """Hour-major record of one full episode (T hours, I agents)."""

    week: int
    obs1: np.ndarray  # (T, I, 3)
    act1: np.ndarray  # (T, I)
    obs2: np.ndarray  # (T, I, 5)
    act2: np.ndarray  # (T, I, 2)
    schedule: np.ndarray  # (T, I) MWh
    actual: np.ndarray  # (T, I) MWh
    g_up: np.ndarray  # (T, I)
    g_dw: np.ndarray  # (T, I)
    dlmp: np.ndarray  # (T, I)
    c_lem: np.ndarray  # (T, I)
    c_ref: np.ndarray  # (T, I)
    c_flx: np.ndarray  # (T, I)
    c_bal: np.ndarray  # (T, I)
    r_stage1: np.ndarray  # (T, I)
    r_stage2: np.ndarray  # (T, I)
    r_primary: np.ndarray  # (T, I)
    lfm_feasible: np.ndarray  # (T,)
    bal_pos: np.ndarray  # (T,)
    bal_neg: np.ndarray  # (T,)
    flex: FlexResult | None = None

    @property
    def n_hours(self) -> int:
        return self.obs1.shape[0]

    def transitions(self):
        T = self.n_hours
        for t in range(T):
            yield TwoStageTransition(
                hour=t,
                obs1=self.obs1[t], act1=self.act1[t], reward1=self.r_stage1[t],
                obs2=self.obs2[t], act2=self.act2[t], reward2=self.r_stage2[t],
                reward_primary=self.r_primary[t],
                obs1_next=self.obs1[t + 1] if t + 1 < T else None,
                terminal=t + 1 == T,
            )

    def scores(self):
        """Per-agent weekly scores: (stage1, stage2, total), all in EUR."""
        s1 = self.r_stage1.sum(axis=0)
        s2 = self.r_stage2.sum(axis=0)
        return s1, s2, s1 + s2


class TwoStageEnv:
    """The market game for one scenario; hosts market clearing end to end."""

    def __init__(self, scenario: ScenarioConfig, k_sides: int = lfm_mod.DEFAULT_SIDES):
        scenario.check()
        self.scenario = scenario
        self.network = scenario.network
        self.T = EPISODE_HOURS
        self.n_agents = len(scenario.aggregators)
        self.agent_ids = [a.id for a in scenario.aggregators]
        self.agent_nodes = [a.node for a in scenario.aggregators]
        self.strategies = list(scenario.strategies)
        self.marginal_cost = np.array([a.marginal_cost for a in scenario.aggregators])
        self.tan_theta = np.array([
            scenario.network.node(a.node).tan_theta for a in scenario.aggregators
        ])
        self.price_cap = scenario.price_cap
        self.settlement_mode = scenario.settlement_mode

        series_index = {agg_id: k for k, agg_id in enumerate(scenario.series.ids)}
        self._series_rows = [series_index[a.id] for a in scenario.aggregators]

        topo = validate_and_order(self.network)
        qdem = np.array([self.network.node(a.node).q_demand for a in scenario.aggregators])
        reduced = bool((self.tan_theta == 0.0).all() and not qdem.any())
        with_voltage = (not reduced) or (not voltage_never_binds(self.network, topo))
        self.structure = prepare_lfm(self.network, k_sides=k_sides,
                                     reduced=reduced, with_voltage=with_voltage)
        # agent -> column in the bid-node layout
        self._bid_col = np.array([self.structure.bid_nodes.index(n) for n in self.agent_nodes])
        self._node_col = np.array([self.structure.nodes.index(n) for n in self.agent_nodes])
        self._qdem = qdem

        self._week = None
        self._hour = None
        self._stage = None
        self._week_cache = None
        self._pending = None

    # --- data access -------------------------------------------------------

    def _week_data(self, week: int) -> dict:
        if week < 0 or week >= self.scenario.prices.n_weeks:
            raise UnknownWeek(f"week {week} outside 0..{self.scenario.prices.n_weeks - 1}")
        if self._week_cache is not None and self._week_cache["week"] == week:
            return self._week_cache
        prices = self.scenario.prices.week(week)
        gen_cap, demand = self.scenario.series.week(week)
        gen_cap = gen_cap[self._series_rows].T  # (T, I)
        demand = demand[self._series_rows].T
        self._week_cache = {
            "week": week, "prices": prices,
            "gen_cap": gen_cap, "demand": demand,
            "p_net": gen_cap - demand,
        }
        return self._week_cache

    def observations_stage1(self, week: int) -> np.ndarray:
        data = self._week_data(week)
        T, I = self.T, self.n_agents
        obs = np.empty((T, I, 3))
        obs[:, :, 0] = ((np.arange(T) + 1.0) / T)[:, None]
        obs[:, :, 1] = data["p_net"]
        obs[:, :, 2] = data["prices"].p_im[:, None]
        return obs

    def observations_stage2(self, week: int, act1: np.ndarray) -> np.ndarray:
        data = self._week_data(week)
        T, I = self.T, self.n_agents
        obs = np.empty((T, I, 5))
        obs[:, :, 0] = ((np.arange(T) + 1.0) / T)[:, None]
        obs[:, :, 1] = data["p_net"]
        obs[:, :, 2] = act1
        obs[:, :, 3] = data["prices"].p_bal_pos[:, None]
        obs[:, :, 4] = data["prices"].p_bal_neg[:, None]
        return obs

    # --- market pipeline ---------------------------------------------------

    def _lem_hours(self, data: dict, hours: slice, withhold: np.ndarray):
        """Clear the energy market for a block of hours; withhold is (t, I)."""
        inp = LemInput(
            marginal_cost=self.marginal_cost,
            demand=data["demand"][hours].T,
            gen_cap=data["gen_cap"][hours].T,
            apparent_cap=data["gen_cap"][hours].T,  # tight but valid apparent rating
            tan_theta=self.tan_theta,
            withhold=withhold.T,
            import_price=data["prices"].p_im[hours],
            export_price=data["prices"].p_ex[hours],
        )
        result = clear_lem(inp)
        ref = reference_cost(inp)
        return result, ref

    def _lfm_hours(self, lem: LemResult, withhold: np.ndarray, act2: np.ndarray,
                   gen_cap: np.ndarray) -> FlexResult:
        """Clear the flexibility market for (t, I) blocks of stage-2 actions."""
        st = self.structure
        t_block = withhold.shape[0]
        M = len(st.bid_nodes)
        sched = np.zeros((t_block, M))
        up_price = np.zeros((t_block, M))
        dw_price = np.zeros((t_block, M))
        up_cap = np.zeros((t_block, M))
        dw_cap = np.zeros((t_block, M))
        cols = self._bid_col
        sched[:, cols] = lem.schedule.T
        up_price[:, cols] = act2[:, :, 0]
        dw_price[:, cols] = act2[:, :, 1]
        up_cap[:, cols] = (1.0 - withhold) * gen_cap
        dw_cap[:, cols] = np.maximum(lem.g_gen.T, 0.0)
        qdem_cols = np.zeros((t_block, M))
        qdem_cols[:, cols] = self._qdem[None, :]
        batch = lfm_mod._hourly_batch(st, sched, qdem_cols, up_price, dw_price, up_cap, dw_cap)
        problem = lfm_mod.LfmProblem(structure=st, batch=batch, hours=np.arange(t_block))
        return lfm_mod._clear_batch(problem, self.settlement_mode)

    def _settle(self, data, hours, lem, ref, flex: FlexResult):
        cols = self._node_col
        sched = lem.schedule.T  # (t, I)
        g_up = flex.g_up[:, cols]
        g_dw = flex.g_dw[:, cols]
        actual = sched + g_up - g_dw
        prices = BalancePrices(data["prices"].p_bal_pos[hours], data["prices"].p_bal_neg[hours])
        bal = settle_imbalance(sched.T, actual.T, prices)  # broadcast per agent rows
        c_bal = bal.cost.T
        c_flx = flex.settlement[:, cols]
        c_lem = lem.cost.T
        c_ref = ref.T
        r1 = c_ref - c_lem
        r2 = -c_flx - c_bal
        # evaluated as r2 - c_lem so both published identities hold bit-exactly
        r_pr = r2 - c_lem
        return dict(actual=actual, g_up=g_up, g_dw=g_dw, dlmp=flex.dlmp[:, cols],
                    c_lem=c_lem, c_ref=c_ref, c_flx=c_flx, c_bal=c_bal,
                    r1=r1, r2=r2, r_pr=r_pr)

    # --- vectorized episode ------------------------------------------------

    def run_episode(self, policy_stage1, policy_stage2, week: int) -> EpisodeLog:
        """Roll a full week in one pass.

        policy_stage1 maps (T, I, 3) observations to (T, I) actions in
        [0, 1]; policy_stage2 maps (T, I, 5) to (T, I, 2) within the price
        cap.  Policies apply their own exploration noise if any.
        """
        data = self._week_data(week)
        obs1 = self.observations_stage1(week)
        act1 = np.clip(np.asarray(policy_stage1(obs1), dtype=float), 0.0, 1.0)
        lem, ref = self._lem_hours(data, slice(0, self.T), act1)
        obs2 = self.observations_stage2(week, act1)
        act2 = np.clip(np.asarray(policy_stage2(obs2), dtype=float), 0.0, self.price_cap)
        flex = self._lfm_hours(lem, act1, act2, data["gen_cap"])
        parts = self._settle(data, slice(0, self.T), lem, ref, flex)
        return EpisodeLog(
            week=week, obs1=obs1, act1=act1, obs2=obs2, act2=act2,
            schedule=lem.schedule.T, actual=parts["actual"],
            g_up=parts["g_up"], g_dw=parts["g_dw"], dlmp=parts["dlmp"],
            c_lem=parts["c_lem"], c_ref=parts["c_ref"],
            c_flx=parts["c_flx"], c_bal=parts["c_bal"],
            r_stage1=parts["r1"], r_stage2=parts["r2"], r_primary=parts["r_pr"],
            lfm_feasible=flex.feasible.copy(),
            bal_pos=data["prices"].p_bal_pos.copy(), bal_neg=data["prices"].p_bal_neg.copy(),
            flex=flex,
        )

    # --- sequential stepping (same markets, one hour at a time) ------------

    def reset(self, week: int) -> np.ndarray:
        obs1 = self.observations_stage1(week)
        self._week = week
        self._hour = 0
        self._stage = 1
        self._obs1_all = obs1
        return obs1[0]

    def step_stage1(self, act1: np.ndarray):
        if self._stage != 1:
            raise DomainError("stage-one step expected a fresh or just-settled hour")
        data = self._week_data(self._week)
        act1 = np.clip(np.asarray(act1, dtype=float).reshape(self.n_agents), 0.0, 1.0)
        h = self._hour
        hours = slice(h, h + 1)
        lem, ref = self._lem_hours(data, hours, act1[None, :])
        obs2 = np.empty((self.n_agents, 5))
        obs2[:, 0] = (h + 1.0) / self.T
        obs2[:, 1] = data["p_net"][h]
        obs2[:, 2] = act1
        obs2[:, 3] = data["prices"].p_bal_pos[h]
        obs2[:, 4] = data["prices"].p_bal_neg[h]
        r1 = (ref - lem.cost).T[0]
        self._pending = dict(act1=act1, lem=lem, ref=ref, hours=hours)
        self._stage = 2
        return lem, r1, obs2

    def step_stage2(self, act2: np.ndarray):
        if self._stage != 2:
            raise DomainError("stage-two step requires a cleared stage one")
        data = self._week_data(self._week)
        act2 = np.clip(np.asarray(act2, dtype=float).reshape(self.n_agents, 2),
                       0.0, self.price_cap)
        p = self._pending
        hours = p["hours"]
        flex = self._lfm_hours(p["lem"], p["act1"][None, :], act2[None, :, :],
                               data["gen_cap"][hours])
        parts = self._settle(data, hours, p["lem"], p["ref"], flex)
        bal = BalanceResult(deviation=(parts["actual"] - p["lem"].schedule.T)[0],
                            cost=parts["c_bal"][0])
        self._hour += 1
        self._stage = 1
        done = self._hour >= self.T
        obs1_next = None if done else self._obs1_all[self._hour]
        self._pending = None
        return flex, bal, parts["r2"][0], parts["r_pr"][0], obs1_next, done


# --- transition log round trip ----------------------------------------------

def write_transition_log(log: EpisodeLog, path) -> None:
    """Per-hour, per-agent CSV of actions, money flows and rewards."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for t in range(log.n_hours):
            for i in range(log.obs1.shape[1]):
                writer.writerow([
                    log.week, t, i,
                    repr(log.act1[t, i]), repr(log.act2[t, i, 0]), repr(log.act2[t, i, 1]),
                    repr(log.schedule[t, i]), repr(log.actual[t, i]),
                    repr(log.g_up[t, i]), repr(log.g_dw[t, i]), repr(log.dlmp[t, i]),
                    repr(log.bal_pos[t]), repr(log.bal_neg[t]),
                    repr(log.c_lem[t, i]), repr(log.c_ref[t, i]),
                    repr(log.c_flx[t, i]), repr(log.c_bal[t, i]),
                    repr(log.r_stage1[t, i]), repr(log.r_stage2[t, i]),
                    repr(log.r_primary[t, i]),
                    int(log.lfm_feasible[t]),
                ])


def replay_transition_log(path, settlement_mode: str = "margin") -> dict:
    """Re-settle a transition log and verify every reward identity.

    Flexibility and balancing settlements are recomputed from the logged
    prices and quantities, rewards re-derived, and everything compared to
    the logged values.  Returns max absolute deviations per check.
    """
    from .lfm import settle_flex

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LOG_COLUMNS:
            raise DomainError(f"unexpected transition log header: {reader.fieldnames}")
        for r in reader:
            rows.append(r)
    if not rows:
        raise DomainError("transition log is empty")

    def col(name):
        return np.array([float(r[name]) for r in rows])

    a_up, a_dw = col("p_up"), col("p_dw")
    g_up, g_dw, dlmp = col("g_up"), col("g_dw"), col("dlmp")
    sched, actual = col("sched"), col("actual")
    pos, neg = col("p_bal_pos"), col("p_bal_neg")
    c_lem, c_ref = col("c_lem"), col("c_lem_ref")
    c_flx, c_bal = col("c_flx"), col("c_bal")
    r1, r2, r_pr = col("r_stage1"), col("r_stage2"), col("r_primary")

    class _Bid:
        up_price, dw_price = a_up, a_dw

    eta_pay = -dlmp
    flx_new = settle_flex(eta_pay, _Bid, g_up, g_dw, mode=settlement_mode)
    bal_new = settle_imbalance(sched, actual, BalancePrices(pos, neg)).cost
    checks = {
        "flex_settlement": np.abs(flx_new - c_flx).max(),
        "balancing_settlement": np.abs(bal_new - c_bal).max(),
        "actual_dispatch": np.abs(actual - (sched + g_up - g_dw)).max(),
        "stage1_reward": np.abs(r1 - (c_ref - c_lem)).max(),
        "stage2_reward": np.abs(r2 - (-c_flx - c_bal)).max(),
        "primary_reward": np.abs(r_pr - ((-c_flx - c_bal) - c_lem)).max(),
        "reward_link": np.abs(r_pr - (r2 - c_lem)).max(),
    }
    return checks
