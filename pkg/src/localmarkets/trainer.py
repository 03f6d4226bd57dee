"""Hierarchical multi-agent actor-critic training over the two-stage game.

Every aggregator owns two sub-agents, one per market stage.  Each sub-agent
has an actor (its own observation in, action out), a centralized critic over
the joint observations and actions of its stage, target copies of both, a
replay buffer and an exploration noise process.  Stand-alone aggregators
reward their first-stage sub-agent with the stage-one cost reduction alone;
arbitrage aggregators reward it with the total across both stages, which is
what lets withholding pay off later in the flexibility market.

All randomness (weights, noise, week choice, minibatch draws) flows from one
seed through spawned generators, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, TrainerConfig
from .env import EpisodeLog, TwoStageEnv
from .nets import (AdamState, Mlp, NoiseProcess, adam_step, backward, forward,
                   load_params, noisy_action, save_params, smooth_l1, soft_update)
from .replay import ReplayBuffer

OBS1_DIM = 3
OBS2_DIM = 5
ACT1_DIM = 1
ACT2_DIM = 2


def td_residual(reward, gamma, target_q_next, q, terminal=False):
    """Temporal-difference residual; the discounted term drops when terminal."""
    reward = np.asarray(reward, dtype=float)
    cont = 1.0 - np.asarray(terminal, dtype=float)
    return reward + gamma * cont * np.asarray(target_q_next, dtype=float) - np.asarray(q, dtype=float)


@dataclass
class SubAgent:
    """Actor-critic pair (plus targets, buffer, noise) for one market stage."""

    role: str
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState
    buffer: ReplayBuffer
    noise: NoiseProcess
    sample_rng: np.random.Generator


@dataclass
class Aggregator:
    id: int
    node: int
    strategy: str
    primary: SubAgent
    secondary: SubAgent

    def subs(self):
        return (self.primary, self.secondary)


class Trainer:
    """Builds the agents for a scenario and runs the training loop."""

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.cfg: TrainerConfig = scenario.trainer
        self.env = TwoStageEnv(scenario)
        self.n_agents = self.env.n_agents

        # observation scales fixed from the dataset, so networks see O(1) inputs
        p_net = scenario.series.gen_cap - scenario.series.demand
        self.obs1_scale = np.array([
            1.0,
            max(1.0, float(np.abs(p_net).max())),
            max(1.0, float(scenario.prices.p_im.max())),
        ])
        self.obs2_scale = np.array([
            1.0,
            self.obs1_scale[1],
            1.0,
            max(1.0, float(scenario.prices.p_bal_pos.max())),
            max(1.0, float(scenario.prices.p_bal_neg.max())),
        ])
        self.act2_scale = scenario.price_cap

        seed_root = np.random.SeedSequence(scenario.seed)
        self._week_rng = np.random.default_rng(seed_root.spawn(1)[0])
        self.aggregators: list[Aggregator] = []
        for spec in scenario.aggregators:
            primary = self._make_sub("primary", OBS1_DIM, ACT1_DIM, 1.0, seed_root)
            secondary = self._make_sub("secondary", OBS2_DIM, ACT2_DIM,
                                       scenario.price_cap, seed_root)
            self.aggregators.append(Aggregator(
                id=spec.id, node=spec.node, strategy=spec.strategy,
                primary=primary, secondary=secondary,
            ))

    def _make_sub(self, role: str, obs_dim: int, act_dim: int, act_hi: float,
                  seed_root: np.random.SeedSequence) -> SubAgent:
        cfg = self.cfg
        init_rng, noise_rng, sample_rng = (np.random.default_rng(s) for s in seed_root.spawn(3))
        hidden = list(cfg.hidden)
        actor = Mlp([obs_dim, *hidden, act_dim], init_rng, out="box", out_lo=0.0, out_hi=act_hi)
        critic = Mlp([self.n_agents * (obs_dim + act_dim), *hidden, 1], init_rng, out="linear")
        buffer = ReplayBuffer(cfg.buffer_capacity, fields={
            "obs": (self.n_agents, obs_dim),
            "act": (self.n_agents, act_dim),
            "reward": (),
            "next_obs": (self.n_agents, obs_dim),
            "terminal": (),
        })
        return SubAgent(
            role=role, actor=actor, critic=critic,
            target_actor=actor.clone(), target_critic=critic.clone(),
            actor_opt=AdamState(lr=cfg.actor_lr), critic_opt=AdamState(lr=cfg.critic_lr),
            buffer=buffer,
            noise=NoiseProcess(sigma=cfg.noise_sigma, decay=cfg.noise_decay, rng=noise_rng),
            sample_rng=sample_rng,
        )

    # --- rollouts ------------------------------------------------------------

    def _policy_stage1(self, noisy: bool):
        def act(obs):  # (T, I, 3) -> (T, I)
            T = obs.shape[0]
            out = np.empty((T, self.n_agents))
            scaled = obs / self.obs1_scale
            for i, agg in enumerate(self.aggregators):
                mu = forward(agg.primary.actor, scaled[:, i, :])[:, 0]
                noise = agg.primary.noise if noisy else None
                out[:, i] = noisy_action(mu, noise, 0.0, 1.0)
            return out
        return act

    def _policy_stage2(self, noisy: bool):
        def act(obs):  # (T, I, 5) -> (T, I, 2)
            T = obs.shape[0]
            out = np.empty((T, self.n_agents, ACT2_DIM))
            scaled = obs / self.obs2_scale
            for i, agg in enumerate(self.aggregators):
                mu = forward(agg.secondary.actor, scaled[:, i, :])
                noise = agg.secondary.noise if noisy else None
                out[:, i, :] = noisy_action(mu, noise, 0.0, self.scenario.price_cap)
            return out
        return act

    def rollout(self, week: int, noisy: bool) -> EpisodeLog:
        return self.env.run_episode(self._policy_stage1(noisy), self._policy_stage2(noisy), week)

    def store(self, log: EpisodeLog) -> None:
        """Append one episode to every sub-agent's buffer.

        Primary transitions chain stage-one observations hour to hour; the
        reward is the stage-one cost reduction for stand-alone aggregators
        and the full two-stage reward for arbitrage aggregators.
        """
        T = log.n_hours
        next_obs1 = np.zeros_like(log.obs1)
        next_obs1[:-1] = log.obs1[1:]
        next_obs2 = np.zeros_like(log.obs2)
        next_obs2[:-1] = log.obs2[1:]
        terminal = np.zeros(T)
        terminal[-1] = 1.0
        act1 = log.act1[:, :, None]
        for i, agg in enumerate(self.aggregators):
            r_primary = log.r_primary[:, i] if agg.strategy == "arbitrage" else log.r_stage1[:, i]
            agg.primary.buffer.push(obs=log.obs1, act=act1, reward=r_primary,
                                    next_obs=next_obs1, terminal=terminal)
            agg.secondary.buffer.push(obs=log.obs2, act=log.act2, reward=log.r_stage2[:, i],
                                      next_obs=next_obs2, terminal=terminal)

    # --- updates ---------------------------------------------------------------

    def _norm_obs(self, role: str, obs):
        return obs / (self.obs1_scale if role == "primary" else self.obs2_scale)

    def _norm_act(self, role: str, act):
        return act if role == "primary" else act / self.act2_scale

    def _joint(self, obs_n, act_n):
        B = obs_n.shape[0]
        return np.concatenate([obs_n.reshape(B, -1), act_n.reshape(B, -1)], axis=1)

    def critic_update(self, idx: int, role: str) -> float:
        """One Adam step on the critic against the smooth-L1 TD loss."""
        sub = getattr(self.aggregators[idx], role)
        cfg = self.cfg
        batch = sub.buffer.sample(sub.sample_rng, cfg.minibatch)
        obs_n = self._norm_obs(role, batch["obs"])
        act_n = self._norm_act(role, batch["act"])
        next_obs_n = self._norm_obs(role, batch["next_obs"])

        next_act = np.empty_like(act_n)
        for j, other in enumerate(self.aggregators):
            target = getattr(other, role).target_actor
            next_act[:, j, :] = forward(target, next_obs_n[:, j, :])
        next_act_n = self._norm_act(role, next_act)

        q_next = forward(sub.target_critic, self._joint(next_obs_n, next_act_n))[:, 0]
        q, cache = forward(sub.critic, self._joint(obs_n, act_n), want_cache=True)
        zeta = td_residual(batch["reward"], cfg.gamma, q_next, q[:, 0], batch["terminal"])
        loss, dzeta = smooth_l1(zeta)
        grad_theta, _ = backward(sub.critic, cache, (-dzeta)[:, None])
        adam_step(sub.critic_opt, sub.critic.theta, grad_theta)
        return loss

    def actor_update(self, idx: int, role: str, critic_fn=None) -> float:
        """One Adam ascent step on the actor along the critic's action slope.

        critic_fn(actions) -> (q, dq/da) replaces the critic network when
        given, which lets tests drive the actor against an analytic target.
        """
        sub = getattr(self.aggregators[idx], role)
        cfg = self.cfg
        batch = sub.buffer.sample(sub.sample_rng, cfg.minibatch)
        obs_n = self._norm_obs(role, batch["obs"])
        own_obs = obs_n[:, idx, :]
        a_raw, cache_a = forward(sub.actor, own_obs, want_cache=True)

        if critic_fn is not None:
            q, dq_da_raw = critic_fn(a_raw)
            j_value = float(np.mean(q))
            upstream = dq_da_raw / a_raw.shape[0]
        else:
            act_n = self._norm_act(role, batch["act"]).copy()
            act_dim = act_n.shape[2]
            act_n[:, idx, :] = self._norm_act(role, a_raw)
            q, cache_c = forward(sub.critic, self._joint(obs_n, act_n), want_cache=True)
            j_value = float(q.mean())
            ones = np.full((q.shape[0], 1), 1.0 / q.shape[0])
            _, dinput = backward(sub.critic, cache_c, ones)
            obs_width = obs_n.shape[1] * obs_n.shape[2]
            da_n = dinput[:, obs_width + idx * act_dim: obs_width + (idx + 1) * act_dim]
            upstream = da_n / (1.0 if role == "primary" else self.act2_scale)

        grad_theta, _ = backward(sub.actor, cache_a, -upstream)
        adam_step(sub.actor_opt, sub.actor.theta, grad_theta)
        return j_value

    def soft_updates(self, idx: int, role: str) -> None:
        sub = getattr(self.aggregators[idx], role)
        soft_update(sub.target_critic.theta, sub.critic.theta, self.cfg.tau)
        soft_update(sub.target_actor.theta, sub.actor.theta, self.cfg.tau)

    def update_round(self) -> None:
        for idx in range(self.n_agents):
            for role in ("primary", "secondary"):
                self.critic_update(idx, role)
                self.actor_update(idx, role)
                self.soft_updates(idx, role)

    # --- training loop -----------------------------------------------------

    def train(self, out_dir=None, episodes=None, progress=False):
        """Run the full loop; returns the training-curve rows.

        Each episode rolls one uniformly drawn training week with
        exploration noise, stores it, then runs the configured number of
        update rounds; noise decays once per episode.  Every eval_every
        episodes the current greedy policy is scored on the evaluation week.
        """
        cfg = self.cfg
        episodes = cfg.episodes if episodes is None else episodes
        train_weeks = list(self.scenario.weeks["train"])
        eval_week = self.scenario.weeks["eval"]
        curve = []
        for ep in range(1, episodes + 1):
            week = train_weeks[int(self._week_rng.integers(len(train_weeks)))]
            log = self.rollout(week, noisy=True)
            self.store(log)
            if len(self.aggregators[0].primary.buffer) >= cfg.minibatch:
                for _ in range(cfg.updates_per_episode):
                    self.update_round()
            for agg in self.aggregators:
                agg.primary.noise.end_episode()
                agg.secondary.noise.end_episode()
            if ep % cfg.eval_every == 0 or ep == episodes:
                scores = self.evaluate([eval_week])
                for i, agg in enumerate(self.aggregators):
                    curve.append({"episode": ep, "agent": agg.id,
                                  "eval_score": scores["total"][0, i]})
                if progress:
                    total = scores["total"][0].sum()
                    print(f"episode {ep}: eval total {total:+.1f} EUR")
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_curve(curve, out / "training_curve.csv")
            self.save_checkpoint(out / "checkpoint")
        return curve

    def evaluate(self, weeks) -> dict:
        """Noise-free scores per week and agent, split by stage.

        Stage-one scores use the truthful-reference form for every strategy
        so the numbers are comparable across scenarios; the two parts sum to
        the total exactly.
        """
        weeks = list(weeks)
        stage1 = np.zeros((len(weeks), self.n_agents))
        stage2 = np.zeros((len(weeks), self.n_agents))
        infeasible = np.zeros(len(weeks), dtype=int)
        for k, week in enumerate(weeks):
            log = self.rollout(week, noisy=False)
            s1, s2, _tot = log.scores()
            stage1[k], stage2[k] = s1, s2
            infeasible[k] = int((~log.lfm_feasible).sum())
        return {"weeks": weeks, "stage1": stage1, "stage2": stage2,
                "total": stage1 + stage2, "infeasible_hours": infeasible}

    # --- persistence ---------------------------------------------------------

    def save_checkpoint(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"agents": [], "seed": self.scenario.seed}
        for agg in self.aggregators:
            meta["agents"].append({"id": agg.id, "node": agg.node, "strategy": agg.strategy})
            for role in ("primary", "secondary"):
                sub = getattr(agg, role)
                save_params(directory / f"agg{agg.id}_{role}.npz", {
                    "actor": sub.actor.theta,
                    "critic": sub.critic.theta,
                    "target_actor": sub.target_actor.theta,
                    "target_critic": sub.target_critic.theta,
                })
        with open(directory / "checkpoint.json", "w") as fh:
            json.dump(meta, fh, indent=1)

    def load_checkpoint(self, directory) -> None:
        directory = Path(directory)
        for agg in self.aggregators:
            for role in ("primary", "secondary"):
                sub = getattr(agg, role)
                params = load_params(directory / f"agg{agg.id}_{role}.npz")
                sub.actor.set_theta(params["actor"])
                sub.critic.set_theta(params["critic"])
                sub.target_actor.set_theta(params["target_actor"])
                sub.target_critic.set_theta(params["target_critic"])


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["episode", "agent", "eval_score"])
        writer.writeheader()
        for row in curve:
            writer.writerow(row)


def write_scores(scores: dict, agent_ids, path) -> None:
    """scores.csv: one row per (week, agent) with the stage split and total."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["week", "agent", "stage1", "stage2", "total"])
        for k, week in enumerate(scores["weeks"]):
            for i, agent in enumerate(agent_ids):
                writer.writerow([week, agent,
                                 repr(scores["stage1"][k, i]),
                                 repr(scores["stage2"][k, i]),
                                 repr(scores["total"][k, i])])


def train(scenario: ScenarioConfig, out_dir=None, episodes=None, progress=False) -> Trainer:
    """Build a Trainer for the scenario and run it; returns the trainer."""
    trainer = Trainer(scenario)
    trainer.train(out_dir=out_dir, episodes=episodes, progress=progress)
    return trainer
