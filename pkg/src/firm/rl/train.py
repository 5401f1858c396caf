"""Episodic DDPG training against the simulator under random anomaly campaigns."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from firm.anomaly import CampaignParams, schedule_campaign
from firm.controller.policies import FirmParams, backlogged_instances, firm_actions, step_violated
from firm.rl.buffer import InsufficientSamples
from firm.rl.pool import AgentPool
from firm.rl.state import encode_state, reward
from firm.rng import substream
from firm.sim.cluster import Simulator
from firm.sim.scenario import Scenario
from firm.sim.workload import US_PER_S

LOG_HEADER = ["episode", "steps", "total_reward", "critic_loss", "actor_objective", "epsilon"]
CULPRIT_SOURCES = ("ground_truth", "extractor")


@dataclass
class TrainConfig:
    max_steps: int = 300
    initial_cap: int = 30  # step cap for the early, exploration-heavy episodes
    cap_growth_start: int = 1000  # episode index where the cap starts growing
    cap_growth_episodes: int = 2000  # episodes over which it grows to max_steps
    drop_terminate: float = 0.5
    drop_patience: int = 10
    alpha: float = 0.5
    culprit_source: str = "ground_truth"
    updates_per_step: int = 1
    campaign: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict | None) -> TrainConfig:
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training settings: {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.culprit_source not in CULPRIT_SOURCES:
            raise ValueError(f"culprit_source must be one of {CULPRIT_SOURCES}")
        return cfg

    def step_cap(self, episode: int) -> int:
        if episode < self.cap_growth_start:
            return min(self.initial_cap, self.max_steps)
        frac = min(1.0, (episode - self.cap_growth_start) / max(1, self.cap_growth_episodes))
        return int(round(self.initial_cap + frac * (self.max_steps - self.initial_cap)))


@dataclass
class EpisodeLog:
    episode: int
    steps: int
    total_reward: float
    critic_loss: float
    actor_objective: float
    epsilon: float

    def row(self) -> list:
        return [self.episode, self.steps, repr(self.total_reward), repr(self.critic_loss),
                repr(self.actor_objective), repr(self.epsilon)]


def ground_truth_culprits(sim: Simulator, targets: set[str]) -> set[str]:
    """Injected targets plus instances that are oversubscribed or backed up right now."""
    return set(targets) | {iid for iid, inst in sim.instances.items() if inst.slowdown > 1.0} | backlogged_instances(sim)


def run_episode(scenario: Scenario, pool: AgentPool, episode: int, seed: int, cfg: TrainConfig,
                firm_params: FirmParams, extractor=None, learn: bool = True) -> EpisodeLog:
    """One episode of the control loop with exploration.

    Only the culprits of a violating step act, and each of them contributes one
    transition; the logged reward is the per-step mean over every instance.
    """
    cap = cfg.step_cap(episode)
    sim_seed = int(substream(seed, "episode", episode).integers(2**63))
    instances = scenario.instance_ids
    campaign = schedule_campaign(CampaignParams.from_dict(cfg.campaign), cap * US_PER_S + US_PER_S, instances,
                                 substream(seed, "campaign", episode), seed=sim_seed)
    sim = Simulator(scenario, sim_seed, campaign, keep_spans=extractor is not None)
    slos = scenario.slos
    serves = scenario.serves()
    tf = scenario.timeout_factor
    svc_of = {iid: sim.instances[iid].service_id for iid in instances}
    low = {iid: 0 for iid in instances}

    def culprit_set(res) -> set[str]:
        if extractor is not None:
            extractor.observe(res.telemetry.t, res.traces)
        if not step_violated(res, slos):
            return set()
        if extractor is None:
            return ground_truth_culprits(sim, res.anomaly_targets)
        return {c.instance_id for c in extractor.localize(res.telemetry.t, res.traces, res.telemetry) if c.decision}

    def instance_reward(tel, prev_tel, iid, flags) -> tuple[float, np.ndarray]:
        s = encode_state(tel, prev_tel, iid, slos, iid in flags, serves[svc_of[iid]], tf)
        it = tel.instances[iid]
        return reward(s.sm, it.utilization / it.upper, it.limits / it.upper, cfg.alpha), s.vector()

    prev = None
    cur = sim.step()
    flags = culprit_set(cur)
    total = 0.0
    losses, objs = [], []
    bad_run = 0
    steps = 0
    for _ in range(cap):
        tel = cur.telemetry
        for iid in instances:
            low[iid] = low[iid] + 1 if tel.instances[iid].util_ratio[0] < firm_params.scale_in_util else 0
        acted = {}
        for iid in sorted(flags):
            agent = pool.agent_for(svc_of[iid])
            state = encode_state(tel, prev.telemetry if prev else None, iid, slos, True, serves[svc_of[iid]], tf).vector()
            raw = agent.select_action(state, explore=learn)
            for act in firm_actions(sim, iid, raw, low[iid], firm_params):
                sim.execute_action(iid, act)
            acted[iid] = (state, raw)
        prev, cur = cur, sim.step()
        flags = culprit_set(cur)
        tel2 = cur.telemetry
        rewards = []
        for iid in instances:
            r, s2 = instance_reward(tel2, tel, iid, flags)
            rewards.append(r)
            if learn and iid in acted:
                pool.agent_for(svc_of[iid]).remember(acted[iid][0], acted[iid][1], r, s2)
        if learn:
            for agent in pool.unique_agents():
                for _ in range(cfg.updates_per_step):
                    try:
                        loss, obj = agent.train_step()
                    except InsufficientSamples:
                        break
                    losses.append(loss)
                    objs.append(obj)
        total += float(np.mean(rewards))
        steps += 1
        bad_run = bad_run + 1 if tel2.drop_rate() > cfg.drop_terminate else 0
        if bad_run >= cfg.drop_patience:
            break
    eps = float(np.mean([a.epsilon for a in pool.unique_agents()]))
    return EpisodeLog(episode, steps, total, float(np.mean(losses)) if losses else float("nan"),
                      float(np.mean(objs)) if objs else float("nan"), eps)


def train(scenario: Scenario, pool: AgentPool, episodes: int, seed: int, cfg: TrainConfig,
          firm_params: FirmParams | None = None, log_fh=None, start_episode: int = 0,
          on_episode: Callable[[EpisodeLog], None] | None = None, extractor_factory=None) -> list[EpisodeLog]:
    firm_params = firm_params or FirmParams()
    writer = None
    if log_fh is not None:
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
    logs = []
    for ep in range(start_episode, start_episode + episodes):
        extractor = extractor_factory() if extractor_factory is not None else None
        log = run_episode(scenario, pool, ep, seed, cfg, firm_params, extractor)
        logs.append(log)
        if writer is not None:
            writer.writerow(log.row())
        if on_episode is not None:
            on_episode(log)
    return logs


def moving_average(x, window: int = 100) -> np.ndarray:
    """Trailing mean over up to ``window`` previous values (shorter at the start)."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
