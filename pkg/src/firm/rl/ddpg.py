"""DDPG actor-critic agent with target networks, replay and JSON checkpoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np

from firm.rl.buffer import InsufficientSamples, ReplayBuffer
from firm.rl.mlp import Mlp, soft_update

CHECKPOINT_VERSION = 1
STATE_DIM = 8
ACTION_DIM = 5


class VersionMismatch(ValueError):
    pass


class CorruptCheckpoint(ValueError):
    pass


class LoadMode(Enum):
    RESUME = "resume"
    TRANSFER_BASE = "transfer_base"


@dataclass
class DdpgConfig:
    state_dim: int = STATE_DIM
    action_dim: int = ACTION_DIM
    hidden: int = 40
    actor_lr: float = 3e-4
    critic_lr: float = 3e-3
    gamma: float = 0.9
    tau: float = 2e-3
    batch_size: int = 64
    buffer_size: int = 100_000
    noise_sigma: float = 0.2
    epsilon: float = 1.0
    epsilon_decay: float = 1e-6
    transfer_epsilon: float = 0.2
    final_scale: float = 1e-3

    @classmethod
    def from_dict(cls, d: dict | None) -> DdpgConfig:
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray


class DdpgAgent:
    def __init__(self, config: DdpgConfig, rng: np.random.Generator, noise_rng: np.random.Generator | None = None):
        c = config
        self.config = c
        h = c.hidden
        self.actor = Mlp.init([c.state_dim, h, h, c.action_dim], ["relu", "relu", "tanh"], rng, c.final_scale)
        self.critic = Mlp.init([c.state_dim + c.action_dim, h, h, 1], ["relu", "relu", "identity"], rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.buffer = ReplayBuffer(c.buffer_size, c.state_dim, c.action_dim)
        self.epsilon = c.epsilon
        self.noise_rng = noise_rng if noise_rng is not None else rng
        self.sample_rng = rng
        self.train_steps = 0

    # -- acting ----------------------------------------------------------------

    def act(self, states: np.ndarray) -> np.ndarray:
        """Deterministic policy output for a batch of states."""
        return self.actor(states)

    def select_action(self, state: np.ndarray, explore: bool = False) -> np.ndarray:
        a = self.actor(np.asarray(state, float).reshape(1, -1))[0]
        if explore:
            a = a + self.noise_rng.normal(0.0, self.epsilon * self.config.noise_sigma, size=a.shape)
            a = np.clip(a, -1.0, 1.0)
            self.epsilon = max(0.0, self.epsilon - self.config.epsilon_decay)
        return a

    def select_actions(self, states: np.ndarray, explore: bool = False) -> np.ndarray:
        """Row-wise ``select_action``; the exploration schedule advances once per row."""
        a = self.actor(np.asarray(states, float))
        if explore:
            n = a.shape[0]
            eps = np.maximum(0.0, self.epsilon - self.config.epsilon_decay * np.arange(n))
            noise = self.noise_rng.normal(0.0, 1.0, size=a.shape) * (eps * self.config.noise_sigma)[:, None]
            a = np.clip(a + noise, -1.0, 1.0)
            self.epsilon = max(0.0, self.epsilon - self.config.epsilon_decay * n)
        return a

    # -- learning --------------------------------------------------------------

    def critic_targets(self, batch: Batch) -> np.ndarray:
        a2 = self.actor_target(batch.s2)
        q2 = self.critic_target(np.hstack([batch.s2, a2]))[:, 0]
        return batch.r + self.config.gamma * q2

    def critic_loss_grads(self, batch: Batch, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """L = mean((y - Q(s, a))^2) and dL/d(critic params)."""
        q, cache = self.critic.forward(np.hstack([batch.s, batch.a]))
        diff = q[:, 0] - y
        n = len(y)
        grads, _ = self.critic.backward(cache, (2.0 / n) * diff[:, None])
        return float(np.mean(diff * diff)), grads

    def actor_objective_grads(self, batch: Batch) -> tuple[float, list[np.ndarray]]:
        """J = mean Q(s, pi(s)) and dJ/d(actor params), chained through the critic."""
        a, a_cache = self.actor.forward(batch.s)
        q, c_cache = self.critic.forward(np.hstack([batch.s, a]))
        n = len(batch.s)
        _, g_in = self.critic.backward(c_cache, np.full((n, 1), 1.0 / n))
        grads, _ = self.actor.backward(a_cache, g_in[:, self.config.state_dim:])
        return float(q.mean()), grads

    def update(self, batch: Batch) -> tuple[float, float]:
        y = self.critic_targets(batch)
        loss, g_c = self.critic_loss_grads(batch, y)
        self.critic.sgd(g_c, self.config.critic_lr)
        obj, g_a = self.actor_objective_grads(batch)
        self.actor.sgd(g_a, -self.config.actor_lr)  # gradient ascent on J
        soft_update(self.actor_target, self.actor, self.config.tau)
        soft_update(self.critic_target, self.critic, self.config.tau)
        self.train_steps += 1
        return loss, obj

    def train_step(self) -> tuple[float, float]:
        if len(self.buffer) < self.config.batch_size:
            raise InsufficientSamples(f"need {self.config.batch_size} transitions, have {len(self.buffer)}")
        s, a, r, s2 = self.buffer.sample(self.config.batch_size, self.sample_rng)
        return self.update(Batch(s, a, r, s2))

    def remember(self, s, a, r: float, s2) -> None:
        self.buffer.add(s, a, r, s2)

    # -- checkpoints -------------------------------------------------------------

    def to_dict(self, mode: str = "one-for-all") -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "mode": mode,
            "arch": {"actor": self.actor.dims, "critic": self.critic.dims},
            "hyperparams": asdict(self.config),
            "epsilon": self.epsilon,
            "train_steps": self.train_steps,
            "actor": self.actor.to_dict(),
            "critic": self.critic.to_dict(),
            "actor_target": self.actor_target.to_dict(),
            "critic_target": self.critic_target.to_dict(),
        }

    def save(self, path: str | Path, mode: str = "one-for-all") -> None:
        Path(path).write_text(json.dumps(self.to_dict(mode)) + "\n")

    def load_state(self, d: dict, mode: LoadMode) -> None:
        if d.get("version") != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint version {d.get('version')!r}, expected {CHECKPOINT_VERSION}")
        try:
            actor = Mlp.from_dict(d["actor"])
            critic = Mlp.from_dict(d["critic"])
            actor_t = Mlp.from_dict(d["actor_target"])
            critic_t = Mlp.from_dict(d["critic_target"])
            eps = float(d["epsilon"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc
        if actor.dims != self.actor.dims or critic.dims != self.critic.dims:
            raise CorruptCheckpoint(f"architecture {actor.dims}/{critic.dims} does not match the agent")
        self.actor, self.critic, self.actor_target, self.critic_target = actor, critic, actor_t, critic_t
        self.buffer.clear()
        if mode is LoadMode.RESUME:
            self.epsilon = eps
            self.train_steps = int(d.get("train_steps", 0))
        else:
            self.epsilon = self.config.transfer_epsilon
            self.train_steps = 0


def read_checkpoint(path: str | Path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise CorruptCheckpoint(f"{path}: expected a JSON object")
    return d


def load_checkpoint(path: str | Path, mode: LoadMode | str, rng: np.random.Generator,
                    noise_rng: np.random.Generator | None = None, config: DdpgConfig | None = None) -> DdpgAgent:
    mode = LoadMode(mode) if isinstance(mode, str) else mode
    d = read_checkpoint(path)
    if d.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {d.get('version')!r}, expected {CHECKPOINT_VERSION}")
    if config is None:
        try:
            config = DdpgConfig.from_dict(d["hyperparams"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"malformed hyperparameters: {exc}") from exc
    agent = DdpgAgent(config, rng, noise_rng)
    agent.load_state(d, mode)
    return agent
