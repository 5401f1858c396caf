"""Agent placement: one shared agent, one per service, or per-service agents transferred from a shared one."""
from __future__ import annotations

import json
from pathlib import Path

from firm.rl.ddpg import (
    CHECKPOINT_VERSION,
    CorruptCheckpoint,
    DdpgAgent,
    DdpgConfig,
    LoadMode,
    VersionMismatch,
    read_checkpoint,
)
from firm.rng import substream

AGENT_MODES = ("one-for-all", "one-for-each", "transfer")


class AgentPool:
    def __init__(self, mode: str, services: list[str], config: DdpgConfig, seed: int):
        if mode not in AGENT_MODES:
            raise ValueError(f"unknown agent mode {mode!r}; choose from {AGENT_MODES}")
        self.mode = mode
        self.services = list(services)
        self.config = config
        self.seed = seed
        if mode == "one-for-all":
            self.agents = {"*": self._new("*")}
        else:
            self.agents = {svc: self._new(svc) for svc in self.services}

    def _new(self, key: str) -> DdpgAgent:
        return DdpgAgent(self.config, substream(self.seed, "agent_init", key),
                         substream(self.seed, "noise", key))

    def agent_for(self, service_id: str) -> DdpgAgent:
        return self.agents["*"] if self.mode == "one-for-all" else self.agents[service_id]

    def unique_agents(self) -> list[DdpgAgent]:
        return list(self.agents.values())

    # -- persistence -------------------------------------------------------------

    def to_dict(self) -> dict:
        if self.mode == "one-for-all":
            return self.agents["*"].to_dict("one-for-all")
        return {"version": CHECKPOINT_VERSION, "mode": self.mode,
                "agents": {svc: a.to_dict(self.mode) for svc, a in self.agents.items()}}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    def load(self, path: str | Path, mode: LoadMode) -> None:
        """Restore from a checkpoint written by ``save``.

        A single-agent checkpoint is copied into every agent of the pool;
        a per-service checkpoint must cover every service.
        """
        d = read_checkpoint(path)
        if d.get("version") != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint version {d.get('version')!r}, expected {CHECKPOINT_VERSION}")
        if "agents" in d:
            missing = set(self.agents) - set(d["agents"])
            if missing:
                raise CorruptCheckpoint(f"checkpoint lacks agents for {sorted(missing)}")
            for key, agent in self.agents.items():
                agent.load_state(d["agents"][key], mode)
        else:
            for agent in self.agents.values():
                agent.load_state(d, mode)


def build_pool(mode: str, services: list[str], config: DdpgConfig, seed: int,
               checkpoint: str | Path | None = None) -> AgentPool:
    """Fresh pool, resumed pool, or (transfer mode) per-service agents seeded from a shared checkpoint."""
    pool = AgentPool(mode, services, config, seed)
    if mode == "transfer":
        if checkpoint is None:
            raise ValueError("transfer mode needs a base checkpoint")
        pool.load(checkpoint, LoadMode.TRANSFER_BASE)
    elif checkpoint is not None:
        pool.load(checkpoint, LoadMode.RESUME)
    return pool
