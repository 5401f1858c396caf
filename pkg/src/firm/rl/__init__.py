"""Per-culprit DDPG agents: state encoding, networks, replay, training and checkpoints."""
from firm.rl.buffer import InsufficientSamples, ReplayBuffer
from firm.rl.ddpg import CorruptCheckpoint, DdpgAgent, DdpgConfig, LoadMode, VersionMismatch
from firm.rl.pool import AGENT_MODES, AgentPool, build_pool
from firm.rl.state import MappedAction, RlState, ZeroLimit, encode_state, map_action, reward

__all__ = [
    "AGENT_MODES", "AgentPool", "CorruptCheckpoint", "DdpgAgent", "DdpgConfig", "InsufficientSamples",
    "LoadMode", "MappedAction", "ReplayBuffer", "RlState", "VersionMismatch", "ZeroLimit",
    "build_pool", "encode_state", "map_action", "reward", 
]
