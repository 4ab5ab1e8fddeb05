"""Advantage actor-critic agent with Monte-Carlo returns.

The agent records every (state, pre-action policy) pair it acts on into its
local replay memory; the federation layer turns that memory into knowledge
to share.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import nn
from .env import Action, CartPole, EnvConfig, EnvState, Transition

MISSION_WINDOW = 10
MISSION_TARGET = 490.0
RM_ENTRY_BYTES = 24  # four state floats + two policy floats, all <f4


class ReplayEntry(NamedTuple):
    state: EnvState
    policy: tuple[float, float]


class ReplayMemory:
    """Ordered, unbounded list of replay entries. Cleared by the owner."""

    def __init__(self, entries: Sequence[ReplayEntry] = ()):
        self.entries: list[ReplayEntry] = list(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def append(self, state, policy):
        self.entries.append(ReplayEntry(state, policy))

    def extend(self, other: "ReplayMemory"):
        self.entries.extend(other.entries)

    def clear(self):
        self.entries = []

    def states(self) -> np.ndarray:
        return np.array([e.state for e in self.entries], dtype=np.float64).reshape(-1, 4)

    def policies(self) -> np.ndarray:
        return np.array([e.policy for e in self.entries], dtype=np.float64).reshape(-1, 2)

    def to_bytes(self) -> bytes:
        rows = np.concatenate([self.states(), self.policies()], axis=1)
        return rows.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReplayMemory":
        if len(data) % RM_ENTRY_BYTES:
            raise ValueError(f"{len(data)} bytes is not a whole number of {RM_ENTRY_BYTES}-byte entries")
        rows = np.frombuffer(data, dtype="<f4").reshape(-1, 6).astype(np.float64)
        return cls(ReplayEntry(EnvState(*r[:4]), (r[4], r[5])) for r in rows)


@dataclass
class AgentConfig:
    hidden_layers: int = 2
    hidden_width: int = 24
    activation: nn.Activation = nn.Activation.TANH
    gamma: float = 0.99
    policy_lr: float = 1e-2
    value_lr: float = 5e-3


@dataclass
class A2cAgent:
    policy_net: nn.MlpModel
    value_net: nn.MlpModel
    config: AgentConfig
    rng: np.random.Generator
    local_rm: ReplayMemory = field(default_factory=ReplayMemory)
    episode_scores: list[int] = field(default_factory=list)

    @classmethod
    def create(cls, config: AgentConfig, seed) -> "A2cAgent":
        ss = np.random.SeedSequence(seed)
        p_seed, v_seed, play_seed = ss.spawn(3)
        pcfg = nn.MlpConfig(4, config.hidden_layers, config.hidden_width, 2,
                            nn.Head.SOFTMAX, config.activation)
        vcfg = nn.MlpConfig(4, config.hidden_layers, config.hidden_width, 1,
                            nn.Head.LINEAR, config.activation)
        return cls(nn.init(pcfg, p_seed), nn.init(vcfg, v_seed), config,
                   np.random.default_rng(play_seed))

    def select_action(self, state: EnvState) -> tuple[int, tuple[float, float]]:
        probs = nn.policy_probs(self.policy_net, state)
        action = Action.LEFT if self.rng.random() < probs[0] else Action.RIGHT
        self.local_rm.append(state, probs)
        return int(action), probs

    def play_episode(self, env_config: EnvConfig | None = None) -> list[Transition]:
        env = CartPole(env_config)
        state = env.reset(int(self.rng.integers(2**63)))
        trajectory = []
        while True:
            action, probs = self.select_action(state)
            outcome = env.step(action)
            trajectory.append(Transition(state, probs, action, outcome.reward))
            state = outcome.next_state
            if outcome.terminated:
                self.episode_scores.append(len(trajectory))
                return trajectory

    def train_on_episode(self, trajectory: Sequence[Transition]) -> dict[str, float]:
        return train_on_episode(self, trajectory)

    def run_episode(self, env_config: EnvConfig | None = None) -> int:
        """Play one episode and take one A2C step on it. Returns the score."""
        trajectory = self.play_episode(env_config)
        self.train_on_episode(trajectory)
        return len(trajectory)

    def mission_progress(self) -> tuple[float, bool]:
        return mission_progress(self.episode_scores)


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def train_on_episode(agent: A2cAgent, trajectory: Sequence[Transition]) -> dict[str, float]:
    """One gradient step on each net from a complete episode.

    Returns are Monte-Carlo; the advantage ``G_t - V(s_t)`` is held fixed
    in the policy loss.
    """
    if not trajectory:
        raise ValueError("empty trajectory")
    states = np.array([tr.state for tr in trajectory], dtype=np.float32)
    actions = np.array([tr.action for tr in trajectory])
    returns = discounted_returns([tr.reward for tr in trajectory], agent.config.gamma)

    values = nn.forward(agent.value_net, states)[:, 0].astype(np.float64)
    advantages = returns - values

    onehot = np.zeros((len(actions), 2), dtype=np.float32)
    onehot[np.arange(len(actions)), actions] = 1.0
    pgrad, ploss = nn.backward(agent.policy_net, nn.TrainBatch(
        states, onehot, nn.Loss.POLICY_GRADIENT, advantages))
    vgrad, vloss = nn.backward(agent.value_net, nn.TrainBatch(
        states, returns[:, None], nn.Loss.SQUARED_ERROR))
    agent.policy_net = nn.apply_update(agent.policy_net, pgrad, agent.config.policy_lr)
    agent.value_net = nn.apply_update(agent.value_net, vgrad, agent.config.value_lr)
    return {"policy_loss": ploss, "value_loss": vloss}


def mission_progress(scores: Sequence[int]) -> tuple[float, bool]:
    """Rolling mean over the latest ten episodes and whether it reached 490."""
    if not scores:
        return 0.0, False
    recent = list(deque(scores, maxlen=MISSION_WINDOW))
    avg = sum(recent) / len(recent)
    return avg, len(scores) >= MISSION_WINDOW and avg >= MISSION_TARGET
