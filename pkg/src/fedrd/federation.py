"""Round-based federation of A2C agents.

Agents play ``period`` episodes each (interleaved, one episode per agent at
a time), then exchange knowledge through a server at a round barrier:

* FRD: per-agent proxy replay memories, merged by the server.
* MixFRD: FRD plus local mixup of the downloaded global memory.
* PD: raw replay memories, concatenated by the server.
* FRL: model weights, averaged by the server.
* Standalone: no exchange.

Every byte that crosses the simulated wire is produced by a real encoder,
so payload logs are the lengths of actual buffers.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn, proxy
from .agent import RM_ENTRY_BYTES, A2cAgent, AgentConfig, ReplayMemory

B_P = proxy.ENTRY_BYTES
B_RM = RM_ENTRY_BYTES
B_W = 4


class Protocol(str, enum.Enum):
    STANDALONE = "standalone"
    FRD = "frd"
    MIXFRD = "mixfrd"
    PD = "pd"
    FRL = "frl"


@dataclass(frozen=True)
class MissionConfig:
    protocol: Protocol = Protocol.FRD
    num_agents: int = 2
    sections: int = 30
    period: int = 25
    hidden_width: int = 50
    hidden_layers: int = 2
    episode_budget: int = 5000
    activation: nn.Activation = nn.Activation.TANH
    gamma: float = 0.99
    policy_lr: float = 1e-2
    value_lr: float = 5e-3
    distill_epochs: int = 5
    distill_lr: float = 1e-2
    distill_batch: int = 0
    mixup_portion: float = 0.5
    mixup_beta: float | None = None
    count_weighted: bool = False
    exclude_self: bool = False
    frl_policy_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "activation", nn.Activation(self.activation))
        if self.num_agents < 1 or self.period < 1 or self.sections < 1:
            raise ValueError("num_agents, period and sections must be >= 1")
        if self.episode_budget < 0:
            raise ValueError("episode_budget must be >= 0")
        if self.distill_batch < 0 or self.distill_epochs < 0:
            raise ValueError("distill_batch and distill_epochs must be >= 0")

    def agent_config(self) -> AgentConfig:
        return AgentConfig(self.hidden_layers, self.hidden_width, self.activation,
                           self.gamma, self.policy_lr, self.value_lr)

    def cluster_spec(self) -> proxy.ClusterSpec:
        return proxy.ClusterSpec.default(self.sections)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        d["activation"] = self.activation.value
        return d


def payload_bytes(protocol: Protocol, size: int, count_weighted: bool = False) -> int:
    """Bytes for one knowledge transfer of ``size`` units in either direction.

    ``size`` is the proxy memory size for FRD/MixFRD, the raw memory size for
    PD and the weight count for FRL. Mixup adds nothing on the wire.
    """
    if size < 0:
        raise ValueError("size must be >= 0")
    protocol = Protocol(protocol)
    if protocol in (Protocol.FRD, Protocol.MIXFRD):
        unit = proxy.COUNTED_ENTRY_BYTES if count_weighted else B_P
    elif protocol is Protocol.PD:
        unit = B_RM
    elif protocol is Protocol.FRL:
        unit = B_W
    else:
        unit = 0
    return unit * size


@dataclass
class RoundLog:
    round: int
    protocol: Protocol
    episodes_played: int
    per_agent_uplink_bytes: list[int]
    per_agent_downlink_bytes: list[int]
    knowledge_sizes: list[int]
    global_size: int
    rolling_averages: list[float]
    exchanged: bool

    @property
    def uplink_bytes(self) -> int:
        return sum(self.per_agent_uplink_bytes)

    @property
    def downlink_bytes(self) -> int:
        return sum(self.per_agent_downlink_bytes)

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round,
            "protocol": self.protocol.value,
            "per_agent_uplink_bytes": self.per_agent_uplink_bytes,
            "downlink_bytes": self.per_agent_downlink_bytes,
            "knowledge_sizes": self.knowledge_sizes,
            "global_size": self.global_size,
            "episodes_played": self.episodes_played,
            "rolling_averages": [round(a, 3) for a in self.rolling_averages],
            "exchanged": self.exchanged,
        }, sort_keys=True)


@dataclass
class RunResult:
    config: MissionConfig
    seed: int
    completion_episode: int | None
    episodes_played: int
    rounds: list[RoundLog] = field(default_factory=list)

    @property
    def capped(self) -> bool:
        return self.completion_episode is None

    @property
    def total_uplink_bytes(self) -> int:
        return sum(r.uplink_bytes for r in self.rounds)

    @property
    def total_downlink_bytes(self) -> int:
        return sum(r.downlink_bytes for r in self.rounds)


def make_agents(config: MissionConfig, seed: int) -> list[A2cAgent]:
    """Agent ``i`` depends only on ``(seed, i)``, not on how many agents run."""
    acfg = config.agent_config()
    agents = [A2cAgent.create(acfg, [seed, i]) for i in range(config.num_agents)]
    if config.protocol is Protocol.FRL:
        # server broadcasts one initial model
        for a in agents[1:]:
            a.policy_net = agents[0].policy_net.copy()
            a.value_net = agents[0].value_net.copy()
    return agents


def distill(agent: A2cAgent, samples: proxy.Samples, epochs: int, lr: float,
            batch_size: int = 64) -> list[float]:
    """Soft-target cross-entropy on the policy net; the value net is untouched.

    Minibatch SGD with a fresh shuffle from the agent's generator each epoch.
    ``batch_size=0`` takes one full-batch step per epoch, so the update size
    does not grow with the number of samples. Returns the mean loss per epoch.
    """
    states = np.asarray(samples.states, dtype=np.float32).reshape(-1, 4)
    targets = np.asarray(samples.policies, dtype=np.float64).reshape(-1, 2)
    if not len(states):
        raise ValueError("no distillation samples")
    targets = (targets / targets.sum(axis=1, keepdims=True)).astype(np.float32)
    if batch_size < 0:
        raise ValueError("batch_size must be >= 0")
    batch_size = batch_size or len(states)
    history = []
    for _ in range(epochs):
        order = agent.rng.permutation(len(states))
        total = 0.0
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            grad, loss = nn.backward(agent.policy_net, nn.TrainBatch(
                states[sel], targets[sel], nn.Loss.CROSS_ENTROPY))
            agent.policy_net = nn.apply_update(agent.policy_net, grad, lr)
            total += loss * len(sel)
        history.append(total / len(states))
    return history


def play_local(agents: list[A2cAgent], episodes: int) -> tuple[int, bool]:
    """Interleaved local play. Stops at the first episode where any agent
    completes the mission. Returns (episodes played per agent, completed)."""
    for e in range(episodes):
        done = False
        for agent in agents:
            agent.run_episode()
            done = done or agent.mission_progress()[1]
        if done:
            return e + 1, True
    return episodes, False


def exchange(agents: list[A2cAgent], config: MissionConfig) -> tuple[list[int], list[int], list[int], int]:
    """One knowledge exchange through the server.

    Returns per-agent uplink bytes, per-agent downlink bytes, per-agent
    local knowledge sizes and the global knowledge size.
    """
    p = config.protocol
    n = len(agents)
    if p is Protocol.STANDALONE:
        for a in agents:
            a.local_rm.clear()
        return [0] * n, [0] * n, [0] * n, 0
    if p is Protocol.FRL:
        return _exchange_frl(agents, config)
    if p is Protocol.PD:
        return _exchange_pd(agents, config)
    return _exchange_proxy(agents, config)


def _distill(agent, samples, config):
    if len(samples):
        distill(agent, samples, config.distill_epochs, config.distill_lr, config.distill_batch)


def _exchange_proxy(agents, config):
    spec = config.cluster_spec()
    counted = config.count_weighted
    uploads = []
    for a in agents:
        uploads.append(proxy.serialize(proxy.build_proxrm(spec, a.local_rm), with_counts=counted))
        a.local_rm.clear()
    received = [proxy.deserialize(u, spec, with_counts=counted) for u in uploads]
    sizes = [len(r) for r in received]

    if config.exclude_self and len(agents) > 1:
        downloads = [proxy.serialize(proxy.merge_global(received[:i] + received[i + 1:]),
                                     with_counts=counted) for i in range(len(agents))]
        global_size = len(proxy.merge_global(received))
    else:
        g = proxy.serialize(proxy.merge_global(received), with_counts=counted)
        downloads = [g] * len(agents)
        global_size = len(g) // (proxy.COUNTED_ENTRY_BYTES if counted else B_P)

    for a, d in zip(agents, downloads):
        mem = proxy.deserialize(d, spec, with_counts=counted)
        if config.protocol is Protocol.MIXFRD:
            samples = proxy.mixup_augment(mem, config.mixup_portion, config.mixup_beta, a.rng)
        else:
            samples = mem.samples()
        _distill(a, samples, config)
    return [len(u) for u in uploads], [len(d) for d in downloads], sizes, global_size


def _rm_arrays(data: bytes) -> proxy.Samples:
    if len(data) % B_RM:
        raise ValueError("truncated replay memory buffer")
    rows = np.frombuffer(data, dtype="<f4").reshape(-1, 6)
    return proxy.Samples(rows[:, :4], rows[:, 4:].astype(np.float64))


def _exchange_pd(agents, config):
    uploads = []
    for a in agents:
        uploads.append(a.local_rm.to_bytes())
        a.local_rm.clear()
    sizes = [len(u) // B_RM for u in uploads]
    if config.exclude_self and len(agents) > 1:
        downloads = [b"".join(uploads[:i] + uploads[i + 1:]) for i in range(len(agents))]
    else:
        downloads = [b"".join(uploads)] * len(agents)
    for a, d in zip(agents, downloads):
        _distill(a, _rm_arrays(d), config)
    return [len(u) for u in uploads], [len(d) for d in downloads], sizes, sum(sizes)


def _exchange_frl(agents, config):
    nets = ["policy_net"] if config.frl_policy_only else ["policy_net", "value_net"]
    up = [0] * len(agents)
    down = [0] * len(agents)
    for name in nets:
        first = getattr(agents[0], name)
        received = []
        for i, a in enumerate(agents):
            buf = getattr(a, name).to_bytes()
            up[i] += len(buf)
            received.append(nn.MlpModel.from_bytes(first.config, buf))
        global_buf = nn.average_models(received).to_bytes()
        for i, a in enumerate(agents):
            down[i] += len(global_buf)
            setattr(a, name, nn.MlpModel.from_bytes(first.config, global_buf))
    for a in agents:
        a.local_rm.clear()
    w = sum(nn.weight_count(getattr(agents[0], name).config) for name in nets)
    return up, down, [w] * len(agents), w


def run_round(agents: list[A2cAgent], config: MissionConfig, round_index: int,
              episodes: int | None = None) -> tuple[RoundLog, bool]:
    """Local play for one period, then (unless the mission ended) an exchange."""
    episodes = config.period if episodes is None else episodes
    played, completed = play_local(agents, episodes)
    if completed:
        n = len(agents)
        up, down, sizes, gsize, exchanged = [0] * n, [0] * n, [0] * n, 0, False
    else:
        up, down, sizes, gsize = exchange(agents, config)
        exchanged = True
    log = RoundLog(round_index, config.protocol, played, up, down, sizes, gsize,
                   [a.mission_progress()[0] for a in agents], exchanged)
    return log, completed


def run_mission(config: MissionConfig, seed: int) -> RunResult:
    """Play rounds until any agent completes the mission or the budget is spent."""
    agents = make_agents(config, seed)
    result = RunResult(config, seed, None, 0)
    r = 0
    while result.episodes_played < config.episode_budget:
        remaining = config.episode_budget - result.episodes_played
        if remaining < config.period:
            # last partial period: play it out, nothing left to exchange for
            played, completed = play_local(agents, remaining)
            n = len(agents)
            log = RoundLog(r, config.protocol, played, [0] * n, [0] * n, [0] * n, 0,
                           [a.mission_progress()[0] for a in agents], False)
        else:
            log, completed = run_round(agents, config, r)
        result.rounds.append(log)
        result.episodes_played += log.episodes_played
        r += 1
        if completed:
            result.completion_episode = result.episodes_played
            break
    return result
