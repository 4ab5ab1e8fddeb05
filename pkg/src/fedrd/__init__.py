"""Federated reinforcement distillation over proxy replay memories."""

from .env import CartPole, EnvConfig, EnvState
from .federation import MissionConfig, Protocol, RunResult, payload_bytes, run_mission
from .harness import preset, sweep

__all__ = [
    "CartPole", "EnvConfig", "EnvState", "MissionConfig", "Protocol", "RunResult",
    "payload_bytes", "run_mission", "preset", "sweep",
]
__version__ = "0.1.0"
