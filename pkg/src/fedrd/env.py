"""Cart-pole environment, pure Python, no gym dependency.

Constants default to the classic Cartpole-v1 values and live in
:class:`EnvConfig` so tests can pin them. Integration is explicit Euler.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np


class EnvState(NamedTuple):
    cart_position: float
    cart_velocity: float
    pole_angle: float
    pole_angular_velocity: float


class Action(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


class Termination(enum.Enum):
    NONE = "none"
    POLE_FELL = "pole_fell"
    CART_OUT_OF_RANGE = "cart_out_of_range"
    MAX_SCORE = "max_score"


@dataclass(frozen=True)
class EnvConfig:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_magnitude: float = 10.0
    time_step: float = 0.02
    position_limit: float = 2.4
    angle_limit: float = 12 * 2 * math.pi / 360
    max_steps: int = 500
    init_noise_half_width: float = 0.05

    def __post_init__(self):
        for name in ("gravity", "cart_mass", "pole_mass", "pole_half_length",
                     "force_magnitude", "time_step", "position_limit",
                     "angle_limit", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EnvConfig.{name} must be positive")
        if self.init_noise_half_width < 0:
            raise ValueError("init_noise_half_width must be non-negative")


class StepOutcome(NamedTuple):
    next_state: EnvState
    reward: float
    terminated: bool
    termination_cause: Termination


class EpisodeTerminatedError(RuntimeError):
    """Raised when stepping an episode that has already ended."""


def dynamics(config: EnvConfig, state: Sequence[float], force: float) -> EnvState:
    """One Euler step of the cart-pole equations of motion."""
    x, x_dot, theta, theta_dot = state
    total_mass = config.cart_mass + config.pole_mass
    polemass_length = config.pole_mass * config.pole_half_length
    cos_th = math.cos(theta)
    sin_th = math.sin(theta)

    temp = (force + polemass_length * theta_dot * theta_dot * sin_th) / total_mass
    theta_acc = (config.gravity * sin_th - cos_th * temp) / (
        config.pole_half_length
        * (4.0 / 3.0 - config.pole_mass * cos_th * cos_th / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos_th / total_mass

    dt = config.time_step
    return EnvState(
        x + dt * x_dot,
        x_dot + dt * x_acc,
        theta + dt * theta_dot,
        theta_dot + dt * theta_acc,
    )


class CartPole:
    """Episodic cart-pole. One instance per worker; not thread-safe."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.state: EnvState | None = None
        self.steps = 0
        self.done = True

    def reset(self, seed: int) -> EnvState:
        w = self.config.init_noise_half_width
        rng = np.random.default_rng(seed)
        self.state = EnvState(*(float(v) for v in rng.uniform(-w, w, size=4)))
        self.steps = 0
        self.done = False
        return self.state

    def step(self, action: int) -> StepOutcome:
        if self.done or self.state is None:
            raise EpisodeTerminatedError("step() called on a terminated episode; call reset()")
        cfg = self.config
        force = cfg.force_magnitude if action == Action.RIGHT else -cfg.force_magnitude
        nxt = dynamics(cfg, self.state, force)
        self.state = nxt
        self.steps += 1

        if abs(nxt.pole_angle) > cfg.angle_limit:
            cause = Termination.POLE_FELL
        elif abs(nxt.cart_position) > cfg.position_limit:
            cause = Termination.CART_OUT_OF_RANGE
        elif self.steps >= cfg.max_steps:
            cause = Termination.MAX_SCORE
        else:
            cause = Termination.NONE
        self.done = cause is not Termination.NONE
        return StepOutcome(nxt, 1.0, self.done, cause)


class Transition(NamedTuple):
    state: EnvState
    policy: tuple[float, float]
    action: int
    reward: float


def run_episode(
    policy: Callable[[EnvState], Sequence[float]],
    seed: int,
    config: EnvConfig | None = None,
) -> tuple[int, list[Transition], Termination]:
    """Play one episode with a stochastic policy.

    ``policy`` maps a state to ``(p_left, p_right)``. Actions are sampled
    from a generator seeded by ``seed``; the environment reset uses the same
    seed. Returns the score, the trajectory and the termination cause.
    """
    env = CartPole(config)
    state = env.reset(seed)
    rng = np.random.default_rng([seed, 1])
    trajectory: list[Transition] = []
    while True:
        probs = tuple(float(p) for p in policy(state))
        action = Action.LEFT if rng.random() < probs[0] else Action.RIGHT
        outcome = env.step(action)
        trajectory.append(Transition(state, probs, int(action), outcome.reward))
        state = outcome.next_state
        if outcome.terminated:
            return len(trajectory), trajectory, outcome.termination_cause
