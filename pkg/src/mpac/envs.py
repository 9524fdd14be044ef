"""Seedable environments with discrete actions.

``pendulum-disc9``: pendulum swing-up, torque discretized into 9 levels in
[-2, 2], observation ``[cos θ, sin θ, θ̇]``, 200-step episodes.

``chain-N``: N cells, start at 0, actions left/right, reward 1 whenever the
agent lands on (or stays on) the rightmost cell, 50-step episodes.
"""

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument


def normalize_angle(theta):
    """Map an angle into (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2 * math.pi)


@dataclass(frozen=True)
class PendulumState:
    angle: float
    velocity: float
    t: int = 0


@dataclass(frozen=True)
class ChainState:
    position: int
    t: int = 0


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict = None


class _Env:
    env_id = None
    n_actions = 0
    obs_dim = 0
    horizon = 0

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.state = None

    def reset(self, seed=None):
        """Start a new episode; ``seed`` reseeds the env's own stream first."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self._initial_state()
        return self.observe(self.state)

    @property
    def obs(self):
        if self.state is None:
            raise InvalidArgument("environment has not been reset")
        return self.observe(self.state)

    def step(self, action):
        if self.state is None:
            raise InvalidArgument("environment has not been reset")
        self.state, result = self.transition(self.state, action)
        return result

    def _check_action(self, action):
        if not 0 <= int(action) < self.n_actions or int(action) != action:
            raise InvalidArgument(f"action {action!r} outside [0, {self.n_actions})")
        return int(action)


class Pendulum(_Env):
    env_id = "pendulum-disc9"
    n_actions = 9
    obs_dim = 3
    horizon = 200

    g = 10.0
    m = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    torques = np.linspace(-2.0, 2.0, 9)

    def _initial_state(self):
        angle = normalize_angle(self.rng.uniform(-math.pi, math.pi))
        velocity = self.rng.uniform(-1.0, 1.0)
        return PendulumState(angle, velocity, 0)

    @staticmethod
    def observe(state):
        return np.array([math.cos(state.angle), math.sin(state.angle), state.velocity])

    def transition(self, state, action):
        """Pure dynamics: ``(state, action) -> (next_state, StepResult)``.

        Reward is charged on the pre-step state and the applied torque.
        """
        u = float(self.torques[self._check_action(action)])
        theta, omega = state.angle, state.velocity
        reward = -(normalize_angle(theta) ** 2 + 0.1 * omega ** 2 + 0.001 * u ** 2)
        accel = 3 * self.g / (2 * self.length) * math.sin(theta) + 3.0 / (self.m * self.length ** 2) * u
        omega = min(max(omega + accel * self.dt, -self.max_speed), self.max_speed)
        theta = normalize_angle(theta + omega * self.dt)
        nxt = PendulumState(theta, omega, state.t + 1)
        done = nxt.t >= self.horizon
        return nxt, StepResult(self.observe(nxt), reward, done, {"torque": u})


class Chain(_Env):
    n_actions = 2
    horizon = 50

    def __init__(self, n_cells=8, seed=0):
        if n_cells < 2:
            raise InvalidArgument("chain needs at least two cells")
        self.n_cells = n_cells
        self.obs_dim = n_cells
        self.env_id = f"chain-{n_cells}"
        super().__init__(seed)

    def _initial_state(self):
        return ChainState(0, 0)

    def observe(self, state):
        obs = np.zeros(self.n_cells)
        obs[state.position] = 1.0
        return obs

    def transition(self, state, action):
        move = 1 if self._check_action(action) == 1 else -1
        pos = min(max(state.position + move, 0), self.n_cells - 1)
        nxt = replace(state, position=pos, t=state.t + 1)
        reward = 1.0 if pos == self.n_cells - 1 else 0.0
        return nxt, StepResult(self.observe(nxt), reward, nxt.t >= self.horizon)


def make_env(env_id, seed=0):
    """Build an environment from its string id."""
    if env_id == Pendulum.env_id:
        return Pendulum(seed)
    match = re.fullmatch(r"chain-(\d+)", env_id)
    if match:
        return Chain(int(match.group(1)), seed)
    raise InvalidArgument(f"unknown environment id {env_id!r}")
