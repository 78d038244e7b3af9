"""
PointMaze environment: a point mass navigating a 10x10 open maze from the
bottom-left corner to a target near the top-right corner.

Observation is ``(agent_x, agent_y, target_x, target_y)``; the action is a
2D force clipped to [-1, 1]. The dense variant returns the negative
Euclidean agent-to-target distance, the sparse variant returns 1 inside the
success radius and 0 elsewhere.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAZE_SIZE = 10.0
START_POSITION = (0.5, 0.5)
TARGET_POSITION = (9.5, 9.5)
START_JITTER = 0.25
SUCCESS_RADIUS = 0.5
DEFAULT_HORIZON = 300
DT = 0.1
VELOCITY_DAMPING = 0.9
MAX_DISTANCE = MAZE_SIZE * math.sqrt(2.0)

TASK_DESCRIPTION = (
    "A point-mass agent moves inside a 10x10 maze with solid outer walls. "
    "It starts near the bottom-left corner and must reach the target near the "
    "top-right corner. Each action is a linear force in the x and y direction. "
    "{reward_sentence}"
)

DIMENSION_DETAILS = (
    "- s[0]: x coordinate of the agent's current position\n"
    "- s[1]: y coordinate of the agent's current position\n"
    "- s[2]: x coordinate of the target location\n"
    "- s[3]: y coordinate of the target location"
)


class EpisodeFinishedError(RuntimeError):
    """step() was called on an episode that already terminated or was truncated."""


@dataclass
class EnvState:
    agent_pos: np.ndarray
    target_pos: np.ndarray
    velocity: np.ndarray
    step_count: int = 0


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Agent-to-target distance, computed with the same float operations the DSL uses."""
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    return math.sqrt(math.pow(dx, 2.0) + math.pow(dy, 2.0))


class PointMazeEnv:
    """
    Point mass with velocity damping inside a walled 10x10 square.

    Kinematics per step: ``x <- x + dt * v`` then ``v <- 0.9 * v + dt * a``,
    with positions clamped to the maze bounds.
    """

    observation_dim = 4
    action_dim = 2
    action_bound = 1.0

    def __init__(self, sparse: bool = False, horizon: int = DEFAULT_HORIZON,
                 success_radius: float = SUCCESS_RADIUS):
        if horizon < 1:
            raise ValueError(f"horizon must be positive, got {horizon}")
        self.sparse = sparse
        self.horizon = horizon
        self.success_radius = success_radius
        self.state: Optional[EnvState] = None
        self._done = True

    @property
    def env_id(self) -> str:
        return "pointmaze-sparse" if self.sparse else "pointmaze-dense"

    @property
    def task_description(self) -> str:
        if self.sparse:
            sentence = (f"The reward is 1 when the agent is within {self.success_radius} "
                        "units of the target and 0 otherwise.")
        else:
            sentence = ("The reward is the negative Euclidean distance between the agent's "
                        "location and the target location.")
        return TASK_DESCRIPTION.format(reward_sentence=sentence)

    @property
    def dimension_details(self) -> str:
        return DIMENSION_DETAILS

    def reset(self, seed: int = 0) -> np.ndarray:
        """Place the agent near the bottom-left corner with seeded uniform jitter."""
        rng = np.random.default_rng(seed)
        jitter = rng.uniform(-START_JITTER, START_JITTER, size=2)
        self.state = EnvState(
            agent_pos=np.array(START_POSITION, dtype=np.float64) + jitter,
            target_pos=np.array(TARGET_POSITION, dtype=np.float64),
            velocity=np.zeros(2, dtype=np.float64),
        )
        self._done = False
        return self.observation()

    def set_state(self, agent_pos: Sequence[float], target_pos: Sequence[float],
                  velocity: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
        """Start an episode from an explicit configuration."""
        agent = np.clip(np.asarray(agent_pos, dtype=np.float64), 0.0, MAZE_SIZE)
        target = np.clip(np.asarray(target_pos, dtype=np.float64), 0.0, MAZE_SIZE)
        self.state = EnvState(agent_pos=agent, target_pos=target,
                              velocity=np.asarray(velocity, dtype=np.float64).copy())
        self._done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        if self.state is None:
            raise EpisodeFinishedError("environment has not been reset")
        return np.concatenate([self.state.agent_pos, self.state.target_pos])

    def distance(self) -> float:
        return euclidean_distance(self.state.agent_pos, self.state.target_pos)

    def step(self, action: Sequence[float]) -> StepResult:
        """
        Advance the point mass one step.

        Raises:
            EpisodeFinishedError: If the episode already ended
        """
        if self.state is None or self._done:
            raise EpisodeFinishedError("step() called after the episode ended; call reset() first")

        force = np.clip(np.asarray(action, dtype=np.float64), -self.action_bound, self.action_bound)
        state = self.state
        state.agent_pos = state.agent_pos + DT * state.velocity
        state.velocity = VELOCITY_DAMPING * state.velocity + DT * force

        # Walls: clamp position and drop the velocity pushing into the wall.
        clamped = np.clip(state.agent_pos, 0.0, MAZE_SIZE)
        state.velocity = np.where(clamped != state.agent_pos, 0.0, state.velocity)
        state.agent_pos = clamped
        state.step_count += 1

        distance = self.distance()
        terminated = distance < self.success_radius
        truncated = not terminated and state.step_count >= self.horizon
        if self.sparse:
            reward = 1.0 if terminated else 0.0
        else:
            reward = -distance
        self._done = terminated or truncated
        return StepResult(self.observation(), reward, terminated, truncated)


ENV_REGISTRY: Dict[str, Callable[..., PointMazeEnv]] = {
    "pointmaze-dense": lambda **kwargs: PointMazeEnv(sparse=False, **kwargs),
    "pointmaze-sparse": lambda **kwargs: PointMazeEnv(sparse=True, **kwargs),
}


def available_envs() -> List[str]:
    return sorted(ENV_REGISTRY)


def make_env(env_id: str, **kwargs) -> PointMazeEnv:
    """
    Construct an environment by string id.

    Raises:
        ValueError: If the id is unknown
    """
    try:
        factory = ENV_REGISTRY[env_id]
    except KeyError:
        raise ValueError(f"Unknown environment id {env_id!r}; available: {available_envs()}") from None
    return factory(**kwargs)


def is_sparse(env_id: str) -> bool:
    return make_env(env_id).sparse
