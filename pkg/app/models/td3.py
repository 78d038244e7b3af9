"""
TD3 trainer over the augmented state ``s^c = (s, F(s))`` with the blended
reward ``r + w * G(s^c)``.

Twin critics, target policy smoothing and delayed actor updates follow the
reference TD3 implementation. One trainer is single-threaded and owns its
environment, networks, replay buffer and random stream.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.models.dsl import NonFiniteOutputError, ReprProgram, RewardProgram, augment, eval_reward
from app.models.env import DEFAULT_HORIZON, make_env
from app.models.lipschitz import Trajectory
from app.models.nn import (
    AdamState,
    MlpParams,
    adam_step,
    backward,
    forward,
    forward_tape,
    mlp_init,
    soft_update_params,
    value_lipschitz_bound,
)
from app.schemas.config import TrainConfig

logger = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 100


@dataclass(frozen=True)
class Transition:
    s_c: np.ndarray
    action: np.ndarray
    combined_reward: float
    extrinsic_reward: float
    intrinsic_reward: float
    next_s_c: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO buffer; the oldest transition is overwritten when full."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int):
        self.capacity = capacity
        self.ptr = 0
        self.size = 0
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.combined_rewards = np.zeros((capacity, 1))
        self.extrinsic_rewards = np.zeros((capacity, 1))
        self.intrinsic_rewards = np.zeros((capacity, 1))
        self.not_done = np.zeros((capacity, 1))

    def __len__(self) -> int:
        return self.size

    def add(self, transition: Transition) -> None:
        i = self.ptr
        self.states[i] = transition.s_c
        self.actions[i] = transition.action
        self.next_states[i] = transition.next_s_c
        self.combined_rewards[i] = transition.combined_reward
        self.extrinsic_rewards[i] = transition.extrinsic_reward
        self.intrinsic_rewards[i] = transition.intrinsic_reward
        self.not_done[i] = 0.0 if transition.done else 1.0
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return (self.states[idx], self.actions[idx], self.combined_rewards[idx],
                self.next_states[idx], self.not_done[idx])


@dataclass
class CurvePoint:
    step: int
    score: float
    success_rate: float
    wall_time: float


@dataclass
class TrainResult:
    """Outcome of one training run; disqualified runs carry a reason instead of scores."""

    actor: Optional[MlpParams] = None
    critics: Tuple[Optional[MlpParams], Optional[MlpParams]] = (None, None)
    score: float = float("nan")
    trajectories: List[Trajectory] = field(default_factory=list)
    curve: List[CurvePoint] = field(default_factory=list)
    disqualified: bool = False
    reason: Optional[str] = None
    initial_actor: Optional[MlpParams] = None
    replay: Optional[ReplayBuffer] = None

    def critic_bound(self) -> float:
        """Smaller of the two critics' spectral-norm Lipschitz bounds."""
        return min(value_lipschitz_bound(c) for c in self.critics if c is not None)


class TD3Agent:
    def __init__(self, state_dim: int, action_dim: int, action_bound: float,
                 config: TrainConfig, seed: int):
        self.config = config
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_bound = action_bound
        hidden = list(config.hidden_sizes)

        self.actor = mlp_init([state_dim, *hidden, action_dim], head="tanh",
                              seed=seed, action_bound=action_bound)
        self.critic_1 = mlp_init([state_dim + action_dim, *hidden, 1], seed=seed + 1)
        self.critic_2 = mlp_init([state_dim + action_dim, *hidden, 1], seed=seed + 2)
        self.actor_target = self.actor.copy()
        self.critic_1_target = self.critic_1.copy()
        self.critic_2_target = self.critic_2.copy()

        self.actor_optimizer = AdamState.for_params(self.actor, lr=config.actor_lr)
        self.critic_1_optimizer = AdamState.for_params(self.critic_1, lr=config.critic_lr)
        self.critic_2_optimizer = AdamState.for_params(self.critic_2, lr=config.critic_lr)

        self.rng = np.random.default_rng(seed + 3)
        self.total_updates = 0
        self.actor_updates = 0

    def train_step(self, buffer: ReplayBuffer) -> None:
        cfg = self.config
        self.total_updates += 1
        state, action, reward, next_state, not_done = buffer.sample(cfg.batch_size, self.rng)
        n = len(state)

        # Target policy smoothing; clipped double-Q target.
        noise = np.clip(self.rng.normal(0.0, cfg.policy_noise * self.action_bound, size=action.shape),
                        -cfg.noise_clip * self.action_bound, cfg.noise_clip * self.action_bound)
        next_action = np.clip(forward(self.actor_target, next_state) + noise,
                              -self.action_bound, self.action_bound)
        next_input = np.hstack([next_state, next_action])
        target_q = np.minimum(forward(self.critic_1_target, next_input),
                              forward(self.critic_2_target, next_input))
        target_q = reward + not_done * cfg.discount * target_q

        critic_input = np.hstack([state, action])
        for critic, optimizer in ((self.critic_1, self.critic_1_optimizer),
                                  (self.critic_2, self.critic_2_optimizer)):
            tape = forward_tape(critic, critic_input)
            upstream = 2.0 * (tape.output - target_q) / n
            adam_step(critic, backward(critic, critic_input, upstream, tape), optimizer)

        if self.total_updates % cfg.policy_delay == 0:
            self.actor_updates += 1
            actor_tape = forward_tape(self.actor, state)
            q_input = np.hstack([state, actor_tape.output])
            q_grads = backward(self.critic_1, q_input, np.full((n, 1), -1.0 / n))
            action_grad = q_grads.input[:, self.state_dim:]
            adam_step(self.actor, backward(self.actor, state, action_grad, actor_tape),
                      self.actor_optimizer)

            soft_update_params(self.critic_1_target, self.critic_1, cfg.target_rate)
            soft_update_params(self.critic_2_target, self.critic_2, cfg.target_rate)
            soft_update_params(self.actor_target, self.actor, cfg.target_rate)


def select_action(actor: MlpParams, s_c: np.ndarray, exploration_noise: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Deterministic actor output plus optional Gaussian exploration noise,
    clipped to the action bounds. ``exploration_noise`` is relative to the bound.
    """
    action = forward(actor, s_c)
    bound = actor.action_bound
    if exploration_noise > 0.0:
        if rng is None:
            raise ValueError("exploration noise requires a random generator")
        action = action + rng.normal(0.0, exploration_noise * bound, size=action.shape)
    return np.clip(action, -bound, bound)


def _policy_view(s_c: np.ndarray, source_dim: int, policy_input: str) -> np.ndarray:
    if policy_input == "source":
        return s_c[:source_dim]
    if policy_input == "added":
        return s_c[source_dim:]
    return s_c


def evaluate(actor: MlpParams, env_id: str, episodes: int, seed: int,
             repr_program: Optional[ReprProgram] = None, policy_input: str = "augmented",
             horizon: Optional[int] = None) -> Tuple[float, List[Trajectory]]:
    """
    Roll out the deterministic policy.

    Returns:
        (score, trajectories) where score is the mean undiscounted extrinsic
        return on dense tasks and the success rate on sparse tasks

    Raises:
        NonFiniteOutputError: If F produces NaN on a visited state
    """
    env = make_env(env_id, horizon=horizon or DEFAULT_HORIZON)
    trajectories = []
    for episode in range(episodes):
        obs = env.reset(seed + EVAL_SEED_OFFSET + episode)
        s_c = augment(repr_program, obs)
        sources, augmented, actions, rewards = [], [], [], []
        success = False
        while True:
            action = select_action(actor, _policy_view(s_c, env.observation_dim, policy_input))
            result = env.step(action)
            s_c = augment(repr_program, result.observation)
            sources.append(result.observation)
            augmented.append(s_c)
            actions.append(action)
            rewards.append(result.reward)
            if result.terminated:
                success = True
            if result.terminated or result.truncated:
                break
        trajectories.append(Trajectory(
            augmented_states=np.array(augmented), rewards=np.array(rewards),
            source_states=np.array(sources), actions=np.array(actions), success=success,
        ))
    if env.sparse:
        score = float(np.mean([t.success for t in trajectories]))
    else:
        score = float(np.mean([t.episode_return for t in trajectories]))
    return score, trajectories


def train(env_id: str, repr_program: Optional[ReprProgram], reward_program: Optional[RewardProgram],
          config: TrainConfig, keep_buffer: bool = False) -> TrainResult:
    """
    Train TD3 on the augmented state with the blended reward.

    A program that evaluates to NaN disqualifies the run: the result is
    returned with ``disqualified=True`` and a reason rather than raised.

    Args:
        env_id: Environment id
        repr_program: F, or None to train on the source state
        reward_program: G, or None for no intrinsic reward
        config: TD3 hyperparameters
        keep_buffer: Attach the replay buffer to the result

    Returns:
        TrainResult with final networks, score, evaluation trajectories and curve
    """
    env = make_env(env_id, horizon=config.horizon)
    source_dim = env.observation_dim
    if repr_program is not None and repr_program.input_dim != source_dim:
        raise ValueError(f"F expects {repr_program.input_dim} inputs but {env_id} observations have {source_dim}")
    augmented_dim = source_dim + (repr_program.output_dim if repr_program else 0)
    if reward_program is not None and reward_program.input_dim != augmented_dim:
        raise ValueError(f"G expects {reward_program.input_dim} inputs but s^c has {augmented_dim}")
    if config.policy_input == "added" and repr_program is None:
        raise ValueError("policy input 'added' needs a state representation program")
    policy_dim = {"source": source_dim, "added": augmented_dim - source_dim}.get(config.policy_input, augmented_dim)

    agent = TD3Agent(policy_dim, env.action_dim, env.action_bound, config, seed=config.seed)
    initial_actor = agent.actor.copy()
    buffer = ReplayBuffer(policy_dim, env.action_dim, config.replay_capacity)
    rng = np.random.default_rng(config.seed)
    started = time.perf_counter()
    curve: List[CurvePoint] = []

    def evaluate_now():
        return evaluate(agent.actor, env_id, config.eval_episodes, config.seed,
                        repr_program, config.policy_input, config.horizon)

    try:
        s_c = augment(repr_program, env.reset(int(rng.integers(2**31))))
        for t in range(1, config.total_steps + 1):
            policy_state = _policy_view(s_c, source_dim, config.policy_input)
            if t <= config.start_steps:
                action = rng.uniform(-env.action_bound, env.action_bound, size=env.action_dim)
            else:
                action = select_action(agent.actor, policy_state, config.exploration_noise, rng)

            result = env.step(action)
            next_s_c = augment(repr_program, result.observation)
            intrinsic = eval_reward(reward_program, s_c) if reward_program is not None else 0.0
            extrinsic = result.reward if config.extrinsic_reward else 0.0
            buffer.add(Transition(
                s_c=policy_state,
                action=action,
                combined_reward=extrinsic + config.intrinsic_weight * intrinsic,
                extrinsic_reward=result.reward,
                intrinsic_reward=intrinsic,
                next_s_c=_policy_view(next_s_c, source_dim, config.policy_input),
                done=result.terminated,
            ))

            if t > config.start_steps:
                agent.train_step(buffer)

            if result.terminated or result.truncated:
                s_c = augment(repr_program, env.reset(int(rng.integers(2**31))))
            else:
                s_c = next_s_c

            if t % config.eval_freq == 0 or t == config.total_steps:
                score, trajectories = evaluate_now()
                success_rate = float(np.mean([tr.success for tr in trajectories]))
                curve.append(CurvePoint(t, score, success_rate, time.perf_counter() - started))
                logger.info(f"step {t}/{config.total_steps}: eval score {score:.3f}")
    except NonFiniteOutputError as e:
        logger.warning(f"Candidate disqualified on {env_id}: {e}")
        return TrainResult(disqualified=True, reason=f"non-finite program output: {e}",
                           curve=curve, initial_actor=initial_actor)

    if not np.isfinite(score):
        return TrainResult(disqualified=True, reason="non-finite evaluation score",
                           curve=curve, initial_actor=initial_actor)

    return TrainResult(
        actor=agent.actor,
        critics=(agent.critic_1, agent.critic_2),
        score=score,
        trajectories=trajectories,
        curve=curve,
        initial_actor=initial_actor,
        replay=buffer if keep_buffer else None,
    )

