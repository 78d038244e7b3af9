"""
Per-dimension Lipschitz feedback between augmented states and rewards.

For a trajectory of augmented states ``s^c_t`` and rewards ``r_t``, element
``i`` of the Lipschitz array is the largest ratio ``|r_a - r_b| / |s^c_a[i] -
s^c_b[i]|`` over all step pairs. Arrays from successive trajectories are
blended with an exponential soft update.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MIN_DELTA = 1e-8
DEFAULT_TAU = 0.9
DEFAULT_EXACT_PAIR_LIMIT = 2000
SAMPLED_PAIRS = 1_000_000
FEEDBACK_VARIANTS = ("reward", "discounted", "spectral")


class LipschitzError(ValueError):
    """Inputs to a Lipschitz computation are inconsistent."""


@dataclass
class Trajectory:
    """
    One evaluation episode.

    Row ``t`` pairs the observation reached by step ``t`` with the extrinsic
    reward that step produced.
    """

    augmented_states: np.ndarray
    rewards: np.ndarray
    source_states: Optional[np.ndarray] = None
    actions: Optional[np.ndarray] = None
    success: bool = False

    def __post_init__(self):
        self.augmented_states = np.atleast_2d(np.asarray(self.augmented_states, dtype=np.float64))
        self.rewards = np.asarray(self.rewards, dtype=np.float64).ravel()
        if len(self.augmented_states) != len(self.rewards):
            raise LipschitzError(
                f"trajectory has {len(self.augmented_states)} states but {len(self.rewards)} rewards"
            )

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.augmented_states.shape[1]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


@dataclass
class LipschitzArray:
    values: np.ndarray
    trajectories_seen: int = 1
    approximate: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if np.any(self.values < 0):
            raise LipschitzError("Lipschitz estimates must be nonnegative")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(self.values.mean()) if len(self.values) else 0.0

    def normalized(self) -> np.ndarray:
        """Min-max normalized companion of the raw values."""
        span = self.values.max() - self.values.min() if len(self.values) else 0.0
        if span == 0.0:
            return np.zeros_like(self.values)
        return (self.values - self.values.min()) / span


def pairwise_lipschitz(xs: Sequence[float], ys: Sequence[float],
                       exact_pair_limit: int = DEFAULT_EXACT_PAIR_LIMIT,
                       sampled_pairs: int = SAMPLED_PAIRS,
                       rng: Optional[np.random.Generator] = None) -> float:
    """
    Supremum of ``|ys[a] - ys[b]| / |xs[a] - xs[b]|`` over index pairs.

    Pairs with ``|xs[a] - xs[b]| < 1e-8`` are skipped; returns 0 if every pair
    is skipped. Series longer than ``exact_pair_limit`` are estimated from
    ``sampled_pairs`` random pairs.

    Raises:
        LipschitzError: If the series lengths differ or are shorter than 2
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if len(xs) != len(ys):
        raise LipschitzError(f"length mismatch: {len(xs)} states vs {len(ys)} rewards")
    if len(xs) < 2:
        raise LipschitzError("need at least two points")

    if len(xs) > exact_pair_limit:
        rng = rng or np.random.default_rng(0)
        a = rng.integers(0, len(xs), size=sampled_pairs)
        b = rng.integers(0, len(xs), size=sampled_pairs)
    else:
        a, b = np.triu_indices(len(xs), k=1)
    dx = np.abs(xs[a] - xs[b])
    dy = np.abs(ys[a] - ys[b])
    valid = dx >= MIN_DELTA
    if not np.any(valid):
        return 0.0
    return float(np.max(dy[valid] / dx[valid]))


def trajectory_lipschitz_array(trajectory: Trajectory,
                               rewards: Optional[Sequence[float]] = None,
                               exact_pair_limit: int = DEFAULT_EXACT_PAIR_LIMIT) -> LipschitzArray:
    """
    Lipschitz constant of the reward series against each state dimension.

    Args:
        trajectory: Episode with at least two steps
        rewards: Optional replacement reward series (e.g. discounted returns)
        exact_pair_limit: Longest trajectory evaluated over all pairs

    Returns:
        LipschitzArray with one element per augmented-state dimension
    """
    series = trajectory.rewards if rewards is None else np.asarray(rewards, dtype=np.float64)
    if trajectory.length < 2:
        raise LipschitzError(f"trajectory of length {trajectory.length} is too short")
    values = [
        pairwise_lipschitz(trajectory.augmented_states[:, i], series, exact_pair_limit=exact_pair_limit)
        for i in range(trajectory.state_dim)
    ]
    return LipschitzArray(values=np.array(values), trajectories_seen=1,
                          approximate=trajectory.length > exact_pair_limit)


def soft_update(current: Optional[LipschitzArray], new: LipschitzArray,
                tau: float = DEFAULT_TAU) -> LipschitzArray:
    """
    Blend ``tau * current + (1 - tau) * new``.

    The first trajectory initializes the running array (``current`` is None
    or has seen no trajectories).

    Raises:
        LipschitzError: If lengths differ or tau is outside [0, 1]
    """
    if not 0.0 <= tau <= 1.0:
        raise LipschitzError(f"tau must lie in [0, 1], got {tau}")
    if current is None or current.trajectories_seen == 0:
        return LipschitzArray(values=new.values.copy(), trajectories_seen=1,
                              approximate=new.approximate)
    if len(current) != len(new):
        raise LipschitzError(f"length mismatch: {len(current)} vs {len(new)}")
    return LipschitzArray(
        values=tau * current.values + (1.0 - tau) * new.values,
        trajectories_seen=current.trajectories_seen + 1,
        approximate=current.approximate or new.approximate,
    )


def discounted_return_series(trajectory: Trajectory, gamma: float) -> np.ndarray:
    """Suffix-discounted return from every step: ``G_t = r_t + gamma * G_{t+1}``."""
    if not 0.0 <= gamma < 1.0:
        raise LipschitzError(f"gamma must lie in [0, 1), got {gamma}")
    returns = np.zeros(trajectory.length, dtype=np.float64)
    running = 0.0
    for t in reversed(range(trajectory.length)):
        running = trajectory.rewards[t] + gamma * running
        returns[t] = running
    return returns


def accumulate_feedback(trajectories: Iterable[Trajectory], variant: str = "reward",
                        tau: float = DEFAULT_TAU, gamma: float = 0.99,
                        exact_pair_limit: int = DEFAULT_EXACT_PAIR_LIMIT) -> Optional[LipschitzArray]:
    """
    Soft-update a Lipschitz array over a sequence of trajectories.

    ``variant`` selects the reward series: raw rewards ("reward") or suffix
    discounted returns ("discounted"). Trajectories shorter than two steps
    are skipped. Returns None when no trajectory qualifies.
    """
    if variant not in ("reward", "discounted"):
        raise LipschitzError(f"per-dimension feedback is not defined for variant {variant!r}")
    running: Optional[LipschitzArray] = None
    for trajectory in trajectories:
        if trajectory.length < 2:
            logger.warning(f"Skipping trajectory of length {trajectory.length} in Lipschitz feedback")
            continue
        series = discounted_return_series(trajectory, gamma) if variant == "discounted" else None
        running = soft_update(running, trajectory_lipschitz_array(trajectory, series, exact_pair_limit), tau)
    return running


def horizon_value_bound(k1: float, k2: float, gamma: float, horizon: int) -> float:
    """
    Upper bound on the value-function Lipschitz constant for a K1-Lipschitz
    reward and K2-Lipschitz dynamics: ``(1 - (gamma K2)^H) K1 / (1 - gamma K2)``.

    Raises:
        LipschitzError: If ``gamma * k2 == 1`` (sum the H terms directly instead)
            or the constants are negative
    """
    if k1 < 0 or k2 < 0:
        raise LipschitzError("Lipschitz constants must be nonnegative")
    ratio = gamma * k2
    if ratio == 1.0:
        raise LipschitzError(
            "gamma * K2 == 1 makes the closed form singular; use the partial sum H * K1 directly"
        )
    return (1.0 - ratio ** horizon) * k1 / (1.0 - ratio)


def lipschitz_rows(array: LipschitzArray) -> List[dict]:
    """Rows of (dimension, value, normalized, approximate) for tabular output."""
    normalized = array.normalized()
    return [
        {"dimension": i, "value": float(v), "normalized": float(n), "approximate": array.approximate}
        for i, (v, n) in enumerate(zip(array.values, normalized))
    ]
