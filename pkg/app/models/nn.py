"""
Feed-forward networks for the TD3 actor and critics.

Parameters are plain float64 numpy arrays: ``weights[i]`` has shape
``(out_i, in_i)`` so that layer ``i`` maps ``h -> h @ W.T + b``. Hidden
layers use ReLU; the head is either the identity (critics) or
``action_bound * tanh`` (actor).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HEADS = ("identity", "tanh")


@dataclass
class MlpParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head: str = "identity"
    action_bound: float = 1.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"Unknown head {self.head!r}; expected one of {HEADS}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must be non-empty lists of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} produces "
                    f"{self.weights[i - 1].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} contains non-finite entries")

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
            action_bound=self.action_bound,
        )

    def arrays(self) -> List[np.ndarray]:
        """All parameter arrays in a fixed order (weights then biases)."""
        return [*self.weights, *self.biases]


@dataclass
class MlpGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class MlpTape:
    """Activations recorded by a forward pass, reused by ``backward``."""

    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 3e-4, **kwargs) -> "AdamState":
        arrays = params.arrays()
        return cls(
            lr=lr,
            first_moments=[np.zeros_like(a) for a in arrays],
            second_moments=[np.zeros_like(a) for a in arrays],
            **kwargs,
        )


def mlp_init(layer_sizes: Sequence[int], head: str = "identity", seed: int = 0,
             action_bound: float = 1.0) -> MlpParams:
    """
    Seeded uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Args:
        layer_sizes: Input size, hidden sizes and output size
        head: Output activation, "identity" or "tanh"
        seed: Random seed
        action_bound: Output scale for the tanh head

    Raises:
        ValueError: If fewer than two sizes are given or a size is not positive
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2:
        raise ValueError(f"need at least an input and an output size, got {sizes}")
    if any(n < 1 for n in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases, head=head, action_bound=action_bound)


def _apply_head(params: MlpParams, z: np.ndarray) -> np.ndarray:
    if params.head == "tanh":
        return params.action_bound * np.tanh(z)
    return z


def forward_tape(params: MlpParams, x: np.ndarray) -> MlpTape:
    inputs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    pre_activations, activations = [], [inputs]
    h = inputs
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre_activations.append(z)
        h = _apply_head(params, z) if i == last else np.maximum(z, 0.0)
        activations.append(h)
    return MlpTape(inputs=inputs, pre_activations=pre_activations, activations=activations)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    out = forward_tape(params, x).output
    return out[0] if x.ndim == 1 else out


def backward(params: MlpParams, x: np.ndarray, upstream_grad: np.ndarray,
             tape: Optional[MlpTape] = None) -> MlpGrads:
    """
    Reverse-mode gradients of ``sum(upstream_grad * forward(x))``.

    Gradients are summed over the batch; scale ``upstream_grad`` to get a mean loss.
    """
    tape = tape or forward_tape(params, x)
    delta = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    last_z = tape.pre_activations[-1]
    if params.head == "tanh":
        delta = delta * params.action_bound * (1.0 - np.tanh(last_z) ** 2)

    n_layers = len(params.weights)
    grad_w: List[np.ndarray] = [None] * n_layers
    grad_b: List[np.ndarray] = [None] * n_layers
    for i in reversed(range(n_layers)):
        grad_w[i] = delta.T @ tape.activations[i]
        grad_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
        if i > 0:
            delta = delta * (tape.pre_activations[i - 1] > 0.0)
    grad_input = delta[0] if np.asarray(x).ndim == 1 else delta
    return MlpGrads(weights=grad_w, biases=grad_b, input=grad_input)


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState) -> MlpParams:
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param, grad, m, v in zip(params.arrays(), grads.arrays(),
                                 state.first_moments, state.second_moments):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params


def soft_update_params(target: MlpParams, source: MlpParams, rate: float) -> None:
    """Polyak averaging ``target <- rate * source + (1 - rate) * target`` in place."""
    for t, s in zip(target.arrays(), source.arrays()):
        t *= 1.0 - rate
        t += rate * s


def spectral_norm(w: np.ndarray, max_iters: int = 100, tol: float = 1e-8, seed: int = 0) -> float:
    """
    Largest singular value by power iteration on ``W^T W``.

    Starts from a seeded random unit vector and stops when successive
    estimates differ by less than ``tol`` relative to the estimate and the
    error still remaining, extrapolated from the observed convergence rate,
    is below the same threshold. Power iteration underestimates until it
    converges, so a matrix whose top two singular values are too close to
    settle within ``max_iters`` falls back to the SVD.

    Raises:
        ValueError: If the matrix is empty
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if w.size == 0:
        raise ValueError("spectral norm of an empty matrix is undefined")
    v = np.random.default_rng(seed).standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    prev_delta = 0.0
    for _ in range(max_iters):
        u = w.T @ (w @ v)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
        estimate = float(np.linalg.norm(w @ v))
        delta = abs(estimate - sigma)
        if delta <= tol * estimate:
            rate = delta / prev_delta if prev_delta > 0.0 else 0.0
            if rate < 1.0 and delta * rate / (1.0 - rate) <= tol * estimate:
                return estimate
        prev_delta, sigma = delta, estimate
    logger.debug(f"Power iteration on a {w.shape} matrix did not settle in {max_iters} steps; using SVD")
    return float(np.linalg.norm(w, 2))


def value_lipschitz_bound(params: MlpParams, max_iters: int = 100, tol: float = 1e-8) -> float:
    """
    Product of per-layer spectral norms, an upper bound on the network's
    Lipschitz constant for 1-Lipschitz activations.

    The tanh head contributes its output scale ``action_bound``.
    """
    bound = 1.0
    for w in params.weights:
        bound *= spectral_norm(w, max_iters=max_iters, tol=tol)
    if params.head == "tanh":
        bound *= params.action_bound
    return bound
