"""Dense networks and the Adam optimizer for the autodiff substrate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {
    "selu": ad.selu,
    "sigmoid": ad.sigmoid,
    "softsign": lambda t: ad.softsign(t, 1.0),
    "softsign3": lambda t: ad.softsign(t, 3.0),
    "linear": lambda t: t,
    None: lambda t: t,
}


class MLP:
    """Fully connected network, optionally a stack of independent copies.

    With ``stack=s`` every weight has a leading axis of size ``s`` and the
    forward pass maps ``(s, batch, in) -> (s, batch, out)``; a plain
    ``(batch, in)`` input is broadcast to all copies. Each copy has its own
    parameters, so a stack trains exactly like ``s`` separate networks.
    """

    def __init__(self, layer_sizes: Sequence[int], activations: Sequence[str | None],
                 rng: np.random.Generator, stack: int | None = None, dtype=np.float32):
        if len(layer_sizes) < 2:
            raise ValueError("need at least one layer (two sizes)")
        if len(activations) != len(layer_sizes) - 1:
            raise ValueError(
                f"{len(layer_sizes) - 1} layers but {len(activations)} activations")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.layer_sizes = list(layer_sizes)
        self.activations = list(activations)
        self.stack = stack
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        lead = () if stack is None else (stack,)
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=lead + (fan_in, fan_out)).astype(dtype)
            b = rng.uniform(-bound, bound, size=lead + (1, fan_out) if stack else (fan_out,))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b.astype(dtype), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def n_params(self) -> int:
        return int(np.sum([p.size for p in self.params]))

    def set_trainable(self, flag: bool) -> None:
        for p in self.params:
            p.requires_grad = flag

    def __call__(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = ACTIVATIONS[act](ad.matmul(h, w) + b)
        return h

    def pre_activation(self, x) -> Tensor:
        """Forward pass with the final activation left off (logits for a sigmoid head)."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        n = len(self.weights)
        for k, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            h = ad.matmul(h, w) + b
            if k < n - 1:
                h = ACTIVATIONS[act](h)
        return h


def build_mlp(layer_sizes: Sequence[int], activations: Sequence[str | None],
              rng: np.random.Generator, stack: int | None = None) -> MLP:
    return MLP(layer_sizes, activations, rng, stack=stack)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        return cls(first_moment=[np.zeros_like(p.data) for p in params],
                   second_moment=[np.zeros_like(p.data) for p in params], **hyper)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. ``None`` grads count as zero."""
    if len(params) != len(state.first_moment):
        raise ValueError(f"{len(params)} params but state holds {len(state.first_moment)} buffers")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != m.shape or (g is not None and g.shape != p.shape):
            raise ValueError(f"adam_step: shape mismatch {p.shape} vs "
                             f"{None if g is None else g.shape} / {m.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    # python floats keep float32 buffers from being promoted to float64
    step_size = float(state.lr * np.sqrt(1.0 - b2**t) / (1.0 - b1**t))
    eps_hat = float(state.epsilon * np.sqrt(1.0 - b2**t))
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v)
        denom += eps_hat
        np.divide(m, denom, out=denom)
        denom *= step_size
        p.data -= denom.astype(p.dtype, copy=False)


class Adam:
    """Adam over a fixed parameter list, reading gradients from ``.grad``."""

    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=betas[0],
                                          beta2=betas[1], epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
