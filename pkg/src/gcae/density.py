"""Density estimation through real-vs-uniform discriminators.

A discriminator trained to separate samples of an unknown density from a
uniform reference on (a, b) recovers that density as ``D / (1 - D)`` times the
reference density. Working with the logit ``l`` of ``D`` this ratio is just
``exp(l)``, which is how everything below computes it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import NumericFault, Tensor
from .nn import ACTIVATIONS, Adam, MLP

log = logging.getLogger(__name__)

CLAMP_EPS = 1e-7
# logit of 1 - eps; clamping the logit here is the same as clamping D to [eps, 1 - eps]
LOGIT_BOUND = float(np.log((1.0 - CLAMP_EPS) / CLAMP_EPS))
DENSITY_FLOOR = 1e-12

DISC_LR = 2e-4
DISC_BETAS = (0.5, 0.9)


@dataclass(frozen=True)
class UniformReference:
    low: float = -4.0
    high: float = 4.0
    dim: int = 1

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"need low < high, got ({self.low}, {self.high})")

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def density(self) -> float:
        """Joint density over ``dim`` coordinates."""
        return self.width ** -self.dim

    @property
    def log_density(self) -> float:
        return -self.dim * np.log(self.width)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=shape).astype(np.float32)

    def contains(self, u) -> np.ndarray:
        u = np.asarray(u)
        return (u > self.low) & (u < self.high)


def discriminator_loss(d_real, d_fake) -> Tensor:
    """``-[mean log D(real) + mean log(1 - D(fake))]`` with D clamped to [eps, 1-eps]."""
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(d_real)
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("real and fake batches must be nonempty")
    return ad.bce(d_real, np.ones(d_real.shape, dtype=d_real.dtype)) + \
        ad.bce(d_fake, np.zeros(d_fake.shape, dtype=d_fake.dtype))


def _logit_loss(l_real: Tensor, l_fake: Tensor) -> Tensor:
    # same objective as discriminator_loss, evaluated from clamped logits
    l_real = ad.clip(l_real, -LOGIT_BOUND, LOGIT_BOUND)
    l_fake = ad.clip(l_fake, -LOGIT_BOUND, LOGIT_BOUND)
    return ad.mean(ad.softplus(-l_real)) + ad.mean(ad.softplus(l_fake))


def ratio_from_logit(logit) -> np.ndarray:
    l = np.asarray(logit, dtype=np.float64)
    if not np.all(np.isfinite(l)):
        raise NumericFault("discriminator", "non-finite logit")
    return np.exp(np.clip(l, -LOGIT_BOUND, LOGIT_BOUND))


def ratio_from_prob(d) -> np.ndarray:
    d = np.clip(np.asarray(d, dtype=np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return d / (1.0 - d)


def disc_architecture(in_dim: int, width: int = 256) -> tuple[list[int], list[str]]:
    return [in_dim, width, width, 1], ["selu", "selu", "sigmoid"]


class Discriminator:
    """Single real-vs-uniform discriminator over full ``dim``-vectors (joint density)."""

    def __init__(self, dim: int, rng: np.random.Generator, width: int = 256,
                 reference: UniformReference | None = None, lr: float = DISC_LR,
                 betas=DISC_BETAS):
        self.reference = reference or UniformReference(dim=dim)
        sizes, acts = disc_architecture(dim, width)
        self.net = MLP(sizes, acts, rng)
        self.opt = Adam(self.net.params, lr=lr, betas=betas)
        self.dim = dim

    def logits(self, x) -> Tensor:
        return self.net.pre_activation(x)

    def prob(self, x) -> np.ndarray:
        with ad.no_grad():
            return ad.sigmoid(self.logits(np.asarray(x, dtype=np.float32))).data

    def train_step(self, real: np.ndarray, rng: np.random.Generator) -> float:
        fake = self.reference.sample(rng, real.shape)
        self.opt.zero_grad()
        loss = _logit_loss(self.logits(real), self.logits(fake))
        loss.backward()
        self.opt.step()
        return loss.item()

    def density(self, x) -> np.ndarray:
        """Estimated joint density at each row of ``x``; zero outside the reference box."""
        x = np.asarray(x, dtype=np.float32)
        with ad.no_grad():
            ratio = ratio_from_logit(self.logits(x).data[..., 0])
        inside = np.all(self.reference.contains(x), axis=-1)
        return np.where(inside, ratio * self.reference.density, 0.0)


class SlotDiscriminator(Discriminator):
    """Conditional discriminator for coordinate ``index`` of ``dim``-vectors.

    Fakes keep the real conditioning coordinates and replace slot ``index``
    with reference noise, so the ratio is ``p(z_i | z_{\\i}) / p_U(z_i)``.
    """

    def __init__(self, dim: int, index: int, rng: np.random.Generator, width: int = 256,
                 reference: UniformReference | None = None, lr: float = DISC_LR, betas=DISC_BETAS):
        super().__init__(dim, rng, width, reference or UniformReference(), lr, betas)
        self.index = index % dim

    def fake_inputs(self, real: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        fake = np.array(real, dtype=np.float32, copy=True)
        fake[:, self.index] = self.reference.sample(rng, real.shape[0])
        return fake

    def train_step(self, real: np.ndarray, rng: np.random.Generator) -> float:
        real = np.asarray(real, dtype=np.float32)
        fake = self.fake_inputs(real, rng)
        self.opt.zero_grad()
        loss = _logit_loss(self.logits(real), self.logits(fake))
        loss.backward()
        self.opt.step()
        return loss.item()

    def inputs(self, u, cond) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=np.float32))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float32))
        return np.insert(cond, self.index, u, axis=1)

    def density(self, x) -> np.ndarray:
        """Conditional density of slot ``index`` given the rest, per row of ``x``."""
        x = np.asarray(x, dtype=np.float32)
        return conditional_density(self, x[:, self.index], np.delete(x, self.index, axis=1))


class DiscriminatorBank:
    """``m`` conditional discriminators stored as one stacked MLP.

    Discriminator ``i`` sees an ``m``-vector whose slot ``i`` holds the
    candidate value and whose remaining slots hold ``z_{\\i}`` in their original
    positions. Real inputs are ``z`` itself; fake inputs replace slot ``i`` with
    a uniform draw while keeping the real conditioning values, so the learned
    ratio is ``p(z_i | z_{\\i}) / p_U(z_i)``.
    """

    def __init__(self, m: int, rng: np.random.Generator, width: int = 256,
                 reference: UniformReference | None = None, lr: float = DISC_LR,
                 betas=DISC_BETAS):
        self.m = m
        self.reference = reference or UniformReference(dim=1)
        sizes, acts = disc_architecture(m, width)
        self.net = MLP(sizes, acts, rng, stack=m)
        self.opt = Adam(self.net.params, lr=lr, betas=betas)
        self.slot_mask = np.eye(m, dtype=np.float32)[:, None, :]  # (m, 1, m)
        self.clamp_events = 0

    def __len__(self) -> int:
        return self.m

    def __getitem__(self, i: int) -> "ConditionalDiscriminator":
        if not 0 <= i < self.m:
            raise IndexError(i)
        return ConditionalDiscriminator(self, i)

    def logits(self, x) -> Tensor:
        """``x``: (m, batch, m) stacked inputs -> (m, batch) logits."""
        out = self.net.pre_activation(x)
        return ad.reshape(out, out.shape[:-1])

    def fake_inputs(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = self.reference.sample(rng, (self.m, z.shape[0], 1))
        return z[None] * (1.0 - self.slot_mask) + u * self.slot_mask

    def loss(self, z: np.ndarray, rng: np.random.Generator) -> Tensor:
        """Summed discriminator loss of the whole bank on one latent batch."""
        z = np.asarray(z, dtype=np.float32)
        real = np.broadcast_to(z[None], (self.m,) + z.shape)
        l_real = self.logits(real)
        l_fake = self.logits(self.fake_inputs(z, rng))
        self.clamp_events += int(np.sum(np.abs(l_real.data) > LOGIT_BOUND)
                                 + np.sum(np.abs(l_fake.data) > LOGIT_BOUND))
        per_disc = ad.mean(ad.softplus(-ad.clip(l_real, -LOGIT_BOUND, LOGIT_BOUND)), axis=1) + \
            ad.mean(ad.softplus(ad.clip(l_fake, -LOGIT_BOUND, LOGIT_BOUND)), axis=1)
        return ad.sum(per_disc)

    def train_step(self, z: np.ndarray, rng: np.random.Generator) -> float:
        """One Adam update of every discriminator; returns the mean per-discriminator loss."""
        self.opt.zero_grad()
        loss = self.loss(z, rng)
        loss.backward()
        self.opt.step()
        return loss.item() / self.m

    def grid_inputs(self, z, u) -> Tensor:
        """Inputs pairing every candidate ``u[i, k]`` with every conditioning row of ``z``.

        ``z``: (B, m) tensor, ``u``: (m, K) array -> (m, K*B, m) tensor. Slot
        ``i`` of disc ``i`` carries ``u`` (a constant), so gradients reach ``z``
        only through the conditioning slots.
        """
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
        m, K = u.shape
        B = z.shape[0]
        keep = (1.0 - self.slot_mask)[:, None]                     # (m, 1, 1, m)
        fill = (u[:, :, None, None] * self.slot_mask[:, None]).astype(z.dtype)  # (m, K, 1, m)
        x = ad.reshape(z, (1, 1, B, m)) * keep + fill               # (m, K, B, m)
        return ad.reshape(x, (m, K * B, m))

    def density_grid(self, z, u) -> Tensor:
        """Conditional densities ``p(u[i, k] | z[j, \\i])`` as an (m, K, B) tensor."""
        m, K = u.shape
        B = z.shape[0]
        logits = ad.clip(self.logits(self.grid_inputs(z, u)), -LOGIT_BOUND, LOGIT_BOUND)
        dens = ad.exp(logits) * (1.0 / self.reference.width)
        inside = self.reference.contains(u).astype(np.float32)[:, :, None]
        return ad.reshape(dens, (m, K, B)) * inside


class ConditionalDiscriminator:
    """View of discriminator ``index`` inside a bank."""

    def __init__(self, bank: DiscriminatorBank, index: int):
        self.bank = bank
        self.index = index

    @property
    def reference(self) -> UniformReference:
        return self.bank.reference

    def inputs(self, u, cond) -> np.ndarray:
        """Place candidates ``u`` (N,) and conditioning rows ``cond`` (N, m-1) into the slot layout."""
        u = np.atleast_1d(np.asarray(u, dtype=np.float32))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float32))
        return np.insert(cond, self.index, u, axis=1)

    def logits(self, x: np.ndarray) -> np.ndarray:
        # evaluate only this member of the stack
        net = self.bank.net
        h = Tensor(np.asarray(x, dtype=np.float32))
        i = self.index
        with ad.no_grad():
            for k, (w, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
                h = ad.matmul(h, Tensor(w.data[i])) + Tensor(b.data[i])
                if k < len(net.weights) - 1:
                    h = ACTIVATIONS[act](h)
        return h.data[:, 0]

    def prob(self, x) -> np.ndarray:
        l = np.asarray(self.logits(x), dtype=np.float64)
        return 1.0 / (1.0 + np.exp(-l))


def _density_from(disc, u, cond) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    ref = disc.reference
    if hasattr(disc, "inputs"):
        logit = disc.logits(disc.inputs(u, cond))
        if isinstance(logit, Tensor):
            with ad.no_grad():
                logit = logit.data[..., 0]
        ratio = ratio_from_logit(logit)
    else:
        ratio = ratio_from_prob(disc(u, cond))
    return np.where(ref.contains(u), ratio / ref.width, 0.0)


def conditional_density(disc, u, cond) -> np.ndarray | float:
    """Estimate of ``p(z_i = u | z_{\\i} = cond)``: ``D/(1-D) / (b - a)``.

    ``disc`` is a :class:`ConditionalDiscriminator` or any callable
    ``disc(u, cond) -> D`` with a ``reference`` attribute. Scalar ``u`` gives a
    float; arrays give one density per row.
    """
    scalar = np.ndim(u) == 0
    out = _density_from(disc, u, np.atleast_2d(cond) if scalar else cond)
    return float(out[0]) if scalar else out


def marginal_density(disc, u, cond_batch) -> np.ndarray | float:
    """Batch estimate of ``p(z_i = u)``: mean of conditional densities over ``cond_batch``."""
    cond_batch = np.atleast_2d(np.asarray(cond_batch, dtype=np.float32))
    if cond_batch.shape[0] == 0:
        raise ValueError("cond_batch must be nonempty")
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=np.float32))
    B = cond_batch.shape[0]
    uu = np.repeat(u, B)
    cc = np.tile(cond_batch, (u.size, 1))
    dens = _density_from(disc, uu, cc).reshape(u.size, B).mean(axis=1)
    return float(dens[0]) if scalar else dens


def mc_kl(true_logpdf: Callable, est_density: Callable, samples) -> float:
    """Monte-Carlo KL(true || est) from samples of the true distribution."""
    samples = np.asarray(samples)
    if samples.shape[0] == 0:
        raise ValueError("mc_kl needs at least one sample")
    est = np.maximum(np.asarray(est_density(samples), dtype=np.float64), DENSITY_FLOOR)
    return float(np.mean(np.asarray(true_logpdf(samples), dtype=np.float64) - np.log(est)))


def gaussian_chain_sample(m: int, batch: int, rng: np.random.Generator) -> np.ndarray:
    """First ``m-1`` coords i.i.d. N(0,1); last ~ N(sum(others)/sqrt(m-1), 1/m)."""
    if m < 2:
        raise ValueError(f"gaussian chain needs m >= 2, got {m}")
    head = rng.standard_normal((batch, m - 1))
    mu = head.sum(axis=1) / np.sqrt(m - 1)
    last = mu + rng.standard_normal(batch) / np.sqrt(m)
    return np.column_stack([head, last])


def gaussian_chain_conditional_logpdf(z: np.ndarray) -> np.ndarray:
    """log p(z_m | z_{1..m-1}) for rows of a Gaussian-chain sample."""
    m = z.shape[1]
    mu = z[:, :-1].sum(axis=1) / np.sqrt(m - 1)
    var = 1.0 / m
    return -0.5 * np.log(2 * np.pi * var) - (z[:, -1] - mu) ** 2 / (2 * var)


def isotropic_gaussian_logpdf(z: np.ndarray) -> np.ndarray:
    m = z.shape[1]
    return -0.5 * m * np.log(2 * np.pi) - 0.5 * np.sum(z**2, axis=1)
