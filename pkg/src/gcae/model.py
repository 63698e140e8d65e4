"""Gaussian channel autoencoder and its information-based regularizers."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericFault, Tensor
from .density import DISC_BETAS, DISC_LR, DiscriminatorBank, UniformReference
from .nn import MLP, Adam

log = logging.getLogger(__name__)

LATENT_BOUND = 3.0
ENTROPY_CAP = 10.0
LOG_FLOOR = 1e-12
N_UNIFORM = 50
AE_LR = 5e-5
AE_BETAS = (0.9, 0.999)
TWO_PI_E = 2.0 * math.pi * math.e


class LossMode(str, enum.Enum):
    EEP = "eep"
    DIRECT_SIGMA_I = "sigma_i"
    NONE = "none"


class TrainingFault(RuntimeError):
    """A loss term went non-finite during training."""

    def __init__(self, iteration: int, term: str, cause: Exception | None = None):
        self.iteration = iteration
        self.term = term
        super().__init__(f"non-finite {term} at iteration {iteration}"
                         + (f": {cause}" if cause else ""))


class GcaeModel:
    """Encoder with a bounded output, additive Gaussian latent noise, and a decoder."""

    def __init__(self, n: int, m: int, sigma: float, rng_encoder: np.random.Generator,
                 rng_decoder: np.random.Generator, loss_mode: LossMode = LossMode.EEP,
                 encoder_hidden: Sequence[int] = (1024, 1024, 512),
                 decoder_hidden: Sequence[int] = (512, 1024, 1024)):
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        self.n, self.m, self.sigma = n, m, float(sigma)
        self.loss_mode = LossMode(loss_mode)
        enc_sizes = [n, *encoder_hidden, m]
        dec_sizes = [m, *decoder_hidden, n]
        self.encoder = MLP(enc_sizes, ["selu"] * len(encoder_hidden) + ["softsign3"], rng_encoder)
        self.decoder = MLP(dec_sizes, ["selu"] * len(decoder_hidden) + ["linear"], rng_decoder)

    @property
    def params(self) -> list[Tensor]:
        return self.encoder.params + self.decoder.params

    def encode(self, x) -> Tensor:
        return self.encoder(x)

    def decode(self, z) -> Tensor:
        return self.decoder(z)

    def representation(self, x: np.ndarray, batch: int = 512) -> np.ndarray:
        """Noiseless codes for a whole array, without building a graph."""
        out = []
        with ad.no_grad():
            for s in range(0, x.shape[0], batch):
                out.append(self.encode(x[s:s + batch]).data)
        return np.concatenate(out) if out else np.zeros((0, self.m), np.float32)


@dataclass
class LatentBatch:
    z_clean: Tensor
    z_noisy: Tensor
    noise_draw: np.ndarray


def channel(z_clean, sigma: float, rng: np.random.Generator) -> LatentBatch:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    z_clean = z_clean if isinstance(z_clean, Tensor) else Tensor(z_clean)
    noise = (sigma * rng.standard_normal(z_clean.shape)).astype(z_clean.dtype)
    z_noisy = z_clean + noise
    # store the realized increment so z_noisy - z_clean == noise_draw holds bitwise
    return LatentBatch(z_clean, z_noisy, z_noisy.data - z_clean.data)


@dataclass
class InfoEstimate:
    per_latent_info: np.ndarray
    per_latent_marginal_entropy: np.ndarray
    sigma_i: float
    eep: float

    def entropy_power(self) -> np.ndarray:
        return np.exp(2.0 * np.minimum(self.per_latent_marginal_entropy, ENTROPY_CAP)) / TWO_PI_E


def _uniforms(bank: DiscriminatorBank, n_uniform: int, rng: np.random.Generator) -> np.ndarray:
    return bank.reference.sample(rng, (bank.m, n_uniform))


def information_terms(bank: DiscriminatorBank, z_clean, n_uniform: int = N_UNIFORM,
                      rng: np.random.Generator | None = None,
                      u: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Uniform-sample estimates of ``I(Z_i; Z_\\i)`` and ``h(Z_i)`` for every latent.

    Returns ``(info, entropy)``: ``info`` is an (m,) tensor whose gradient
    flows only through the conditional-density factor and only into the
    conditioning slots of ``z_clean``; ``entropy`` is a plain array.
    """
    z = z_clean if isinstance(z_clean, Tensor) else Tensor(np.asarray(z_clean, np.float32))
    if u is None:
        u = _uniforms(bank, n_uniform, rng)
    width = bank.reference.width
    p = bank.density_grid(z, u)                                     # (m, K, B)
    pd = p.data.astype(np.float64)
    pbar = pd.mean(axis=2, keepdims=True)                           # (m, K, 1)
    log_ratio = np.log(np.maximum(pd, LOG_FLOOR)) - np.log(np.maximum(pbar, LOG_FLOOR))
    weighted = p * log_ratio.astype(p.dtype)
    info = ad.mean(ad.reshape(weighted, (bank.m, -1)), axis=1) * width
    pbar = pbar[:, :, 0]
    entropy = -width * np.mean(pbar * np.log(np.maximum(pbar, LOG_FLOOR)), axis=1)
    return info, entropy


def info_functional(disc, z_clean_batch, n_uniform: int = N_UNIFORM,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Estimate of ``I(Z_i; Z_\\i)`` for the single discriminator ``disc = bank[i]``."""
    info, _ = information_terms(disc.bank, z_clean_batch, n_uniform, rng)
    return info[disc.index]


def marginal_entropy(disc, z_clean_batch, n_uniform: int = N_UNIFORM,
                     rng: np.random.Generator | None = None) -> float:
    with ad.no_grad():
        _, entropy = information_terms(disc.bank, z_clean_batch, n_uniform, rng)
    return float(entropy[disc.index])


def _summarize(info: Tensor, entropy: np.ndarray) -> InfoEstimate:
    per = info.data.astype(np.float64)
    if np.any(per < -0.1):
        log.warning("information estimate below -0.1 for latents %s", np.flatnonzero(per < -0.1))
    power = np.exp(2.0 * np.minimum(entropy, ENTROPY_CAP)) / TWO_PI_E
    return InfoEstimate(per, entropy, float(per.sum()), float(np.sum(per * power)))


def _capped_power(entropy: np.ndarray) -> np.ndarray:
    if np.any(entropy > ENTROPY_CAP):
        log.warning("marginal entropy above %.0f clamped before exponentiation", ENTROPY_CAP)
    return np.exp(2.0 * np.minimum(entropy, ENTROPY_CAP)) / TWO_PI_E


def sigma_i_loss(bank: DiscriminatorBank, z_clean_batch, rng: np.random.Generator,
                 n_uniform: int = N_UNIFORM) -> tuple[Tensor, InfoEstimate]:
    """Summed information ``sum_i I(Z_i; Z_\\i)`` and its per-latent breakdown."""
    if bank.m < 2:
        zero = Tensor(np.zeros((), np.float32))
        return zero, InfoEstimate(np.zeros(bank.m), np.zeros(bank.m), 0.0, 0.0)
    info, entropy = information_terms(bank, z_clean_batch, n_uniform, rng)
    return ad.sum(info), _summarize(info, entropy)


def eep_loss(bank: DiscriminatorBank, z_clean_batch, rng: np.random.Generator,
             n_uniform: int = N_UNIFORM) -> tuple[Tensor, InfoEstimate]:
    """Excess entropy power: information terms weighted by detached marginal entropy powers."""
    if bank.m < 2:
        zero = Tensor(np.zeros((), np.float32))
        return zero, InfoEstimate(np.zeros(bank.m), np.zeros(bank.m), 0.0, 0.0)
    info, entropy = information_terms(bank, z_clean_batch, n_uniform, rng)
    weights = _capped_power(entropy).astype(info.dtype)
    return ad.sum(info * weights), _summarize(info, entropy)


@dataclass
class StepReport:
    mse: float
    sigma_i: float
    eep: float
    disc_loss: float = float("nan")


@dataclass
class Streams:
    """Independent RNG substreams of one run."""
    encoder: np.random.Generator
    decoder: np.random.Generator
    bank: np.random.Generator
    data: np.random.Generator
    noise: np.random.Generator
    uniform: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(*[np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)])

    def state(self) -> dict:
        return {name: getattr(self, name).bit_generator.state for name in self.__dataclass_fields__}

    def set_state(self, state: dict) -> None:
        for name, st in state.items():
            getattr(self, name).bit_generator.state = st


class GcaeTrainer:
    """Owns a model, its discriminator bank, both optimizers and the RNG streams."""

    def __init__(self, n: int, m: int, sigma: float, seed: int, loss_mode: LossMode = LossMode.EEP,
                 ae_lr: float = AE_LR, ae_betas=AE_BETAS, disc_lr: float = DISC_LR,
                 disc_betas=DISC_BETAS, disc_width: int = 256, n_uniform: int = N_UNIFORM,
                 encoder_hidden=(1024, 1024, 512), decoder_hidden=(512, 1024, 1024),
                 reference: UniformReference | None = None):
        self.streams = Streams.from_seed(seed)
        self.model = GcaeModel(n, m, sigma, self.streams.encoder, self.streams.decoder, loss_mode,
                               encoder_hidden, decoder_hidden)
        self.bank = DiscriminatorBank(m, self.streams.bank, width=disc_width, reference=reference,
                                      lr=disc_lr, betas=disc_betas)
        self.ae_opt = Adam(self.model.params, lr=ae_lr, betas=ae_betas)
        self.n_uniform = n_uniform
        self.iteration = 0

    def noisy_latents(self, x: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            z = self.model.encode(x)
        return channel(z, self.model.sigma, self.streams.noise).z_noisy.data

    def disc_step(self, x: np.ndarray) -> float:
        if self.bank.m < 2:
            return 0.0
        return self.bank.train_step(self.noisy_latents(x), self.streams.uniform)

    def warmup(self, next_batch: Callable[[], np.ndarray], n_batches: int = 500) -> None:
        """Fit the bank to the untrained encoder's latents before any regularization."""
        for _ in range(n_batches):
            self.disc_step(next_batch())

    def regularizer(self, z_clean: Tensor) -> tuple[Tensor, InfoEstimate]:
        if self.model.loss_mode is LossMode.DIRECT_SIGMA_I:
            return sigma_i_loss(self.bank, z_clean, self.streams.uniform, self.n_uniform)
        return eep_loss(self.bank, z_clean, self.streams.uniform, self.n_uniform)

    def info_estimate(self, x: np.ndarray) -> InfoEstimate:
        with ad.no_grad():
            z = self.model.encode(x)
            return eep_loss(self.bank, z, self.streams.uniform, self.n_uniform)[1]

    def train_step(self, next_batch: Callable[[], np.ndarray], lam: float, k: int,
                   measure: bool = True) -> StepReport:
        """``k`` bank updates on fresh batches, then one autoencoder update.

        The autoencoder minimizes ``MSE + lam * L`` with ``L`` the EEP or summed
        information loss. At ``lam == 0`` (or loss mode NONE) the regularizer is
        only evaluated when ``measure`` is set, for logging.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        self.iteration += 1
        it = self.iteration
        try:
            d_loss = float(np.mean([self.disc_step(next_batch()) for _ in range(k)]))
        except NumericFault as exc:
            raise TrainingFault(it, "discriminator", exc) from exc
        if not np.isfinite(d_loss):
            raise TrainingFault(it, "discriminator")

        x = next_batch()
        model = self.model
        regularize = lam > 0 and model.loss_mode is not LossMode.NONE and self.bank.m > 1
        self.ae_opt.zero_grad()
        self.bank.net.set_trainable(False)
        try:
            try:
                z_clean = model.encode(x)
                latents = channel(z_clean, model.sigma, self.streams.noise)
                recon = ad.mse(model.decode(latents.z_noisy), x)
            except NumericFault as exc:
                raise TrainingFault(it, "mse", exc) from exc
            est = None
            loss = recon
            if regularize:
                try:
                    reg, est = self.regularizer(z_clean)
                    loss = recon + reg * lam
                except NumericFault as exc:
                    raise TrainingFault(it, "regularizer", exc) from exc
            if not np.isfinite(loss.item()):
                raise TrainingFault(it, "total loss")
            loss.backward()
        finally:
            self.bank.net.set_trainable(True)
        self.ae_opt.step()
        if est is None and measure:
            est = self.info_estimate(x)
        sigma_i = est.sigma_i if est is not None else float("nan")
        eep = est.eep if est is not None else float("nan")
        return StepReport(recon.item(), sigma_i, eep, d_loss)
