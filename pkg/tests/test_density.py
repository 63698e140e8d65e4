import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcae import autodiff as ad
from gcae.autodiff import NumericFault
from gcae.density import (CLAMP_EPS, Discriminator, DiscriminatorBank, SlotDiscriminator,
                          UniformReference, conditional_density, discriminator_loss,
                          gaussian_chain_conditional_logpdf, gaussian_chain_sample,
                          isotropic_gaussian_logpdf, marginal_density, mc_kl, ratio_from_logit)


class ConstDisc:
    """Callable discriminator with a fixed output, for ratio algebra checks."""
    reference = UniformReference()

    def __init__(self, d):
        self.d = d

    def __call__(self, u, cond):
        return np.full(np.shape(np.atleast_1d(u)), self.d)


def normal_pdf(x, mu=0.0, s=1.0):
    return np.exp(-0.5 * ((x - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))


# -- reference and loss ------------------------------------------------------

def test_reference_defaults():
    ref = UniformReference()
    assert (ref.low, ref.high) == (-4.0, 4.0)
    assert ref.density == pytest.approx(0.125)
    with pytest.raises(ValueError):
        UniformReference(1.0, 1.0)


def test_loss_uninformative():
    d = np.full(16, 0.5)
    assert discriminator_loss(d, d).item() == pytest.approx(2 * math.log(2), abs=1e-6)


def test_loss_perfect_limit():
    loss = discriminator_loss(np.full(8, 1 - CLAMP_EPS), np.full(8, CLAMP_EPS)).item()
    assert 0 <= loss < 1e-5


def test_loss_saturated_outputs_are_clamped():
    loss = discriminator_loss(np.ones(4), np.zeros(4)).item()
    assert np.isfinite(loss)


def test_loss_empty_batch():
    with pytest.raises(ValueError):
        discriminator_loss(np.zeros(0), np.full(3, 0.5))


# -- ratio algebra -------------------------------------------------------------

@pytest.mark.parametrize("d, expected", [(0.5, 0.125), (0.8, 0.5)])
def test_conditional_density_ratio(d, expected):
    assert conditional_density(ConstDisc(d), 0.3, np.zeros(2)) == pytest.approx(expected)


def test_density_zero_outside_reference():
    assert conditional_density(ConstDisc(0.9), 4.5, np.zeros(1)) == 0.0


def test_marginal_singleton_matches_conditional():
    rng = np.random.default_rng(0)
    bank = DiscriminatorBank(3, rng, width=16)
    cond = rng.standard_normal((1, 2))
    for i in range(3):
        assert marginal_density(bank[i], 0.2, cond) == pytest.approx(
            conditional_density(bank[i], 0.2, cond[0]), rel=1e-6)


def test_marginal_constant_disc():
    assert marginal_density(ConstDisc(0.5), 0.0, np.zeros((7, 3))) == pytest.approx(0.125)


def test_marginal_empty_batch():
    with pytest.raises(ValueError):
        marginal_density(ConstDisc(0.5), 0.0, np.zeros((0, 3)))


def test_non_finite_logit_faults():
    with pytest.raises(NumericFault):
        ratio_from_logit(np.array([0.0, np.nan]))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-3.9, 3.9))
def test_density_nonnegative_and_monotone(d1, d2, u):
    lo, hi = sorted((d1, d2))
    p_lo = conditional_density(ConstDisc(lo), u, np.zeros(1))
    p_hi = conditional_density(ConstDisc(hi), u, np.zeros(1))
    assert 0.0 <= p_lo <= p_hi
    if CLAMP_EPS < lo < hi < 1 - CLAMP_EPS:
        assert p_lo < p_hi


# -- bank layout -----------------------------------------------------------

def test_bank_slot_layout_matches_single_view():
    rng = np.random.default_rng(1)
    bank = DiscriminatorBank(4, rng, width=8)
    z = rng.standard_normal((5, 4)).astype(np.float32)
    u = rng.uniform(-4, 4, size=(4, 3)).astype(np.float32)
    with ad.no_grad():
        grid = bank.density_grid(z, u).data                    # (m, K, B)
    for i in range(4):
        cond = np.delete(z, i, axis=1)
        for k in range(3):
            direct = conditional_density(bank[i], np.full(5, u[i, k]), cond)
            np.testing.assert_allclose(grid[i, k], direct, rtol=1e-4)


def test_bank_fake_inputs_replace_only_own_slot():
    rng = np.random.default_rng(2)
    bank = DiscriminatorBank(3, rng, width=8)
    z = rng.standard_normal((6, 3)).astype(np.float32)
    fake = bank.fake_inputs(z, rng)
    for i in range(3):
        others = [j for j in range(3) if j != i]
        np.testing.assert_array_equal(fake[i][:, others], z[:, others])
        assert np.all(np.abs(fake[i][:, i]) <= 4)


def test_slot_inputs_insert_candidate():
    rng = np.random.default_rng(3)
    disc = SlotDiscriminator(4, 1, rng, width=8)
    x = disc.inputs([9.0], [[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(x, [[1.0, 9.0, 2.0, 3.0]])


# -- Monte-Carlo KL --------------------------------------------------------------

def test_mc_kl_identical_is_zero():
    x = np.random.default_rng(0).standard_normal((500, 3))
    kl = mc_kl(isotropic_gaussian_logpdf, lambda s: np.exp(isotropic_gaussian_logpdf(s)), x)
    assert kl == pytest.approx(0.0, abs=1e-12)


def test_mc_kl_shifted_gaussian():
    x = np.random.default_rng(0).standard_normal((10_000, 1))
    kl = mc_kl(lambda s: np.log(normal_pdf(s[:, 0])), lambda s: normal_pdf(s[:, 0], 0.5), x)
    assert kl == pytest.approx(0.125, abs=0.02)


def test_mc_kl_empty():
    with pytest.raises(ValueError):
        mc_kl(isotropic_gaussian_logpdf, lambda s: np.ones(len(s)), np.zeros((0, 2)))


# -- Gaussian chain -----------------------------------------------------------

def test_chain_rejects_small_m():
    with pytest.raises(ValueError):
        gaussian_chain_sample(1, 10, np.random.default_rng(0))


def test_chain_m2_conditional():
    z = gaussian_chain_sample(2, 200_000, np.random.default_rng(0))
    resid = z[:, 1] - z[:, 0]
    assert np.var(resid) == pytest.approx(0.5, abs=0.01)


@pytest.mark.parametrize("m", [2, 4, 16])
def test_chain_means(m):
    batch = 4000
    z = gaussian_chain_sample(m, batch, np.random.default_rng(m))
    assert np.all(np.abs(z.mean(axis=0)) < 3 / math.sqrt(batch) * 1.5)


def test_chain_last_variance():
    z = gaussian_chain_sample(4, 100_000, np.random.default_rng(1))
    assert np.var(z[:, -1]) == pytest.approx(1.25, abs=0.05)


def test_chain_logpdf_matches_direct_formula():
    z = gaussian_chain_sample(3, 5, np.random.default_rng(2))
    mu = (z[:, 0] + z[:, 1]) / math.sqrt(2)
    expected = np.log(normal_pdf(z[:, 2], mu, math.sqrt(1 / 3)))
    np.testing.assert_allclose(gaussian_chain_conditional_logpdf(z), expected, rtol=1e-10)


# -- trained estimators (short budgets) --------------------------------------

def test_trained_1d_density_at_zero():
    rng = np.random.default_rng(0)
    disc = Discriminator(1, rng, width=256)
    for _ in range(2000):
        disc.train_step(rng.standard_normal((256, 1)).astype(np.float32), rng)
    assert disc.density(np.zeros((1, 1)))[0] == pytest.approx(normal_pdf(0.0), abs=0.05)


def test_trained_conditional_density_narrow_pair():
    # the overall scale of a narrow conditional wanders by ~30% between
    # checkpoints, so the estimate is averaged over the second half of training
    rng = np.random.default_rng(0)
    disc = SlotDiscriminator(2, 1, rng, width=256)
    points = (-1.0, 0.0, 1.0)
    snaps = []
    for step in range(1, 6001):
        z1 = rng.standard_normal(256)
        disc.train_step(np.column_stack([z1, z1 + 0.1 * rng.standard_normal(256)]), rng)
        if step > 3000 and step % 250 == 0:
            snaps.append([conditional_density(disc, c, [c]) for c in points])
    est = np.mean(snaps, axis=0)
    np.testing.assert_allclose(est, normal_pdf(0.0, s=0.1), rtol=0.2)
