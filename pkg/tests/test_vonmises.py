import math

import numpy as np
import pytest
from scipy import integrate, special

from modules.circular_module import TWO_PI, PredictionSet, circular_mean_oracle, cyclic_distance
from modules.losses_module import LossKind, loss_terms
from modules.utils_module import ContractError, DomainError
from modules.vonmises_module import VonMises, bessel_i0, log_bessel_i0, neg_log_likelihood, pdf


class TestBessel:

    @pytest.mark.parametrize("kappa", [0.0, 0.5, 1.0, 5.0, 14.9, 15.0, 15.1, 20.0, 50.0, 100.0, 500.0])
    def test_matches_scipy(self, kappa):
        assert bessel_i0(kappa) == pytest.approx(float(special.i0(kappa)), rel=1e-10)

    def test_log_is_stable_for_large_kappa(self):
        kappa = 5000.0
        expected = kappa + math.log(float(special.i0e(kappa)))
        assert log_bessel_i0(kappa) == pytest.approx(expected, rel=1e-12)

    def test_negative_kappa(self):
        with pytest.raises(DomainError):
            bessel_i0(-1.0)


class TestDensity:

    @pytest.mark.parametrize("kappa", [0.5, 1.0, 5.0, 20.0])
    def test_integrates_to_one(self, kappa):
        t = np.linspace(0.0, TWO_PI, 20001)
        density = pdf(VonMises(1.0, kappa), t)
        assert integrate.trapezoid(density, t) == pytest.approx(1.0, abs=1e-8)

    def test_mode_at_mu(self):
        d = VonMises(2.0, 3.0)
        assert pdf(d, 2.0) > pdf(d, 2.5) > pdf(d, 2.0 + math.pi)

    def test_mu_is_wrapped(self):
        assert VonMises(-0.5, 1.0).mu == pytest.approx(TWO_PI - 0.5)

    def test_kappa_must_be_positive(self):
        with pytest.raises(DomainError):
            VonMises(0.0, 0.0)


class TestLikelihood:

    def test_affine_in_cos_loss(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d = VonMises(rng.uniform(0, TWO_PI), rng.uniform(0.1, 40.0))
            samples = rng.uniform(0, TWO_PI, size=int(rng.integers(1, 30)))
            cos_losses, _ = loss_terms(LossKind.COS, np.full(samples.shape, d.mu), samples)
            identity = d.kappa * math.fsum(cos_losses) + len(samples) * math.log(TWO_PI * bessel_i0(d.kappa))
            assert neg_log_likelihood(d, samples) == pytest.approx(identity, rel=1e-12, abs=1e-12)

    def test_minimized_at_circular_mean(self):
        rng = np.random.default_rng(4)
        samples = (1.0 + rng.normal(0, 0.4, size=200)) % TWO_PI
        grid = np.linspace(0, TWO_PI, 3600, endpoint=False)
        nll = [neg_log_likelihood(VonMises(mu, 2.0), samples) for mu in grid]
        best = grid[int(np.argmin(nll))]
        assert cyclic_distance(best, circular_mean_oracle(PredictionSet.of(samples))) <= TWO_PI / 3600

    def test_empty_samples(self):
        with pytest.raises(ContractError):
            neg_log_likelihood(VonMises(0.0, 1.0), [])
