import json

import numpy as np
import pytest

from refattn.errors import ConfigError, ShapeError
from refattn.losses import (DEFAULT_LAMBDA_ADV, DEFAULT_LAMBDA_PER, GP_WEIGHT, Critic, adv_losses,
                            gradient_penalty, perceptual_loss, rec_loss, total_loss, wasserstein_term,
                            weighted_total)
from refattn.numerics import NdArray, no_grad
from refattn.pipeline import RunConfig


def flat_features(x):
    return x


class TestRec:
    def test_identical_is_zero(self, rng):
        x = rng.uniform(size=(3, 4, 4))
        assert rec_loss(x, x).item() == 0.0

    def test_uniform_shift(self, rng):
        x = rng.uniform(size=(3, 4, 4))
        assert rec_loss(x + 0.1, x).item() == pytest.approx(0.1, abs=1e-15)

    def test_loop_oracle(self, rng):
        a, b = rng.uniform(size=(3, 3, 5)), rng.uniform(size=(3, 3, 5))
        total = 0.0
        for idx in np.ndindex(a.shape):
            total += abs(a[idx] - b[idx])
        assert rec_loss(a, b).item() == pytest.approx(total / a.size, rel=1e-14)

    def test_metric_properties(self, rng):
        a, b, c = (rng.uniform(size=(3, 4, 4)) for _ in range(3))
        assert rec_loss(a, b).item() == rec_loss(b, a).item()
        assert rec_loss(a, c).item() <= rec_loss(a, b).item() + rec_loss(b, c).item() + 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rec_loss(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestPerceptual:
    def test_identical_is_zero(self, rng):
        x = rng.uniform(size=(3, 4, 4))
        assert perceptual_loss(x, x, flat_features).item() == 0.0

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(3, 4, 4)), rng.uniform(size=(3, 4, 4))
        assert perceptual_loss(a, b, flat_features).item() == pytest.approx(
            perceptual_loss(b, a, flat_features).item(), rel=1e-14)

    def test_channelwise_frobenius_oracle(self, rng):
        a, b = rng.uniform(size=(3, 4, 5)), rng.uniform(size=(3, 4, 5))
        expect = sum(np.linalg.norm(b[c] - a[c]) for c in range(3)) / a.size
        assert perceptual_loss(a, b, flat_features).item() == pytest.approx(expect, rel=1e-13)


class TestAdversarial:
    def test_constant_critic_gives_zero_gap(self, rng):
        critic = Critic.init(0, 4)
        for name in ("c1.w", "c2.w", "fc.w"):
            critic.params[name].data[...] = 0.0
        critic.params["fc.b"].data[...] = 3.0
        sr, hr = [rng.uniform(size=(3, 8, 8))], [rng.uniform(size=(3, 8, 8))]
        assert critic(sr[0]).item() == 3.0
        assert wasserstein_term(critic, sr, hr).item() == 0.0

    def test_same_batches_give_zero(self, rng):
        critic = Critic.init(1, 4)
        batch = [rng.uniform(size=(3, 8, 8)) for _ in range(2)]
        assert wasserstein_term(critic, batch, batch).item() == 0.0

    def test_antisymmetric(self, rng):
        critic = Critic.init(1, 4)
        a, b = [rng.uniform(size=(3, 8, 8))], [rng.uniform(size=(3, 8, 8))]
        assert wasserstein_term(critic, a, b).item() == pytest.approx(-wasserstein_term(critic, b, a).item(),
                                                                      abs=1e-15)

    def test_input_gradient_matches_finite_differences(self, rng):
        critic = Critic.init(2, 4)
        x = rng.uniform(size=(3, 8, 8))
        analytic = critic.input_gradient(x).data
        numeric = np.zeros_like(x)
        h = 1e-6
        with no_grad():
            for idx in np.ndindex(x.shape):
                xp, xm = x.copy(), x.copy()
                xp[idx] += h
                xm[idx] -= h
                numeric[idx] = (critic(xp).item() - critic(xm).item()) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-7)
        gp = gradient_penalty(critic, x).item()
        assert gp == pytest.approx(GP_WEIGHT * (np.linalg.norm(numeric) - 1) ** 2, rel=1e-6)

    def test_adv_losses_signs(self, rng):
        critic = Critic.init(3, 4)
        sr, hr = [rng.uniform(size=(3, 8, 8))], [rng.uniform(size=(3, 8, 8))]
        c_loss, g_loss = adv_losses(critic, sr, hr, np.random.default_rng(0), gp_weight=0.0)
        assert g_loss.item() == pytest.approx(-critic(sr[0]).item())
        assert c_loss.item() == pytest.approx(critic(sr[0]).item() - critic(hr[0]).item())

    def test_gen_loss_reaches_sr(self, rng):
        critic = Critic.init(3, 4)
        sr = NdArray(rng.uniform(size=(3, 8, 8)), requires_grad=True)
        c_loss, g_loss = adv_losses(critic, [sr], [rng.uniform(size=(3, 8, 8))], np.random.default_rng(0))
        g_loss.backward()
        assert sr.grad is not None and np.abs(sr.grad).sum() > 0

    def test_batch_mismatch(self, rng):
        with pytest.raises(ShapeError):
            adv_losses(Critic.init(0, 4), [], [], np.random.default_rng(0))


class TestTotal:
    def test_zero_weights_reduce_to_rec(self):
        assert total_loss(0.3, 5.0, -2.0, 0.0, 0.0).total == 0.3

    def test_default_weights_match_training_setup(self):
        assert (DEFAULT_LAMBDA_PER, DEFAULT_LAMBDA_ADV) == (1e-4, 1e-6)
        cfg = RunConfig()
        assert (cfg.lambda1, cfg.lambda2, cfg.learning_rate, cfg.critic_learning_rate) == (1e-4, 1e-6, 1e-4, 1e-4)
        assert (cfg.beta1, cfg.beta2, cfg.batch_size, cfg.lr_patch, cfg.hr_patch) == (0.9, 0.999, 9, 40, 160)
        assert total_loss(1.0, 1.0, 1.0).total == pytest.approx(1 + 1e-4 + 1e-6, rel=1e-15)

    def test_linear_in_terms(self):
        a = weighted_total(1.0, 2.0, 3.0, 0.5, 0.25)
        b = weighted_total(2.0, 4.0, 6.0, 0.5, 0.25)
        assert b == pytest.approx(2 * a)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            total_loss(1.0, 1.0, 1.0, -1e-4, 1e-6)

    def test_json_line(self):
        line = total_loss(0.5, 0.25, 0.125, 1.0, 1.0).to_json(7)
        assert json.loads(line) == {"step": 7, "rec": 0.5, "per": 0.25, "adv": 0.125, "total": 0.875}


def test_report_total_contract():
    rep = total_loss(0.123, 4.56, -7.89)
    assert abs(rep.total - (rep.rec + 1e-4 * rep.per + 1e-6 * rep.adv)) <= 1e-12


def test_perceptual_nonnegative_and_zero_only_for_equal_features(rng):
    a = rng.uniform(size=(3, 4, 4))
    b = a.copy()
    b[1, 2, 3] += 1e-3
    assert perceptual_loss(a, b, flat_features).item() > 0
