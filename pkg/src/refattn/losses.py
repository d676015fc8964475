"""Reconstruction, perceptual and adversarial losses and their weighted total."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import (NdArray, ParamRng, abs_, add, as_array, conv2d, conv_transpose2d, matmul,
                       mean, mul, norm, reshape, square, sub)

DEFAULT_LAMBDA_PER = 1e-4
DEFAULT_LAMBDA_ADV = 1e-6
GP_WEIGHT = 10.0


def rec_loss(sr, hr) -> NdArray:
    """Mean absolute error over all elements."""
    sr, hr = as_array(sr), as_array(hr)
    if sr.shape != hr.shape:
        raise ShapeError(f"rec_loss shape mismatch: {sr.shape} vs {hr.shape}")
    return mean(abs_(sub(sr, hr)))


def perceptual_loss(sr, hr, feat_fn: Callable[[NdArray], NdArray]) -> NdArray:
    """(1/V) * sum over channels of ||phi_c(HR) - phi_c(SR)||_F, V = feature volume."""
    fs = feat_fn(as_array(sr))
    fh = feat_fn(as_array(hr))
    diff = sub(fh, fs)
    total = None
    for ch in range(diff.shape[0]):
        term = norm(diff[ch])
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / diff.size)


# -- critic ------------------------------------------------------------------

class Critic:
    """Two stride-2 conv + leaky-ReLU layers, global mean, linear read-out to one scalar."""

    slope = 0.2

    def __init__(self, params: Dict[str, NdArray]):
        self.params = params

    @classmethod
    def init(cls, seed: int, width: int = 8) -> "Critic":
        rng = ParamRng(seed)
        p = {
            "c1.w": rng.conv(width, 3), "c1.b": np.zeros(width),
            "c2.w": rng.conv(2 * width, width), "c2.b": np.zeros(2 * width),
            "fc.w": rng.he_uniform((2 * width, 1), 2 * width), "fc.b": np.zeros(1),
        }
        return cls({k: NdArray(v, requires_grad=True) for k, v in p.items()})

    def _layers(self, x):
        p = self.params
        z1 = conv2d(x, p["c1.w"], p["c1.b"], 2, 1)
        a1 = z1 * np.where(z1.data > 0, 1.0, self.slope)
        z2 = conv2d(a1, p["c2.w"], p["c2.b"], 2, 1)
        a2 = z2 * np.where(z2.data > 0, 1.0, self.slope)
        return z1, z2, a2

    def __call__(self, x) -> NdArray:
        """Scalar score of one [3,H,W] image."""
        _, _, a2 = self._layers(as_array(x))
        pooled = reshape(mean(a2, axis=(1, 2)), (1, -1))
        return reshape(add(matmul(pooled, self.params["fc.w"]), self.params["fc.b"]), ())

    def input_gradient(self, x) -> NdArray:
        """dD/dx built from recorded ops, so penalties on it are differentiable in the weights.

        The leaky-ReLU slopes are treated as constants (they are piecewise constant).
        """
        x = as_array(x).detach()
        p = self.params
        z1, z2, _ = self._layers(x)
        n = z2.shape[1] * z2.shape[2]
        g2 = mul(reshape(p["fc.w"], (-1, 1, 1)), np.where(z2.data > 0, 1.0, self.slope) / n)
        g1 = conv_transpose2d(g2, p["c2.w"], 2, 1, z1.shape[1:])
        g1 = mul(g1, np.where(z1.data > 0, 1.0, self.slope))
        return conv_transpose2d(g1, p["c1.w"], 2, 1, x.shape[1:])


def gradient_penalty(critic: Critic, interp, weight: float = GP_WEIGHT) -> NdArray:
    """weight * (||grad_x D(x_hat)|| - 1)^2 at one interpolated image."""
    return mul(square(sub(norm(critic.input_gradient(interp)), 1.0)), weight)


def wasserstein_term(critic: Critic, sr_batch: Sequence, hr_batch: Sequence) -> NdArray:
    """E[D(SR)] - E[D(HR)] over the batch."""
    d_sr = [critic(x) for x in sr_batch]
    d_hr = [critic(x) for x in hr_batch]
    return sub(_batch_mean(d_sr), _batch_mean(d_hr))


def _batch_mean(values):
    total = values[0]
    for v in values[1:]:
        total = add(total, v)
    return mul(total, 1.0 / len(values))


def adv_losses(critic: Critic, sr_batch: Sequence, hr_batch: Sequence, rng: np.random.Generator,
               gp_weight: float = GP_WEIGHT):
    """(critic_loss, gen_loss).

    critic_loss = E[D(SR)] - E[D(HR)] + gradient penalty at random interpolates,
    with SR detached; gen_loss = -E[D(SR)].  A high score means "looks real".
    """
    if len(sr_batch) != len(hr_batch) or not sr_batch:
        raise ShapeError("adversarial losses need equally sized, non-empty batches")
    sr_det = [as_array(x).detach() for x in sr_batch]
    hr_det = [as_array(x).detach() for x in hr_batch]
    critic_loss = wasserstein_term(critic, sr_det, hr_det)
    if gp_weight > 0:
        penalties = []
        for s, h in zip(sr_det, hr_det):
            alpha = float(rng.uniform())
            interp = alpha * h.data + (1.0 - alpha) * s.data
            penalties.append(gradient_penalty(critic, interp, gp_weight))
        critic_loss = add(critic_loss, _batch_mean(penalties))
    gen_loss = mul(_batch_mean([critic(x) for x in sr_batch]), -1.0)
    return critic_loss, gen_loss


# -- totals ------------------------------------------------------------------

@dataclass
class LossReport:
    rec: float
    per: float
    adv: float
    total: float
    lambda1: float = DEFAULT_LAMBDA_PER
    lambda2: float = DEFAULT_LAMBDA_ADV

    def to_json(self, step: int) -> str:
        return json.dumps({"step": step, "rec": self.rec, "per": self.per, "adv": self.adv,
                           "total": self.total})


def _check_lambdas(lambda1: float, lambda2: float) -> None:
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError(f"loss weights must be non-negative, got {lambda1}, {lambda2}")


def weighted_total(rec, per, adv, lambda1: float = DEFAULT_LAMBDA_PER,
                   lambda2: float = DEFAULT_LAMBDA_ADV):
    """rec + lambda1*per + lambda2*adv for floats or NdArrays."""
    _check_lambdas(lambda1, lambda2)
    return rec + lambda1 * per + lambda2 * adv


def total_loss(rec, per, adv, lambda1: float = DEFAULT_LAMBDA_PER,
               lambda2: float = DEFAULT_LAMBDA_ADV) -> LossReport:
    rec, per, adv = (float(getattr(v, "data", v)) for v in (rec, per, adv))
    total = weighted_total(rec, per, adv, lambda1, lambda2)
    return LossReport(rec, per, adv, total, lambda1, lambda2)
