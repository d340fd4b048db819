"""Importance-weighted ELBO and its reparameterized gradients.

The computation graph is fixed (encode -> reparameterize -> GRM log-likelihood ->
log-sum-exp over importance samples), so the reverse pass is written out by hand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from vifa.encoder import EncoderParams, EncoderPass
from vifa.grm import ItemBank, ResponseTerms, cond_log_lik

WEIGHT_MODES = ("algorithm1", "pointwise")
LOG_2PI = np.log(2.0 * np.pi)


class ConfigError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseBlock:
    eps: np.ndarray  # (B, R, S, P)
    seed: object = None

    @classmethod
    def from_seed(cls, seed, shape) -> "NoiseBlock":
        return cls(np.random.default_rng(seed).standard_normal(shape), seed)

    @property
    def R(self) -> int:
        return self.eps.shape[1]

    @property
    def S(self) -> int:
        return self.eps.shape[2]


@dataclass
class ObjectiveValue:
    iw_elbo: float
    per_respondent: np.ndarray  # (B,)
    log_weights: np.ndarray  # (B, R, S)


@dataclass
class Gradient:
    loadings: np.ndarray
    raw_intercepts: np.ndarray
    encoder: EncoderParams

    def blocks(self) -> dict:
        return {
            "W1": self.encoder.W1, "b1": self.encoder.b1,
            "W2": self.encoder.W2, "b2": self.encoder.b2,
            "loadings": self.loadings, "raw_intercepts": self.raw_intercepts,
        }


def reparameterize(mu, sigma, eps):
    return mu + sigma * eps


def kl_normal(mu, log_sigma):
    """KL( N(mu, diag sigma^2) || N(0, I) ), summed over the last axis."""
    mu = np.asarray(mu, dtype=float)
    log_sigma = np.asarray(log_sigma, dtype=float)
    return 0.5 * np.sum(mu**2 + np.expm1(2.0 * log_sigma) - 2.0 * log_sigma, axis=-1)


def log_std_normal(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum(x**2, axis=-1) - 0.5 * x.shape[-1] * LOG_2PI


def log_diag_normal(x, mu, log_sigma):
    z = (np.asarray(x) - mu) * np.exp(-np.asarray(log_sigma))
    return -0.5 * np.sum(z**2, axis=-1) - np.sum(log_sigma, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def check_mode(mode: str) -> None:
    if mode not in WEIGHT_MODES:
        raise ConfigError(f"unknown weight mode {mode!r}; expected one of {WEIGHT_MODES}")


def log_weight(bank: ItemBank, y_row, x_draw, mu, log_sigma, mode: str = "algorithm1",
               kl_scale: float = 1.0) -> float:
    """Single-respondent log importance weight (reference implementation)."""
    check_mode(mode)
    ll = cond_log_lik(bank, x_draw, y_row)
    if mode == "algorithm1":
        return ll - kl_scale * float(kl_normal(mu, log_sigma))
    return ll + kl_scale * float(log_std_normal(x_draw) - log_diag_normal(x_draw, mu, log_sigma))


def evaluate(bank: ItemBank, enc: EncoderParams, rows, y, noise: NoiseBlock,
             mode: str = "algorithm1", kl_scale: float = 1.0, with_grad: bool = True):
    """IW-ELBO of a batch and (optionally) its gradient.

    ``rows`` are the one-hot encoded responses ``y``. The gradient is that of the
    batch-mean IW-ELBO with the noise held fixed. ``kl_scale`` multiplies the
    prior/posterior term of every log weight (KL annealing).
    """
    check_mode(mode)
    eps = noise.eps
    B, R, S, P = eps.shape
    net = EncoderPass(enc, rows)
    mu, ls = net.mu, net.log_sigma
    sigma = np.exp(ls)
    flat_eps = eps.reshape(B, R * S, P)
    x = mu[:, None, :] + sigma[:, None, :] * flat_eps
    terms = ResponseTerms(bank, y)
    ll = terms.forward(x)  # (B, R*S)
    if mode == "algorithm1":
        kl = kl_normal(mu, ls)
        lw = ll - kl_scale * kl[:, None]
    else:
        ratio = 0.5 * np.sum(flat_eps**2 - x**2, axis=2) + ls.sum(axis=1)[:, None]
        lw = ll + kl_scale * ratio
    lw = lw.reshape(B, R, S)
    per = np.mean(logsumexp(lw, axis=1) - np.log(R), axis=1)
    value = ObjectiveValue(float(np.mean(per)), per, lw)
    if not with_grad:
        return value, None

    omega = softmax(lw, axis=1) / (S * B)  # dObj / d log w
    g_ll = omega.reshape(B, R * S)
    g_x, g_load, g_raw = terms.backward(g_ll)
    if mode == "algorithm1":
        g_mu = -kl_scale / B * mu
        g_ls = -kl_scale / B * (sigma**2 - 1.0)
    else:
        g_x = g_x - kl_scale * g_ll[:, :, None] * x
        g_mu = np.zeros_like(mu)
        g_ls = np.full_like(ls, kl_scale / B)
    g_mu = g_mu + g_x.sum(axis=1)
    g_ls = g_ls + np.sum(g_x * flat_eps, axis=1) * sigma
    # Outside the clamp band the objective is flat in the raw output, which would
    # then drift with the shared hidden layer. Pull it back with the gradient of
    # -0.5 * (raw - clip(raw))^2 per respondent; zero inside the band.
    g_ls = g_ls + (ls - net.raw_log_sigma) / B
    grad = Gradient(g_load, g_raw, net.backward(g_mu, g_ls))
    for name, block in grad.blocks().items():
        if not np.all(np.isfinite(block)):
            raise NumericalError(f"non-finite gradient in parameter block {name!r}")
    return value, grad


def iw_elbo(bank, enc, rows, y, noise, mode="algorithm1", kl_scale=1.0) -> ObjectiveValue:
    return evaluate(bank, enc, rows, y, noise, mode, kl_scale, with_grad=False)[0]


def grad(bank, enc, rows, y, noise, mode="algorithm1", kl_scale=1.0) -> Gradient:
    return evaluate(bank, enc, rows, y, noise, mode, kl_scale, with_grad=True)[1]


def dump_log_weights(value: ObjectiveValue, path) -> None:
    """Debug helper: one CSV row per (respondent, r, s) log weight."""
    B, R, S = value.log_weights.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent", "r", "s", "log_weight"])
        for i in range(B):
            for r in range(R):
                for s in range(S):
                    w.writerow([i, r, s, repr(float(value.log_weights[i, r, s]))])
