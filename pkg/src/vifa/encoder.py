"""Amortized inference network: one-hot responses -> (mu, log sigma)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_SIGMA_BOUNDS = (-10.0, 10.0)


def elu(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def default_hidden_size(input_dim: int, P: int) -> int:
    # round-half-up so (input_dim + 2P) odd lands on the upper integer
    return int(np.floor((input_dim + 2 * P) / 2 + 0.5))


@dataclass
class EncoderParams:
    W1: np.ndarray  # (H, input_dim)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (2P, H)
    b2: np.ndarray  # (2P,)

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        H, _ = self.W1.shape
        if self.b1.shape != (H,) or self.W2.shape[1] != H:
            raise ValueError("hidden layer sizes disagree")
        if self.W2.shape[0] % 2 or self.b2.shape != (self.W2.shape[0],):
            raise ValueError("output layer must have 2P units")

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.W2.shape[0] // 2

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("W1", "b1", "W2", "b2")}

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderParams":
        return cls(obj["W1"], obj["b1"], obj["W2"], obj["b2"])


@dataclass
class PosteriorParams:
    mu: np.ndarray  # (B, P)
    log_sigma: np.ndarray  # (B, P), clamped

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


def init_encoder(input_dim: int, hidden_size: int, P: int, seed=None) -> EncoderParams:
    """Kaiming-style uniform init: weights and biases of each layer ~ U(+-1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    b_in = 1.0 / np.sqrt(input_dim)
    b_hid = 1.0 / np.sqrt(hidden_size)
    return EncoderParams(
        W1=rng.uniform(-b_in, b_in, (hidden_size, input_dim)),
        b1=rng.uniform(-b_in, b_in, hidden_size),
        W2=rng.uniform(-b_hid, b_hid, (2 * P, hidden_size)),
        b2=rng.uniform(-b_hid, b_hid, 2 * P),
    )


class EncoderPass:
    """Forward pass over a batch, keeping activations for the reverse pass."""

    def __init__(self, p: EncoderParams, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != p.input_dim:
            raise ValueError(f"encoded rows have shape {rows.shape}, encoder expects width {p.input_dim}")
        self.p = p
        self.rows = rows
        self.pre = rows @ p.W1.T + p.b1
        self.h = elu(self.pre)
        out = self.h @ p.W2.T + p.b2
        P = p.latent_dim
        self.mu = out[:, :P]
        self.raw_log_sigma = out[:, P:]
        lo, hi = LOG_SIGMA_BOUNDS
        self.log_sigma = np.clip(self.raw_log_sigma, lo, hi)

    @property
    def posterior(self) -> PosteriorParams:
        return PosteriorParams(self.mu, self.log_sigma)

    def backward(self, g_mu, g_log_sigma) -> EncoderParams:
        """Gradients of a scalar w.r.t. every encoder parameter, as an EncoderParams."""
        # straight-through clamp: a zero gradient outside the band would make the
        # bound absorbing once early (KL-free) annealing steps push log sigma there
        g_out = np.concatenate([g_mu, g_log_sigma], axis=1)
        gW2 = g_out.T @ self.h
        gb2 = g_out.sum(axis=0)
        g_pre = (g_out @ self.p.W2) * elu_grad(self.pre)
        gW1 = g_pre.T @ self.rows
        gb1 = g_pre.sum(axis=0)
        return EncoderParams(gW1, gb1, gW2, gb2)


def forward(p: EncoderParams, rows) -> PosteriorParams:
    return EncoderPass(p, rows).posterior
