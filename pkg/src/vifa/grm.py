"""Graded response model: boundary/category probabilities and conditional log-likelihood.

Intercepts are stored unconstrained. For an item with ``C`` categories the raw
vector holds a free base intercept followed by ``C - 2`` log-gaps, so

    alpha_1 = base,  alpha_k = alpha_{k-1} - exp(gap_{k-1}),

which keeps ``alpha`` strictly decreasing and the boundary probabilities
``Pr(y >= k | x) = logistic(D * (alpha_k + beta @ x))`` strictly decreasing in k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

DEFAULT_D = 1.702


def constrain_intercepts(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.size == 1:
        return raw.copy()
    return raw[0] - np.concatenate([[0.0], np.cumsum(np.exp(raw[1:]))])


def unconstrain_intercepts(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    gaps = -np.diff(alpha)
    if np.any(gaps <= 0):
        raise ValueError("intercepts must be strictly decreasing")
    return np.concatenate([[alpha[0]], np.log(gaps)])


def log1mexp(d):
    """log(1 - exp(-d)) for d > 0, accurate at both ends."""
    d = np.asarray(d, dtype=float)
    return np.where(d < np.log(2.0), np.log(-np.expm1(-d)), np.log1p(-np.exp(-d)))


def boundary_probs(alpha, beta, x, D: float = DEFAULT_D) -> np.ndarray:
    """Pr(y >= k) for k = 0..C, padded with the fixed 1 and 0 at the ends."""
    eta = float(np.dot(beta, x))
    inner = expit(D * (np.asarray(alpha, dtype=float) + eta))
    return np.concatenate([[1.0], inner, [0.0]])


def category_probs(alpha, beta, x, D: float = DEFAULT_D) -> np.ndarray:
    return np.exp(log_category_probs(alpha, beta, x, D))


def log_category_probs(alpha, beta, x, D: float = DEFAULT_D) -> np.ndarray:
    """Log of pi_k = Pr(y >= k) - Pr(y >= k+1), evaluated without cancellation.

    Uses logistic(a) - logistic(b) = logistic(a) * logistic(-b) * (1 - exp(b - a)).
    """
    alpha = np.asarray(alpha, dtype=float)
    eta = float(np.dot(beta, x))
    a = D * (alpha + eta)
    out = np.empty(alpha.size + 1)
    out[0] = log_expit(-a[0])
    out[-1] = log_expit(a[-1])
    if alpha.size > 1:
        out[1:-1] = log_expit(a[:-1]) + log_expit(-a[1:]) + log1mexp(D * (alpha[:-1] - alpha[1:]))
    return out


@dataclass
class ItemBank:
    loadings: np.ndarray  # (J, P)
    raw_intercepts: np.ndarray  # (J, max C - 1), zero padded
    category_counts: np.ndarray  # (J,)
    scaling: float = DEFAULT_D

    def __post_init__(self):
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        self.category_counts = np.asarray(self.category_counts, dtype=np.int64)
        self.raw_intercepts = np.atleast_2d(np.asarray(self.raw_intercepts, dtype=float))
        if self.scaling <= 0:
            raise ValueError("scaling D must be positive")
        if self.raw_intercepts.shape != (self.n_items, int(self.category_counts.max()) - 1):
            raise ValueError("raw_intercepts shape does not match category counts")
        self.raw_intercepts = np.where(self.intercept_mask, self.raw_intercepts, 0.0)

    @property
    def n_items(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    @property
    def intercept_mask(self) -> np.ndarray:
        k = np.arange(int(self.category_counts.max()) - 1)
        return k[None, :] < (self.category_counts[:, None] - 1)

    @property
    def intercepts(self) -> np.ndarray:
        """Constrained intercepts, (J, max C - 1), NaN beyond each item's last boundary."""
        raw = self.raw_intercepts
        steps = np.exp(raw[:, 1:]) * self.intercept_mask[:, 1:]
        alpha = raw[:, :1] - np.concatenate([np.zeros((raw.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
        return np.where(self.intercept_mask, alpha, np.nan)

    def intercept_list(self) -> list:
        a = self.intercepts
        return [a[j, : c - 1].copy() for j, c in enumerate(self.category_counts)]

    @classmethod
    def from_intercepts(cls, loadings, intercepts, scaling: float = DEFAULT_D) -> "ItemBank":
        counts = np.array([len(a) + 1 for a in intercepts], dtype=np.int64)
        raw = np.zeros((len(intercepts), int(counts.max()) - 1))
        for j, a in enumerate(intercepts):
            raw[j, : len(a)] = unconstrain_intercepts(a)
        return cls(loadings, raw, counts, scaling)

    def to_json(self) -> dict:
        return {
            "loadings": self.loadings.tolist(),
            "intercepts": [a.tolist() for a in self.intercept_list()],
            "raw_intercepts": self.raw_intercepts.tolist(),
            "category_counts": self.category_counts.tolist(),
            "scaling": self.scaling,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ItemBank":
        if "raw_intercepts" in obj:
            return cls(obj["loadings"], obj["raw_intercepts"], obj["category_counts"], obj["scaling"])
        return cls.from_intercepts(obj["loadings"], obj["intercepts"], obj["scaling"])


def init_item_bank(J: int, P: int, category_counts, seed=None, scaling: float = DEFAULT_D) -> ItemBank:
    """Xavier-uniform loadings; intercepts at the logistic quantiles 1 - k/C."""
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (J + P))
    loadings = rng.uniform(-bound, bound, size=(J, P))
    counts = np.broadcast_to(np.asarray(category_counts, dtype=np.int64), (J,))
    intercepts = []
    for c in counts:
        q = 1.0 - np.arange(1, c) / c
        intercepts.append(np.log(q / (1.0 - q)) / scaling)
    return ItemBank.from_intercepts(loadings, intercepts, scaling)


def cond_log_lik(bank: ItemBank, x, y) -> float:
    """log p(y | x) for a single respondent, summed over items."""
    alpha = bank.intercept_list()
    return float(sum(
        log_category_probs(alpha[j], bank.loadings[j], x, bank.scaling)[y[j]]
        for j in range(bank.n_items)
    ))


class ResponseTerms:
    """Batched log p(y_i | x_{i,k}) with a matching reverse pass.

    ``y`` is (B, J); draws ``x`` are (B, K, P). Only the two intercepts adjacent
    to each observed category enter the likelihood, so they are gathered once
    per mini-batch.
    """

    def __init__(self, bank: ItemBank, y):
        self.bank = bank
        y = np.asarray(y, dtype=np.int64)
        self.y = y
        alpha = bank.intercepts
        J = bank.n_items
        kmax = alpha.shape[1]
        cols = np.arange(J)[None, :]
        top = bank.category_counts[None, :] - 1
        self.has_up = y >= 1
        self.has_lo = y <= top - 1
        self.idx_up = np.where(self.has_up, cols * kmax + y - 1, 0)
        self.idx_lo = np.where(self.has_lo, cols * kmax + y, 0)
        flat = np.nan_to_num(alpha.reshape(-1))
        self.a_up = np.where(self.has_up, flat[self.idx_up], 0.0)
        self.a_lo = np.where(self.has_lo, flat[self.idx_lo], 0.0)
        self.both = self.has_up & self.has_lo
        self.up_f = self.has_up.astype(float)
        self.lo_f = self.has_lo.astype(float)
        self.both_f = self.both.astype(float)
        D = bank.scaling
        gap = np.where(self.both, D * (self.a_up - self.a_lo), 1.0)
        self.gap = gap
        self.const = np.sum(np.where(self.both, log1mexp(gap), 0.0), axis=1)  # (B,)

    def forward(self, x) -> np.ndarray:
        """Return log-likelihoods of shape (B, K); caches what backward needs."""
        bank = self.bank
        D = bank.scaling
        self.x = x
        z = x @ (D * bank.loadings.T)  # (B, K, J), already scaled by D
        self._la = log_expit(z + (D * self.a_up)[:, None, :])
        self._lb = log_expit(-z - (D * self.a_lo)[:, None, :])
        terms = self._la * self.up_f[:, None, :] + self._lb * self.lo_f[:, None, :]
        return terms.sum(axis=2) + self.const[:, None]

    def backward(self, g_ll):
        """Given dObj/dll (B, K) return (g_x, g_loadings, g_raw_intercepts)."""
        bank = self.bank
        D = bank.scaling
        g = g_ll[:, :, None]
        # d log expit(a)/da = 1 - expit(a); d log expit(-b)/db = -(1 - expit(-b))
        ga = g * self.up_f[:, None, :] * -np.expm1(self._la)
        gb = g * self.lo_f[:, None, :] * -np.expm1(self._lb)
        gz = D * (ga - gb)  # (B, K, J)
        g_x = gz @ bank.loadings
        J, P = bank.loadings.shape
        g_load = gz.reshape(-1, J).T @ self.x.reshape(-1, P)
        gtot = g_ll.sum(axis=1)[:, None]  # (B, 1)
        cgap = self.both_f * gtot * D / np.expm1(self.gap)
        g_up = D * ga.sum(axis=1) + cgap
        g_lo = -D * gb.sum(axis=1) - cgap
        size = bank.raw_intercepts.size
        g_alpha = (
            np.bincount(self.idx_up.ravel(), (g_up * self.up_f).ravel(), minlength=size)
            + np.bincount(self.idx_lo.ravel(), (g_lo * self.lo_f).ravel(), minlength=size)
        ).reshape(bank.raw_intercepts.shape)
        return g_x, g_load, intercept_chain(bank, g_alpha)


def intercept_chain(bank: ItemBank, g_alpha) -> np.ndarray:
    """Map gradients w.r.t. constrained intercepts to the raw parameterization."""
    mask = bank.intercept_mask
    g_alpha = np.where(mask, g_alpha, 0.0)
    # tail[k] = sum_{m >= k} g_alpha[m]
    tail = np.cumsum(g_alpha[:, ::-1], axis=1)[:, ::-1]
    g_raw = np.empty_like(g_alpha)
    g_raw[:, 0] = tail[:, 0]
    g_raw[:, 1:] = -np.exp(bank.raw_intercepts[:, 1:]) * tail[:, 1:]
    return np.where(mask, g_raw, 0.0)
