"""AMSGrad over a single flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LR = 0.01
FALLBACK_LR = 0.005
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_BATCH_SIZE = 128
DEFAULT_DENOM_EPS = 1e-8


def defaults() -> dict:
    return {
        "eta": DEFAULT_LR,
        "beta1": DEFAULT_BETA1,
        "beta2": DEFAULT_BETA2,
        "M": DEFAULT_BATCH_SIZE,
        "fallback_eta": FALLBACK_LR,
    }


@dataclass
class AmsGradState:
    m: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    t: int = 0
    eta: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    denom_eps: float = DEFAULT_DENOM_EPS

    @classmethod
    def zeros(cls, d: int, **hyper) -> "AmsGradState":
        return cls(np.zeros(d), np.zeros(d), np.zeros(d), **hyper)

    def to_json(self) -> dict:
        return {
            "m": self.m.tolist(), "v": self.v.tolist(), "v_hat": self.v_hat.tolist(),
            "t": self.t, "eta": self.eta, "beta1": self.beta1, "beta2": self.beta2,
            "denom_eps": self.denom_eps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AmsGradState":
        obj = dict(obj)
        for k in ("m", "v", "v_hat"):
            obj[k] = np.asarray(obj[k], dtype=float)
        return cls(**obj)


def step(state: AmsGradState, params, grad):
    """One AMSGrad descent step; returns (new_state, new_params).

    To ascend an objective pass its negated gradient.
    """
    g = np.asarray(grad, dtype=float)
    params = np.asarray(params, dtype=float)
    if g.shape != params.shape or g.shape != state.m.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {params.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at index {bad[0]}")
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    v_hat = np.maximum(state.v_hat, v)
    new_params = params - state.eta * m / (np.sqrt(v_hat) + state.denom_eps)
    new_state = AmsGradState(m, v, v_hat, state.t + 1, state.eta, state.beta1, state.beta2,
                             state.denom_eps)
    return new_state, new_params
