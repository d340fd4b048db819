"""Fitting loop: mini-batch sampling, KL annealing, AMSGrad steps, convergence checks."""

from __future__ import annotations

import json
from collections import deque
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from vifa import optim
from vifa.data import Dataset, item_offsets, one_hot_rows
from vifa.encoder import EncoderParams, default_hidden_size, init_encoder
from vifa.grm import DEFAULT_D, ItemBank, init_item_bank
from vifa.objective import ConfigError, NoiseBlock, NumericalError, check_mode, evaluate

log = logging.getLogger(__name__)

MAX_BAD_STEPS = 3
SPIKE_WARMUP = 10  # iterations before the spike check starts
SPIKE_MEMORY = 50  # recent finite values the spike check compares against


@dataclass
class FitConfig:
    P: int
    R: int = 1
    S: int = 1
    M: int = optim.DEFAULT_BATCH_SIZE
    eta: float = optim.DEFAULT_LR
    beta1: float = optim.DEFAULT_BETA1
    beta2: float = optim.DEFAULT_BETA2
    denom_eps: float = optim.DEFAULT_DENOM_EPS
    anneal_tau: int = 1000
    window: int = 100
    patience: int = 10
    max_iters: int = 200_000
    seed: int = 0
    weight_mode: str = "algorithm1"
    hidden_size: int | None = None
    scaling: float = DEFAULT_D
    divergence_ratio: float = 10.0  # 0 disables the spike check
    fallback_eta: float = optim.FALLBACK_LR  # restart rate after divergence; 0 disables

    def __post_init__(self):
        if self.P < 1:
            raise ConfigError("latent dimension P must be >= 1")
        if min(self.R, self.S, self.M) < 1:
            raise ConfigError("R, S and M must all be >= 1")
        if self.anneal_tau < 0:
            raise ConfigError("anneal_tau must be >= 0")
        if self.window < 1 or self.patience < 1:
            raise ConfigError("window and patience must be >= 1")
        if self.eta <= 0:
            raise ConfigError("learning rate must be positive")
        if self.divergence_ratio < 0 or 0 < self.divergence_ratio <= 1:
            raise ConfigError("divergence_ratio must be 0 (off) or greater than 1")
        if self.fallback_eta < 0:
            raise ConfigError("fallback_eta must be >= 0")
        check_mode(self.weight_mode)

    @classmethod
    def from_dict(cls, obj: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def anneal_factor(t: int, tau: int) -> float:
    if tau <= 0 or t >= tau:
        return 1.0
    return t / tau


class ConvergenceMonitor:
    """Windowed-average stopping rule.

    Every ``window`` post-annealing iterations the mean of the last ``window``
    mini-batch objectives is compared with the best mean so far; fitting stops
    once ``patience`` consecutive comparisons fail to improve on it.
    """

    def __init__(self, window: int = 100, patience: int = 10):
        self.window = window
        self.patience = patience
        self.best = -np.inf
        self.stale = 0
        self._buf = []
        self.averages = []

    def update(self, value: float) -> bool:
        """Record one post-annealing value; return True when fitting should stop."""
        self._buf.append(value)
        if len(self._buf) < self.window:
            return False
        avg = float(np.mean(self._buf))
        self._buf = []
        self.averages.append(avg)
        if avg > self.best:
            self.best = avg
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


class ParamLayout:
    """Packs (encoder, loadings, raw intercepts) into one flat vector and back."""

    def __init__(self, bank: ItemBank, enc: EncoderParams):
        self.shapes = {
            "W1": enc.W1.shape, "b1": enc.b1.shape, "W2": enc.W2.shape, "b2": enc.b2.shape,
            "loadings": bank.loadings.shape,
        }
        self.mask = bank.intercept_mask
        self.category_counts = bank.category_counts
        self.scaling = bank.scaling
        self.slices = {}
        start = 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape))
            self.slices[name] = slice(start, start + n)
            start += n
        self.slices["raw_intercepts"] = slice(start, start + int(self.mask.sum()))
        self.size = start + int(self.mask.sum())

    def pack(self, bank: ItemBank, enc: EncoderParams) -> np.ndarray:
        return self._pack(bank.loadings, bank.raw_intercepts, enc)

    def pack_grad(self, g) -> np.ndarray:
        return self._pack(g.loadings, g.raw_intercepts, g.encoder)

    def _pack(self, loadings, raw, enc) -> np.ndarray:
        return np.concatenate([
            enc.W1.ravel(), enc.b1.ravel(), enc.W2.ravel(), enc.b2.ravel(),
            loadings.ravel(), raw[self.mask],
        ])

    def unpack(self, vec):
        blocks = {k: vec[s].reshape(self.shapes[k]) for k, s in self.slices.items() if k in self.shapes}
        raw = np.zeros(self.mask.shape)
        raw[self.mask] = vec[self.slices["raw_intercepts"]]
        bank = ItemBank(blocks["loadings"].copy(), raw, self.category_counts, self.scaling)
        enc = EncoderParams(*(blocks[k].copy() for k in ("W1", "b1", "W2", "b2")))
        return bank, enc


@dataclass
class FittedModel:
    item_bank: ItemBank
    encoder: EncoderParams
    config: FitConfig
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations_run: int = 0
    optimizer: optim.AmsGradState | None = None
    fallback_from: float | None = None  # requested rate when a restart was needed

    def to_json(self, include_optimizer: bool = True, trace_every: int = 1) -> dict:
        out = {
            "format": "vifa-fitted-model/1",
            "config": asdict(self.config),
            "converged": self.converged,
            "iterations_run": self.iterations_run,
            "item_bank": self.item_bank.to_json(),
            "encoder": self.encoder.to_json(),
            "trace_every": trace_every,
            "trace": [float(v) for v in self.trace[::trace_every]],
            "fallback_from": self.fallback_from,
        }
        if include_optimizer and self.optimizer is not None:
            out["optimizer"] = self.optimizer.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FittedModel":
        opt = obj.get("optimizer")
        return cls(
            item_bank=ItemBank.from_json(obj["item_bank"]),
            encoder=EncoderParams.from_json(obj["encoder"]),
            config=FitConfig.from_dict(obj["config"]),
            trace=list(obj.get("trace", [])),
            converged=bool(obj["converged"]),
            iterations_run=int(obj["iterations_run"]),
            optimizer=optim.AmsGradState.from_json(opt) if opt else None,
            fallback_from=obj.get("fallback_from"),
        )

    def save(self, path, **kw) -> None:
        Path(path).write_text(json.dumps(self.to_json(**kw)) + "\n")

    @classmethod
    def load(cls, path) -> "FittedModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return ss.spawn(4)


def init_params(data: Dataset, cfg: FitConfig):
    s_items, s_enc, _, _ = _streams(cfg.seed)
    counts = data.category_counts
    input_dim = int(counts.sum())
    H = cfg.hidden_size or default_hidden_size(input_dim, cfg.P)
    bank = init_item_bank(data.n_items, cfg.P, counts, s_items, cfg.scaling)
    enc = init_encoder(input_dim, H, cfg.P, s_enc)
    return bank, enc


def _spiked(value: float, recent, ratio: float) -> bool:
    """A mini-batch objective ``ratio`` times worse than the recent median."""
    if ratio == 0 or len(recent) < SPIKE_WARMUP:
        return False
    med = float(np.median(recent))
    return value < med - (ratio - 1.0) * max(abs(med), 1.0)


def _advice(eta: float) -> str:
    if eta > optim.FALLBACK_LR:
        return f"retry with a smaller learning rate such as {optim.FALLBACK_LR}"
    return "retry with a smaller learning rate"


def fit(data: Dataset, cfg: FitConfig, resume: FittedModel | None = None,
        callback=None) -> FittedModel:
    """Run the stochastic fitting loop until the stopping rule fires or ``max_iters``.

    ``callback(t, value)`` is invoked after every iteration when given.

    If the objective diverges and ``cfg.fallback_eta`` is a smaller positive rate,
    the fit restarts once from the same initialization and streams at that rate.
    The returned config then carries the rate actually used and ``fallback_from``
    the one requested. Resumed fits never restart.
    """
    try:
        return _run(data, cfg, resume, callback)
    except NumericalError as err:
        if resume is not None or not 0 < cfg.fallback_eta < cfg.eta:
            raise
        log.warning("%s; restarting with learning rate %g", err, cfg.fallback_eta)
    model = _run(data, replace(cfg, eta=cfg.fallback_eta), None, callback)
    model.fallback_from = cfg.eta
    return model


def _run(data, cfg, resume, callback) -> FittedModel:
    if resume is not None:
        bank, enc = resume.item_bank, resume.encoder
    else:
        bank, enc = init_params(data, cfg)
    layout = ParamLayout(bank, enc)
    xi = layout.pack(bank, enc)
    if resume is not None and resume.optimizer is not None:
        state = resume.optimizer
    else:
        state = optim.AmsGradState.zeros(layout.size, eta=cfg.eta, beta1=cfg.beta1,
                                         beta2=cfg.beta2, denom_eps=cfg.denom_eps)
    _, _, s_batch, s_noise = _streams(cfg.seed)
    batch_rng = np.random.default_rng(s_batch)
    noise_rng = np.random.default_rng(s_noise)
    offsets = item_offsets(data.category_counts)
    N = data.n_respondents
    shape = (cfg.M, cfg.R, cfg.S, cfg.P)
    monitor = ConvergenceMonitor(cfg.window, cfg.patience)
    trace = []
    converged = False
    bad = 0
    recent = deque(maxlen=SPIKE_MEMORY)
    t = 0
    while t < cfg.max_iters:
        idx = batch_rng.integers(0, N, size=cfg.M)
        y = data.responses[idx]
        rows = one_hot_rows(y, data.category_counts, offsets)
        noise = NoiseBlock(noise_rng.standard_normal(shape))
        kappa = anneal_factor(t, cfg.anneal_tau)
        bank, enc = layout.unpack(xi)
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                value, g = evaluate(bank, enc, rows, y, noise, cfg.weight_mode, kappa)
            ok = np.isfinite(value.iw_elbo)
        except NumericalError:
            ok = False
        if not ok:
            bad += 1
            if bad >= MAX_BAD_STEPS:
                raise NumericalError(
                    f"objective diverged at iteration {t} (learning rate {cfg.eta}); {_advice(cfg.eta)}"
                )
            t += 1
            trace.append(float("nan"))
            continue
        bad = 0
        if _spiked(value.iw_elbo, recent, cfg.divergence_ratio):
            raise NumericalError(
                f"objective diverged at iteration {t}: mini-batch IW-ELBO {value.iw_elbo:.4g} against a "
                f"recent median of {np.median(recent):.4g} (learning rate {cfg.eta}); {_advice(cfg.eta)}"
            )
        recent.append(value.iw_elbo)
        state, xi = optim.step(state, xi, -layout.pack_grad(g))
        trace.append(value.iw_elbo)
        if callback is not None:
            callback(t, value.iw_elbo)
        t += 1
        if t > cfg.anneal_tau:
            stop = monitor.update(value.iw_elbo)
            if len(monitor._buf) == 0:
                log.info("iter %d  window mean IW-ELBO %.4f  best %.4f  stale %d",
                         t, monitor.averages[-1], monitor.best, monitor.stale)
            if stop:
                converged = True
                break
    bank, enc = layout.unpack(xi)
    return FittedModel(bank, enc, cfg, trace, converged, t, state)


def full_data_iw_elbo(model: FittedModel, data: Dataset, R: int | None = None, S: int = 1,
                      seed: int = 0, mode: str | None = None, chunk: int = 1024) -> float:
    """Mean per-respondent IW-ELBO over a whole dataset (O(N); post-fit only)."""
    cfg = model.config
    R = R or cfg.R
    mode = mode or cfg.weight_mode
    rng = np.random.default_rng(seed)
    offsets = item_offsets(data.category_counts)
    total = 0.0
    for start in range(0, data.n_respondents, chunk):
        y = data.responses[start:start + chunk]
        rows = one_hot_rows(y, data.category_counts, offsets)
        noise = NoiseBlock(rng.standard_normal((y.shape[0], R, S, cfg.P)))
        value, _ = evaluate(model.item_bank, model.encoder, rows, y, noise, mode, with_grad=False)
        total += float(np.sum(value.per_respondent))
    return total / data.n_respondents
