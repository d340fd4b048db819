"""Post-estimation: holdout log-likelihood, scree curves, MAP scores, bias/MSE summaries."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from vifa.data import Dataset, item_offsets, one_hot_rows
from vifa.encoder import EncoderPass
from vifa.grm import ResponseTerms
from vifa.objective import ConfigError
from vifa.trainer import FitConfig, FittedModel, fit

log = logging.getLogger(__name__)

DEFAULT_R_EVAL = 5000
DRAW_BLOCK = 250


@dataclass
class ScreePoint:
    P: int
    neg_approx_loglik: float
    holdout_fraction: float
    R_eval: int
    iterations: int = 0
    converged: bool = True
    eta: float | None = None  # learning rate the fit ended up using


@dataclass
class MetricReport:
    bias: dict  # block -> array
    mse: dict
    rmse: dict  # block -> float
    n_replications: int
    score_correlations: np.ndarray | None = None

    def to_json(self) -> dict:
        out = {
            "n_replications": self.n_replications,
            "rmse": {k: float(v) for k, v in self.rmse.items()},
            "bias": {k: np.asarray(v).tolist() for k, v in self.bias.items()},
            "mse": {k: np.asarray(v).tolist() for k, v in self.mse.items()},
        }
        if self.score_correlations is not None:
            out["score_correlations"] = np.asarray(self.score_correlations).tolist()
        return out


def derive_seed(root: int, *index: int) -> int:
    """Counter-based child seed: depends only on the root and the index tuple."""
    return int(np.random.SeedSequence([root, *index]).generate_state(1)[0])


def holdout_split(d: Dataset, fraction: float, seed: int, min_train: int = 1):
    """Respondent-level split; returns (train, holdout, holdout row indices)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must lie in (0, 1), got {fraction}")
    N = d.n_respondents
    n_hold = int(round(fraction * N))
    if N - n_hold < min_train or n_hold < 1:
        raise ConfigError(
            f"holdout fraction {fraction} leaves {N - n_hold} training rows (< {min_train}) "
            f"or an empty holdout set"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    omega = np.sort(perm[:n_hold])
    train = np.sort(perm[n_hold:])
    return d.subset(train), d.subset(omega), omega


def approx_loglik_terms(model: FittedModel, holdout: Dataset, R_eval: int = DEFAULT_R_EVAL,
                        seed: int = 0, chunk: int = 200) -> np.ndarray:
    """Per-respondent log (1/R) sum_r p(x_r, y) / q(x_r | y) with draws from the encoder.

    Draws come in fixed blocks seeded by (seed, block), so evaluations at
    different ``R_eval`` share their leading draws (common random numbers).
    """
    bank, enc = model.item_bank, model.encoder
    if enc.input_dim != int(holdout.category_counts.sum()):
        raise ValueError("holdout encoding width does not match the fitted encoder")
    P = enc.latent_dim
    n = holdout.n_respondents
    offsets = item_offsets(holdout.category_counts)
    acc = np.full(n, -np.inf)
    n_blocks = -(-R_eval // DRAW_BLOCK)
    nets = []
    for start in range(0, n, chunk):
        y = holdout.responses[start:start + chunk]
        nets.append((start, y, EncoderPass(enc, one_hot_rows(y, holdout.category_counts, offsets)),
                     ResponseTerms(bank, y)))
    for b in range(n_blocks):
        width = min(DRAW_BLOCK, R_eval - b * DRAW_BLOCK)
        eps_all = np.random.default_rng([seed, b]).standard_normal((n, DRAW_BLOCK, P))[:, :width]
        for start, y, net, terms in nets:
            eps = eps_all[start:start + y.shape[0]]
            sigma = np.exp(net.log_sigma)
            x = net.mu[:, None, :] + sigma[:, None, :] * eps
            ll = terms.forward(x)
            lw = ll + 0.5 * np.sum(eps**2 - x**2, axis=2) + net.log_sigma.sum(axis=1)[:, None]
            sl = slice(start, start + y.shape[0])
            acc[sl] = np.logaddexp(acc[sl], logsumexp(lw, axis=1))
    return acc - np.log(R_eval)


def approx_loglik(model: FittedModel, holdout: Dataset, R_eval: int = DEFAULT_R_EVAL,
                  seed: int = 0) -> float:
    return float(np.sum(approx_loglik_terms(model, holdout, R_eval, seed)))


def _scree_point(args):
    train, holdout, cfg, R_eval, fraction, eval_seed = args
    model = fit(train, cfg)
    value = approx_loglik(model, holdout, R_eval, eval_seed)
    return ScreePoint(cfg.P, -value, fraction, R_eval, model.iterations_run, model.converged,
                      model.config.eta)


def scree_curve(d: Dataset, P_list, cfg_template: FitConfig, holdout_fraction: float = 0.2,
                R_eval: int = DEFAULT_R_EVAL, seed: int = 0, jobs: int = 1) -> list:
    """Fit each latent dimension on a common training split and score the holdout."""
    P_list = list(P_list)
    if not P_list:
        raise ConfigError("P_list must be non-empty")
    if sorted(P_list) != P_list:
        raise ConfigError("P_list must be ascending")
    train, holdout, _ = holdout_split(d, holdout_fraction, seed, min_train=cfg_template.M)
    tasks = []
    for P in P_list:
        cfg = dataclasses.replace(cfg_template, P=P, seed=derive_seed(seed, P))
        tasks.append((train, holdout, cfg, R_eval, holdout_fraction, derive_seed(seed, P, 1)))
    points = []
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                points = list(pool.map(_scree_point, tasks))
        else:
            for t in tasks:
                points.append(_scree_point(t))
                log.info("scree P=%d  -loglik %.2f", points[-1].P, points[-1].neg_approx_loglik)
    except Exception as exc:
        P_failed = tasks[len(points)][2].P if len(points) < len(tasks) else None
        raise RuntimeError(f"scree fit failed (P={P_failed}): {exc}") from exc
    return points


def elbow_hint(points) -> int | None:
    """P with the largest second difference of -loglik; a hint only, never a selection."""
    if len(points) < 3:
        return None
    v = np.array([p.neg_approx_loglik for p in points])
    second = v[:-2] - 2 * v[1:-1] + v[2:]
    return points[int(np.argmax(second)) + 1].P


def map_scores(model: FittedModel, d: Dataset, rotation=None, chunk: int = 4096) -> np.ndarray:
    """Approximate posterior means; optionally mapped into a rotated factor space."""
    offsets = item_offsets(d.category_counts)
    out = np.empty((d.n_respondents, model.encoder.latent_dim))
    for start in range(0, d.n_respondents, chunk):
        y = d.responses[start:start + chunk]
        out[start:start + y.shape[0]] = EncoderPass(
            model.encoder, one_hot_rows(y, d.category_counts, offsets)).mu
    if rotation is not None:
        out = rotation.rotate_scores(out)
    return out


def bias_mse(estimates, truth) -> MetricReport:
    """Across-replication bias, MSE and block RMSE.

    ``estimates`` is a list of dicts mapping block name to an aligned array;
    ``truth`` maps the same names to the generating values.
    """
    if len(estimates) < 2:
        raise ValueError("need at least two replications")
    bias, mse, rmse = {}, {}, {}
    for name, true in truth.items():
        true = np.asarray(true, dtype=float)
        stack = np.stack([np.asarray(e[name], dtype=float) for e in estimates])
        if stack.shape[1:] != true.shape:
            raise ValueError(f"block {name!r}: estimate shape {stack.shape[1:]} != truth {true.shape}")
        dev = stack - true
        bias[name] = dev.mean(axis=0)
        mse[name] = np.mean(dev**2, axis=0)
        rmse[name] = float(np.sqrt(np.nanmean(mse[name])))
    return MetricReport(bias, mse, rmse, len(estimates))


def offdiag(phi) -> np.ndarray:
    phi = np.asarray(phi)
    return phi[np.triu_indices(phi.shape[0], k=1)]


def score_correlations(est, true) -> np.ndarray:
    return np.array([np.corrcoef(est[:, p], true[:, p])[0, 1] for p in range(true.shape[1])])
