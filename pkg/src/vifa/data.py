"""Graded response datasets: loading, validation, one-hot encoding and simulation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vifa.grm import DEFAULT_D


class DataError(ValueError):
    """Raised for malformed or invalid response data."""


@dataclass(frozen=True)
class Dataset:
    responses: np.ndarray  # (N, J) int
    category_counts: np.ndarray  # (J,) int

    def __post_init__(self):
        y = np.asarray(self.responses)
        c = np.asarray(self.category_counts)
        if y.ndim != 2:
            raise DataError(f"responses must be 2-D, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            raise DataError("responses must be integer codes")
        if c.shape != (y.shape[1],):
            raise DataError(f"category_counts has shape {c.shape}, expected ({y.shape[1]},)")
        if np.any(c < 2):
            bad = int(np.flatnonzero(c < 2)[0])
            raise DataError(f"item {bad} has fewer than 2 categories")
        if y.size and (y.min() < 0 or np.any(y >= c[None, :])):
            i, j = np.argwhere((y < 0) | (y >= c[None, :]))[0]
            raise DataError(f"response {y[i, j]} at row {i}, column {j} outside 0..{c[j] - 1}")
        object.__setattr__(self, "responses", y.astype(np.int64, copy=False))
        object.__setattr__(self, "category_counts", c.astype(np.int64, copy=False))

    @property
    def n_respondents(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.responses[rows], self.category_counts)


@dataclass(frozen=True)
class EncodedMatrix:
    rows: np.ndarray  # (N, sum C_j)
    offsets: np.ndarray  # (J,)


def item_offsets(category_counts) -> np.ndarray:
    c = np.asarray(category_counts, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(c)[:-1]])


def one_hot(d: Dataset) -> EncodedMatrix:
    offsets = item_offsets(d.category_counts)
    rows = one_hot_rows(d.responses, d.category_counts, offsets)
    return EncodedMatrix(rows, offsets)


def one_hot_rows(responses, category_counts, offsets=None) -> np.ndarray:
    """One-hot encode a block of response rows (used per mini-batch by the trainer)."""
    if offsets is None:
        offsets = item_offsets(category_counts)
    y = np.asarray(responses)
    out = np.zeros((y.shape[0], int(np.sum(category_counts))))
    np.put_along_axis(out, y + offsets[None, :], 1.0, axis=1)
    return out


def decode_one_hot(enc: EncodedMatrix, category_counts) -> np.ndarray:
    blocks = np.split(enc.rows, np.asarray(enc.offsets[1:]), axis=1)
    return np.stack([b.argmax(axis=1) for b in blocks], axis=1)


def load_csv(path, delimiter: str = ",", category_counts=None) -> Dataset:
    """Read an integer response matrix.

    A first row containing any non-numeric token is treated as a header.
    Category counts default to ``1 + max`` observed code per column; pass
    ``category_counts`` to override (e.g. for holdout-split data).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        raw = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(t.strip() for t in r)]
    if not raw:
        raise DataError(f"{path}: no data rows")
    if any(not _looks_numeric(t) for t in raw[0]):
        raw = raw[1:]
        first_line = 2
    else:
        first_line = 1
    width = len(raw[0])
    values = np.empty((len(raw), width), dtype=np.int64)
    for i, row in enumerate(raw):
        if len(row) != width:
            raise DataError(
                f"{path}: row {i + first_line} has {len(row)} columns, expected {width}"
            )
        for j, tok in enumerate(row):
            tok = tok.strip()
            if tok == "":
                raise DataError(f"{path}: missing value at row {i + first_line}, column {j + 1}")
            try:
                v = int(tok)
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse {tok!r} as an integer at row {i + first_line}, column {j + 1}"
                ) from None
            if v < 0:
                raise DataError(f"{path}: negative code {v} at row {i + first_line}, column {j + 1}")
            values[i, j] = v
    if category_counts is None:
        counts = values.max(axis=0) + 1
        single = np.flatnonzero(counts < 2)
        if single.size:
            raise DataError(f"{path}: column {single[0] + 1} has a single observed category")
    else:
        counts = np.asarray(category_counts, dtype=np.int64)
        if counts.ndim == 0:
            counts = np.full(width, int(counts))
        elif counts.shape != (width,):
            raise DataError(f"{path}: {width} columns but {counts.size} category counts supplied")
    return Dataset(values, counts)


def _looks_numeric(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def save_csv(d: Dataset, path, delimiter: str = ",") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerows(d.responses.tolist())


@dataclass
class GeneratingParams:
    loadings: np.ndarray  # (J, P)
    intercepts: list  # per item, strictly decreasing arrays of length C_j - 1
    factor_corr: np.ndarray  # (P, P)
    scaling: float = DEFAULT_D

    def __post_init__(self):
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        self.intercepts = [np.asarray(a, dtype=float) for a in self.intercepts]
        self.factor_corr = np.atleast_2d(np.asarray(self.factor_corr, dtype=float))
        J, P = self.loadings.shape
        if len(self.intercepts) != J:
            raise DataError(f"{len(self.intercepts)} intercept vectors for {J} items")
        for j, a in enumerate(self.intercepts):
            if a.size < 1 or np.any(np.diff(a) >= 0):
                raise DataError(f"intercepts of item {j} are not strictly decreasing")
        phi = self.factor_corr
        if phi.shape != (P, P):
            raise DataError(f"factor_corr has shape {phi.shape}, expected ({P}, {P})")
        if not np.allclose(phi, phi.T) or not np.allclose(np.diag(phi), 1.0):
            raise DataError("factor_corr must be symmetric with unit diagonal")
        if self.scaling <= 0:
            raise DataError("scaling D must be positive")

    @property
    def category_counts(self) -> np.ndarray:
        return np.array([a.size + 1 for a in self.intercepts], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "loadings": self.loadings.tolist(),
            "intercepts": [a.tolist() for a in self.intercepts],
            "factor_corr": self.factor_corr.tolist(),
            "scaling": self.scaling,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratingParams":
        return cls(obj["loadings"], obj["intercepts"], obj["factor_corr"], obj.get("scaling", DEFAULT_D))


# Factor correlations of the five-factor personality solution, rounded to two decimals.
FIVE_FACTOR_CORR = np.array([
    [1.00, -0.18, 0.16, 0.11, 0.17],
    [-0.18, 1.00, -0.01, -0.11, -0.08],
    [0.16, -0.01, 1.00, 0.06, 0.08],
    [0.11, -0.11, 0.06, 1.00, -0.01],
    [0.17, -0.08, 0.08, -0.01, 1.00],
])


def simple_structure_template(n_factors: int = 5, items_per_factor: int = 10,
                              n_categories: int = 5, factor_corr=None) -> GeneratingParams:
    """Perfect simple-structure generator: each item loads on exactly one factor.

    Loadings cycle through 0.8..1.6 and intercept sets are shifted item by item so
    the template spans a range of item difficulties. Values are fixed (no RNG) so
    the template is reproducible across versions.
    """
    P, K = n_factors, n_categories
    J = P * items_per_factor
    if factor_corr is None:
        factor_corr = FIVE_FACTOR_CORR if P == 5 else np.eye(P)
    mags = np.array([0.8, 1.0, 1.2, 1.4, 1.6])
    loadings = np.zeros((J, P))
    intercepts = []
    base = np.linspace(1.5, -1.5, K - 1) if K > 2 else np.zeros(1)
    shifts = np.array([0.0, 0.4, -0.4, 0.8, -0.8])
    for j in range(J):
        loadings[j, j // items_per_factor] = mags[j % mags.size]
        intercepts.append(np.round(base + shifts[(j // 2) % shifts.size], 2))
    return GeneratingParams(loadings, intercepts, factor_corr)


def repeated_template(base: GeneratingParams, n_copies: int, n_categories: int | None = None,
                      seed: int = 0) -> GeneratingParams:
    """Stack copies of a base design for the high-dimensional studies.

    Copy ``c`` loads on factor block ``c mod 2`` of a two-block design whose
    factor correlation matrix is block diagonal with the base matrix on the
    diagonal. With ``n_categories=2`` each item keeps one intercept chosen at
    random from the base item's intercepts.
    """
    J0, P0 = base.loadings.shape
    n_blocks = 2 if n_copies > 1 else 1
    P = P0 * n_blocks
    loadings = np.zeros((J0 * n_copies, P))
    intercepts = []
    rng = np.random.default_rng(seed)
    for c in range(n_copies):
        blk = c % n_blocks
        loadings[c * J0:(c + 1) * J0, blk * P0:(blk + 1) * P0] = base.loadings
        for a in base.intercepts:
            if n_categories == 2:
                intercepts.append(np.array([a[rng.integers(a.size)]]))
            else:
                intercepts.append(a.copy())
    phi = np.kron(np.eye(n_blocks), base.factor_corr)
    return GeneratingParams(loadings, intercepts, phi, base.scaling)


def template(name: str, n_items: int | None = None, seed: int = 0) -> GeneratingParams:
    """Built-in generators: 'five-factor' (P=5, J=50, C=5), 'ten-factor'
    (P=10, J=100, C=5) and 'binary' (P=10, C=2, J a multiple of 50, default 100)."""
    base = simple_structure_template()
    if name == "five-factor":
        return base
    if name == "ten-factor":
        return repeated_template(base, 2)
    if name == "binary":
        J = n_items or 100
        if J % 50:
            raise DataError("binary template needs a multiple of 50 items")
        return repeated_template(base, J // 50, n_categories=2, seed=seed)
    raise DataError(f"unknown template {name!r}")


def simulate(gp: GeneratingParams, n: int, seed: int, return_scores: bool = False):
    """Draw ``n`` respondents from the graded response model.

    Factor scores come from N(0, factor_corr) through its Cholesky factor; each
    response is drawn by inverting the cumulative category probabilities with a
    single uniform per cell.
    """
    try:
        chol = np.linalg.cholesky(gp.factor_corr)
    except np.linalg.LinAlgError as exc:
        raise DataError("factor_corr is not positive definite") from exc
    rng = np.random.default_rng(seed)
    P = gp.loadings.shape[1]
    x = rng.standard_normal((n, P)) @ chol.T
    u = rng.random((n, gp.loadings.shape[0]))
    eta = x @ gp.loadings.T  # (n, J)
    y = np.empty(u.shape, dtype=np.int64)
    for j, alpha in enumerate(gp.intercepts):
        # Pr(y >= k) for k = 1..C-1; y = number of boundaries passed
        bound = 1.0 / (1.0 + np.exp(-gp.scaling * (alpha[None, :] + eta[:, j:j + 1])))
        y[:, j] = np.sum(u[:, j:j + 1] < bound, axis=1)
    d = Dataset(y, gp.category_counts)
    return (d, x) if return_scores else d


def write_simulation(d: Dataset, gp: GeneratingParams, seed: int, csv_path, json_path) -> None:
    save_csv(d, csv_path)
    sidecar = {"seed": seed, "n": d.n_respondents, "generating_params": gp.to_json()}
    Path(json_path).write_text(json.dumps(sidecar, indent=1) + "\n")
