"""Geomin oblique rotation, solution alignment and Tucker congruence.

Rotation uses the oblique gradient projection algorithm of Bernaards & Jennrich
(2005): with unrotated loadings A and a transform T whose columns have unit
length, the rotated loadings are ``L = A @ inv(T).T`` and the factor correlation
matrix is ``T.T @ T``. Hence ``A = L @ T.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

EQUIVALENCE_THRESHOLD = 0.98


class RotationError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass
class RotationSolution:
    rotated_loadings: np.ndarray  # (J, P)
    factor_corr: np.ndarray  # (P, P)
    transform: np.ndarray  # (P, P), unit-length columns
    criterion_value: float
    converged: bool = True
    start: int = 0
    history: list | None = None

    def reconstruct(self) -> np.ndarray:
        return self.rotated_loadings @ self.transform.T

    def rotate_scores(self, scores) -> np.ndarray:
        """Map unrotated factor scores x to x* = T.T x so that A x = L x*."""
        return np.asarray(scores) @ self.transform


@dataclass
class AlignmentRecord:
    permutation: np.ndarray  # aligned column a comes from comparison column permutation[a]
    signs: np.ndarray  # sign applied to each comparison column (comparison order)
    mse: float
    congruence: np.ndarray  # per aligned column

    @property
    def mean_congruence(self) -> float:
        return float(np.mean(self.congruence))

    @classmethod
    def identity(cls, P: int) -> "AlignmentRecord":
        return cls(np.arange(P), np.ones(P), 0.0, np.ones(P))

    def apply(self, M) -> np.ndarray:
        """Apply the column signs and permutation to a (n, P) matrix (loadings or scores)."""
        return (np.asarray(M) * self.signs)[:, self.permutation]

    def to_json(self) -> dict:
        return {
            "permutation": self.permutation.tolist(),
            "signs": self.signs.tolist(),
            "mse": self.mse,
            "congruence": self.congruence.tolist(),
            "mean_congruence": self.mean_congruence,
        }


def geomin_criterion(L, epsilon: float = 0.01):
    """Geomin value sum_j (prod_p (l_jp^2 + eps))^(1/P) and its gradient in L."""
    L = np.asarray(L)
    P = L.shape[1]
    sq = L**2 + epsilon
    pro = np.exp(np.mean(np.log(sq), axis=1))
    return float(pro.sum()), (2.0 / P) * L / sq * pro[:, None]


def _gpa_oblique(A, T, epsilon, tol, max_iter):
    Ti = np.linalg.inv(T)
    L = A @ Ti.T
    f, Gq = geomin_criterion(L, epsilon)
    G = -(L.T @ Gq @ Ti).T
    history = [f]
    step = 1.0
    converged = False
    for _ in range(max_iter):
        Gp = G - T @ np.diag(np.sum(T * G, axis=0))
        s = np.linalg.norm(Gp)
        if s < tol:
            converged = True
            break
        step *= 2.0
        improved = False
        for _ in range(11):
            X = T - step * Gp
            Tt = X / np.sqrt(np.sum(X**2, axis=0))
            Tti = np.linalg.inv(Tt)
            Lt = A @ Tti.T
            ft, Gqt = geomin_criterion(Lt, epsilon)
            if ft < f - 0.5 * s**2 * step:
                improved = True
                break
            step /= 2.0
        if not improved:
            # no Armijo decrease along the projected gradient; keep the current T
            converged = s < np.sqrt(tol)
            break
        T, Ti, L, f = Tt, Tti, Lt, ft
        G = -(L.T @ Gqt @ Ti).T
        history.append(f)
    return T, L, f, converged, history


def _random_transform(rng, P):
    X = rng.standard_normal((P, P))
    return X / np.sqrt(np.sum(X**2, axis=0))


def geomin_rotate(loadings, epsilon: float = 0.01, n_starts: int = 30, tol: float = 1e-5,
                  max_iter: int = 500, seed=0, strict: bool = True) -> RotationSolution:
    """Oblique Geomin rotation; best of ``n_starts`` starts (the first is the identity).

    Raises RotationError (carrying the best partial solution) if no start
    converges and ``strict`` is set.
    """
    A = np.asarray(loadings, dtype=float)
    J, P = A.shape
    if P == 1:
        f, _ = geomin_criterion(A, epsilon)
        return RotationSolution(A.copy(), np.ones((1, 1)), np.ones((1, 1)), f)
    if J <= P:
        raise ValueError(f"need more items than factors to rotate, got J={J}, P={P}")
    rng = np.random.default_rng(seed)
    best = None
    for k in range(n_starts):
        T0 = np.eye(P) if k == 0 else _random_transform(rng, P)
        T, L, f, ok, hist = _gpa_oblique(A, T0, epsilon, tol, max_iter)
        cand = RotationSolution(L, T.T @ T, T, f, ok, k, hist)
        # ties resolved by start index: earlier start wins
        if best is None or (ok, -f) > (best.converged, -best.criterion_value):
            best = cand
    if strict and not best.converged:
        raise RotationError(f"geomin rotation did not converge in any of {n_starts} starts", best)
    return best


def tucker_congruence(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = np.sqrt(np.sum(a**2) * np.sum(b**2))
    if denom == 0:
        raise ValueError("congruence is undefined for a zero vector")
    return float(np.dot(a, b) / denom)


def column_congruence(A, B) -> np.ndarray:
    return np.array([tucker_congruence(A[:, p], B[:, p]) for p in range(A.shape[1])])


def sign_normalize(M):
    """Flip columns whose sum is negative; returns (flipped, signs)."""
    M = np.asarray(M, dtype=float)
    signs = np.where(M.sum(axis=0) < 0, -1.0, 1.0)
    return M * signs, signs


def align(reference, comparison):
    """Sign-flip then column-permute ``comparison`` to best match ``reference``.

    Columns with a negative sum are inverted, then the permutation minimizing
    element-wise MSE is found by optimal assignment on the P x P column cost.
    """
    ref = np.asarray(reference, dtype=float)
    cmp_ = np.asarray(comparison, dtype=float)
    if ref.shape != cmp_.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {cmp_.shape}")
    flipped, signs = sign_normalize(cmp_)
    cost = np.mean((ref[:, :, None] - flipped[:, None, :]) ** 2, axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    aligned = flipped[:, perm]
    rec = AlignmentRecord(perm, signs, float(np.mean((ref - aligned) ** 2)),
                          column_congruence(ref, aligned))
    return rec, aligned


def align_correlations(phi, record: AlignmentRecord) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    s = record.signs
    out = phi * s[:, None] * s[None, :]
    return out[np.ix_(record.permutation, record.permutation)]


def equivalent(record: AlignmentRecord, reference=None, aligned=None,
               threshold: float = EQUIVALENCE_THRESHOLD, rule: str = "mean") -> bool:
    """Congruence-based equivalence decision: rule is 'mean', 'min' or 'matrix'."""
    if rule == "mean":
        value = record.mean_congruence
    elif rule == "min":
        value = float(np.min(record.congruence))
    elif rule == "matrix":
        if reference is None or aligned is None:
            raise ValueError("matrix rule needs the reference and aligned matrices")
        value = tucker_congruence(reference, aligned)
    else:
        raise ValueError(f"unknown equivalence rule {rule!r}")
    return value > threshold
