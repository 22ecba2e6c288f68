"""Weighted GLM loss, derivatives and curvature matrices.

Conventions used throughout the package:

* the design matrix has an intercept in column 0, so coefficient vectors
  have length p+1 and index sets live in {0, ..., p} with 0 = intercept;
* the per-observation loss is g(y, t) evaluated at the linear predictor
  t = x'theta, with first/second derivatives gdot/gddot in t;
* the weighted log-likelihood is L(theta) = -n^{-1} sum_i w_i g(y_i, x_i'theta).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit


class NumericError(RuntimeError):
    """A linear-algebra or floating-point failure that invalidates a result."""


@dataclass(frozen=True)
class Dataset:
    """Outcomes, design matrix with intercept column, positive survey weights."""

    y: np.ndarray
    X: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "w", w)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d design matrix")
        n = X.shape[0]
        if y.shape != (n,) or w.shape != (n,):
            raise ValueError("y, w and rows of X must have equal length")
        if not np.all(w > 0):
            raise ValueError("all weights must be strictly positive")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("design column 0 must be identically 1 (intercept)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1] - 1

    def rescaled(self) -> "Dataset":
        """Return a copy whose weights sum to n (idempotent)."""
        w = self.w * (self.n / self.w.sum())
        return Dataset(self.y, self.X, w)

    @staticmethod
    def from_arrays(y, Xt, w=None) -> "Dataset":
        """Build a dataset from non-constant regressors, prepending the intercept."""
        Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
        n = Xt.shape[0]
        X = np.column_stack([np.ones(n), Xt])
        if w is None:
            w = np.ones(n)
        return Dataset(np.asarray(y, dtype=float), X, np.asarray(w, dtype=float))


@dataclass(frozen=True)
class GlmFamily:
    """Per-observation loss g(y, t) with its first two derivatives in t."""

    name: str
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gdot: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gddot: Callable[[np.ndarray, np.ndarray], np.ndarray]


def _logit_g(y, t):
    # log(1 + exp(t)) - y*t, overflow-safe for |t| up to ~1e300
    return np.logaddexp(0.0, t) - y * t


def _logit_gdot(y, t):
    return expit(t) - y


def _logit_gddot(y, t):
    # Lambda(t) * (1 - Lambda(t)) without catastrophic cancellation
    return expit(t) * expit(-t)


LOGIT = GlmFamily(name="logit", g=_logit_g, gdot=_logit_gdot, gddot=_logit_gddot)


@dataclass(frozen=True)
class CurvatureSet:
    """Score S, negative Hessian H and information I at a parameter value."""

    S: np.ndarray
    H: np.ndarray
    I: np.ndarray
    theta_at: np.ndarray


def weighted_loglik(ds: Dataset, fam: GlmFamily, theta: np.ndarray) -> float:
    """L(theta) = -n^{-1} sum_i w_i g(y_i, x_i'theta)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ds.p + 1,):
        raise ValueError(f"theta must have length {ds.p + 1}, got {theta.shape}")
    t = ds.X @ theta
    val = -np.sum(ds.w * fam.g(ds.y, t)) / ds.n
    if not np.isfinite(val):
        raise NumericError("weighted log-likelihood is not finite")
    return float(val)


def curvature(ds: Dataset, fam: GlmFamily, theta: np.ndarray) -> CurvatureSet:
    """Score, negative Hessian and information at theta.

    The weight enters H linearly and I quadratically:
        S = -n^{-1} sum w_i x_i gdot,
        H =  n^{-1} sum w_i x_i x_i' gddot,
        I =  n^{-1} sum w_i^2 x_i x_i' gdot^2.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ds.p + 1,):
        raise ValueError(f"theta must have length {ds.p + 1}, got {theta.shape}")
    t = ds.X @ theta
    gd = fam.gdot(ds.y, t)
    gdd = fam.gddot(ds.y, t)
    n = ds.n
    S = -(ds.X.T @ (ds.w * gd)) / n
    H = (ds.X.T * (ds.w * gdd)) @ ds.X / n
    I = (ds.X.T * (ds.w ** 2 * gd ** 2)) @ ds.X / n
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(H)) and np.all(np.isfinite(I))):
        raise NumericError("curvature matrices are not finite")
    # enforce exact symmetry against accumulation noise
    H = (H + H.T) / 2
    I = (I + I.T) / 2
    return CurvatureSet(S=S, H=H, I=I, theta_at=theta.copy())


@dataclass(frozen=True)
class ModelPartition:
    """Block views of S, H, I for an index set M (always containing 0)."""

    M: np.ndarray
    comp: np.ndarray  # complement of M, sorted
    S_M: np.ndarray
    S_c: np.ndarray
    H_MM: np.ndarray
    H_Mc: np.ndarray
    H_cM: np.ndarray
    H_cc: np.ndarray
    I_MM: np.ndarray
    I_Mc: np.ndarray
    I_cM: np.ndarray
    I_cc: np.ndarray


def partition(cs: CurvatureSet, M) -> ModelPartition:
    """Split a CurvatureSet into the M / complement blocks."""
    k = cs.S.shape[0]
    M = np.unique(np.asarray(M, dtype=int))
    if M.size == 0 or M[0] != 0:
        raise ValueError("M must contain the intercept index 0")
    if M[-1] >= k or np.any(M < 0):
        raise ValueError("M contains out-of-range indices")
    comp = np.setdiff1d(np.arange(k), M)
    return ModelPartition(
        M=M,
        comp=comp,
        S_M=cs.S[M],
        S_c=cs.S[comp],
        H_MM=cs.H[np.ix_(M, M)],
        H_Mc=cs.H[np.ix_(M, comp)],
        H_cM=cs.H[np.ix_(comp, M)],
        H_cc=cs.H[np.ix_(comp, comp)],
        I_MM=cs.I[np.ix_(M, M)],
        I_Mc=cs.I[np.ix_(M, comp)],
        I_cM=cs.I[np.ix_(comp, M)],
        I_cc=cs.I[np.ix_(comp, comp)],
    )
