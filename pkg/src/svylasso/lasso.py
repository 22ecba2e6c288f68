"""Survey-weighted l1-penalized GLM solver with an unpenalized intercept.

The algorithm is proximal Newton: at each outer iterate an IRLS quadratic
approximation of the negative weighted log-likelihood is minimized by
cyclic coordinate descent with soft-thresholding on the slopes and an exact
update for the intercept.  Soft-thresholding yields exact zeros, so the
active set and its signs are read directly off the solution.

Weights are rescaled to sum to n before fitting; every downstream module
consumes the rescaled weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy.special import expit, logit

from .glm import LOGIT, Dataset, GlmFamily, NumericError, curvature, weighted_loglik

TOL_KKT = 1e-6
_TOL_OUTER = 1e-8
_MAX_OUTER = 200
_MAX_INNER = 1000


class ConvergenceError(RuntimeError):
    """Solver failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


class DataError(ValueError):
    """Input data cannot support the requested fit."""


@dataclass(frozen=True)
class LassoFit:
    """Penalized estimate with its active set, signs and KKT subgradient."""

    theta: np.ndarray
    lam: float
    M: np.ndarray            # active set: intercept + nonzero slopes, sorted
    s_M: np.ndarray          # signs of the active slopes, in {-1, +1}
    u: np.ndarray            # inactive subgradient S_j/lam over inactive slopes
    iterations: int
    converged: bool


@dataclass(frozen=True)
class KktReport:
    max_active_residual: float
    max_inactive_excess: float
    intercept_residual: float
    u: np.ndarray
    ok: bool
    tol: float


@dataclass(frozen=True)
class CvSpec:
    """Protocol for cross-validated lambda selection."""

    folds: int = 10
    loss: str = "auc"                     # "auc" or "deviance"
    lambdas: Optional[np.ndarray] = None  # descending grid; None = automatic
    seed: int = 0
    n_lambda: int = 30
    lambda_min_ratio: float = 0.01
    rule: str = "1se"                     # "1se" or "min"

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.loss not in ("auc", "deviance"):
            raise ValueError("loss must be 'auc' or 'deviance'")
        if self.rule not in ("1se", "min"):
            raise ValueError("rule must be '1se' or 'min'")
        if self.lambdas is not None:
            grid = np.unique(np.asarray(self.lambdas, dtype=float))[::-1]
            if np.any(grid <= 0):
                raise ValueError("lambda grid must be positive")
            object.__setattr__(self, "lambdas", grid)


@dataclass(frozen=True)
class CvResult:
    lam: float
    lambdas: np.ndarray
    mean_score: np.ndarray
    fold_scores: np.ndarray  # folds x grid


@njit(cache=True)
def _cd_pass(X, omega, r, theta, lam, colsq, mask):
    """One coordinate-descent pass over the coordinates flagged in mask.

    Updates theta and the running residual r in place; returns the largest
    absolute coordinate change.  Coordinate 0 is unpenalized.
    """
    n, d = X.shape
    delta_max = 0.0
    for j in range(d):
        if not mask[j]:
            continue
        a = colsq[j]
        if a <= 0.0:
            continue
        old = theta[j]
        rho = old * a
        for i in range(n):
            rho += omega[i] * X[i, j] * r[i]
        if j == 0:
            new = rho / a
        else:
            if rho > lam:
                new = (rho - lam) / a
            elif rho < -lam:
                new = (rho + lam) / a
            else:
                new = 0.0
        diff = new - old
        if diff != 0.0:
            for i in range(n):
                r[i] -= diff * X[i, j]
            theta[j] = new
            ad = abs(diff)
            if ad > delta_max:
                delta_max = ad
    return delta_max


@njit(cache=True)
def _cd_quadratic(X, omega, z, theta, lam, colsq, tol, max_inner):
    """Coordinate descent on the weighted quadratic

        (1/2) sum_i omega_i (z_i - x_i'theta)^2 + lam * sum_{j>=1} |theta_j|

    with active-set cycling: after each full pass, iterate over the current
    nonzero coordinates until stable, then re-check all coordinates.
    Returns the number of passes performed.
    """
    n, d = X.shape
    r = z - X @ theta
    full = np.ones(d, dtype=np.bool_)
    passes = 0
    while passes < max_inner:
        passes += 1
        delta = _cd_pass(X, omega, r, theta, lam, colsq, full)
        if delta < tol:
            return passes
        active = theta != 0.0
        active[0] = True
        while passes < max_inner:
            passes += 1
            delta = _cd_pass(X, omega, r, theta, lam, colsq, active)
            if delta < tol:
                break
    return passes


def _objective(ds: Dataset, fam: GlmFamily, theta: np.ndarray, lam: float) -> float:
    return -weighted_loglik(ds, fam, theta) + lam * np.sum(np.abs(theta[1:]))


def _null_intercept(ds: Dataset, fam: GlmFamily) -> float:
    """Intercept-only weighted MLE (closed form for logit, Newton otherwise)."""
    if fam.name == "logit":
        pbar = float(np.sum(ds.w * ds.y) / np.sum(ds.w))
        if pbar <= 0.0 or pbar >= 1.0:
            raise DataError("degenerate outcome: weighted mean of y is 0 or 1")
        return float(logit(pbar))
    alpha = 0.0
    theta = np.zeros(ds.p + 1)
    for _ in range(100):
        theta[0] = alpha
        cs = curvature(ds, fam, theta)
        step = cs.S[0] / cs.H[0, 0]
        alpha += step
        if abs(step) < 1e-12:
            break
    return alpha


def fit_penalized(
    ds: Dataset,
    fam: GlmFamily = LOGIT,
    lam: float = 0.0,
    theta_init: Optional[np.ndarray] = None,
    tol: float = _TOL_OUTER,
    tol_kkt: float = TOL_KKT,
    max_outer: int = _MAX_OUTER,
    max_inner: int = _MAX_INNER,
) -> LassoFit:
    """Solve min_theta -L(theta) + lam * ||theta[1:]||_1 (intercept free)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    ds = ds.rescaled()
    d = ds.p + 1
    if np.any(np.all(ds.X == 0.0, axis=0)):
        raise DataError("design has an identically-zero column")

    X = np.ascontiguousarray(ds.X)
    if theta_init is not None:
        theta = np.asarray(theta_init, dtype=float).copy()
        if theta.shape != (d,):
            raise ValueError("theta_init has wrong length")
    else:
        theta = np.zeros(d)
        theta[0] = _null_intercept(ds, fam)

    obj = _objective(ds, fam, theta, lam)
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        t = X @ theta
        gd = fam.gdot(ds.y, t)
        gdd = np.maximum(fam.gddot(ds.y, t), 1e-10)
        omega = ds.w * gdd / ds.n
        z = t - gd / gdd
        colsq = (omega[:, None] * X * X).sum(axis=0)
        theta_new = theta.copy()
        _cd_quadratic(X, omega, z, theta_new, lam, colsq, tol * 1e-1, max_inner)

        # backtrack toward the previous iterate if the quadratic model overshot
        step = theta_new - theta
        frac = 1.0
        cand = theta_new
        obj_new = _objective(ds, fam, cand, lam)
        while obj_new > obj + 1e-14 and frac > 1e-8:
            frac *= 0.5
            cand = theta + frac * step
            obj_new = _objective(ds, fam, cand, lam)
        delta = np.max(np.abs(cand - theta))
        theta = cand
        obj = obj_new
        if delta < tol:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"lasso solver did not converge in {max_outer} outer iterations", theta
        )

    active_slopes = np.flatnonzero(theta[1:] != 0.0) + 1
    M = np.concatenate(([0], active_slopes))
    s_M = np.sign(theta[active_slopes])
    cs = curvature(ds, fam, theta)
    inactive = np.setdiff1d(np.arange(1, d), active_slopes)
    u = cs.S[inactive] / lam if lam > 0 else np.zeros(inactive.size)
    return LassoFit(
        theta=theta, lam=float(lam), M=M, s_M=s_M, u=u, iterations=it, converged=True
    )


def lambda_max(ds: Dataset, fam: GlmFamily = LOGIT) -> float:
    """Smallest lambda at which all slopes are exactly zero.

    Equals max_{j>=1} |S_j(theta_null)| at the intercept-only fit.
    """
    ds = ds.rescaled()
    theta = np.zeros(ds.p + 1)
    theta[0] = _null_intercept(ds, fam)
    cs = curvature(ds, fam, theta)
    return float(np.max(np.abs(cs.S[1:])))


def kkt_certificate(ds: Dataset, fam: GlmFamily, fit: LassoFit, tol: float = TOL_KKT) -> KktReport:
    """Recompute the KKT residuals of a fit and flag violations.

    Active slopes must satisfy S_j = lam * sign(theta_j), inactive slopes
    |S_j| <= lam, and the intercept S_0 = 0.
    """
    ds = ds.rescaled()
    cs = curvature(ds, fam, fit.theta)
    lam = fit.lam
    active = fit.M[fit.M > 0]
    inactive = np.setdiff1d(np.arange(1, ds.p + 1), active)
    if active.size:
        res_active = np.max(np.abs(cs.S[active] - lam * np.sign(fit.theta[active])))
    else:
        res_active = 0.0
    if inactive.size:
        excess = np.max(np.abs(cs.S[inactive])) - lam
        u = cs.S[inactive] / lam if lam > 0 else np.zeros(inactive.size)
    else:
        excess = -np.inf
        u = np.zeros(0)
    res0 = abs(cs.S[0])
    scale = max(lam, 1.0)
    ok = res_active <= tol * scale and excess <= lam * tol + tol and res0 <= tol
    return KktReport(
        max_active_residual=float(res_active),
        max_inactive_excess=float(max(excess, 0.0)),
        intercept_residual=float(res0),
        u=u,
        ok=bool(ok),
        tol=tol,
    )


def _weighted_auc(y: np.ndarray, score: np.ndarray, w: np.ndarray) -> float:
    pos = y == 1
    neg = ~pos
    if not pos.any() or not neg.any():
        return np.nan
    sp, wp = score[pos], w[pos]
    sn, wn = score[neg], w[neg]
    cmp = (sp[:, None] > sn[None, :]).astype(float)
    cmp += 0.5 * (sp[:, None] == sn[None, :])
    num = (wp[:, None] * wn[None, :] * cmp).sum()
    return float(num / (wp.sum() * wn.sum()))


def _fold_assignments(n: int, folds: int, y: np.ndarray, rng, max_retries: int = 50):
    """Random fold labels such that every training fold has both classes."""
    for _ in range(max_retries):
        labels = np.resize(np.arange(folds), n)
        rng.shuffle(labels)
        ok = True
        for f in range(folds):
            ytr = y[labels != f]
            if ytr.min() == ytr.max():
                ok = False
                break
        if ok:
            return labels
    raise DataError("could not form folds with both outcome classes in every training set")


def default_lambda_grid(ds: Dataset, fam: GlmFamily, n_lambda: int = 30,
                        min_ratio: float = 0.01) -> np.ndarray:
    lmax = lambda_max(ds, fam)
    return np.geomspace(lmax, lmax * min_ratio, n_lambda)


def fit_path(ds: Dataset, fam: GlmFamily, lambdas: Sequence[float]):
    """Fit a descending lambda path with warm starts; returns list of LassoFit."""
    fits = []
    theta0 = None
    for lam in lambdas:
        fit = fit_penalized(ds, fam, lam, theta_init=theta0)
        fits.append(fit)
        theta0 = fit.theta
    return fits


def cv_select_lambda(ds: Dataset, fam: GlmFamily = LOGIT, spec: CvSpec = CvSpec()) -> CvResult:
    """Select lambda by k-fold cross-validation; ties break toward larger lambda."""
    ds = ds.rescaled()
    grid = spec.lambdas if spec.lambdas is not None else default_lambda_grid(
        ds, fam, spec.n_lambda, spec.lambda_min_ratio
    )
    rng = np.random.default_rng(spec.seed)
    labels = _fold_assignments(ds.n, spec.folds, ds.y, rng)
    fold_scores = np.full((spec.folds, grid.size), np.nan)
    for f in range(spec.folds):
        tr = labels != f
        te = ~tr
        ds_tr = Dataset(ds.y[tr], ds.X[tr], ds.w[tr])
        theta0 = None
        for k, lam in enumerate(grid):
            # fold fits feed only the held-out score, so a looser tolerance
            # than the final KKT-certified refit is enough
            fit = fit_penalized(ds_tr, fam, lam, theta_init=theta0, tol=1e-5)
            theta0 = fit.theta
            score = ds.X[te] @ fit.theta
            if spec.loss == "auc":
                fold_scores[f, k] = _weighted_auc(ds.y[te], score, ds.w[te])
            else:
                # weighted deviance on the held-out fold (lower is better)
                dev = 2.0 * np.sum(ds.w[te] * fam.g(ds.y[te], score)) / ds.w[te].sum()
                fold_scores[f, k] = -dev
    mean_score = np.nanmean(fold_scores, axis=0)
    best = int(np.argmax(mean_score))  # grid descending: argmax takes largest lambda on ties
    if spec.rule == "1se":
        # largest lambda whose mean score is within one standard error of the
        # best score (the usual parsimony rule for cross-validated paths)
        n_eff = np.sum(~np.isnan(fold_scores[:, best]))
        se = float(np.nanstd(fold_scores[:, best], ddof=1)) / np.sqrt(max(n_eff, 1))
        eligible = np.flatnonzero(mean_score >= mean_score[best] - se)
        best = int(eligible[0])
    return CvResult(lam=float(grid[best]), lambdas=grid,
                    mean_score=mean_score, fold_scores=fold_scores)
