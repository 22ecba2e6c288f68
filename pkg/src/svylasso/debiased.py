"""Debiased-Lasso one-step estimation and Wald inference.

The one-step estimator theta_tilde = theta_hat + H(theta_hat)^{-1} S(theta_hat)
removes the first-order shrinkage bias of the Lasso, and Wald inference uses
the survey sandwich variance rho_dot' H^{-1} I H^{-1} rho_dot (weights enter
H linearly and I quadratically).  Also provides the unpenalized
survey-weighted GLM Wald test (t_svy) used as a comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import chi2, norm

from .glm import Dataset, GlmFamily, NumericError, curvature, weighted_loglik
from .lasso import LassoFit
from .results import InferenceResult


def _spd_solve(H: np.ndarray, rhs: np.ndarray, what: str = "H") -> np.ndarray:
    try:
        c, low = cho_factor(H)
        return cho_solve((c, low), rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"{what} is singular; increase lambda or reduce the number of regressors"
        ) from exc


def db_one_step(ds: Dataset, fam: GlmFamily, fit: LassoFit) -> np.ndarray:
    """theta_tilde = theta_hat + H(theta_hat)^{-1} S(theta_hat)."""
    ds = ds.rescaled()
    cs = curvature(ds, fam, fit.theta)
    return fit.theta + _spd_solve(cs.H, cs.S)


def db_rho(ds: Dataset, fam: GlmFamily, fit: LassoFit,
           rho: Callable[[np.ndarray], np.ndarray],
           rho_dot: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """One-step estimator of rho(theta_0): rho(theta_hat) + rho_dot' H^{-1} S."""
    ds = ds.rescaled()
    cs = curvature(ds, fam, fit.theta)
    jac = np.atleast_2d(np.asarray(rho_dot(fit.theta), dtype=float))
    if jac.shape[0] == 1 and jac.shape[1] == ds.p + 1:
        jac = jac.T  # store as (p+1) x r
    return np.atleast_1d(rho(fit.theta)) + jac.T @ _spd_solve(cs.H, cs.S)


def _sandwich_wald(cs, theta_hat, rho, rho_dot, rho0, zeta, n, method, target,
                   require_converged=True, converged=True):
    """Shared Wald machinery for DB and t_svy."""
    jac = np.atleast_2d(np.asarray(rho_dot(theta_hat), dtype=float))
    if jac.shape[0] == 1:
        jac = jac.T
    r = jac.shape[1]
    Hinv_jac = _spd_solve(cs.H, jac)
    V = Hinv_jac.T @ cs.I @ Hinv_jac
    rho_hat = np.atleast_1d(np.asarray(rho(theta_hat), dtype=float))
    if method == "DB":
        est = rho_hat + jac.T @ _spd_solve(cs.H, cs.S)
    else:
        est = rho_hat
    rho0 = np.atleast_1d(np.asarray(rho0, dtype=float))
    if r == 1:
        v = float(V[0, 0])
        if v <= 0:
            raise NumericError("sandwich variance is not positive")
        se = np.sqrt(v / n)
        stat = float((est[0] - rho0[0]) / se)
        pval = 2.0 * norm.sf(abs(stat))
        z = norm.ppf(1.0 - zeta / 2.0)
        return InferenceResult(
            method=method, target=target, estimate=float(est[0]), se=float(se),
            statistic=stat, pvalue=float(pval),
            ci=(float(est[0] - z * se), float(est[0] + z * se)), level=1.0 - zeta,
        )
    diff = est - rho0
    try:
        stat = float(n * diff @ np.linalg.solve(V, diff))
    except np.linalg.LinAlgError as exc:
        raise NumericError("sandwich variance matrix is singular") from exc
    pval = float(chi2.sf(stat, df=r))
    return InferenceResult(
        method=method, target=target, statistic=stat, pvalue=pval,
        df=r, level=1.0 - zeta,
    )


def db_wald(ds: Dataset, fam: GlmFamily, fit: LassoFit,
            rho: Callable, rho_dot: Callable, rho0, zeta: float = 0.05,
            target: str = "rho(theta)") -> InferenceResult:
    """Debiased-Lasso Wald test of H0: rho(theta_0) = rho0.

    Scalar rho reports a normal statistic and a two-sided CI; vector rho
    reports the chi-square form with r degrees of freedom.
    """
    ds = ds.rescaled()
    cs = curvature(ds, fam, fit.theta)
    return _sandwich_wald(cs, fit.theta, rho, rho_dot, rho0, zeta, ds.n, "DB", target)


def db_wald_coordinate(ds: Dataset, fam: GlmFamily, fit: LassoFit, j: int,
                       value: float = 0.0, zeta: float = 0.05) -> InferenceResult:
    """DB Wald test of H0: theta_j = value for a single coordinate."""
    d = ds.p + 1
    e = np.zeros(d)
    e[j] = 1.0
    return db_wald(ds, fam, fit, rho=lambda th: th[j], rho_dot=lambda th: e,
                   rho0=value, zeta=zeta, target=f"theta[{j}]")


def fit_unpenalized(ds: Dataset, fam: GlmFamily, max_iter: int = 25,
                    tol: float = 1e-10) -> Tuple[np.ndarray, bool]:
    """Newton/IRLS fit of the unpenalized weighted GLM.

    Runs at most max_iter steps with step-halving and returns the last
    iterate with a convergence flag; near-separated designs are returned
    as-is (the t_svy baseline deliberately mirrors default GLM software).
    """
    ds = ds.rescaled()
    d = ds.p + 1
    theta = np.zeros(d)
    obj = -weighted_loglik(ds, fam, theta)
    converged = False
    for _ in range(max_iter):
        cs = curvature(ds, fam, theta)
        H = cs.H + 1e-10 * np.eye(d)
        try:
            step = np.linalg.solve(H, cs.S)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, cs.S, rcond=None)[0]
        frac = 1.0
        cand = theta + step
        obj_new = -weighted_loglik(ds, fam, cand)
        while obj_new > obj + 1e-14 and frac > 1e-8:
            frac *= 0.5
            cand = theta + frac * step
            obj_new = -weighted_loglik(ds, fam, cand)
        delta = np.max(np.abs(cand - theta))
        theta, obj = cand, obj_new
        if delta < tol:
            converged = True
            break
    return theta, converged


def survey_t(ds: Dataset, fam: GlmFamily, rho: Callable, rho_dot: Callable,
             rho0, zeta: float = 0.05, target: str = "rho(theta)",
             theta_mle: Optional[np.ndarray] = None) -> InferenceResult:
    """Survey-weighted GLM Wald test with sandwich variance (t_svy baseline)."""
    ds = ds.rescaled()
    if theta_mle is None:
        theta_mle, _ = fit_unpenalized(ds, fam)
    cs = curvature(ds, fam, theta_mle)
    return _sandwich_wald(cs, theta_mle, rho, rho_dot, rho0, zeta, ds.n,
                          "t_svy", target)


def survey_t_coordinate(ds: Dataset, fam: GlmFamily, j: int, value: float = 0.0,
                        zeta: float = 0.05,
                        theta_mle: Optional[np.ndarray] = None) -> InferenceResult:
    d = ds.p + 1
    e = np.zeros(d)
    e[j] = 1.0
    return survey_t(ds, fam, rho=lambda th: th[j], rho_dot=lambda th: e,
                    rho0=value, zeta=zeta, target=f"theta[{j}]", theta_mle=theta_mle)
