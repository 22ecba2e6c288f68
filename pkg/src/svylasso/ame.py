"""Average marginal effects of binary regressors in the survey logit model.

The marginal effect of a binary regressor is the change in P[y=1|x] when the
column is switched from 0 to 1 holding everything else fixed; the AME is its
survey-weighted average over the sample.  Counterfactual substitution copies
only the targeted column; interaction columns (if any) are not adjusted.
Because the AME is a weight ratio, it is invariant to rescaling the weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .glm import Dataset, GlmFamily, curvature, partition
from .lasso import LassoFit
from .results import InferenceResult


@dataclass(frozen=True)
class AmeTarget:
    j: int
    estimate: float
    jacobian: np.ndarray
    weight_total: float


def _check_binary_column(ds: Dataset, j: int):
    if not 1 <= j <= ds.p:
        raise ValueError(f"column index must be in 1..{ds.p}")
    col = ds.X[:, j]
    if not np.all((col == 0.0) | (col == 1.0)):
        raise ValueError(f"column {j} is not binary {{0,1}}")


def _counterfactual_predictors(ds: Dataset, theta: np.ndarray, j: int):
    base = ds.X @ theta - ds.X[:, j] * theta[j]
    return base + theta[j], base  # linear predictors with x_j = 1 and x_j = 0


def ame_estimate(ds: Dataset, theta: np.ndarray, j: int) -> float:
    """Weighted AME of binary column j at theta."""
    _check_binary_column(ds, j)
    theta = np.asarray(theta, dtype=float)
    t1, t0 = _counterfactual_predictors(ds, theta, j)
    return float(np.sum(ds.w * (expit(t1) - expit(t0))) / ds.w.sum())


def ame_jacobian(ds: Dataset, theta: np.ndarray, j: int) -> np.ndarray:
    """Gradient of the weighted AME with respect to theta (length p+1)."""
    _check_binary_column(ds, j)
    theta = np.asarray(theta, dtype=float)
    t1, t0 = _counterfactual_predictors(ds, theta, j)
    d1 = expit(t1) * expit(-t1)
    d0 = expit(t0) * expit(-t0)
    X1 = ds.X.copy()
    X1[:, j] = 1.0
    X0 = ds.X.copy()
    X0[:, j] = 0.0
    jac = (X1.T @ (ds.w * d1) - X0.T @ (ds.w * d0)) / ds.w.sum()
    return jac


def ame_jacobian_zero_shortcut(ds: Dataset, theta: np.ndarray, j: int) -> np.ndarray:
    """Single-entry Jacobian valid when theta_j = 0: all off-j terms cancel."""
    _check_binary_column(ds, j)
    t1, _ = _counterfactual_predictors(ds, np.asarray(theta, dtype=float), j)
    jac = np.zeros(ds.p + 1)
    jac[j] = float(np.sum(ds.w * expit(t1) * expit(-t1)) / ds.w.sum())
    return jac


def ame_target(ds: Dataset, theta: np.ndarray, j: int) -> AmeTarget:
    return AmeTarget(j=j, estimate=ame_estimate(ds, theta, j),
                     jacobian=ame_jacobian(ds, theta, j),
                     weight_total=float(ds.w.sum()))


def _ame_restricted(ds: Dataset, theta_M: np.ndarray, M: np.ndarray, j: int):
    """AME and Jacobian in the selected model (off-M coordinates pinned at 0)."""
    d = ds.p + 1
    theta_full = np.zeros(d)
    theta_full[M] = theta_M
    est = ame_estimate(ds, theta_full, j)
    jac = ame_jacobian(ds, theta_full, j)[M]
    return est, jac


def ame_infer(ds: Dataset, fam: GlmFamily, fit: LassoFit, j: int,
              method: str = "DB", zeta: float = 0.05,
              null_value: float = 0.0) -> InferenceResult:
    """Inference on AME_j by the requested method.

    method: "DB" (debiased Wald), "SI" (selective, conditioning on the sign
    of the estimated AME), "SI2" (selective, no sign conditioning), "Calpha"
    (score test with the scalar AME restriction solve), "t_svy" (unpenalized
    survey GLM Wald).  SI methods require j in the active set; otherwise a
    not-applicable result is returned.
    """
    from .calpha import auxiliary_ame_solve, c_alpha_stat
    from .debiased import db_wald, survey_t
    from .selective import augment_for_rho, build_selection_event, si_ci_rho

    _check_binary_column(ds, j)
    ds = ds.rescaled()
    target = f"AME[{j}]"
    if method == "DB":
        return db_wald(ds, fam, fit,
                       rho=lambda th: ame_estimate(ds, th, j),
                       rho_dot=lambda th: ame_jacobian(ds, th, j),
                       rho0=null_value, zeta=zeta, target=target)
    if method == "t_svy":
        return survey_t(ds, fam,
                        rho=lambda th: ame_estimate(ds, th, j),
                        rho_dot=lambda th: ame_jacobian(ds, th, j),
                        rho0=null_value, zeta=zeta, target=target)
    if method == "Calpha":
        aux = auxiliary_ame_solve(ds, fit, j, null_value)
        return c_alpha_stat(ds, fam, aux,
                            rho_dot=lambda th: ame_jacobian(ds, th, j),
                            zeta=zeta, target=target)
    if method in ("SI", "SI2"):
        if j not in fit.M:
            return InferenceResult(method=method, target=target, applicable=False,
                                   level=1.0 - zeta)
        ev = build_selection_event(ds, fam, fit)
        est, jac_M = _ame_restricted(ds, fit.theta[fit.M], fit.M, j)
        aug = augment_for_rho(ev, est, jac_M,
                              condition_on_sign=(method == "SI"))
        return si_ci_rho(aug, zeta=zeta, null_value=null_value, target=target)
    raise ValueError(f"unknown method {method!r}")
