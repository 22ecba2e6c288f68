"""Selective inference conditional on the Lasso selection event.

The selection event {active set, signs} is written as an affine constraint
A Z <= b in the vector Z = sqrt(n) [beta_tilde_M; S_tilde_{-M}], where
beta_tilde_M is the one-step selected estimator and S_tilde_{-M} the
decorrelated inactive score.  Because survey weights break the asymptotic
block-diagonality between active and inactive KKT constraints, the event
always includes the inactive rows.  The polyhedral reduction then yields a
one-dimensional truncated-Gaussian pivot for any direction eta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .glm import Dataset, GlmFamily, NumericError, curvature, partition
from .lasso import TOL_KKT, LassoFit
from .results import InferenceResult
from .truncnorm import TruncatedNormal, cdf, invert_mean


class SelectionDegenerateError(RuntimeError):
    """The Lasso selected the intercept only; SI is not applicable."""


class InternalConsistencyError(RuntimeError):
    """The realized fit violates its own selection event (solver/KKT mismatch)."""


@dataclass(frozen=True)
class SelectionEvent:
    """Affine system {A Z <= b} with the covariance estimate of Z.

    Also carries the partitioned curvature products needed to augment the
    event for a nonlinear parameter function.
    """

    A: np.ndarray
    Z: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray
    M: np.ndarray
    s_M: np.ndarray
    n: int
    lam: float
    theta_M: np.ndarray        # Lasso estimate on the selected coordinates
    H_M_inv: np.ndarray
    I_M: np.ndarray
    I_Mc: np.ndarray
    H_Mc: np.ndarray


@dataclass(frozen=True)
class PolyhedralSlice:
    """One-dimensional truncation of eta'Z induced by {A Z <= b}."""

    eta: np.ndarray
    c: np.ndarray
    r: np.ndarray
    vminus: float
    vplus: float
    vzero: float


@dataclass(frozen=True)
class RhoAugmentation:
    """Selection event augmented with the one-step estimate of rho(theta_M)."""

    A: np.ndarray
    Z: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray
    n: int
    rho_onestep: float
    conditioned_on_sign: bool
    sign: float


def _solve_spd(Amat: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.solve(Amat, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular matrix in {what}") from exc


def one_step_selected(ds: Dataset, fam: GlmFamily, fit: LassoFit,
                      tol: float = 1e-5) -> Tuple[np.ndarray, np.ndarray]:
    """One-step estimator theta_tilde_M = theta_hat_M + H_M^{-1} S_M.

    S_M is evaluated analytically and cross-checked against the KKT value
    (0, lam * s_M')'.  Returns (theta_tilde_M, beta_tilde_M).
    """
    ds = ds.rescaled()
    if fit.M.size < 2:
        raise SelectionDegenerateError("no active slopes; one-step target is empty")
    cs = curvature(ds, fam, fit.theta)
    part = partition(cs, fit.M)
    kkt_val = np.concatenate(([0.0], fit.lam * fit.s_M))
    if np.max(np.abs(part.S_M - kkt_val)) > max(tol, TOL_KKT):
        raise InternalConsistencyError("S_M at the fit deviates from (0, lam*s_M)")
    theta_M = fit.theta[fit.M]
    theta_tilde = theta_M + _solve_spd(part.H_MM, part.S_M, "H_M")
    return theta_tilde, theta_tilde[1:]


def decorrelated_score(ds: Dataset, fam: GlmFamily, fit: LassoFit) -> np.ndarray:
    """S_tilde_{-M} = S_{-M} - H_{-M,M} H_M^{-1} S_M at the fit."""
    ds = ds.rescaled()
    cs = curvature(ds, fam, fit.theta)
    part = partition(cs, fit.M)
    if part.comp.size == 0:
        return np.zeros(0)
    return part.S_c - part.H_cM @ _solve_spd(part.H_MM, part.S_M, "H_M")


def build_selection_event(ds: Dataset, fam: GlmFamily, fit: LassoFit,
                          tol: float = 1e-8) -> SelectionEvent:
    """Assemble (A, Z, b) and the covariance estimate for the realized fit."""
    ds = ds.rescaled()
    if fit.M.size < 2:
        raise SelectionDegenerateError("selection event needs at least one active slope")
    n, p = ds.n, ds.p
    cs = curvature(ds, fam, fit.theta)
    part = partition(cs, fit.M)
    k = fit.M.size
    m = k - 1                 # active slopes
    q = p + 1 - k             # inactive coordinates
    s = fit.s_M
    lam = fit.lam
    rt_n = np.sqrt(n)

    H_M_inv = np.linalg.inv(part.H_MM)
    theta_tilde, beta_tilde = one_step_selected(ds, fam, fit)
    s_tilde = part.S_c - part.H_cM @ (H_M_inv @ part.S_M)
    Z = rt_n * np.concatenate([beta_tilde, s_tilde])

    # A: sign rows for the active block, then +/- identity for the inactive
    A = np.zeros((2 * p + 1 - k, p))
    A[:m, :m] = -np.diag(s)
    A[m:m + q, m:] = np.eye(q)
    A[m + q:, m:] = -np.eye(q)

    v = H_M_inv @ np.concatenate(([0.0], lam * s))
    hv = part.H_cM @ (H_M_inv @ np.concatenate(([0.0], s)))
    b = np.concatenate([
        -rt_n * s * v[1:],
        rt_n * lam * (1.0 - hv),
        rt_n * lam * (1.0 + hv),
    ])

    E = np.zeros((m, k))
    E[:, 1:] = np.eye(m)
    HinvI = H_M_inv @ part.I_MM
    sand = HinvI @ H_M_inv
    Sigma_bb = E @ sand @ E.T
    Sigma_bs = E @ (H_M_inv @ part.I_Mc - sand @ part.H_Mc)
    G = np.hstack([np.eye(q), -part.H_cM @ H_M_inv])
    mid = np.block([[part.I_cc, part.I_cM], [part.I_Mc, part.I_MM]])
    Sigma_ss = G @ mid @ G.T
    Sigma = np.block([[Sigma_bb, Sigma_bs], [Sigma_bs.T, Sigma_ss]])
    Sigma = (Sigma + Sigma.T) / 2

    viol = np.max(A @ Z - b) if b.size else -np.inf
    if viol > tol:
        raise InternalConsistencyError(
            f"realized fit violates its selection event by {viol:.3e}"
        )
    return SelectionEvent(
        A=A, Z=Z, b=b, Sigma=Sigma, M=fit.M, s_M=s, n=n, lam=lam,
        theta_M=fit.theta[fit.M], H_M_inv=H_M_inv, I_M=part.I_MM,
        I_Mc=part.I_Mc, H_Mc=part.H_Mc,
    )


def polyhedral_slice(A: np.ndarray, b: np.ndarray, Sigma: np.ndarray,
                     Z: np.ndarray, eta: np.ndarray) -> PolyhedralSlice:
    """Truncation scalars V-, V+, V0 of eta'Z under {A Z <= b}."""
    eta = np.asarray(eta, dtype=float)
    denom = float(eta @ Sigma @ eta)
    if denom <= 0:
        raise NumericError("eta' Sigma eta must be positive")
    c = (Sigma @ eta) / denom
    r = Z - c * (eta @ Z)
    Ac = A @ c
    resid = b - A @ r
    neg = Ac < 0
    pos = Ac > 0
    zer = Ac == 0
    vminus = np.max(resid[neg] / Ac[neg]) if neg.any() else -np.inf
    vplus = np.min(resid[pos] / Ac[pos]) if pos.any() else np.inf
    vzero = np.min(resid[zer]) if zer.any() else np.inf
    return PolyhedralSlice(eta=eta, c=c, r=r, vminus=float(vminus),
                           vplus=float(vplus), vzero=float(vzero))


def _truncated_interval_and_pvalue(
    x_obs: float, var: float, vminus: float, vplus: float,
    n: int, zeta: float, null_scaled: Optional[float],
) -> Tuple[Tuple[float, float], float, float]:
    """CI endpoints (on the parameter scale) and two-sided p-value."""
    rt_n = np.sqrt(n)
    lo = invert_mean(x_obs, var, vminus, vplus, 1.0 - zeta / 2.0) / rt_n
    hi = invert_mean(x_obs, var, vminus, vplus, zeta / 2.0) / rt_n
    pval = np.nan
    f_obs = np.nan
    if null_scaled is not None:
        tn = TruncatedNormal(null_scaled, var, vminus, vplus)
        f_obs = cdf(tn, x_obs)
        pval = 2.0 * min(f_obs, 1.0 - f_obs)
    return (lo, hi), pval, f_obs


def si_ci_coordinate(ev: SelectionEvent, j: int, zeta: float = 0.05,
                     null_value: Optional[float] = None,
                     one_sided: Optional[str] = None) -> InferenceResult:
    """Selective CI and test for the j-th active slope (j = 1..|M|-1).

    The target is the coefficient in the selected model (model-conditional).
    """
    m = ev.M.size - 1
    if not 1 <= j <= m:
        raise ValueError(f"active-slope index must be in 1..{m}")
    p = ev.Z.size
    eta = np.zeros(p)
    eta[j - 1] = 1.0
    sl = polyhedral_slice(ev.A, ev.b, ev.Sigma, ev.Z, eta)
    x_obs = float(eta @ ev.Z)
    var = float(eta @ ev.Sigma @ eta)
    if not sl.vminus < x_obs < sl.vplus:
        raise InternalConsistencyError("observed statistic outside its truncation interval")
    null_scaled = None if null_value is None else np.sqrt(ev.n) * null_value
    ci, pval, f_obs = _truncated_interval_and_pvalue(
        x_obs, var, sl.vminus, sl.vplus, ev.n, zeta, null_scaled
    )
    if one_sided == "greater":
        pval = 1.0 - f_obs
    elif one_sided == "less":
        pval = f_obs
    coord = ev.M[j]
    return InferenceResult(
        method="SI", target=f"beta[{coord}] | selection",
        estimate=x_obs / np.sqrt(ev.n), statistic=x_obs, pvalue=float(pval),
        ci=ci, level=1.0 - zeta,
    )


def one_step_rho_selected(ev: SelectionEvent, rho_val: float,
                          rho_dot_M: np.ndarray) -> float:
    """rho_tilde_M = rho(theta_hat_M) + rho_dot_M' H_M^{-1} S_M (KKT form of S_M)."""
    S_M = np.concatenate(([0.0], ev.lam * ev.s_M))
    return float(rho_val + rho_dot_M @ (ev.H_M_inv @ S_M))


def augment_for_rho(ev: SelectionEvent, rho_val: float, rho_dot_M: np.ndarray,
                    condition_on_sign: bool = False) -> RhoAugmentation:
    """Augment the event with the one-step estimate of a scalar rho(theta_M).

    Without sign conditioning the first row of A and first entry of b are
    zero (a vacuous constraint keeping dimensions per the augmented system);
    with it they encode {sign(rho(theta_hat_M)) = s_rho}.
    """
    rho_dot_M = np.asarray(rho_dot_M, dtype=float)
    if rho_dot_M.shape != (ev.M.size,):
        raise ValueError("rho_dot_M must have length |M|")
    if not np.any(rho_dot_M != 0.0):
        raise ValueError("rho_dot_M must be nonzero")
    p = ev.Z.size
    rho_tilde = one_step_rho_selected(ev, rho_val, rho_dot_M)
    Z_rho = np.concatenate(([np.sqrt(ev.n) * rho_tilde], ev.Z))

    nrow = ev.A.shape[0] + 1
    A_rho = np.zeros((nrow, p + 1))
    A_rho[1:, 1:] = ev.A
    b_rho = np.concatenate(([0.0], ev.b))
    sign = float(np.sign(rho_val)) if rho_val != 0 else 1.0
    if condition_on_sign:
        A_rho[0, 0] = -sign
        b0 = -sign * ev.lam * float(
            rho_dot_M @ (ev.H_M_inv @ np.concatenate(([0.0], ev.s_M)))
        )
        b_rho[0] = np.sqrt(ev.n) * b0

    m = ev.M.size - 1
    E = np.zeros((m, ev.M.size))
    E[:, 1:] = np.eye(m)
    Hinv = ev.H_M_inv
    sand = Hinv @ ev.I_M @ Hinv
    s_rr = float(rho_dot_M @ sand @ rho_dot_M)
    s_rb = rho_dot_M @ sand @ E.T
    s_rs = rho_dot_M @ (Hinv @ ev.I_Mc - sand @ ev.H_Mc)
    top = np.concatenate(([s_rr], s_rb, s_rs))
    Sigma_rho = np.zeros((p + 1, p + 1))
    Sigma_rho[0, :] = top
    Sigma_rho[:, 0] = top
    Sigma_rho[1:, 1:] = ev.Sigma
    return RhoAugmentation(
        A=A_rho, Z=Z_rho, b=b_rho, Sigma=Sigma_rho, n=ev.n,
        rho_onestep=rho_tilde, conditioned_on_sign=condition_on_sign, sign=sign,
    )


def si_ci_rho(aug: RhoAugmentation, zeta: float = 0.05,
              null_value: Optional[float] = None,
              target: str = "rho | selection") -> InferenceResult:
    """Selective CI and test for the augmented rho coordinate of Z_rho."""
    eta = np.zeros(aug.Z.size)
    eta[0] = 1.0
    sl = polyhedral_slice(aug.A, aug.b, aug.Sigma, aug.Z, eta)
    x_obs = float(aug.Z[0])
    var = float(aug.Sigma[0, 0])
    if not sl.vminus < x_obs < sl.vplus:
        raise InternalConsistencyError("observed statistic outside its truncation interval")
    null_scaled = None if null_value is None else np.sqrt(aug.n) * null_value
    ci, pval, _ = _truncated_interval_and_pvalue(
        x_obs, var, sl.vminus, sl.vplus, aug.n, zeta, null_scaled
    )
    method = "SI" if aug.conditioned_on_sign else "SI2"
    return InferenceResult(
        method=method, target=target, estimate=x_obs / np.sqrt(aug.n),
        statistic=x_obs, pvalue=float(pval), ci=ci, level=1.0 - zeta,
    )
