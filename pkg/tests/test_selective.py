"""Selection event, polyhedral reduction and selective CI tests."""

import numpy as np
import pytest
from scipy.stats import kstest, norm

from svylasso.glm import LOGIT, Dataset, curvature, partition
from svylasso.lasso import LassoFit, fit_penalized
from svylasso.selective import (
    SelectionDegenerateError,
    SelectionEvent,
    augment_for_rho,
    build_selection_event,
    decorrelated_score,
    one_step_selected,
    polyhedral_slice,
    si_ci_coordinate,
    si_ci_rho,
)

from conftest import make_dataset


def _restricted_mle(ds, M, iters=60):
    """Newton oracle for the weighted MLE restricted to coordinates M."""
    ds = ds.rescaled()
    theta = np.zeros(ds.p + 1)
    for _ in range(iters):
        cs = curvature(ds, LOGIT, theta)
        part = partition(cs, M)
        step = np.linalg.solve(part.H_MM, part.S_M)
        theta[M] += step
        if np.max(np.abs(step)) < 1e-12:
            break
    return theta


def _selected_fit(seed=7, lam=0.02, n=200, p=5):
    ds = make_dataset(n, p, seed=seed)
    fit = fit_penalized(ds, LOGIT, lam=lam)
    return ds, fit


def test_one_step_lambda_zero_is_identity(small_ds):
    fit = fit_penalized(small_ds, LOGIT, lam=0.0)
    theta_tilde, beta_tilde = one_step_selected(small_ds, LOGIT, fit)
    assert np.max(np.abs(theta_tilde - fit.theta)) < 1e-6
    assert beta_tilde.size == small_ds.p


def test_active_score_matches_kkt_value():
    for seed in (3, 4, 5):
        ds, fit = _selected_fit(seed=seed)
        if fit.M.size < 2:
            continue
        cs = curvature(ds.rescaled(), LOGIT, fit.theta)
        part = partition(cs, fit.M)
        kkt_val = np.concatenate(([0.0], fit.lam * fit.s_M))
        assert np.max(np.abs(part.S_M - kkt_val)) < 1e-5


def test_one_step_near_restricted_mle():
    # small coefficients keep the loss near-quadratic, so one step lands close
    ds = make_dataset(400, 4, seed=15, theta=np.array([0.1, 0.3, 0.2, 0.0, 0.0]))
    fit = fit_penalized(ds, LOGIT, lam=0.01)
    if fit.M.size < 2:
        pytest.skip("no slope selected in this draw")
    theta_tilde, _ = one_step_selected(ds, LOGIT, fit)
    oracle = _restricted_mle(ds, fit.M)
    gap = np.max(np.abs(theta_tilde - oracle[fit.M]))
    assert gap < 1e-2
    assert gap < np.max(np.abs(fit.theta[fit.M] - oracle[fit.M]))


def test_decorrelated_score_full_model(small_ds):
    fit = fit_penalized(small_ds, LOGIT, lam=0.0)
    assert decorrelated_score(small_ds, LOGIT, fit).size == 0


def test_decorrelated_score_zero_active_score():
    # at the restricted MLE with lam=0, S_M = 0 so the correction vanishes
    ds = make_dataset(150, 4, seed=19)
    M = np.array([0, 1, 2])
    theta = _restricted_mle(ds, M)
    fit = LassoFit(theta=theta, lam=0.0, M=M, s_M=np.sign(theta[M[1:]]),
                   u=np.zeros(2), iterations=1, converged=True)
    cs = curvature(ds.rescaled(), LOGIT, theta)
    part = partition(cs, M)
    s_tilde = decorrelated_score(ds, LOGIT, fit)
    assert np.max(np.abs(s_tilde - part.S_c)) < 1e-10


def test_decorrelated_score_matches_dense_oracle():
    ds, fit = _selected_fit(seed=23)
    if fit.M.size < 2 or fit.M.size == ds.p + 1:
        pytest.skip("need a strict selection")
    cs = curvature(ds.rescaled(), LOGIT, fit.theta)
    comp = np.setdiff1d(np.arange(ds.p + 1), fit.M)
    H = cs.H
    oracle = cs.S[comp] - H[np.ix_(comp, fit.M)] @ np.linalg.inv(
        H[np.ix_(fit.M, fit.M)]) @ cs.S[fit.M]
    assert np.max(np.abs(decorrelated_score(ds, LOGIT, fit) - oracle)) < 1e-12


def test_event_shapes_p2_full_selection():
    ds = make_dataset(300, 2, seed=27, theta=np.array([0.5, 1.2, -1.0]))
    fit = fit_penalized(ds, LOGIT, lam=0.01)
    if fit.M.size != 3:
        pytest.skip("both slopes must be selected for this shape check")
    ev = build_selection_event(ds, LOGIT, fit)
    # full selection leaves no inactive coordinates: only the two sign rows
    assert ev.A.shape == (2, 2)
    s = fit.s_M
    assert np.array_equal(ev.A[0], [-s[0], 0.0])
    assert np.array_equal(ev.A[1], [0.0, -s[1]])


def test_event_shapes_partial_selection():
    ds, fit = _selected_fit(seed=7)
    if fit.M.size < 2:
        pytest.skip("no slope selected")
    ev = build_selection_event(ds, LOGIT, fit)
    p, k = ds.p, fit.M.size
    assert ev.A.shape == (2 * p + 1 - k, p)
    assert ev.Z.shape == (p,)
    assert ev.b.shape == (2 * p + 1 - k,)
    assert ev.Sigma.shape == (p, p)
    assert np.max(np.abs(ev.Sigma - ev.Sigma.T)) < 1e-12


def test_realized_event_always_satisfied():
    hits = 0
    for seed in range(500):
        ds = make_dataset(80, 3, seed=1000 + seed)
        fit = fit_penalized(ds, LOGIT, lam=0.03)
        if fit.M.size < 2:
            continue
        build_selection_event(ds, LOGIT, fit)  # raises on violation
        hits += 1
    assert hits > 300


def test_degenerate_selection_raises(small_ds):
    from svylasso.lasso import lambda_max
    fit = fit_penalized(small_ds, LOGIT, lam=1.1 * lambda_max(small_ds, LOGIT))
    with pytest.raises(SelectionDegenerateError):
        build_selection_event(small_ds, LOGIT, fit)


def _random_polyhedron(rng, d=4, k=6):
    A = rng.standard_normal((k, d))
    G = rng.standard_normal((d, d))
    Sigma = G @ G.T + 0.5 * np.eye(d)
    z0 = rng.standard_normal(d)
    b = A @ z0 + rng.uniform(0.2, 2.0, size=k)
    eta = rng.standard_normal(d)
    return A, b, Sigma, eta


def test_lemma_event_equivalence_single_fixture():
    rng = np.random.default_rng(37)
    A, b, Sigma, eta = _random_polyhedron(rng)
    L = np.linalg.cholesky(Sigma)
    for _ in range(10_000):
        Z = L @ rng.standard_normal(4)
        inside = bool(np.all(A @ Z <= b))
        sl = polyhedral_slice(A, b, Sigma, Z, eta)
        equiv = bool(sl.vminus <= eta @ Z <= sl.vplus and sl.vzero >= 0)
        assert inside == equiv


def test_slice_single_constraint():
    sl = polyhedral_slice(np.array([[1.0]]), np.array([2.5]), np.array([[1.0]]),
                          np.array([0.3]), np.array([1.0]))
    assert sl.vplus == pytest.approx(2.5)
    assert sl.vminus == -np.inf
    assert sl.vzero == np.inf


def test_slice_degenerate_direction():
    # rows orthogonal to Sigma eta leave the direction untruncated
    A = np.array([[0.0, 1.0], [0.0, -1.0]])
    b = np.array([1.0, 1.0])
    Sigma = np.eye(2)
    Z = np.array([0.2, 0.4])
    sl = polyhedral_slice(A, b, Sigma, Z, np.array([1.0, 0.0]))
    assert sl.vminus == -np.inf
    assert sl.vplus == np.inf
    assert np.isfinite(sl.vzero)


def _manual_event(A, Z, b, Sigma, n=1, m=None):
    """SelectionEvent wrapper for synthetic polyhedra (rho fields unused)."""
    d = Z.size
    m = d if m is None else m
    M = np.arange(m + 1)
    return SelectionEvent(
        A=A, Z=Z, b=b, Sigma=Sigma, M=M, s_M=np.ones(m), n=n, lam=0.1,
        theta_M=np.zeros(m + 1), H_M_inv=np.eye(m + 1),
        I_M=np.eye(m + 1), I_Mc=np.zeros((m + 1, d - m)),
        H_Mc=np.zeros((m + 1, d - m)),
    )


def test_untruncated_ci_equals_wald():
    rng = np.random.default_rng(43)
    Sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    Z = rng.standard_normal(2)
    n = 50
    ev = _manual_event(np.zeros((0, 2)), Z, np.zeros(0), Sigma, n=n, m=2)
    res = si_ci_coordinate(ev, 1, zeta=0.05)
    z = norm.ppf(0.975)
    center = Z[0] / np.sqrt(n)
    half = z * np.sqrt(Sigma[0, 0] / n)
    assert res.ci[0] == pytest.approx(center - half, abs=1e-6)
    assert res.ci[1] == pytest.approx(center + half, abs=1e-6)


def test_conditional_coverage_of_selective_ci():
    rng = np.random.default_rng(47)
    A = np.array([[1.0, 0.4], [-0.7, 1.0]])
    b = np.array([1.2, 1.5])
    Sigma = np.array([[1.0, 0.2], [0.2, 1.5]])
    mu = np.array([0.4, -0.2])
    L = np.linalg.cholesky(Sigma)
    covered = 0
    total = 0
    while total < 5000:
        Z = mu + L @ rng.standard_normal(2)
        if not np.all(A @ Z <= b):
            continue
        ev = _manual_event(A, Z, b, Sigma, n=1, m=2)
        res = si_ci_coordinate(ev, 1, zeta=0.10)
        total += 1
        if res.ci[0] <= mu[0] <= res.ci[1]:
            covered += 1
    assert covered / total == pytest.approx(0.90, abs=0.02)


def test_pivot_uniformity_conditioned():
    rng = np.random.default_rng(53)
    A = np.array([[1.0, -0.3], [0.5, 1.0], [-1.0, 0.2]])
    b = np.array([1.0, 1.3, 1.8])
    Sigma = np.array([[1.3, -0.4], [-0.4, 0.9]])
    mu = np.array([0.1, 0.3])
    eta = np.array([1.0, 0.5])
    L = np.linalg.cholesky(Sigma)
    from svylasso.truncnorm import TruncatedNormal, cdf
    pivots = []
    var = float(eta @ Sigma @ eta)
    mean = float(eta @ mu)
    while len(pivots) < 10_000:
        Z = mu + L @ rng.standard_normal(2)
        if not np.all(A @ Z <= b):
            continue
        sl = polyhedral_slice(A, b, Sigma, Z, eta)
        pivots.append(cdf(TruncatedNormal(mean, var, sl.vminus, sl.vplus), float(eta @ Z)))
    stat = kstest(np.array(pivots), "uniform").statistic
    assert stat < 1.63 / np.sqrt(len(pivots))


def test_statistic_uncorrelated_with_truncation_bounds():
    rng = np.random.default_rng(59)
    A = np.array([[1.0, -0.3], [0.5, 1.0], [-1.0, 0.2]])
    b = np.array([1.0, 1.3, 1.8])
    Sigma = np.array([[1.3, -0.4], [-0.4, 0.9]])
    eta = np.array([1.0, 0.5])
    L = np.linalg.cholesky(Sigma)
    stats, vms, vps = [], [], []
    for _ in range(10_000):
        Z = L @ rng.standard_normal(2)
        sl = polyhedral_slice(A, b, Sigma, Z, eta)
        stats.append(float(eta @ Z))
        vms.append(sl.vminus)
        vps.append(sl.vplus)
    stats = np.array(stats)
    for bound in (np.array(vms), np.array(vps)):
        ok = np.isfinite(bound)
        r = np.corrcoef(stats[ok], bound[ok])[0, 1]
        assert abs(r) < 0.05


def test_ci_equivariant_under_column_relabeling():
    ds = make_dataset(250, 3, seed=61, theta=np.array([0.3, 1.0, -0.8, 0.9]))
    fit = fit_penalized(ds, LOGIT, lam=0.01)
    if fit.M.size != 4:
        pytest.skip("all slopes must be selected")
    ev = build_selection_event(ds, LOGIT, fit)
    perm = [0, 3, 1, 2]  # permute slope columns 1..3
    Xp = ds.X[:, perm].copy()
    Xp = np.column_stack([np.ones(ds.n), Xp[:, 1:]])
    dsp = Dataset(ds.y, np.column_stack([np.ones(ds.n), ds.X[:, [3, 1, 2]]]), ds.w)
    fitp = fit_penalized(dsp, LOGIT, lam=0.01)
    evp = build_selection_event(dsp, LOGIT, fitp)
    # original slope 1 is permuted slope 2
    a = si_ci_coordinate(ev, 1, zeta=0.05)
    bq = si_ci_coordinate(evp, 2, zeta=0.05)
    assert a.ci[0] == pytest.approx(bq.ci[0], abs=1e-7)
    assert a.ci[1] == pytest.approx(bq.ci[1], abs=1e-7)


def test_ci_nesting_across_levels():
    ds, fit = _selected_fit(seed=83, lam=0.015)
    if fit.M.size < 2:
        pytest.skip("no slope selected")
    ev = build_selection_event(ds, LOGIT, fit)
    wide = si_ci_coordinate(ev, 1, zeta=0.05)
    narrow = si_ci_coordinate(ev, 1, zeta=0.10)
    assert wide.ci[0] <= narrow.ci[0] <= narrow.ci[1] <= wide.ci[1]


def test_rho_augmentation_linear_consistency():
    ds, fit = _selected_fit(seed=67, lam=0.015)
    if fit.M.size < 2:
        pytest.skip("no slope selected")
    ev = build_selection_event(ds, LOGIT, fit)
    # rho = first active slope, a linear coordinate projection
    rho_dot_M = np.zeros(fit.M.size)
    rho_dot_M[1] = 1.0
    rho_val = float(fit.theta[fit.M][1])
    aug = augment_for_rho(ev, rho_val, rho_dot_M, condition_on_sign=False)
    assert aug.Sigma[0, 0] == pytest.approx(ev.Sigma[0, 0], abs=1e-12)
    assert aug.A.shape == (ev.A.shape[0] + 1, ds.p + 1)
    res_coord = si_ci_coordinate(ev, 1, zeta=0.05)
    res_rho = si_ci_rho(aug, zeta=0.05)
    assert res_rho.ci[0] == pytest.approx(res_coord.ci[0], abs=1e-8)
    assert res_rho.ci[1] == pytest.approx(res_coord.ci[1], abs=1e-8)


def test_rho_augmentation_first_row_layout():
    ds, fit = _selected_fit(seed=71, lam=0.015)
    if fit.M.size < 2:
        pytest.skip("no slope selected")
    ev = build_selection_event(ds, LOGIT, fit)
    rho_dot_M = np.linspace(0.5, 1.0, fit.M.size)
    off = augment_for_rho(ev, 0.2, rho_dot_M, condition_on_sign=False)
    on = augment_for_rho(ev, 0.2, rho_dot_M, condition_on_sign=True)
    assert np.all(off.A[0] == 0.0)
    assert off.b[0] == 0.0
    assert on.A[0, 0] == -1.0
    assert np.all(on.A[0, 1:] == 0.0)


def test_sign_conditioning_changes_only_binding_cases():
    # constructed event where the sign row is the binding lower bound
    A = np.zeros((0, 1))
    b = np.zeros(0)
    Sigma = np.array([[1.0]])
    Z = np.array([0.8])
    ev = _manual_event(A, Z, b, Sigma, n=1, m=1)
    rho_dot_M = np.array([0.0, 1.0])
    on = augment_for_rho(ev, 0.5, rho_dot_M, condition_on_sign=True)
    off = augment_for_rho(ev, 0.5, rho_dot_M, condition_on_sign=False)
    eta0 = np.zeros(2)
    eta0[0] = 1.0
    sl_on = polyhedral_slice(on.A, on.b, on.Sigma, on.Z, eta0)
    sl_off = polyhedral_slice(off.A, off.b, off.Sigma, off.Z, eta0)
    assert sl_on.vminus > sl_off.vminus  # the sign row binds from below
    r_on = si_ci_rho(on, zeta=0.1)
    r_off = si_ci_rho(off, zeta=0.1)
    assert r_on.method == "SI"
    assert r_off.method == "SI2"
    assert r_on.ci != r_off.ci
