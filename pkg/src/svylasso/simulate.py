"""Finite-population generation, stratified sampling and the rejection harness.

The data-generating process draws a finite population of binary regressors
x ~ Bernoulli(prob) and outcomes y ~ Bernoulli(Lambda(x'theta0)) with
theta0 = (1, 1, 1, 0, ...), then samples n_s observations per stratum with
replacement under one of two schemes:

* standard: four strata of population shares (0.1, 0.2, 0.3, 0.4) cut by
  row blocks, weights q_j / (n_j / n);
* exogenous: strata are the covariate cells (x1, x2) in {0,1}^2 with their
  theoretical Bernoulli(prob) cell probabilities as shares.

Note the success probability is Lambda(x'theta0), the logistic link: the
raw linear index x'theta0 is not a probability for this theta0, and the
population AME of 0.11 is only consistent with the logistic reading.

Weights are rescaled to sum to n (a no-op here by construction).  Each
replication derives its RNG from (master seed, replication index), so the
tallies are independent of worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .ame import ame_estimate, ame_infer
from .calpha import c_alpha_coordinate
from .debiased import db_wald_coordinate, fit_unpenalized, survey_t_coordinate
from .glm import LOGIT, Dataset
from .lasso import ConvergenceError, CvSpec, cv_select_lambda, fit_penalized, kkt_certificate
from .selective import SelectionDegenerateError, build_selection_event, si_ci_coordinate

STANDARD_SIZES = (1000, 2000, 3000, 4000)
DEFAULT_THETA0_HEAD = (1.0, 1.0, 1.0)


class ResampleError(RuntimeError):
    """A stratum was empty in the realized population; regenerate it."""


@dataclass(frozen=True)
class Population:
    y: np.ndarray
    Xt: np.ndarray          # N x p non-constant regressors
    theta0: np.ndarray
    prob: float


@dataclass(frozen=True)
class StratificationScheme:
    """Either 'standard' (row-block strata) or 'exogenous' (covariate cells)."""

    kind: str = "standard"

    def __post_init__(self):
        if self.kind not in ("standard", "exogenous"):
            raise ValueError("kind must be 'standard' or 'exogenous'")

    def shares(self, prob: float) -> np.ndarray:
        if self.kind == "standard":
            sizes = np.asarray(STANDARD_SIZES, dtype=float)
            return sizes / sizes.sum()
        q = 1.0 - prob
        return np.array([q * q, q * prob, prob * q, prob * prob])

    def member_indices(self, popn: Population) -> List[np.ndarray]:
        N = popn.y.size
        if self.kind == "standard":
            bounds = np.cumsum((0,) + STANDARD_SIZES) * N // sum(STANDARD_SIZES)
            return [np.arange(bounds[j], bounds[j + 1]) for j in range(4)]
        x1, x2 = popn.Xt[:, 0], popn.Xt[:, 1]
        cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
        return [np.flatnonzero((x1 == a) & (x2 == b)) for a, b in cells]


def default_theta0(p: int) -> np.ndarray:
    theta0 = np.zeros(p + 1)
    theta0[: len(DEFAULT_THETA0_HEAD)] = DEFAULT_THETA0_HEAD
    return theta0


def generate_population(p: int, prob: float, theta0: Optional[np.ndarray] = None,
                        seed=0, N: int = 10_000) -> Population:
    """Draw a finite population of size N from the Bernoulli-logit DGP."""
    if p < 2:
        raise ValueError("p must be at least 2")
    theta0 = default_theta0(p) if theta0 is None else np.asarray(theta0, dtype=float)
    rng = np.random.default_rng(seed)
    Xt = (rng.random((N, p)) < prob).astype(float)
    pi = expit(theta0[0] + Xt @ theta0[1:])
    y = (rng.random(N) < pi).astype(float)
    return Population(y=y, Xt=Xt, theta0=theta0, prob=prob)


def draw_sample(popn: Population, scheme: StratificationScheme, n_s: int,
                seed=0) -> Dataset:
    """Draw n_s observations per stratum with replacement; attach weights.

    Raw stratum weights are q_j / (n_j / n); with equal per-stratum draws
    they already sum to n, matching the rescaling convention exactly.
    """
    rng = np.random.default_rng(seed)
    strata = scheme.member_indices(popn)
    q = scheme.shares(popn.prob)
    n = n_s * len(strata)
    rows, weights = [], []
    for j, members in enumerate(strata):
        if members.size == 0:
            raise ResampleError(f"stratum {j} is empty in the realized population")
        take = rng.choice(members, size=n_s, replace=True)
        rows.append(take)
        weights.append(np.full(n_s, q[j] / (n_s / n)))
    idx = np.concatenate(rows)
    w = np.concatenate(weights)
    return Dataset.from_arrays(popn.y[idx], popn.Xt[idx], w)


def true_ame_oracle(theta0: np.ndarray, prob: float, p: int,
                    draws: int = 1_000_000, seed=0) -> float:
    """Monte Carlo population AME of regressor 2 (design column 1) under the DGP."""
    theta0 = np.asarray(theta0, dtype=float)
    rng = np.random.default_rng(seed)
    Xt = (rng.random((draws, p)) < prob).astype(float)
    base = theta0[0] + Xt @ theta0[1:] - Xt[:, 0] * theta0[1]
    return float(np.mean(expit(base + theta0[1]) - expit(base)))


def true_ame_enumerate(theta0: np.ndarray, prob: float, p: int) -> float:
    """Exact population AME of regressor 2 by enumeration (small p only)."""
    theta0 = np.asarray(theta0, dtype=float)
    if p > 20:
        raise ValueError("enumeration supports p <= 20")
    total = 0.0
    for code in range(2 ** (p - 1)):
        bits = [(code >> k) & 1 for k in range(p - 1)]
        x = np.array(bits, dtype=float)
        pr = float(np.prod(np.where(x == 1, prob, 1.0 - prob)))
        base = theta0[0] + x @ theta0[2:]
        total += pr * (expit(base + theta0[1]) - expit(base))
    return total


TESTS_THETA = ("DB", "Calpha", "SI", "t_svy")
TESTS_AME = ("DB", "Calpha", "SI", "SI2", "t_svy")


@dataclass(frozen=True)
class SimulationConfig:
    scheme: str = "standard"
    n_s: int = 50
    p: int = 2
    replications: int = 1000
    zeta: float = 0.05
    seed: int = 0
    lambda_policy: str = "cv"        # "cv" or a fixed float (as string or float)
    prob: Optional[float] = None     # default 0.5 standard / 0.4 exogenous
    theta_null: float = 1.0          # H0: theta_(2) = 1
    ame_null: float = 0.11           # H0: AME_2 = 0.11
    regenerate_population: bool = True
    workers: int = 1
    cv_folds: int = 10
    cv_n_lambda: int = 30
    population_size: int = 10_000

    @property
    def n(self) -> int:
        return 4 * self.n_s

    @property
    def prob_effective(self) -> float:
        if self.prob is not None:
            return self.prob
        return 0.5 if self.scheme == "standard" else 0.4


@dataclass
class _Tally:
    rejections: int = 0
    applicable: int = 0
    pinv_count: int = 0


@dataclass
class RejectionTable:
    """Rejection percentages per (hypothesis, test) with diagnostics."""

    config: SimulationConfig
    tallies: Dict[Tuple[str, str], _Tally]
    completed: int
    failures: int

    def rate(self, hypothesis: str, test: str, over_all: bool = False) -> float:
        t = self.tallies[(hypothesis, test)]
        denom = self.completed if over_all else t.applicable
        return 100.0 * t.rejections / denom if denom else float("nan")

    def rows(self) -> List[dict]:
        out = []
        for (hyp, test), t in sorted(self.tallies.items()):
            out.append({
                "hypothesis": hyp,
                "test": test,
                "reject_pct": self.rate(hyp, test),
                "reject_pct_over_all": self.rate(hyp, test, over_all=True),
                "applicable": t.applicable,
                "completed": self.completed,
                "failures": self.failures,
                "pinv_count": t.pinv_count,
            })
        return out

    def to_csv(self, path):
        rows = self.rows()
        cols = list(rows[0].keys())
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(_csv_cell(row[c]) for c in cols) + "\n")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"config": _config_dict(self.config), "rows": self.rows()},
                      fh, indent=2)


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _config_dict(cfg: SimulationConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _rep_seed(master: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=(rep,))


def run_one_replication(cfg: SimulationConfig, rep: int,
                        popn: Optional[Population] = None) -> dict:
    """One draw-fit-test cycle; returns per-test (reject, applicable, pinv) flags."""
    ss = _rep_seed(cfg.seed, rep)
    s_pop, s_draw, s_cv = ss.spawn(3)
    scheme = StratificationScheme(cfg.scheme)
    prob = cfg.prob_effective
    pop_seeds = s_pop.spawn(20)
    for attempt in range(20):
        if popn is None or cfg.regenerate_population or attempt > 0:
            popn = generate_population(cfg.p, prob, seed=pop_seeds[attempt],
                                       N=cfg.population_size)
        try:
            ds = draw_sample(popn, scheme, cfg.n_s, seed=s_draw)
            break
        except ResampleError:
            popn = None
    else:
        raise ResampleError("could not draw a sample with nonempty strata")

    if cfg.lambda_policy == "cv":
        spec = CvSpec(folds=cfg.cv_folds, loss="auc",
                      seed=s_cv.generate_state(1)[0], n_lambda=cfg.cv_n_lambda)
        lam = cv_select_lambda(ds, LOGIT, spec).lam
    else:
        lam = float(cfg.lambda_policy)
    fit = fit_penalized(ds, LOGIT, lam)
    cert = kkt_certificate(ds, LOGIT, fit)
    if not cert.ok:
        raise ConvergenceError("fit failed its KKT certificate", fit.theta)

    theta_mle, _ = fit_unpenalized(ds, LOGIT)
    zeta = cfg.zeta
    out = {}

    def record(key, thunk):
        # a failing test is excluded from its own denominator, never
        # silently dropped and never fatal to the other tests
        try:
            res = thunk()
        except Exception:
            out[key] = (False, False, False)
            return
        if res.applicable:
            out[key] = (res.pvalue < zeta, True, res.used_pinv)
        else:
            out[key] = (False, False, False)

    # H0: theta_(2) = theta_null (design column 1)
    record(("theta", "DB"),
           lambda: db_wald_coordinate(ds, LOGIT, fit, 1, cfg.theta_null, zeta))
    record(("theta", "Calpha"),
           lambda: c_alpha_coordinate(ds, LOGIT, fit, 1, cfg.theta_null, zeta))
    if 1 in fit.M:
        ev = build_selection_event(ds, LOGIT, fit)
        j_active = int(np.flatnonzero(fit.M == 1)[0])  # position within M
        record(("theta", "SI"),
               lambda: si_ci_coordinate(ev, j_active, zeta, null_value=cfg.theta_null))
    else:
        out[("theta", "SI")] = (False, False, False)
    record(("theta", "t_svy"),
           lambda: survey_t_coordinate(ds, LOGIT, 1, cfg.theta_null, zeta,
                                       theta_mle=theta_mle))

    # H0: AME_2 = ame_null (design column 1)
    for method in TESTS_AME:
        record(("ame", method),
               lambda m=method: ame_infer(ds, LOGIT, fit, 1, m, zeta, cfg.ame_null))
    return out


def _worker(args):
    cfg, rep, popn = args
    try:
        return rep, run_one_replication(cfg, rep, popn), None
    except Exception as exc:  # per-replication failures are tallied, not fatal
        return rep, None, repr(exc)


def run_rejection_study(cfg: SimulationConfig,
                        progress: Optional[callable] = None) -> RejectionTable:
    """Run the Monte Carlo study; deterministic given cfg.seed for any worker count."""
    keys = [("theta", t) for t in TESTS_THETA] + [("ame", t) for t in TESTS_AME]
    tallies = {k: _Tally() for k in keys}
    completed = 0
    failures = 0

    shared_popn = None
    if not cfg.regenerate_population:
        shared_popn = generate_population(
            cfg.p, cfg.prob_effective,
            seed=np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0xF1,)),
            N=cfg.population_size,
        )
    tasks = [(cfg, rep, shared_popn) for rep in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_worker, tasks, chunksize=4))
    else:
        results = [_worker(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    for rep, out, err in results:
        if err is not None:
            failures += 1
            continue
        completed += 1
        for key, (reject, applicable, pinv) in out.items():
            t = tallies[key]
            if applicable:
                t.applicable += 1
                t.rejections += int(reject)
            t.pinv_count += int(pinv)
        if progress is not None:
            progress(rep)
    return RejectionTable(config=cfg, tallies=tallies,
                          completed=completed, failures=failures)
