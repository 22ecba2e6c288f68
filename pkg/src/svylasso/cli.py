"""Command-line front end: fit, infer and simulate.

CSV input is comma-separated UTF-8 with a header row and "." decimals;
missing values are hard errors (silent imputation would invalidate the
inference).  Exit codes: 0 success, 2 user/data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from .ame import ame_estimate, ame_infer
from .calpha import c_alpha_coordinate
from .debiased import db_one_step, db_wald_coordinate, fit_unpenalized, survey_t_coordinate
from .glm import LOGIT, Dataset, NumericError
from .lasso import ConvergenceError, CvSpec, DataError, cv_select_lambda, fit_penalized, kkt_certificate
from .selective import SelectionDegenerateError, build_selection_event, si_ci_coordinate
from .simulate import RejectionTable, SimulationConfig, run_rejection_study

EXIT_OK = 0
EXIT_USER = 2
EXIT_NUMERIC = 3


class UserError(Exception):
    pass


def _load_dataset(path: str, outcome: str, weights: Optional[str],
                  covariates: Optional[List[str]]):
    if not os.path.exists(path):
        raise UserError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise UserError(f"could not parse CSV {path}: {exc}") from exc
    if outcome not in df.columns:
        raise UserError(f"outcome column {outcome!r} not found")
    if weights is not None and weights not in df.columns:
        raise UserError(f"weight column {weights!r} not found")
    if covariates is None:
        covariates = [c for c in df.columns if c not in (outcome, weights)]
    for c in covariates:
        if c not in df.columns:
            raise UserError(f"covariate column {c!r} not found")
    cols = [outcome] + ([weights] if weights else []) + covariates
    sub = df[cols]
    if sub.isna().any().any():
        bad = sub.isna().stack()
        row, col = bad[bad].index[0]
        raise UserError(f"missing value at row {row}, column {col!r}")
    for c in cols:
        if not np.issubdtype(sub[c].dtype, np.number):
            raise UserError(f"column {c!r} contains non-numeric cells")
    y = df[outcome].to_numpy(dtype=float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        bad = int(np.flatnonzero(~np.isin(y, (0.0, 1.0)))[0])
        raise UserError(f"outcome must be binary 0/1; row {bad} is {y[bad]}")
    w = df[weights].to_numpy(dtype=float) if weights else None
    Xt = df[covariates].to_numpy(dtype=float) if covariates else np.zeros((len(y), 0))
    try:
        ds = Dataset.from_arrays(y, Xt, w)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    return ds, covariates


def _resolve_lambda(ds, lam_arg: str, seed: int, folds: int = 10):
    if lam_arg == "cv":
        cv = cv_select_lambda(ds, LOGIT, CvSpec(folds=folds, seed=seed))
        return cv.lam, {"policy": "cv", "lambda": cv.lam,
                        "grid": cv.lambdas.tolist(),
                        "mean_score": cv.mean_score.tolist()}
    try:
        lam = float(lam_arg)
    except ValueError:
        raise UserError(f"--lambda must be 'cv' or a number, got {lam_arg!r}")
    if lam < 0:
        raise UserError("--lambda must be nonnegative")
    return lam, {"policy": "fixed", "lambda": lam}


def cmd_fit(args) -> int:
    ds, names = _load_dataset(args.data, args.outcome, args.weights, args.covariates)
    lam, lam_info = _resolve_lambda(ds, getattr(args, "lambda"), args.seed)
    fit = fit_penalized(ds, LOGIT, lam)
    cert = kkt_certificate(ds, LOGIT, fit)
    payload = {
        "lambda": lam_info,
        "coefficients": {"(Intercept)": fit.theta[0],
                         **{names[j - 1]: fit.theta[j] for j in range(1, ds.p + 1)}},
        "active_set": [("(Intercept)" if j == 0 else names[j - 1]) for j in fit.M],
        "signs": fit.s_M.tolist(),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "kkt": {
            "max_active_residual": cert.max_active_residual,
            "max_inactive_excess": cert.max_inactive_excess,
            "intercept_residual": cert.intercept_residual,
            "ok": cert.ok,
            "tol": cert.tol,
        },
    }
    out = args.out or "fit.json"
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def _fmt(x, digits=15):
    if isinstance(x, str):
        return x
    if x != x:  # NaN
        return "-"
    return repr(float(x)) if digits >= 15 else f"{x:.{digits}g}"


def cmd_infer(args) -> int:
    ds, names = _load_dataset(args.data, args.outcome, args.weights, args.covariates)
    ds = ds.rescaled()
    zeta = args.level
    methods = [m.strip() for m in args.methods.split(",")]
    lam, _ = _resolve_lambda(ds, getattr(args, "lambda"), args.seed)
    fit = fit_penalized(ds, LOGIT, lam)
    theta_mle, _ = fit_unpenalized(ds, LOGIT)
    theta_db = db_one_step(ds, LOGIT, fit)
    ev = None
    si_est = {}
    si_p = {}
    if "si" in methods and fit.M.size >= 2:
        ev = build_selection_event(ds, LOGIT, fit)
        for pos in range(1, fit.M.size):
            coord = int(fit.M[pos])
            res = si_ci_coordinate(ev, pos, zeta, null_value=0.0)
            si_est[coord] = res.estimate
            si_p[coord] = res.pvalue

    rows = []
    for j in range(ds.p + 1):
        name = "(Intercept)" if j == 0 else names[j - 1]
        row = {"variable": name,
               "glm": theta_mle[j], "lasso": fit.theta[j], "db": theta_db[j],
               "si": si_est.get(j, float("nan"))}
        # the intercept carries no hypothesis tests; keep its p-columns as
        # NaN so every row shares the same layout
        if "tsvy" in methods:
            row["p_tsvy"] = float("nan") if j == 0 else survey_t_coordinate(
                ds, LOGIT, j, 0.0, zeta, theta_mle=theta_mle).pvalue
        if "db" in methods:
            row["p_db"] = float("nan") if j == 0 else db_wald_coordinate(
                ds, LOGIT, fit, j, 0.0, zeta).pvalue
        if "ca" in methods:
            row["p_ca"] = float("nan") if j == 0 else c_alpha_coordinate(
                ds, LOGIT, fit, j, 0.0, zeta).pvalue
        if "si" in methods:
            row["p_si"] = si_p.get(j, float("nan"))
        rows.append(row)
    coef_path = os.path.join(args.out or ".", "coefficients.csv")
    _write_rows(coef_path, rows)
    print(f"wrote {coef_path}", file=sys.stderr)

    if args.ame:
        ame_rows = []
        binary = [j for j in range(1, ds.p + 1)
                  if np.all(np.isin(ds.X[:, j], (0.0, 1.0)))]
        for j in binary:
            name = names[j - 1]
            row = {"variable": name,
                   "glm": ame_estimate(ds, theta_mle, j),
                   "db": ame_infer(ds, LOGIT, fit, j, "DB", zeta, 0.0).estimate}
            si_res = ame_infer(ds, LOGIT, fit, j, "SI", zeta, 0.0)
            row["si"] = si_res.estimate if si_res.applicable else float("nan")
            if "tsvy" in methods:
                row["p_tsvy"] = ame_infer(ds, LOGIT, fit, j, "t_svy", zeta, 0.0).pvalue
            if "db" in methods:
                row["p_db"] = ame_infer(ds, LOGIT, fit, j, "DB", zeta, 0.0).pvalue
            if "ca" in methods:
                row["p_ca"] = ame_infer(ds, LOGIT, fit, j, "Calpha", zeta, 0.0).pvalue
            if "si" in methods:
                row["p_si"] = si_res.pvalue if si_res.applicable else float("nan")
            ame_rows.append(row)
        ame_path = os.path.join(args.out or ".", "ame.csv")
        _write_rows(ame_path, ame_rows)
        print(f"wrote {ame_path}", file=sys.stderr)
    return EXIT_OK


def _write_rows(path, rows):
    if not rows:
        with open(path, "w") as fh:
            fh.write("\n")
        return
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c, float("nan"))) for c in cols) + "\n")


def read_config(path: str) -> dict:
    """Flat key=value config file; '#' starts a comment."""
    if not os.path.exists(path):
        raise UserError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UserError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out


_SIM_KEYS = {
    "scheme": str, "n_s": int, "p": int, "replications": int, "zeta": float,
    "seed": int, "lambda_policy": str, "prob": float, "theta_null": float,
    "ame_null": float, "regenerate_population": lambda s: s.lower() in ("1", "true", "yes"),
    "workers": int, "cv_folds": int, "cv_n_lambda": int, "population_size": int,
}


def build_sim_config(config_path: Optional[str], overrides: dict) -> SimulationConfig:
    raw = read_config(config_path) if config_path else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, val in raw.items():
        if key not in _SIM_KEYS:
            raise UserError(f"unknown simulate config key {key!r}")
        conv = _SIM_KEYS[key]
        try:
            kwargs[key] = conv(val) if isinstance(val, str) else val
        except ValueError as exc:
            raise UserError(f"bad value for {key!r}: {val!r}") from exc
    env_workers = os.environ.get("SVYLASSO_WORKERS")
    if "workers" not in kwargs and env_workers:
        kwargs["workers"] = int(env_workers)
    return SimulationConfig(**kwargs)


def cmd_simulate(args) -> int:
    overrides = {"seed": args.seed, "workers": args.workers,
                 "replications": args.replications}
    cfg = build_sim_config(args.config, overrides)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)

    done = {"count": 0}

    def progress(rep):
        done["count"] += 1
        if done["count"] % 50 == 0:
            print(f"{done['count']}/{cfg.replications} replications", file=sys.stderr)

    table = run_rejection_study(cfg, progress=progress)
    table.to_csv(os.path.join(outdir, "rejections.csv"))
    table.to_json(os.path.join(outdir, "rejections.json"))
    print(f"wrote {outdir}/rejections.csv and rejections.json", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svylasso")
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a survey-weighted logit Lasso")
    fit.add_argument("--data", required=True)
    fit.add_argument("--outcome", default="y")
    fit.add_argument("--weights", default=None)
    fit.add_argument("--covariates", nargs="*", default=None)
    fit.add_argument("--lambda", default="cv")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", default=None)
    fit.set_defaults(func=cmd_fit)

    infer = sub.add_parser("infer", help="coefficient and AME inference tables")
    infer.add_argument("--data", required=True)
    infer.add_argument("--outcome", default="y")
    infer.add_argument("--weights", default=None)
    infer.add_argument("--covariates", nargs="*", default=None)
    infer.add_argument("--lambda", default="cv")
    infer.add_argument("--methods", default="db,ca,si,tsvy")
    infer.add_argument("--level", type=float, default=0.05)
    infer.add_argument("--ame", action="store_true")
    infer.add_argument("--seed", type=int, default=0)
    infer.add_argument("--out", default=None)
    infer.set_defaults(func=cmd_infer)

    sim = sub.add_parser("simulate", help="Monte Carlo rejection-frequency study")
    sim.add_argument("--config", default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--replications", type=int, default=None)
    sim.add_argument("--out", default=None)
    sim.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UserError, DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NumericError, ConvergenceError, SelectionDegenerateError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
