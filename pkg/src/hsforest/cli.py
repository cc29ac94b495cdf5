"""Command-line interface: ``hsforest {simulate,fit,replicate,cv}``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
A ``--config`` file holds flat ``key=value`` lines whose keys are the long
flag names; flags given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from .distributions import RngStream
from .errors import CalibrationError, EstimationError, NumericalError, SpecError, TailOverflowError
from .estimands import c_index, evaluate, summarize
from .io import (DataFormatError, read_dataset_csv, write_dataset_csv, write_draws_csv,
                 write_truth_csv)
from .sampler import ChainConfig, Dataset, run_causal_chain, run_horseshoe_forest
from .simgen import ERROR_KINDS, FAMILIES, ScenarioSpec, generate

log = logging.getLogger("hsforest")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
METRIC_COLUMNS = ("rep", "rmse_cate", "cover_cate", "len_cate", "rmse_ate", "cover_ate", "len_ate")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument groups


def _add_chain_args(p: argparse.ArgumentParser) -> None:
    d = ChainConfig()
    g = p.add_argument_group("sampler")
    g.add_argument("--m-f", type=int, default=d.m_f, help="trees in the prognostic forest")
    g.add_argument("--m-tau", type=int, default=d.m_tau, help="trees in the treatment forest")
    g.add_argument("--k", type=float, default=d.k, help="shrinkage level; alpha = k / sqrt(m)")
    g.add_argument("--a", type=float, default=d.a, help="tree prior base")
    g.add_argument("--b", type=float, default=d.b, help="tree prior depth power")
    g.add_argument("--p-grow", type=float, default=d.p_grow)
    g.add_argument("--p-prune", type=float, default=d.p_prune)
    g.add_argument("--p-change", type=float, default=d.p_change)
    g.add_argument("--omega-f", type=float, default=d.omega_f)
    g.add_argument("--omega-tau", type=float, default=d.omega_tau)
    g.add_argument("--iterations", type=int, default=d.iterations, help="total iterations")
    g.add_argument("--burnin", type=int, default=d.burnin)
    g.add_argument("--thin", type=int, default=d.thin)
    g.add_argument("--nu-prior", type=float, default=d.nu_prior)
    g.add_argument("--psi-prior", type=float, default=d.psi_prior)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--invariant-codes", action="store_true", help="use b0/b1 treatment codes")
    g.add_argument("--no-propensity", action="store_true", help="skip the propensity forest")
    g.add_argument("--prop-m", type=int, default=d.prop_m)
    g.add_argument("--prop-iterations", type=int, default=d.prop_iterations)
    g.add_argument("--prop-burnin", type=int, default=d.prop_burnin)
    g.add_argument("--max-depth", type=int, default=None)
    g.add_argument("--progress-every", type=int, default=0)


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    d = ScenarioSpec("linear", 1, 1)
    g = p.add_argument_group("scenario")
    g.add_argument("--family", choices=FAMILIES, default="linear")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--p", type=int, default=100)
    g.add_argument("--noise-var", type=float, default=d.noise_var)
    g.add_argument("--censor-target", type=float, default=d.censor_target)
    g.add_argument("--error-kind", choices=ERROR_KINDS, default=d.error_kind)
    g.add_argument("--copula-rho", type=float, default=None)
    g.add_argument("--sparsity-f", type=float, default=d.sparsity_f)
    g.add_argument("--sparsity-tau", type=float, default=d.sparsity_tau)
    g.add_argument("--scenario-seed", type=int, default=None,
                   help="seed of the data generator (defaults to --seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsforest", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a simulated dataset and its ground truth")
    sim.add_argument("--config")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")
    _add_scenario_args(sim)

    fit = sub.add_parser("fit", help="fit the causal model (or a single forest) to a CSV file")
    fit.add_argument("--config")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--single", action="store_true", help="fit one forest to the outcome")
    fit.add_argument("--outcome", choices=("survival", "continuous", "binary"), default="survival")
    fit.add_argument("--level", type=float, default=0.95)
    _add_chain_args(fit)

    rep = sub.add_parser("replicate", help="Monte Carlo replications of a scenario")
    rep.add_argument("--config")
    rep.add_argument("--out", required=True, help="output directory")
    rep.add_argument("--reps", type=int, default=10)
    rep.add_argument("--jobs", type=int, default=1)
    rep.add_argument("--level", type=float, default=0.95)
    _add_scenario_args(rep)
    _add_chain_args(rep)

    cv = sub.add_parser("cv", help="choose k by repeated stratified K-fold concordance")
    cv.add_argument("--config")
    cv.add_argument("--data", required=True)
    cv.add_argument("--out", required=True, help="output directory")
    cv.add_argument("--k-grid", default="0.05,0.1,0.5,1.0")
    cv.add_argument("--folds", type=int, default=5)
    cv.add_argument("--repeats", type=int, default=1)
    cv.add_argument("--jobs", type=int, default=1)
    cv.add_argument("--single", action="store_true")
    _add_chain_args(cv)
    return parser


# ---------------------------------------------------------------------------
# config files


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    """Install key=value pairs from ``path`` as the subparser's defaults."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    actions = {opt[2:]: a for a in sub._actions for opt in a.option_strings if opt.startswith("--")}
    updates = {}
    for num, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {num}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        act = actions.get(key)
        if act is None or key == "config":
            raise UsageError(f"config line {num}: unknown key {key!r}")
        if act.nargs == 0:
            if val.lower() not in _TRUE | _FALSE:
                raise UsageError(f"config line {num}: {key} expects true or false")
            updates[act.dest] = val.lower() in _TRUE
        else:
            try:
                conv = act.type(val) if act.type else val
            except ValueError:
                raise UsageError(f"config line {num}: bad value for {key}: {val!r}") from None
            if act.choices is not None and conv not in act.choices:
                raise UsageError(f"config line {num}: {key} must be one of {list(act.choices)}")
            updates[act.dest] = conv
    sub.set_defaults(**updates)
    # options satisfied by the file are no longer required on the command line
    for act in sub._actions:
        if act.dest in updates:
            act.required = False


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command:
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        if known.command in subs.choices:
            _apply_config(subs.choices[known.command], known.config)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers


def chain_config(args, **over) -> ChainConfig:
    names = {f.name for f in fields(ChainConfig)}
    kw = {k: v for k, v in vars(args).items() if k in names}
    kw["propensity"] = not args.no_propensity
    kw.update(over)
    return ChainConfig(**kw)


def scenario_spec(args, seed: int) -> ScenarioSpec:
    return ScenarioSpec(args.family, args.n, args.p, args.noise_var, args.censor_target,
                        args.error_kind, args.copula_rho, args.sparsity_f, args.sparsity_tau,
                        seed)


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path!r} is not writable")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _effective_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    spec = scenario_spec(args, args.seed if args.scenario_seed is None else args.scenario_seed)
    gd = generate(spec)
    _ensure_dir(args.out)
    write_dataset_csv(os.path.join(args.out, "data.csv"), gd.data)
    write_truth_csv(os.path.join(args.out, "truth.csv"), gd.truth_cate, gd.truth_ate)
    print(f"wrote {gd.data.n} rows; censoring {gd.censoring:.3f} (eta={gd.eta:.6g})")
    return EXIT_OK


def _fit(data: Dataset, cfg: ChainConfig, single: bool, **kw):
    if single:
        return run_horseshoe_forest(data, cfg, kw.get("X_test"))
    return run_causal_chain(data, cfg, **kw)


def cmd_fit(args) -> int:
    data = read_dataset_csv(args.data, args.outcome)
    if not args.single and data.A.min() == data.A.max():
        raise UsageError("both treatment arms must be present in the data")
    cfg = chain_config(args)
    _ensure_dir(args.out)
    t0 = time.perf_counter()
    dr = _fit(data, cfg, args.single)
    wall = time.perf_counter() - t0
    summary = {"n": data.n, "p": data.p, "draws": dr.n_draws, "level": args.level,
               "sigma2_mean": float(dr.sigma2.mean()) if dr.n_draws else None,
               "acceptance": dr.acceptance, "wall_time": wall}
    try:
        summary["c_index"] = c_index(dr.pred_mean, data.y, data.delta) if dr.n_draws else None
    except ValueError:
        summary["c_index"] = None
    if not args.single and dr.n_draws >= 2:
        cs, ats = summarize(dr, args.level)
        summary["ate"] = {"mean": ats.mean, "lower": ats.lower, "upper": ats.upper}
        summary["cate"] = {"mean": cs.mean, "lower": cs.lower, "upper": cs.upper}
    elif dr.n_draws >= 1:
        summary["prediction"] = {"mean": dr.pred_mean, "sd": dr.pred_sd}
    summary["config"] = {**_effective_config(args), "chain": cfg.to_dict()}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    if args.single:
        cols = {"sigma2": dr.sigma2, "fit": dr.fit}
    else:
        cols = {"ate": dr.ate, "sigma2": dr.sigma2, "cate": dr.cate}
    write_draws_csv(os.path.join(args.out, "draws.csv"), cols)
    if "ate" in summary:
        a = summary["ate"]
        print(f"ATE {a['mean']:.4f} [{a['lower']:.4f}, {a['upper']:.4f}] from {dr.n_draws} draws")
    return EXIT_OK


def _one_replication(task):
    args, r = task
    seed = args.seed + r
    spec = scenario_spec(args, seed)
    try:
        gd = generate(spec)
        dr = run_causal_chain(gd.data, chain_config(args, seed=seed))
        cs, ats = summarize(dr, args.level)
        return r, tuple(evaluate(cs, ats, gd.truth_cate, gd.truth_ate)), None
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


def _pool_map(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def cmd_replicate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    scenario_spec(args, args.seed).validate()
    chain_config(args)
    _ensure_dir(args.out)
    results = _pool_map(_one_replication, [(args, r) for r in range(1, args.reps + 1)], args.jobs)
    ok = [m for _, m, err in results if m is not None]
    path = os.path.join(args.out, "metrics.csv")
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for r, m, err in results:
            vals = m if m is not None else (float("nan"),) * 6
            fh.write(",".join([str(r)] + [repr(float(v)) for v in vals]) + "\n")
            if err:
                print(f"replication {r} failed: {err}", file=sys.stderr)
        agg = np.mean(np.array(ok), axis=0) if ok else np.full(6, np.nan)
        fh.write(",".join(["mean"] + [repr(float(v)) for v in agg]) + "\n")
    failed = len(results) - len(ok)
    print(f"{len(ok)} of {len(results)} replications succeeded; metrics in {path}")
    return EXIT_NUMERICAL if failed > 0.1 * len(results) else EXIT_OK


def _cv_task(task):
    args, k, seed, train, test, data = task
    sub = lambda idx: Dataset(data.X[idx], data.A[idx], data.y[idx], data.delta[idx], data.kind)
    tr, te = sub(train), sub(test)
    if tr.delta.sum() == 0 or te.delta.sum() == 0:
        return k, None, "fold has no events"
    try:
        kw = {"X_test": te.X} if args.single else {"X_test": te.X, "A_test": te.A}
        dr = _fit(tr, chain_config(args, k=k, seed=seed), args.single, **kw)
        return k, c_index(dr.test_mean, te.y, te.delta), None
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return k, None, f"{type(exc).__name__}: {exc}"


def cmd_cv(args) -> int:
    from sklearn.model_selection import RepeatedStratifiedKFold

    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    try:
        grid = [float(v) for v in args.k_grid.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--k-grid must be a comma-separated list of numbers") from None
    if not grid or min(grid) <= 0:
        raise UsageError("--k-grid needs positive values")
    data = read_dataset_csv(args.data)
    if not args.single and data.A.min() == data.A.max():
        raise UsageError("both treatment arms must be present in the data")
    chain_config(args)
    _ensure_dir(args.out)
    rskf = RepeatedStratifiedKFold(n_splits=args.folds, n_repeats=args.repeats,
                                   random_state=args.seed)
    try:
        splits = list(rskf.split(data.X, data.delta.astype(int)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    root = RngStream(args.seed)
    tasks = [(args, k, root.child(f).seed, tr, te, data)
             for k in grid for f, (tr, te) in enumerate(splits)]
    results = _pool_map(_cv_task, tasks, args.jobs)
    rows = []
    for k in grid:
        vals = [c for kk, c, _ in results if kk == k and c is not None]
        rows.append((k, float(np.mean(vals)) if vals else float("nan"),
                     float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan"), len(vals)))
    for kk, c, err in results:
        if err:
            log.warning("k=%g: fold skipped (%s)", kk, err)
    path = os.path.join(args.out, "cv.csv")
    with open(path, "w") as fh:
        fh.write("k,c_index_mean,c_index_sd,folds\n")
        for k, mu, sd, nf in rows:
            fh.write(f"{k!r},{mu!r},{sd!r},{nf}\n")
    finite = [r for r in rows if math.isfinite(r[1])]
    if finite:
        best = max(finite, key=lambda r: r[1])
        print(f"best k = {best[0]!r} (C-index {best[1]:.4f}); table in {path}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "replicate": cmd_replicate, "cv": cmd_cv}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INPUT
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, TailOverflowError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, DataFormatError, SpecError, CalibrationError, EstimationError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
