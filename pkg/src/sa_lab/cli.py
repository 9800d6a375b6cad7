"""Command-line experiment runner.

Subcommands::

    sa-lab run     simulate an ensemble, write the MSE curve and a JSON summary
    sa-lab verify  run the assumption checks for one benchmark system
    sa-lab bounds  tabulate the finite-time bound on a log-spaced grid
    sa-lab fit     re-fit the log-log slope of an existing MSE CSV

Settings come from an optional flat ``key = value`` config file (or a
previous run's JSON summary) and from flags; flags win.
"""

from __future__ import annotations

import argparse
import importlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, bounds, moreau
from .core import (
    SALabError,
    DomainError,
    Regime,
    SmoothingSchedule,
    StepSchedule,
    check_lipschitz,
    check_lyapunov,
    check_stationary,
    sample_ball,
)
from .engine import NoiseModel, ProjectionConfig, replication_seed, run_ensemble
from .systems import SYSTEMS, get_system, verify_drift_artstein, verify_selector_lmis

SPEC_VERSION = 1

# key -> parser; the same keys are used by config files, flags and the summary echo
CONFIG_KEYS = {
    "system": str,
    "factory": str,
    "alpha": float,
    "xi": float,
    "K": float,
    "mu": float,
    "mu_xi": float,
    "sigma": float,
    "x0": lambda s: [float(v) for v in str(s).split(",")] if not isinstance(s, list) else [float(v) for v in s],
    "k_max": int,
    "n_reps": int,
    "base_seed": int,
    "projection": lambda s: s if isinstance(s, bool) else str(s).lower() in ("1", "true", "yes", "on"),
    "r": float,
    "kappa": float,
    "stride": int,
    "burn_in": float,
    "csv": str,
    "summary": str,
    "grid_points": int,
}

DEFAULTS = {
    "system": "khalil",
    "sigma": 1.0,
    "k_max": 100_000,
    "n_reps": 200,
    "base_seed": 0,
    "burn_in": analysis.DEFAULT_BURN_IN,
    "csv": "mse.csv",
    "summary": "summary.json",
    "grid_points": 60,
}


def read_config(path) -> dict:
    """Parse a ``key = value`` file, or take the ``config`` block of a JSON summary."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        raw = doc.get("config", doc)
    else:
        raw = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            raw[key] = val
    out = {}
    for key, val in raw.items():
        if key not in CONFIG_KEYS:
            raise DomainError(f"unknown config key {key!r}")
        if val is not None:
            out[key] = CONFIG_KEYS[key](val)
    return out


def merge_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = CONFIG_KEYS[key](val)
    return cfg


def load_system(cfg: dict):
    name = cfg["system"]
    if name == "custom":
        if "factory" not in cfg:
            raise DomainError("system = custom needs factory = module:function")
        mod, _, attr = cfg["factory"].partition(":")
        return getattr(importlib.import_module(mod), attr)()
    if name not in SYSTEMS:
        raise DomainError(f"unknown system {name!r}")
    return get_system(name)


def build_experiment(cfg: dict):
    """Resolve the system and validated schedules from a merged config."""
    system = load_system(cfg)
    rec = system.recommended
    step = StepSchedule(cfg.get("alpha", rec.step.alpha), cfg.get("xi", rec.step.xi),
                        cfg.get("K", rec.step.K))
    smoothing = rec.smoothing
    if smoothing is not None or "mu" in cfg:
        base = smoothing or SmoothingSchedule(cfg["mu"], 0.0, step.K)
        smoothing = SmoothingSchedule(cfg.get("mu", base.mu), cfg.get("mu_xi", base.xi), step.K)
    proj = rec.projection
    if "projection" in cfg or "r" in cfg or "kappa" in cfg:
        proj = ProjectionConfig(cfg.get("projection", proj.enabled), cfg.get("r", proj.r),
                                cfg.get("kappa", proj.noise_envelope))
    x0 = tuple(cfg.get("x0", rec.x0))
    noise = NoiseModel(cfg["sigma"], cfg["base_seed"])
    proj.validate_for(system.problem)
    return system, step, smoothing, proj, x0, noise


def _bound_curve(system, step, smoothing, x0, sigma, ks):
    """Bound values (or None) plus a description for the summary."""
    info = {"evaluator": None, "params": None, "preconditions_violated": [], "error": None}
    try:
        p = bounds.params_for_system(system, step, smoothing, x0, sigma)
    except DomainError as exc:
        info["error"] = str(exc)
        return None, info
    info["evaluator"] = bounds.EVALUATORS[p.regime].__name__
    info["params"] = p.as_dict()
    info["preconditions_violated"] = bounds.preconditions(p)
    try:
        return np.asarray(bounds.evaluate_bound(p, ks, strict=False), dtype=float), info
    except DomainError as exc:
        info["error"] = str(exc)
        return None, info


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_mse_csv(path, stats, bound) -> None:
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("k,mse,stderr,bound\n")
        for i, k in enumerate(stats.k):
            b = "" if bound is None else _fmt(bound[i])
            fh.write(f"{int(k)},{_fmt(stats.mse[i])},{_fmt(stats.stderr[i])},{b}\n")


def read_mse_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="ascii")
    return np.atleast_1d(data["k"]), np.atleast_1d(data["mse"]), np.atleast_1d(data["stderr"])


def cmd_run(cfg: dict) -> dict:
    system, step, smoothing, proj, x0, noise = build_experiment(cfg)
    stats = run_ensemble(system.problem, step, proj, noise, x0, cfg["k_max"], cfg["n_reps"],
                         cfg["base_seed"], stride=cfg.get("stride"))
    bound, binfo = _bound_curve(system, step, smoothing, x0, noise.sigma, stats.k)
    write_mse_csv(cfg["csv"], stats, bound)

    V = system.lyapunov
    try:
        fit = analysis.loglog_slope(stats, burn_in_frac=cfg["burn_in"]).as_dict()
    except DomainError as exc:
        fit = {"error": str(exc)}
    dom = analysis.compare_to_bound(stats, bound).as_dict() if bound is not None else None
    echo = dict(cfg)
    echo.update(system=system.name if cfg["system"] != "custom" else "custom", alpha=step.alpha,
                xi=step.xi, K=step.K, x0=list(x0), projection=proj.enabled, stride=stats.stride)
    if proj.enabled:
        echo.update(r=proj.r, kappa=proj.kappa(noise.sigma, system.problem.dim))
    if smoothing is not None:
        echo.update(mu=smoothing.mu, mu_xi=smoothing.xi)
    summary = {
        "spec_version": SPEC_VERSION,
        "command": "run",
        "system": system.name,
        "regime": V.regime.value,
        "config": echo,
        "seeds": {"base_seed": stats.base_seed,
                  "replication_seed_0": replication_seed(stats.base_seed, 0),
                  "rule": "SeedSequence([base_seed, i]) -> PCG64"},
        "n_reps": stats.n_reps,
        "stride": stats.stride,
        "n_projections": stats.n_projections,
        "rate_fit": fit,
        "theoretical_exponent": analysis.theoretical_exponent(V.regime, step.xi, V.c, V.a),
        "bound": binfo,
        "dominance": dom,
        "final_mse": float(stats.mse[-1]),
    }
    Path(cfg["summary"]).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _report_dict(rep) -> dict:
    d = rep.as_dict() if hasattr(rep, "as_dict") else dict(rep.__dict__)
    return d


def cmd_verify(name: str, n: int = 1000, seed: int = 0) -> dict:
    """Sampled assumption checks for one benchmark; returns {check: report, ..., passed}."""
    system = get_system(name)
    p, V = system.problem, system.lyapunov
    checks = {}
    checks["stationary"] = check_stationary(p).as_dict()
    radius = 5.0
    if name == "khalil":
        radius = system.recommended.projection.r
    if name == "artstein":
        radius = system.recommended.projection.r
    checks["lipschitz"] = check_lipschitz(p, radius=radius, n_pairs=n, seed=seed,
                                          piece=system.piece if name == "artstein" else None).as_dict()
    for key, rep in check_lyapunov(p, V, radius=5.0, n=n, seed=seed).items():
        checks[f"lyapunov_{key}"] = rep.as_dict()

    R = moreau.rescale_lyapunov(V, p.x_star)
    pts = sample_ball(np.random.default_rng(seed + 1), n, p.dim, 5.0, p.x_star)
    if name == "selector":
        lmi = verify_selector_lmis(raise_on_fail=False)
        checks["lmi"] = lmi.as_dict()
        mu = system.recommended.smoothing.mu
        slack = moreau.check_drift_exp(R, p.dynamics, mu, pts, system.notes["gamma_M"])
        checks["envelope_drift"] = _slack_dict("envelope_drift_exp", slack, pts, mu=mu,
                                               gamma_M=system.notes["gamma_M"])
    elif name == "artstein":
        checks["drift_polynomial"] = verify_drift_artstein(raise_on_fail=False, seed=seed).as_dict()
        mu = system.recommended.smoothing.mu
        slack = moreau.check_drift_subexp(R, p.dynamics, mu, pts, p.lipschitz_C)
        checks["envelope_drift"] = _slack_dict("envelope_drift_subexp", slack, pts, mu=mu)
    passed = all(bool(c.get("passed", True)) for c in checks.values())
    return {"spec_version": SPEC_VERSION, "command": "verify", "system": name,
            "regime": V.regime.value, "checks": checks, "passed": passed}


def _slack_dict(name, slack, pts, tol=moreau.SLACK_TOL, **extra):
    i = int(np.argmin(slack))
    return {"name": name, "min_slack": float(slack[i]), "passed": bool(slack[i] >= -tol),
            "n_samples": int(len(slack)), "worst_point": pts[i].tolist(), **extra}


def log_grid(k_max: int, n: int) -> np.ndarray:
    ks = np.unique(np.round(np.logspace(0, math.log10(max(k_max, 1)), n)).astype(int))
    return np.concatenate([[0], ks[ks > 0]])


def cmd_bounds(cfg: dict, out) -> None:
    system, step, smoothing, proj, x0, noise = build_experiment(cfg)
    p = bounds.params_for_system(system, step, smoothing, x0, noise.sigma)
    ks = log_grid(cfg["k_max"], cfg["grid_points"])
    vals = np.atleast_1d(bounds.evaluate_bound(p, ks, strict=False))
    consts = p.as_dict()
    consts["preconditions_violated"] = bounds.preconditions(p)
    out.write("# " + json.dumps(consts, sort_keys=True) + "\n")
    out.write("k,bound\n")
    for k, v in zip(ks, vals):
        out.write(f"{int(k)},{_fmt(v)}\n")


def cmd_fit(path, burn_in: float, regime=None, xi=None, c: float = 1.0, a: float = 2.0) -> dict:
    k, mse, _ = read_mse_csv(path)
    fit = analysis.loglog_slope(k, mse, burn_in_frac=burn_in)
    out = {"spec_version": SPEC_VERSION, "command": "fit", "csv": str(path), "rate_fit": fit.as_dict()}
    if regime is not None and xi is not None:
        out["theoretical_exponent"] = analysis.theoretical_exponent(regime, xi, c, a)
    return out


def _add_experiment_flags(sp):
    sp.add_argument("--config", help="key = value file or a previous JSON summary")
    sp.add_argument("--system", choices=sorted(SYSTEMS) + ["custom"])
    sp.add_argument("--factory", help="module:function returning a BenchmarkSystem (custom)")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--xi", type=float)
    sp.add_argument("--K", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--mu-xi", dest="mu_xi", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--x0", help="comma-separated initial point")
    sp.add_argument("--k-max", dest="k_max", type=int)
    sp.add_argument("--reps", dest="n_reps", type=int)
    sp.add_argument("--seed", dest="base_seed", type=int)
    sp.add_argument("--projection", dest="projection", action="store_true", default=None)
    sp.add_argument("--no-projection", dest="projection", action="store_false")
    sp.add_argument("--r", type=float)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sa-lab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate an ensemble and write CSV + summary")
    _add_experiment_flags(run)
    run.add_argument("--csv")
    run.add_argument("--summary")

    ver = sub.add_parser("verify", help="assumption checks for a benchmark system")
    ver.add_argument("--system", required=True, choices=sorted(SYSTEMS))
    ver.add_argument("--samples", type=int, default=1000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", help="write the report here instead of stdout")

    bnd = sub.add_parser("bounds", help="tabulate the finite-time bound")
    _add_experiment_flags(bnd)
    bnd.add_argument("--grid-points", dest="grid_points", type=int)
    bnd.add_argument("--out", help="write the CSV here instead of stdout")

    fit = sub.add_parser("fit", help="re-fit the log-log slope of an MSE CSV")
    fit.add_argument("csv")
    fit.add_argument("--burn-in", dest="burn_in", type=float, default=analysis.DEFAULT_BURN_IN)
    fit.add_argument("--regime", choices=[r.value for r in Regime])
    fit.add_argument("--xi", type=float)
    fit.add_argument("--c", type=float, default=1.0)
    fit.add_argument("--a", type=float, default=2.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = cmd_run(merge_config(args))
            fit = summary["rate_fit"]
            print(f"slope {fit.get('slope', float('nan')):.4f} "
                  f"(theory {summary['theoretical_exponent']:.4f}); wrote {summary['config']['csv']}")
            return 0
        if args.command == "verify":
            rep = cmd_verify(args.system, n=args.samples, seed=args.seed)
            text = json.dumps(rep, indent=2, sort_keys=True) + "\n"
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            if not rep["passed"]:
                print("verification failed", file=sys.stderr)
                return 1
            return 0
        if args.command == "bounds":
            cfg = merge_config(args)
            if args.out:
                with open(args.out, "w", newline="\n") as fh:
                    cmd_bounds(cfg, fh)
            else:
                cmd_bounds(cfg, sys.stdout)
            return 0
        if args.command == "fit":
            rep = cmd_fit(args.csv, args.burn_in, args.regime, args.xi, args.c, args.a)
            sys.stdout.write(json.dumps(rep, indent=2, sort_keys=True) + "\n")
            return 0
    except (SALabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
