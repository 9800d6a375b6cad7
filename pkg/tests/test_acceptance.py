"""End-to-end acceptance checks.

Each test records one pass/fail line, printed in the "acceptance criteria"
section of the pytest summary. Run this file alone with
``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from conftest import record_acceptance
from sa_lab import cli
from sa_lab.analysis import compare_to_bound, loglog_slope
from sa_lab.bounds import (
    BoundParams,
    bound_nonsmooth_subexp,
    bound_smooth_exp,
    bound_smooth_subexp,
    evaluate_bound,
    nonsmooth_subexp_xi_max,
    params_for_system,
    theorem_K,
)
from sa_lab.core import DomainError, Regime, StepSchedule, sample_ball, step_size
from sa_lab.engine import NoiseModel, run_ensemble
from sa_lab.moreau import envelope_value, property_suite, quadratic_oracle_error, rescale_lyapunov
from sa_lab.systems import get_system, verify_drift_artstein, verify_selector_lmis

K_MAX = 100_000


def _recommended_run(system, n_reps, seed, stride=None, **overrides):
    rec = system.recommended
    step = rec.step if not overrides else StepSchedule(overrides.get("alpha", rec.step.alpha),
                                                       overrides.get("xi", rec.step.xi),
                                                       overrides.get("K", rec.step.K))
    t0 = time.perf_counter()
    stats = run_ensemble(system.problem, step, rec.projection, NoiseModel(rec.sigma, seed), rec.x0, K_MAX,
                         n_reps, seed, stride=stride)
    return step, stats, time.perf_counter() - t0


@pytest.fixture(scope="module")
def selector_run(selector):
    return _recommended_run(selector, 1000, 1, stride=1)


@pytest.fixture(scope="module")
def khalil_run(khalil):
    return _recommended_run(khalil, 200, 7, xi=0.4)


def test_1_selector_slope(selector_run):
    step, stats, secs = selector_run
    fit = loglog_slope(stats, burn_in_frac=0.1)
    coarse = loglog_slope(stats.decimate(50), burn_in_frac=0.1)
    gap = abs(fit.slope - coarse.slope)
    ok = -1.16 <= fit.slope <= -0.86 and gap <= 0.01 and secs <= 120
    record_acceptance(1, "selector slope", ok,
                      f"slope {fit.slope:.4f} in [-1.16, -0.86]; decimated gap {gap:.2e}; "
                      f"{stats.n_reps} reps, {secs:.1f} s")
    assert -1.16 <= fit.slope <= -0.86
    assert gap <= 0.01
    assert secs <= 120


def test_2_khalil_slope(khalil_run):
    step, stats, secs = khalil_run
    assert step.xi == 0.4
    fit = loglog_slope(stats, burn_in_frac=0.1)
    ok = -0.30 <= fit.slope <= -0.12 and secs <= 120
    record_acceptance(2, "Khalil slope", ok,
                      f"slope {fit.slope:.4f} in [-0.30, -0.12]; {stats.n_reps} reps, {secs:.1f} s")
    assert -0.30 <= fit.slope <= -0.12
    assert secs <= 120


def test_3_artstein_slope(artstein):
    step, stats, secs = _recommended_run(artstein, 200, 3)
    assert step.xi == 0.8
    fit = loglog_slope(stats, burn_in_frac=0.1)
    ok = -0.40 <= fit.slope <= -0.22 and secs <= 180
    record_acceptance(3, "Artstein slope", ok,
                      f"slope {fit.slope:.4f} in [-0.40, -0.22]; {stats.n_reps} reps, {secs:.1f} s")
    assert -0.40 <= fit.slope <= -0.22
    assert secs <= 180


def test_4_bound_dominance(selector, khalil, selector_run, khalil_run):
    parts = []
    fractions = []
    for system, (step, stats, _) in ((selector, selector_run), (khalil, khalil_run)):
        rec = system.recommended
        p = params_for_system(system, step, rec.smoothing, rec.x0, rec.sigma)
        rep = compare_to_bound(stats, evaluate_bound(p, stats.k, strict=False), n_stderr=3.0)
        fractions.append(rep.fraction)
        parts.append(f"{system.name} {p.regime.value} fraction {rep.fraction:.4f}")
    ok = all(f == 1.0 for f in fractions)
    record_acceptance(4, "bound dominance", ok, "; ".join(parts))
    assert fractions == [1.0, 1.0]


def test_5_artstein_drift():
    rep = verify_drift_artstein(n_samples=10_000, ball_radius=5.0, raise_on_fail=False)
    ok = rep.passed and rep.min_slack >= -1e-9
    record_acceptance(5, "Artstein drift inequality", ok,
                      f"min slack {rep.min_slack:.6g} over {rep.n_samples} samples")
    assert rep.min_slack >= -1e-9


def test_6_selector_lmis():
    rep = verify_selector_lmis(raise_on_fail=False)
    shown = rep.as_dict()["lambda_max"]
    ok = all(v < 0 for v in rep.lambda_max)
    record_acceptance(6, "selector LMIs", ok, f"largest eigenvalues {shown[0]:.6g}, {shown[1]:.6g}")
    assert ok
    assert shown == [float(f"{v:.6g}") for v in rep.lambda_max]


def test_7_moreau_property_suite():
    t0 = time.perf_counter()
    failed = []
    worst = {}
    for name, mu in (("selector", 0.05), ("khalil", 0.1), ("artstein", 0.05)):
        s = get_system(name)
        R = rescale_lyapunov(s.lyapunov, s.problem.x_star)
        pts = sample_ball(np.random.default_rng(17), 1000, 2, 5.0, s.problem.x_star)
        for r in property_suite(R, mu, pts, piece=s.piece, seed=17):
            worst[r.name] = min(worst.get(r.name, np.inf), r.min_slack)
            if not r.passed:
                failed.append(f"{name}:{r.name}")
    pts = sample_ball(np.random.default_rng(18), 1000, 2, 5.0)
    oracle = max(quadratic_oracle_error(q, mu, pts, np.zeros(2)) for q in (0.5, 2.0) for mu in (0.05, 0.5))
    secs = time.perf_counter() - t0
    ok = not failed and oracle <= 1e-7 and secs <= 60
    record_acceptance(7, "envelope property suite", ok,
                      f"{len(worst)} properties x 3 systems, failures {failed or 'none'}; "
                      f"quadratic oracle {oracle:.2e}; {secs:.1f} s")
    assert not failed
    assert oracle <= 1e-7
    assert secs <= 60


def _reduction_grid(n=100):
    rng = np.random.default_rng(99)
    xis = [0.0, 0.3, 0.6, 0.9, 1.0]
    for i in range(n):
        xi = xis[i % len(xis)]
        gamma = float(rng.uniform(0.2, 3.0))
        alpha = float(rng.uniform(0.02, 2.0 if xi else 1.9 / gamma))  # constant steps need alpha*gamma <= 2
        if i % 10 == 9:
            alpha = 2.0 / gamma
        yield dict(alpha=alpha, xi=xi, gamma=gamma, K=float(rng.uniform(1, 200)), E0=float(rng.uniform(0, 4)),
                   C1a=float(rng.uniform(0.2, 1.0)), C2a=float(rng.uniform(1.0, 3.0)), A=float(rng.uniform(0, 3)),
                   B=float(rng.uniform(0, 1)), x_star_norm=float(rng.uniform(0, 2)), L=float(rng.uniform(0.5, 3)),
                   C=1.0)


def test_8_evaluator_reductions():
    ks = np.array([0, 1, 5, 50, 500, 5_000, 50_000, 10**6])
    worst = 0.0
    for kw in _reduction_grid():
        sub = bound_smooth_subexp(BoundParams(regime=Regime.SMOOTH_SUBEXP, c=1.0, **kw), ks)
        exp = bound_smooth_exp(BoundParams(regime=Regime.SMOOTH_EXP, **kw), ks)
        worst = max(worst, float(np.max(np.abs(sub - exp) / np.maximum(np.abs(exp), 1e-300))))

    xi_max = nonsmooth_subexp_xi_max(2.0, 1.0)
    base = dict(regime=Regime.NONSMOOTH_SUBEXP, alpha=0.1, K=1.0, E0=1.0, C1a=1.0, C2a=1.0, gamma=1.0, C=1.0,
                A=1.0, a=2.0, c=1.0, G=2.0, mu=0.1)
    window_ok = True
    for xi in (0.7, 0.9, 1.0):
        window_ok &= bool(np.isfinite(bound_nonsmooth_subexp(BoundParams(xi=xi, **base), 100)))
    try:
        BoundParams(xi=1.0 + 1e-9, **base)
        window_ok = False
    except DomainError:
        pass
    ok = worst <= 1e-12 and xi_max == 1.0 and window_ok
    record_acceptance(8, "evaluator reductions", ok,
                      f"max rel gap c=1 vs exponential {worst:.1e} on 100 points; a=2, c=1 window top {xi_max}")
    assert worst <= 1e-12
    assert xi_max == 1.0 and window_ok


def test_9_one_iterate_contraction(selector):
    rec = selector.recommended
    p = params_for_system(selector)
    step = StepSchedule(rec.step.alpha, rec.step.xi, theorem_K(p))
    mu, gM = rec.smoothing.mu, selector.notes["gamma_M"]
    noise = NoiseModel(1.0, 9)
    A, B = noise.constants(selector.problem.dim)
    k_max = 4000
    checks = np.unique(np.round(np.linspace(0, k_max - 1, 20)).astype(int))
    capture = sorted(set(checks) | set(checks + 1))
    stats = run_ensemble(selector.problem, step, rec.projection, noise, rec.x0, k_max, 1000, 9, capture=capture)
    R = rescale_lyapunov(selector.lyapunov, selector.problem.x_star)
    x_star_sq = float(selector.problem.x_star @ selector.problem.x_star)
    worst = -np.inf
    bad = []
    for k in checks:
        a_k = float(step_size(step, int(k)))
        m0 = envelope_value(R, mu, stats.captured[int(k)])
        m1 = envelope_value(R, mu, stats.captured[int(k) + 1])
        d = m1 - (1.0 - a_k * gM / 2.0) * m0 - a_k**2 * (A + 2.0 * B * x_star_sq) / mu
        z = float(d.mean() / max(d.std(ddof=1) / np.sqrt(d.size), 1e-300))
        worst = max(worst, z)
        if d.mean() > 3.0 * d.std(ddof=1) / np.sqrt(d.size):
            bad.append(int(k))
    ok = not bad and len(checks) == 20
    record_acceptance(9, "one-iterate contraction", ok,
                      f"K={step.K:.0f}, {len(checks)} checkpoints, 1000 reps, "
                      f"largest mean/stderr {worst:.3g} (limit 3)")
    assert len(checks) == 20
    assert not bad


def test_10_determinism(tmp_path):
    paths = []
    for i in range(2):
        cfg = dict(cli.DEFAULTS)
        cfg.update(system="khalil", xi=0.4, k_max=5000, n_reps=50, base_seed=7,
                   csv=str(tmp_path / f"mse{i}.csv"), summary=str(tmp_path / f"s{i}.json"))
        cli.cmd_run(cfg)
        paths.append(tmp_path / f"mse{i}.csv")
    same = paths[0].read_bytes() == paths[1].read_bytes()
    record_acceptance(10, "determinism", same, f"two runs, {paths[0].stat().st_size} CSV bytes, identical={same}")
    assert same


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
