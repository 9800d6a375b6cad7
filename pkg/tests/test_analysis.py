import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sa_lab.analysis import compare_to_bound, loglog_slope, slope_gap, summarize, theoretical_exponent
from sa_lab.bounds import evaluate_bound, params_for_system
from sa_lab.core import DomainError, Regime, StepSchedule
from sa_lab.engine import EnsembleStats, NoiseModel, ProjectionConfig, run_ensemble


def _stats(k, mse, stderr=None):
    k = np.asarray(k)
    se = np.zeros_like(mse) if stderr is None else stderr
    return EnsembleStats(k, np.asarray(mse, float), np.asarray(se, float), 1, 0, 1, int(k[-1]))


def test_synthetic_power_laws():
    k = np.arange(0, 10_001)
    with np.errstate(divide="ignore"):
        assert loglog_slope(k, 7.0 / k).slope == pytest.approx(-1.0, abs=1e-9)
        assert loglog_slope(k, 3.0 / k**0.2).slope == pytest.approx(-0.2, abs=1e-9)


def test_burn_in_window():
    k = np.arange(1, 1001)
    fit = loglog_slope(k, 1.0 / k, burn_in_frac=0.5)
    assert fit.window == (500, 1000)
    assert fit.n_points == 501
    assert fit.r_squared == pytest.approx(1.0)


@given(p=st.floats(-2.0, -0.05), scale=st.floats(1e-6, 1e6))
@settings(max_examples=100, deadline=None)
def test_recovers_exponent(p, scale):
    k = np.arange(1, 5001, dtype=float)
    fit = loglog_slope(k, scale * k**p)
    assert fit.slope == pytest.approx(p, abs=1e-9)


@given(scale=st.floats(1e-8, 1e8))
@settings(max_examples=60, deadline=None)
def test_slope_scale_invariant(scale):
    rng = np.random.default_rng(7)
    k = np.arange(1, 2001, dtype=float)
    mse = k**-0.6 * np.exp(rng.normal(0, 0.1, k.size))
    assert loglog_slope(k, scale * mse).slope == pytest.approx(loglog_slope(k, mse).slope, abs=1e-12)


def test_fit_domain_errors():
    with pytest.raises(DomainError):
        loglog_slope(np.arange(1, 3), np.ones(2))
    with pytest.raises(DomainError):
        loglog_slope(np.arange(1, 11), np.r_[np.ones(9), 0.0])
    with pytest.raises(DomainError):
        loglog_slope(np.arange(1, 11), np.ones(9))
    with pytest.raises(DomainError):
        loglog_slope(np.arange(1, 11), np.ones(10), burn_in_frac=1.0)


def test_fit_accepts_stats():
    k = np.arange(0, 101)
    s = _stats(k, 1.0 / (k + 1.0))
    assert loglog_slope(s).slope == loglog_slope(k, 1.0 / (k + 1.0)).slope


def test_dominance_infinite_bound_passes():
    s = _stats(np.arange(10), np.linspace(1, 2, 10))
    rep = compare_to_bound(s, np.full(10, np.inf))
    assert rep.passed and rep.fraction == 1.0 and rep.violations == []


def test_dominance_uses_stderr_band():
    s = _stats(np.arange(3), np.array([1.0, 1.0, 1.0]), np.array([0.1, 0.1, 0.1]))
    assert compare_to_bound(s, np.array([0.71, 0.7, 0.69])).fraction == pytest.approx(2 / 3)
    rep = compare_to_bound(s, np.array([0.71, 0.7, 0.69]))
    assert [v["k"] for v in rep.violations] == [2]
    with pytest.raises(DomainError):
        compare_to_bound(s, np.ones(4))


def test_deterministic_run_sits_below_bound_and_not_half_of_it(selector):
    sched = StepSchedule(2.0, 1.0, 100.0)
    st_ = run_ensemble(selector.problem, sched, ProjectionConfig(), NoiseModel(0.0), (1.0, 1.0), 2000, 1, 0)
    p = params_for_system(selector, sched, sigma=0.0)
    b = evaluate_bound(p, st_.k, strict=False)
    assert compare_to_bound(st_, b).passed
    # a bound pinned to the trajectory and then halved must be rejected
    rep = compare_to_bound(st_, st_.mse / 2)
    assert not rep.passed and rep.violations


def test_theoretical_exponents():
    assert theoretical_exponent(Regime.SMOOTH_EXP, 1.0) == -1.0
    assert theoretical_exponent("SmoothSubexp", 0.4, c=2.0) == pytest.approx(-0.2)
    assert theoretical_exponent(Regime.NONSMOOTH_SUBEXP, 0.8, c=2.0, a=1.0) == pytest.approx(-0.8 / 3)
    assert theoretical_exponent(Regime.NONSMOOTH_EXP, 0.7) == -0.7


def test_summary_and_gap():
    k = np.arange(1, 1001)
    f1 = loglog_slope(k, 1.0 / k)
    f2 = loglog_slope(k, k**-0.5)
    assert slope_gap(f1, f2) == pytest.approx(0.5)
    out = summarize(f2, Regime.SMOOTH_SUBEXP, 1.0, c=2.0)
    assert out["gap"] == pytest.approx(0.0, abs=1e-9)
