"""Empirical rate fits and comparison of Monte-Carlo curves against bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import DomainError, Regime

DEFAULT_BURN_IN = 0.1


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple
    n_points: int

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window), "n_points": self.n_points}


def loglog_slope(stats_or_k, mse=None, burn_in_frac: float = DEFAULT_BURN_IN) -> RateFit:
    """OLS fit of ln mse[k] against ln k over k >= max(1, burn_in_frac * k_max).

    Accepts an ``EnsembleStats`` or explicit ``(k, mse)`` arrays.
    """
    if mse is None:
        k = np.asarray(stats_or_k.k, dtype=float)
        mse = np.asarray(stats_or_k.mse, dtype=float)
    else:
        k = np.asarray(stats_or_k, dtype=float)
        mse = np.asarray(mse, dtype=float)
    if k.shape != mse.shape:
        raise DomainError("k and mse must have equal length")
    if not 0 <= burn_in_frac < 1:
        raise DomainError("burn_in_frac must lie in [0, 1)")
    lo = max(1.0, burn_in_frac * k.max())
    sel = k >= lo
    kw, mw = k[sel], mse[sel]
    if kw.size < 3:
        raise DomainError("fewer than 3 points in the fit window")
    if np.any(mw <= 0):
        raise DomainError("mse must be positive on the fit window")
    fit = stats.linregress(np.log(kw), np.log(mw))
    r2 = float(fit.rvalue**2) if np.isfinite(fit.rvalue) else 1.0
    return RateFit(float(fit.slope), float(fit.intercept), min(max(r2, 0.0), 1.0),
                   (int(kw[0]), int(kw[-1])), int(kw.size))


@dataclass
class DominanceReport:
    fraction: float
    passed: bool
    n_points: int
    violations: list = field(default_factory=list)

    def as_dict(self, max_violations: int = 20) -> dict:
        return {"fraction": self.fraction, "passed": self.passed, "n_points": self.n_points,
                "n_violations": len(self.violations), "violations": self.violations[:max_violations]}


def compare_to_bound(stats_obj, bound, n_stderr: float = 3.0) -> DominanceReport:
    """Check mse[k] <= bound[k] + n_stderr * stderr[k] pointwise."""
    mse = np.asarray(stats_obj.mse, dtype=float)
    se = np.asarray(stats_obj.stderr, dtype=float)
    b = np.asarray(bound, dtype=float)
    if b.shape != mse.shape:
        raise DomainError("bound and mse must have equal length")
    ok = mse <= b + n_stderr * se
    ks = np.asarray(stats_obj.k)
    bad = np.flatnonzero(~ok)
    violations = [{"k": int(ks[i]), "mse": float(mse[i]), "bound": float(b[i]),
                   "stderr": float(se[i])} for i in bad]
    frac = float(ok.mean()) if ok.size else 1.0
    return DominanceReport(frac, bool(ok.all()), int(ok.size), violations)


def theoretical_exponent(regime, xi: float, c: float = 1.0, a: float = 2.0) -> float:
    """Exponent p of the k^p decay rate the bounds guarantee for the schedule."""
    regime = Regime(regime)
    if regime.exponential:
        return -xi
    if regime is Regime.SMOOTH_SUBEXP:
        return -xi / c
    d_ac = a * (c - 1.0) / 2.0 + 1.0
    return -xi / (2.0 * d_ac)


def slope_gap(fit_a: RateFit, fit_b: RateFit) -> float:
    return abs(fit_a.slope - fit_b.slope)


def summarize(fit: RateFit, regime, xi: float, c: float = 1.0, a: float = 2.0) -> dict:
    exp = theoretical_exponent(regime, xi, c, a)
    out = fit.as_dict()
    out["theoretical_exponent"] = exp
    out["gap"] = fit.slope - exp if math.isfinite(fit.slope) else None
    return out
