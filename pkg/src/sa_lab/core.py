"""Shared domain types, step-size schedules and sampled assumption checks.

Every oracle in this package (dynamics, Lyapunov value, gradient selector)
is vectorized over leading axes: it accepts an array of shape ``(..., d)``
and returns ``(..., d)`` for vector fields or ``(...)`` for scalars.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Oracle = Callable[[np.ndarray], np.ndarray]

INEQ_TOL = 1e-9


class SALabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SALabError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ConvergenceError(SALabError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class NonFiniteError(SALabError, FloatingPointError):
    """An iterate became non-finite or exceeded the divergence guard."""

    def __init__(self, message: str, k: Optional[int] = None, replication: Optional[int] = None):
        super().__init__(message)
        self.k = k
        self.replication = replication


class SearchError(SALabError, RuntimeError):
    """A parameter search found no admissible value."""


class VerificationError(SALabError, RuntimeError):
    """A verification routine found violating points."""

    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = [] if violations is None else violations


class Regime(str, enum.Enum):
    SMOOTH_EXP = "SmoothExp"
    NONSMOOTH_EXP = "NonsmoothExp"
    SMOOTH_SUBEXP = "SmoothSubexp"
    NONSMOOTH_SUBEXP = "NonsmoothSubexp"

    @property
    def smooth(self) -> bool:
        return self in (Regime.SMOOTH_EXP, Regime.SMOOTH_SUBEXP)

    @property
    def exponential(self) -> bool:
        return self in (Regime.SMOOTH_EXP, Regime.NONSMOOTH_EXP)


def _frozen_vector(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProblemSpec:
    """Closed-loop problem: dynamics F with equilibrium x_star and noise constants.

    The noise second moment is bounded as ``A + B * ||x||^2``.
    """

    dim: int
    x_star: np.ndarray
    dynamics: Oracle
    lipschitz_C: float
    noise_A: float = 0.0
    noise_B: float = 0.0
    name: str = ""
    norm_order: int = 2

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError("dim must be a positive integer")
        x_star = _frozen_vector(self.x_star, "x_star")
        if x_star.shape != (self.dim,):
            raise DomainError(f"x_star must have length {self.dim}")
        object.__setattr__(self, "x_star", x_star)
        if not self.lipschitz_C > 0:
            raise DomainError("lipschitz_C must be positive")
        if self.noise_A < 0 or self.noise_B < 0:
            raise DomainError("noise constants must be nonnegative")
        if self.norm_order != 2:
            raise DomainError("only the Euclidean norm is supported")

    @property
    def x_star_norm(self) -> float:
        return float(np.linalg.norm(self.x_star))

    def with_noise(self, sigma: float) -> "ProblemSpec":
        """Return a copy whose noise constants match isotropic Gaussian noise."""
        from dataclasses import replace

        return replace(self, noise_A=self.dim * float(sigma) ** 2, noise_B=0.0)


@dataclass(frozen=True)
class LyapunovSpec:
    """Lyapunov function V with a fixed generalized-gradient selector and its constants."""

    value: Oracle
    grad_select: Oracle
    a: float
    c: float
    gamma: float
    C1a: float
    C2a: float
    G: float
    regime: Regime
    L: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.a < 1:
            raise DomainError("growth exponent a must be >= 1")
        if self.c < 1:
            raise DomainError("stability exponent c must be >= 1")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if not (0 < self.C1a <= self.C2a):
            raise DomainError("need 0 < C1a <= C2a")
        if not self.G > 0:
            raise DomainError("G must be positive")
        if self.regime.exponential and self.c != 1:
            raise DomainError("exponential regimes require c = 1")
        if self.regime.smooth != (self.L is not None):
            raise DomainError("L must be given exactly for smooth regimes")
        if self.L is not None and not self.L > 0:
            raise DomainError("L must be positive")


@dataclass(frozen=True)
class StepSchedule:
    """Power-law step sizes alpha_k = alpha / (k + K)^xi."""

    alpha: float
    xi: float
    K: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not 0 <= self.xi <= 1:
            raise DomainError("xi must lie in [0, 1]")
        if not self.K >= 1:
            raise DomainError("K must be >= 1")

    def __call__(self, k):
        return step_size(self, k)


@dataclass(frozen=True)
class SmoothingSchedule:
    """Smoothing parameters mu_k = mu / (k + K)^(xi / 2)."""

    mu: float
    xi: float
    K: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("mu must be positive")
        if not 0 <= self.xi <= 1:
            raise DomainError("xi must lie in [0, 1]")
        if not self.K >= 1:
            raise DomainError("K must be >= 1")

    def __call__(self, k):
        return smoothing_param(self, k)


def _check_k(k):
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0):
        raise DomainError("k must be nonnegative")
    return k_arr


def step_size(s: StepSchedule, k):
    """alpha / (k + K)^xi; accepts scalars or arrays of k."""
    k_arr = _check_k(k)
    out = s.alpha / np.power(k_arr + s.K, s.xi)
    return float(out) if out.ndim == 0 else out


def smoothing_param(s: SmoothingSchedule, k):
    """mu / (k + K)^(xi / 2); accepts scalars or arrays of k."""
    k_arr = _check_k(k)
    out = s.mu / np.power(k_arr + s.K, 0.5 * s.xi)
    return float(out) if out.ndim == 0 else out


def compute_K(regime, alpha: float, xi: float, C: float, B: float, gamma_eff: float) -> float:
    """Smallest admissible schedule offset K for the given drift constant.

    ``gamma_eff`` is gamma for smooth regimes and gamma_M for NonsmoothExp.
    The returned K makes alpha_0 <= gamma_eff / (4C^2 + 8B).
    """
    Regime(regime)
    if not gamma_eff > 0:
        raise DomainError("gamma_eff must be positive")
    if not 0 <= xi <= 1:
        raise DomainError("xi must lie in [0, 1]")
    if xi == 0:
        return 1.0
    base = alpha * (4 * C**2 + 8 * B) / gamma_eff
    with np.errstate(over="ignore"):
        if xi == 1:
            return float(max(1.0, base))
        k_step = np.power(base, 1.0 / xi)
        k_decay = np.power(2 * xi / (alpha * gamma_eff), 1.0 / (1.0 - xi))
    return float(max(1.0, k_step, k_decay))


@dataclass(frozen=True)
class ConditionReport:
    sum_alpha_diverges: bool
    sum_alpha_sq_converges: bool
    subexp_condition: bool
    nonsmooth_subexp_window: bool


def _diverges(p: float) -> bool:
    # sum_k k^-p diverges iff p <= 1
    return p <= 1.0


def validate_step_conditions(s: StepSchedule, regime, c: float = 1.0, a: float = 2.0) -> ConditionReport:
    """Decide the summability conditions behind almost-sure convergence analytically."""
    Regime(regime)
    xi = s.xi
    d_ac = a * (c - 1) / 2 + 1
    d = 3 * d_ac / (3 * d_ac - 1)
    return ConditionReport(
        sum_alpha_diverges=_diverges(xi),
        sum_alpha_sq_converges=not _diverges(2 * xi),
        subexp_condition=_diverges(xi * (2 - 1 / c)),
        nonsmooth_subexp_window=(2 / 3 < xi <= 2 * d / 3),
    )


# ---------------------------------------------------------------------------
# Sampled assumption checks


@dataclass
class CheckReport:
    name: str
    min_slack: float
    passed: bool
    n_samples: int
    worst_point: Optional[list] = None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "min_slack": self.min_slack,
            "passed": self.passed,
            "n_samples": self.n_samples,
            "worst_point": self.worst_point,
            **self.details,
        }


def sample_ball(rng: np.random.Generator, n: int, dim: int, radius: float, center=None) -> np.ndarray:
    """Uniform samples from the Euclidean ball."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    pts = g * r[:, None]
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def _report(name, slack, pts, tol, **details) -> CheckReport:
    slack = np.asarray(slack, dtype=float)
    i = int(np.argmin(slack))
    return CheckReport(
        name=name,
        min_slack=float(slack[i]),
        passed=bool(slack[i] >= -tol),
        n_samples=int(slack.size),
        worst_point=np.asarray(pts[i]).tolist(),
        details=details,
    )


def check_stationary(p: ProblemSpec, tol: float = INEQ_TOL) -> CheckReport:
    res = float(np.linalg.norm(p.dynamics(p.x_star)))
    return CheckReport("stationary", -res, res <= tol, 1, p.x_star.tolist())


def check_lipschitz(p: ProblemSpec, radius: float = 5.0, n_pairs: int = 1000, seed: int = 0,
                    piece: Optional[Oracle] = None, tol: float = INEQ_TOL) -> CheckReport:
    """Sampled check of ||F(x) - F(y)|| <= C ||x - y||.

    When ``piece`` labels the regions of a piecewise-defined F, pairs are
    drawn inside a single region.
    """
    rng = np.random.default_rng(seed)
    x = sample_ball(rng, n_pairs, p.dim, radius, p.x_star)
    y = sample_ball(rng, n_pairs, p.dim, radius, p.x_star)
    if piece is not None:
        same = piece(x) == piece(y)
        x, y = x[same], y[same]
    lhs = np.linalg.norm(p.dynamics(x) - p.dynamics(y), axis=1)
    slack = p.lipschitz_C * np.linalg.norm(x - y, axis=1) - lhs
    return _report("lipschitz", slack, x, tol)


def check_lyapunov(p: ProblemSpec, V: LyapunovSpec, radius: float = 5.0, n: int = 1000,
                   seed: int = 0, tol: float = INEQ_TOL) -> dict:
    """Sampled growth, gradient-growth and drift checks for V."""
    rng = np.random.default_rng(seed)
    x = sample_ball(rng, n, p.dim, radius, p.x_star)
    dist = np.linalg.norm(x - p.x_star, axis=1)
    v = V.value(x)
    g = V.grad_select(x)
    drift = np.sum(g * p.dynamics(x), axis=1)
    return {
        "zero_at_equilibrium": CheckReport(
            "zero_at_equilibrium", -abs(float(V.value(p.x_star))),
            abs(float(V.value(p.x_star))) <= tol, 1, p.x_star.tolist()),
        "growth_lower": _report("growth_lower", v - V.C1a * dist**V.a, x, tol),
        "growth_upper": _report("growth_upper", V.C2a * dist**V.a - v, x, tol),
        "gradient_growth": _report(
            "gradient_growth", V.G * dist ** (V.a - 1) - np.linalg.norm(g, axis=1), x, tol),
        "drift": _report("drift", -V.gamma * v**V.c - drift, x, tol),
    }


def isclose(a: float, b: float, rtol: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=rtol, abs_tol=0.0)
