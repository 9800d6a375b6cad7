"""Benchmark systems: selector control, Khalil's cubic oscillator, Artstein's circles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    CheckReport,
    DomainError,
    LyapunovSpec,
    ProblemSpec,
    Regime,
    SmoothingSchedule,
    StepSchedule,
    VerificationError,
    sample_ball,
)
from .engine import ProjectionConfig


@dataclass(frozen=True)
class Recommended:
    """Experiment settings used for the rate experiments of each benchmark."""

    step: StepSchedule
    smoothing: Optional[SmoothingSchedule]
    projection: ProjectionConfig
    x0: tuple
    sigma: float = 1.0


@dataclass(frozen=True)
class BenchmarkSystem:
    name: str
    problem: ProblemSpec
    lyapunov: LyapunovSpec
    recommended: Recommended
    # labels the smooth pieces of a piecewise-defined system (None if one piece)
    piece: Optional[object] = None
    notes: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Selector control

SELECTOR_A1 = np.array([[-5.0, -4.0], [-1.0, -2.0]])
SELECTOR_K = np.array([1.0, 0.0])
SELECTOR_P = np.diag([1.0, 3.0])
SELECTOR_ETA = 9.0
# Input vector as printed. With it, A1 + B k^T has an unstable eigenvalue
# whose eigenvector lies inside {k^T x < 0}, so the closed loop diverges.
SELECTOR_B_PRINTED = np.array([-3.0, -21.0])
# Sign-corrected input vector used by the benchmark (stable closed loop).
SELECTOR_B = np.array([3.0, 21.0])


def _selector_field(B):
    a11, a12 = SELECTOR_A1[0]
    a21, a22 = SELECTOR_A1[1]
    b1, b2 = float(B[0]), float(B[1])

    def F(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        m = np.minimum(0.0, x1)  # k = e1
        return np.stack([a11 * x1 + a12 * x2 + b1 * m, a21 * x1 + a22 * x2 + b2 * m], axis=-1)

    return F


def _selector_lipschitz(B) -> float:
    return float(np.linalg.norm(SELECTOR_A1, 2) + np.linalg.norm(B) * np.linalg.norm(SELECTOR_K))


def selector_problem_as_printed() -> ProblemSpec:
    """Selector closed loop with the input vector exactly as printed (unstable)."""
    return ProblemSpec(2, np.zeros(2), _selector_field(SELECTOR_B_PRINTED),
                       _selector_lipschitz(SELECTOR_B_PRINTED), name="selector-as-printed")


def _eig2_max(S: np.ndarray) -> float:
    # largest eigenvalue of a symmetric 2x2 matrix via trace and determinant
    tr = S[0, 0] + S[1, 1]
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    return float(0.5 * tr + math.sqrt(max(0.25 * tr * tr - det, 0.0)))


@dataclass
class LmiReport:
    lambda_max: tuple
    lambda_max_numpy: tuple
    matrices: tuple
    gamma_prime: float
    gamma: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "lambda_max": [float(f"{v:.6g}") for v in self.lambda_max],
            "gamma_prime": self.gamma_prime,
            "gamma": self.gamma,
            "passed": self.passed,
        }


def verify_selector_lmis(eta: float = SELECTOR_ETA, B=SELECTOR_B, raise_on_fail: bool = True) -> LmiReport:
    """Check A_i^T P_i + P_i A_i < 0 on both pieces of the selector loop.

    Piece 1 (k^T x >= 0) has dynamics A1 and quadratic form P; piece 2
    (k^T x < 0) has A2 = A1 + B k^T and P + eta k k^T.
    """
    B = np.asarray(B, dtype=float)
    A2 = SELECTOR_A1 + np.outer(B, SELECTOR_K)
    P1 = SELECTOR_P
    P2 = SELECTOR_P + eta * np.outer(SELECTOR_K, SELECTOR_K)
    S1 = SELECTOR_A1.T @ P1 + P1 @ SELECTOR_A1
    S2 = A2.T @ P2 + P2 @ A2
    lam = (_eig2_max(S1), _eig2_max(S2))
    lam_np = (float(np.linalg.eigvalsh(S1)[-1]), float(np.linalg.eigvalsh(S2)[-1]))
    top = (float(np.linalg.eigvalsh(P1)[-1]), float(np.linalg.eigvalsh(P2)[-1]))
    gamma_prime = min(-lam[0], -lam[1])
    gamma = min(-lam[0] / top[0], -lam[1] / top[1])
    passed = lam[0] < 0 and lam[1] < 0
    rep = LmiReport(lam, lam_np, (S1, S2), gamma_prime, gamma, passed)
    if raise_on_fail and not passed:
        raise VerificationError(
            f"selector LMI violated: lambda_max = {lam[0]:.6g}, {lam[1]:.6g}",
            violations=[i for i, v in enumerate(lam) if v >= 0],
        )
    return rep


def selector_system() -> BenchmarkSystem:
    """Piecewise-linear selector control loop with a piecewise-quadratic Lyapunov function."""
    from .bounds import choose_mu_exp

    F = _selector_field(SELECTOR_B)
    C = _selector_lipschitz(SELECTOR_B)
    P1 = SELECTOR_P
    P2 = SELECTOR_P + SELECTOR_ETA * np.outer(SELECTOR_K, SELECTOR_K)
    eta = SELECTOR_ETA

    def V(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        m = np.minimum(0.0, x1)
        return x1 * x1 + 3.0 * x2 * x2 + eta * m * m

    def grad(x):
        # the k^T x < 0 branch is used on the kink; both branches agree there
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        neg = x1 <= 0.0
        g1 = np.where(neg, 2.0 * (1.0 + eta) * x1, 2.0 * x1)
        return np.stack([g1, 6.0 * x2], axis=-1)

    lmi = verify_selector_lmis()
    eigs = np.concatenate([np.linalg.eigvalsh(P1), np.linalg.eigvalsh(P2)])
    C1a, C2a = float(eigs.min()), float(eigs.max())
    lyap = LyapunovSpec(V, grad, a=2.0, c=1.0, gamma=lmi.gamma, C1a=C1a, C2a=C2a,
                        G=2.0 * C2a, regime=Regime.NONSMOOTH_EXP)
    mu, gamma_M = choose_mu_exp(a=2.0, gamma=lmi.gamma, C=C, C1a=C1a, C2a=C2a, G=2.0 * C2a)
    problem = ProblemSpec(2, np.zeros(2), F, C, noise_A=2.0, noise_B=0.0, name="selector")
    rec = Recommended(
        step=StepSchedule(alpha=2.0, xi=1.0, K=100.0),
        smoothing=SmoothingSchedule(mu=mu, xi=0.0, K=1.0),
        projection=ProjectionConfig(enabled=False),
        x0=(1.0, 1.0),
    )
    return BenchmarkSystem("selector", problem, lyap, rec,
                           piece=lambda x: (np.asarray(x)[..., 0] > 0).astype(int),
                           notes={"gamma_M": gamma_M, "lmi": lmi.as_dict()})


# ---------------------------------------------------------------------------
# Khalil's cubic oscillator


def khalil_field(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([-x2 - x1 * x1 * x1, x1 - x2 * x2 * x2], axis=-1)


def khalil_lipschitz(r: float) -> float:
    """Bound on the Jacobian norm of the Khalil field on the ball of radius r."""
    return 1.0 + 3.0 * r * r


def khalil_system(r: float = 4.0) -> BenchmarkSystem:
    """Khalil's oscillator with V = ||x||^2 / 2 (smooth, c = 2, gamma = 2)."""
    if not r > 0:
        raise DomainError("projection radius must be positive")

    def V(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(x * x, axis=-1)

    def grad(x):
        return np.array(x, dtype=float)

    lyap = LyapunovSpec(V, grad, a=2.0, c=2.0, gamma=2.0, C1a=0.5, C2a=0.5, G=1.0,
                        regime=Regime.SMOOTH_SUBEXP, L=1.0)
    problem = ProblemSpec(2, np.zeros(2), khalil_field, khalil_lipschitz(r), noise_A=2.0,
                          name="khalil")
    rec = Recommended(
        step=StepSchedule(alpha=0.5, xi=0.4, K=10.0),
        smoothing=None,
        projection=ProjectionConfig(enabled=True, r=r),
        x0=(1.0, 1.0),
    )
    return BenchmarkSystem("khalil", problem, lyap, rec)


# ---------------------------------------------------------------------------
# Artstein's circles

# sup of ||grad V|| over the unit circle (attained on x1 = 0+), inflated by 5%
ARTSTEIN_G = 2.1


def artstein_field(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    u = np.where(x1 >= 0.0, -1.0, 1.0)
    return np.stack([(x1 * x1 - x2 * x2) * u, 2.0 * x1 * x2 * u], axis=-1)


def artstein_value(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.sqrt(4.0 * x1 * x1 + 3.0 * x2 * x2) - np.abs(x1)


def artstein_grad(x):
    """Gradient of V, with the x1 > 0 limit on the kink line x1 = 0 and 0 at the origin."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    s = np.sqrt(4.0 * x1 * x1 + 3.0 * x2 * x2)
    safe = np.where(s > 0.0, s, 1.0)
    sgn = np.where(x1 >= 0.0, 1.0, -1.0)
    g1 = np.where(s > 0.0, 4.0 * x1 / safe - sgn, 0.0)
    g2 = np.where(s > 0.0, 3.0 * x2 / safe, 0.0)
    return np.stack([g1, g2], axis=-1)


def artstein_gradient_sup(n: int = 100_000, seed: int = 0) -> float:
    """Sampled supremum of ||grad V|| on the unit circle (the derivation of ARTSTEIN_G)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 2))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return float(np.max(np.linalg.norm(artstein_grad(v), axis=1)))


def artstein_system(D: float = 10.0) -> BenchmarkSystem:
    """Artstein's circles with V = sqrt(4 x1^2 + 3 x2^2) - |x1| (a = 1, c = 2)."""
    if not D > 0:
        raise DomainError("projection radius must be positive")
    lyap = LyapunovSpec(artstein_value, artstein_grad, a=1.0, c=2.0, gamma=1.0 / 15.0,
                        C1a=math.sqrt(3.0) - 1.0, C2a=2.0, G=ARTSTEIN_G,
                        regime=Regime.NONSMOOTH_SUBEXP)
    # F is quadratic on each half-plane with Jacobian norm 2||x||; it jumps across x1 = 0
    problem = ProblemSpec(2, np.zeros(2), artstein_field, 2.0 * D, noise_A=2.0, name="artstein")
    rec = Recommended(
        step=StepSchedule(alpha=0.05, xi=0.8, K=1.0),
        smoothing=SmoothingSchedule(mu=0.05, xi=0.8, K=1.0),
        projection=ProjectionConfig(enabled=True, r=D),
        x0=(1.0, 1.0),
    )
    return BenchmarkSystem("artstein", problem, lyap, rec,
                           piece=lambda x: (np.asarray(x)[..., 0] >= 0).astype(int))


def artstein_drift_slack(x) -> np.ndarray:
    """-V^2/15 - <grad V, F> using the explicit closed-form derivative."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    s = np.sqrt(4.0 * x1 * x1 + 3.0 * x2 * x2)
    safe = np.where(s > 0.0, s, 1.0)  # both terms vanish at the origin
    vdot = -2.0 * np.abs(x1) * (2.0 * x1 * x1 + x2 * x2) / safe + (x1 * x1 - x2 * x2)
    v = s - np.abs(x1)
    return -v * v / 15.0 - vdot


def artstein_polynomial_slack(x) -> np.ndarray:
    """Slack of 9 x1^2 <= |x1| (17 x1^2 + 9 x2^2) / s + 4 x1^2 + 3 x2^2.

    Equals 15/4 times the drift slack, so the two always agree in sign.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    s2 = 4.0 * x1 * x1 + 3.0 * x2 * x2
    s = np.sqrt(np.where(s2 > 0.0, s2, 1.0))
    return np.abs(x1) * (17.0 * x1 * x1 + 9.0 * x2 * x2) / s + s2 - 9.0 * x1 * x1


def verify_drift_artstein(n_samples: int = 10_000, ball_radius: float = 5.0, seed: int = 0,
                          tol: float = 1e-9, raise_on_fail: bool = True) -> CheckReport:
    """Sampled check of the Artstein drift V' <= -V^2/15, plus a sweep next to x1 = 0."""
    rng = np.random.default_rng(seed)
    x = sample_ball(rng, n_samples, 2, ball_radius)
    x = x[x[:, 0] != 0.0]
    sweep_x2 = np.linspace(-ball_radius, ball_radius, 2001)
    sweep = np.concatenate([
        np.stack([np.full_like(sweep_x2, 1e-8), sweep_x2], axis=1),
        np.stack([np.full_like(sweep_x2, -1e-8), sweep_x2], axis=1),
    ])
    pts = np.concatenate([x, sweep])
    slack = artstein_drift_slack(pts)
    poly = artstein_polynomial_slack(pts)
    explicit = -np.square(artstein_value(pts)) / 15.0 - np.sum(artstein_grad(pts) * artstein_field(pts), axis=1)
    # sign agreement is only meaningful away from exact zeros
    disagree = int(np.sum((np.abs(slack) > tol) & (np.sign(slack) != np.sign(poly))))
    i = int(np.argmin(slack))
    rep = CheckReport(
        name="artstein_drift",
        min_slack=float(slack[i]),
        passed=bool(slack[i] >= -tol and disagree == 0),
        n_samples=int(len(pts)),
        worst_point=pts[i].tolist(),
        details={
            "min_polynomial_slack": float(poly.min()),
            "sign_disagreements": disagree,
            "max_gap_explicit_vs_oracle": float(np.max(np.abs(explicit - slack))),
        },
    )
    if raise_on_fail and not rep.passed:
        bad = pts[slack < -tol][:10].tolist()
        raise VerificationError(f"Artstein drift violated at {len(bad)} points", violations=bad)
    return rep


SYSTEMS = {
    "selector": selector_system,
    "khalil": khalil_system,
    "artstein": artstein_system,
}


def get_system(name: str, **kwargs) -> BenchmarkSystem:
    try:
        return SYSTEMS[name](**kwargs)
    except KeyError:
        raise DomainError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
