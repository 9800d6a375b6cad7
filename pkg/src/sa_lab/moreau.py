"""Proximal operator, Moreau envelope and numerical checks of the envelope lemmas.

All routines accept a single point of shape ``(d,)`` or a batch ``(n, d)``
and return matching shapes. The envelope is taken of the rescaled Lyapunov
function ``R = V^(2/a)``, which has quadratic growth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConvergenceError, DomainError, LyapunovSpec, Oracle

SLACK_TOL = 1e-6


@dataclass(frozen=True)
class RescaledLyapunov:
    """R = V^(2/a) with its gradient selector and quadratic-growth constants.

    ``C1``/``C2`` are the rescaled constants ``C1a^(2/a)``/``C2a^(2/a)`` and
    ``G_M`` bounds ``||grad R(x)|| <= G_M ||x - x*||``.
    """

    value: Oracle
    grad: Oracle
    x_star: np.ndarray
    a: float
    c: float
    gamma: float
    C1a: float
    C2a: float
    C1: float
    C2: float
    G_M: float

    def __call__(self, x):
        return self.value(x)

    @property
    def sandwich_factor(self) -> float:
        return self.C2 / self.C1


def rescale_lyapunov(V: LyapunovSpec, x_star=None) -> RescaledLyapunov:
    if not V.a > 0:
        raise DomainError("a must be positive")
    a = float(V.a)
    p = 2.0 / a
    # a scalar 0 broadcasts as the origin when x* is not given
    x_star = np.asarray(0.0 if x_star is None else x_star, dtype=float)

    if a == 2.0:
        value, grad = V.value, V.grad_select
    else:
        def value(x):
            return np.power(np.maximum(V.value(x), 0.0), p)

        def grad(x):
            v = np.maximum(V.value(x), 0.0)
            scale = np.where(v > 0, p * np.power(np.where(v > 0, v, 1.0), p - 1.0), 0.0)
            return scale[..., None] * V.grad_select(x)

    G_M = p * V.G * V.C2a ** (p - 1.0)
    return RescaledLyapunov(value, grad, x_star, a, float(V.c), float(V.gamma), float(V.C1a),
                            float(V.C2a), V.C1a**p, V.C2a**p, G_M)


def quadratic_lyapunov(q: float, x_star) -> RescaledLyapunov:
    """R(u) = q ||u - x*||^2 as a rescaled Lyapunov function (a = 2, c = 1)."""
    x_star = np.asarray(x_star, dtype=float)

    def value(x):
        e = np.asarray(x, dtype=float) - x_star
        return q * np.sum(e * e, axis=-1)

    def grad(x):
        return 2.0 * q * (np.asarray(x, dtype=float) - x_star)

    return RescaledLyapunov(value, grad, x_star, 2.0, 1.0, 1.0, q, q, q, q, 2.0 * q)


@dataclass(frozen=True)
class ProxSolverConfig:
    """Prox solver settings; ``tol`` bounds ||grad phi(u)||, the error of the returned envelope gradient."""

    max_iters: int = 5000
    tol: float = 1e-8
    multistart_count: int = 4
    multistart_radius: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.multistart_count < 1:
            raise DomainError("multistart_count must be >= 1")
        if not self.multistart_radius > 0:
            raise DomainError("multistart_radius must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")


DEFAULT_PROX = ProxSolverConfig()


@dataclass
class ProxResult:
    minimizer_u: np.ndarray
    envelope_value: np.ndarray
    grad: np.ndarray
    solver_iters: np.ndarray
    residual: np.ndarray


def _descend(R: RescaledLyapunov, mu: float, x: np.ndarray, u: np.ndarray, cfg: ProxSolverConfig):
    """Backtracking gradient descent on phi(u) = R(u) + ||u - x||^2 / (2 mu), row-wise."""
    n = u.shape[0]
    L = np.ones(n)
    phi, g = _objective(R, mu, x, u)
    gn = np.sqrt(np.sum(g * g, axis=1))
    iters = np.zeros(n, dtype=int)
    for _ in range(cfg.max_iters):
        active = gn > cfg.tol
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        step = 1.0 / (L[idx] + 1.0 / mu)
        u_new = u[idx] - step[:, None] * g[idx]
        phi_new, g_new = _objective(R, mu, x[idx], u_new)
        gn_new = np.sqrt(np.sum(g_new * g_new, axis=1))
        armijo = phi_new <= phi[idx] - 0.5 * step * gn[idx] ** 2
        # near the optimum phi is flat to roundoff; fall back to the gradient contraction
        # that 1/mu-strong convexity of phi guarantees for a short enough step
        flat = np.abs(phi_new - phi[idx]) <= 1e-13 * np.maximum(1.0, np.abs(phi[idx]))
        stalled = flat & (gn_new <= (1.0 - 0.5 * step / mu) * gn[idx])
        ok = (armijo & ~flat) | stalled
        acc = idx[ok]
        u[acc], phi[acc], g[acc], gn[acc] = u_new[ok], phi_new[ok], g_new[ok], gn_new[ok]
        iters[acc] += 1
        L[acc] *= 0.8
        L[idx[~ok]] = np.maximum(L[idx[~ok]], 1e-3) * 2.0
    return u, phi, g, gn, iters


def _objective(R, mu, x, u):
    e = u - x
    return R.value(u) + np.sum(e * e, axis=1) / (2.0 * mu), R.grad(u) + e / mu


def prox(R: RescaledLyapunov, mu: float, x, cfg: ProxSolverConfig = DEFAULT_PROX) -> ProxResult:
    """Numerical prox_{mu R}(x) with multistart; fields are batched like ``x``.

    Starts are x itself plus ``multistart_count - 1`` seeded perturbations.
    The lowest-objective converged start wins; ConvergenceError is raised if
    some point has no converged start.
    """
    if not mu > 0:
        raise DomainError("mu must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    n, d = X.shape
    m = cfg.multistart_count
    rng = np.random.default_rng(cfg.seed)
    offsets = np.zeros((m, n, d))
    if m > 1:
        dirs = rng.standard_normal((m - 1, n, d))
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        offsets[1:] = cfg.multistart_radius * dirs
    starts = (X[None, :, :] + offsets).reshape(-1, d)
    xs = np.tile(X, (m, 1))
    u, phi, _, res, iters = _descend(R, mu, xs, starts.copy(), cfg)
    u = u.reshape(m, n, d)
    phi = phi.reshape(m, n)
    res = res.reshape(m, n)
    iters = iters.reshape(m, n)

    converged = res <= cfg.tol
    ranked = np.where(converged, phi, np.inf)
    best = np.argmin(ranked, axis=0)
    cols = np.arange(n)
    if not np.all(converged.any(axis=0)):
        bad = int(np.flatnonzero(~converged.any(axis=0))[0])
        j = int(np.argmin(res[:, bad]))
        raise ConvergenceError(
            f"prox did not converge at x={X[bad].tolist()} (residual {res[j, bad]:.3g})",
            best=u[j, bad].copy(),
        )
    U = u[best, cols]
    out = ProxResult(U, phi[best, cols], (X - U) / mu, iters.sum(axis=0), res[best, cols])
    if single:
        out = ProxResult(U[0], float(out.envelope_value[0]), out.grad[0], int(out.solver_iters[0]),
                         float(out.residual[0]))
    return out


def envelope_value(R, mu, x, cfg: ProxSolverConfig = DEFAULT_PROX):
    return prox(R, mu, x, cfg).envelope_value


def envelope_grad(R, mu, x, cfg: ProxSolverConfig = DEFAULT_PROX):
    return prox(R, mu, x, cfg).grad


def _dist(R, x):
    e = np.asarray(x, dtype=float) - R.x_star
    return np.sqrt(np.sum(e * e, axis=-1))


# ---------------------------------------------------------------------------
# Envelope inequality checks; each returns slacks that should be >= -tol


def check_sandwich(R: RescaledLyapunov, mu: float, x, cfg: ProxSolverConfig = DEFAULT_PROX):
    """Slacks of M <= R and R <= (C2/C1 + 2 C2 mu) M, as a pair."""
    M = prox(R, mu, x, cfg).envelope_value
    r = R.value(x)
    return r - M, (R.C2 / R.C1 + 2.0 * R.C2 * mu) * M - r


def envelope_mu_sensitivity(R: RescaledLyapunov, mu: float, mu_prime: float, x,
                            cfg: ProxSolverConfig = DEFAULT_PROX):
    """(mu' - mu) G_M^2 ||x - x*||^2 - (M_mu(x) - M_mu'(x)); equal parameters give 0."""
    if not 0 < mu <= mu_prime:
        raise DomainError("need 0 < mu <= mu_prime")
    M = prox(R, mu, x, cfg).envelope_value
    Mp = M if mu_prime == mu else prox(R, mu_prime, x, cfg).envelope_value
    return (mu_prime - mu) * R.G_M**2 * _dist(R, x) ** 2 - (M - Mp)


def check_u_lower_bound(R: RescaledLyapunov, mu: float, x, cfg: ProxSolverConfig = DEFAULT_PROX):
    """||u - x*|| - ||x - x*|| / (1 + mu G_M)."""
    if not mu > 0:
        raise DomainError("mu must be positive")
    u = prox(R, mu, x, cfg).minimizer_u
    return _dist(R, u) - _dist(R, x) / (1.0 + mu * R.G_M)


def check_gradient_growth(R: RescaledLyapunov, mu: float, x, cfg: ProxSolverConfig = DEFAULT_PROX):
    """G_M ||u - x*|| - ||grad M(x)||."""
    res = prox(R, mu, x, cfg)
    g = np.asarray(res.grad)
    return R.G_M * _dist(R, res.minimizer_u) - np.sqrt(np.sum(g * g, axis=-1))


def _inner(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def check_drift_exp(R: RescaledLyapunov, F: Oracle, mu: float, x, gamma_M: float,
                    cfg: ProxSolverConfig = DEFAULT_PROX):
    """-gamma_M M(x) - <grad M(x), F(x)>."""
    res = prox(R, mu, x, cfg)
    return -gamma_M * res.envelope_value - _inner(res.grad, F(np.asarray(x, dtype=float)))


def subexp_drift_bound(R: RescaledLyapunov, mu: float, M, C: float):
    """Two-term upper bound on <grad M, F> in the sub-exponential case."""
    a, c = R.a, R.c
    power = a * (c - 1.0) / 2.0 + 1.0
    coef = 2.0 * R.gamma * (R.C1a / R.C2a) ** (c - 1.0 + 2.0 / a) / (a * (1.0 + mu * R.G_M) ** 2)
    lin = mu * C * R.G_M * (R.C2 / R.C1 + 2.0 * R.C2 * mu)
    M = np.asarray(M, dtype=float)
    return -coef * np.power(M, power) + lin * M


def check_drift_subexp(R: RescaledLyapunov, F: Oracle, mu: float, x, C: float,
                       cfg: ProxSolverConfig = DEFAULT_PROX):
    """Slack of the sub-exponential envelope drift bound at x."""
    res = prox(R, mu, x, cfg)
    inner = _inner(res.grad, F(np.asarray(x, dtype=float)))
    return subexp_drift_bound(R, mu, res.envelope_value, C) - inner


def rescaled_drift_slack(R: RescaledLyapunov, F: Oracle, x):
    """-(2 gamma / a) R^(a(c-1)/2 + 1) - <grad R, F> for the unsmoothed R."""
    x = np.asarray(x, dtype=float)
    power = R.a * (R.c - 1.0) / 2.0 + 1.0
    return -(2.0 * R.gamma / R.a) * np.power(R.value(x), power) - _inner(R.grad(x), F(x))


def smoothness_ratio(R: RescaledLyapunov, mu: float, x, y, cfg: ProxSolverConfig = DEFAULT_PROX):
    """mu ||grad M(x) - grad M(y)|| / ||x - y||, which is <= 1 for convex R."""
    gx = np.asarray(prox(R, mu, x, cfg).grad)
    gy = np.asarray(prox(R, mu, y, cfg).grad)
    dx = np.sqrt(np.sum((np.asarray(x) - np.asarray(y)) ** 2, axis=-1))
    return mu * np.sqrt(np.sum((gx - gy) ** 2, axis=-1)) / dx


def fd_gradient(R: RescaledLyapunov, mu: float, x, h: float = 1e-5,
                cfg: ProxSolverConfig = DEFAULT_PROX):
    """Central finite differences of the envelope; returns (gradient, prox at stencil points)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = X.shape
    eye = np.eye(d) * h
    stencil = np.concatenate([X[:, None, :] + eye[None], X[:, None, :] - eye[None]], axis=1)
    res = prox(R, mu, stencil.reshape(-1, d), cfg)
    M = res.envelope_value.reshape(n, 2 * d)
    g = (M[:, :d] - M[:, d:]) / (2.0 * h)
    return (g[0] if np.ndim(x) == 1 else g), res.minimizer_u.reshape(n, 2 * d, d)


def quadratic_prox_closed_form(q: float, mu: float, x, x_star):
    """prox of q ||u - x*||^2: u = (x + 2 mu q x*) / (1 + 2 mu q)."""
    x = np.asarray(x, dtype=float)
    return (x + 2.0 * mu * q * np.asarray(x_star, dtype=float)) / (1.0 + 2.0 * mu * q)


def grid_prox(R: RescaledLyapunov, mu: float, x, radius: float, n: int = 400):
    """Brute-force minimizer of R(u) + ||u - x||^2 / (2 mu) over an n x n grid around x."""
    x = np.asarray(x, dtype=float)
    t = np.linspace(-radius, radius, n)
    U = x + np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    inside = np.sum((U - x) ** 2, axis=1) <= radius * radius
    U = U[inside]
    phi = R.value(U) + np.sum((U - x) ** 2, axis=1) / (2.0 * mu)
    i = int(np.argmin(phi))
    return U[i], float(phi[i]), 2.0 * radius / (n - 1)


@dataclass
class PropertyReport:
    name: str
    min_slack: float
    passed: bool
    n_samples: int
    detail: Optional[str] = None


def property_suite(R: RescaledLyapunov, mu: float, points, piece=None, seed: int = 0,
                   cfg: ProxSolverConfig = DEFAULT_PROX, tol: float = SLACK_TOL) -> list:
    """Envelope property checks on a batch of points.

    ``piece`` labels the convex pieces of R; smoothness and finite-difference
    checks use only point pairs / stencils whose minimizers share a piece.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    rng = np.random.default_rng(seed)
    out = []
    res = prox(R, mu, pts, cfg)
    r = R.value(pts)
    M = res.envelope_value
    out.append(PropertyReport("envelope_below_function", float(np.min(r - M)), bool(np.all(r - M >= -tol)), n))

    upper = (R.C2 / R.C1 + 2.0 * R.C2 * mu) * M - r
    out.append(PropertyReport("sandwich_upper", float(np.min(upper)), bool(np.all(upper >= -tol)), n))

    ident = np.max(np.abs(res.grad - (pts - res.minimizer_u) / mu))
    out.append(PropertyReport("gradient_identity", -float(ident), bool(ident <= 1e-9), n))

    fd, stencil_u = fd_gradient(R, mu, pts, cfg=cfg)
    keep = np.ones(n, dtype=bool)
    if piece is not None:
        lab = piece(res.minimizer_u)
        keep = np.all(piece(stencil_u) == lab[:, None], axis=1)
    gnorm = np.linalg.norm(res.grad, axis=1)
    err = np.linalg.norm(fd - res.grad, axis=1) / np.maximum(gnorm, 1e-12)
    err = np.where(gnorm > 1e-8, err, 0.0)[keep]
    out.append(PropertyReport("gradient_vs_finite_differences", -float(err.max()),
                              bool(err.max() <= 1e-4), int(keep.sum())))

    other = pts + rng.standard_normal(pts.shape) * 0.5
    ratio = smoothness_ratio(R, mu, pts, other, cfg)
    if piece is not None:
        same = piece(res.minimizer_u) == piece(prox(R, mu, other, cfg).minimizer_u)
        ratio = ratio[same]
    out.append(PropertyReport("one_over_mu_smoothness", float(1.0 + 1e-6 - ratio.max()),
                              bool(ratio.max() <= 1.0 + 1e-6), int(ratio.size)))

    sens = envelope_mu_sensitivity(R, mu, 2.0 * mu, pts, cfg)
    out.append(PropertyReport("mu_sensitivity", float(sens.min()), bool(sens.min() >= -tol), n))

    growth = R.G_M * _dist(R, res.minimizer_u) - gnorm
    out.append(PropertyReport("envelope_gradient_growth", float(growth.min()), bool(growth.min() >= -tol), n))

    ulb = _dist(R, res.minimizer_u) - _dist(R, pts) / (1.0 + mu * R.G_M)
    out.append(PropertyReport("u_lower_bound", float(ulb.min()), bool(ulb.min() >= -tol), n))
    return out


def quadratic_oracle_error(q: float, mu: float, points, x_star, cfg: ProxSolverConfig = DEFAULT_PROX) -> float:
    """Max distance between the numerical prox of q ||u - x*||^2 and its closed form."""
    R = quadratic_lyapunov(q, x_star)
    u = prox(R, mu, points, cfg).minimizer_u
    return float(np.max(np.linalg.norm(u - quadratic_prox_closed_form(q, mu, points, x_star), axis=-1)))
