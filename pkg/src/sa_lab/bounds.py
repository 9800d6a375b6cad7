"""Finite-time mean-square error bounds for the four stability regimes.

Each evaluator returns the full transient + noise bound on E||x_k - x*||^2
at one k or an array of k. Constants follow the fully explicit forms (with
all noise constants written out), selected by xi and by the step-size
branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .core import DomainError, Regime, SearchError, compute_K

BRANCH_RTOL = 1e-12


def gamma_M(mu: float, a: float, gamma: float, C: float, C1a: float, C2a: float, G: float,
            c: float = 1.0) -> float:
    """Drift rate of the Moreau envelope in the exponential case (negative when mu is too large)."""
    if not mu > 0:
        raise DomainError("mu must be positive")
    if c != 1:
        raise DomainError("gamma_M is defined for c = 1")
    G_M = (2.0 / a) * G * C2a ** (2.0 / a - 1.0)
    inner = 2.0 * gamma * C1a ** (2.0 / a) / (a * (1.0 + mu * G_M) ** 2) - mu * C * G_M**2
    return inner * C2a ** (-2.0 / a)


def choose_mu_exp(a: float, gamma: float, C: float, C1a: float, C2a: float, G: float,
                  mu_cap: float = 1.0, mu_min: Optional[float] = None):
    """Smoothing parameter maximizing gamma_M on (0, mu_cap]; returns (mu, gamma_M).

    The search runs a bounded Brent search over log(mu) in [mu_min, mu_cap]
    and compares the result with both ends. The default floor mu_min =
    1e-6 mu_cap keeps the envelope gradient (x - u)/mu accurate in double
    precision.
    """
    if not gamma > 0:
        raise SearchError("gamma must be positive for a negative drift")
    if min(C1a, C2a, G) <= 0 or C < 0:
        raise SearchError("constants must be positive")
    mu_min = 1e-6 * mu_cap if mu_min is None else mu_min

    def neg(t):
        return -gamma_M(math.exp(t), a, gamma, C, C1a, C2a, G)

    lo, hi = math.log(mu_min), math.log(mu_cap)
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    cands = [lo, hi, float(res.x)]
    t = min(cands, key=neg)
    mu = math.exp(t)
    gM = gamma_M(mu, a, gamma, C, C1a, C2a, G)
    if not gM > 0:
        raise SearchError(f"no positive gamma_M for mu in ({mu_min:g}, {mu_cap:g}]")
    return mu, gM


@dataclass(frozen=True)
class BoundParams:
    """Schedule, problem and Lyapunov constants for one bound evaluation.

    ``E0`` is ||x0 - x*||^2. ``mu`` is the smoothing parameter (the constant
    mu for NonsmoothExp, the schedule scale for NonsmoothSubexp). Derived
    constants are filled in on construction.
    """

    regime: Regime
    alpha: float
    xi: float
    K: float
    E0: float
    C1a: float
    C2a: float
    gamma: float
    C: float
    A: float
    B: float = 0.0
    a: float = 2.0
    c: float = 1.0
    L: Optional[float] = None
    G: Optional[float] = None
    x_star_norm: float = 0.0
    mu: Optional[float] = None
    # derived
    G_M: Optional[float] = field(default=None, init=False)
    gamma_M: Optional[float] = field(default=None, init=False)
    phi: Optional[float] = field(default=None, init=False)
    tau: Optional[float] = field(default=None, init=False)
    d_ac: Optional[float] = field(default=None, init=False)
    d: Optional[float] = field(default=None, init=False)
    mu0: Optional[float] = field(default=None, init=False)
    N_C: Optional[float] = field(default=None, init=False)
    nu1: Optional[float] = field(default=None, init=False)
    nu2: Optional[float] = field(default=None, init=False)
    nu3: Optional[float] = field(default=None, init=False)
    nu4: Optional[float] = field(default=None, init=False)
    phi_ns: Optional[float] = field(default=None, init=False)
    omega: Optional[float] = field(default=None, init=False)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("regime", Regime(self.regime))
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not 0 <= self.xi <= 1:
            raise DomainError("xi must lie in [0, 1]")
        if not self.K >= 1:
            raise DomainError("K must be >= 1")
        if self.E0 < 0 or self.A < 0 or self.B < 0 or self.C < 0:
            raise DomainError("E0, A, B and C must be nonnegative")
        if not (0 < self.C1a <= self.C2a) or not self.gamma > 0:
            raise DomainError("need 0 < C1a <= C2a and gamma > 0")
        a, c = self.a, self.c
        d_ac = a * (c - 1.0) / 2.0 + 1.0
        set_("d_ac", d_ac)
        set_("d", 3.0 * d_ac / (3.0 * d_ac - 1.0))
        if self.G is not None:
            set_("G_M", (2.0 / a) * self.G * self.C2a ** (2.0 / a - 1.0))
        reg = self.regime

        if reg.smooth and self.L is None:
            raise DomainError("smooth regimes need L")
        if not reg.smooth and (self.G is None or self.mu is None):
            raise DomainError("nonsmooth regimes need G and mu")
        if self.mu is not None and not self.mu > 0:
            raise DomainError("mu must be positive")

        if reg is Regime.NONSMOOTH_EXP:
            set_("gamma_M", gamma_M(self.mu, a, self.gamma, self.C, self.C1a, self.C2a, self.G))
        if reg is Regime.SMOOTH_SUBEXP:
            A, g = self.A, self.gamma
            set_("phi", self.alpha ** (2 - 1 / c) * A ** (1 - 1 / c) * g ** (1 / c))
            if A > 0 or c == 1:
                set_("tau", (1.0 / ((2 * c - 1) * A ** (1 - 1 / c) * g ** (1 / c))) ** (c / (2 * c - 1)))
        if reg is Regime.NONSMOOTH_SUBEXP:
            self._nonsmooth_subexp_constants()

    def _nonsmooth_subexp_constants(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        a, c, C, B = self.a, self.c, self.C, self.B
        C1 = self.C1a ** (2.0 / a)
        C2 = self.C2a ** (2.0 / a)
        G_M = self.G_M
        mu0 = self.mu / self.K ** (0.5 * self.xi)
        N_C = (C * C + 1.0) * (self.A + 2.0 * B * self.x_star_norm**2)
        nu1 = C * G_M * (C2 / C1 + 2.0 * C2 * mu0)
        nu2 = G_M**2 * (1.0 / C1 + 2.0 * mu0)
        nu3 = (C * C + 1.0) * (2.0 * B + 1.0) * (mu0**2 * G_M**2 + 1.0) * (1.0 / C1 + 2.0 * mu0) / 2.0
        nu4 = (2.0 * self.gamma * (self.C1a / self.C2a) ** (c - 1.0 + 2.0 / a)
               / (a * (1.0 + mu0 * G_M) ** 2))
        d_ac = self.d_ac
        noise = (mu0**2 * G_M**2 + 1.0) * N_C / (2.0 * self.mu)
        phi = 0.5 * d_ac * self.alpha ** (2.0 - 1.0 / d_ac) * nu4 ** (1.0 / d_ac) * noise ** (1.0 - 1.0 / d_ac)
        omega = d_ac * self.alpha**2 * noise
        for k, v in dict(mu0=mu0, N_C=N_C, nu1=nu1, nu2=nu2, nu3=nu3, nu4=nu4, phi_ns=phi,
                         omega=omega).items():
            set_(k, v)

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if v is None:
                continue
            out[k] = v.value if isinstance(v, Regime) else float(v)
        return out


def _k(k):
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise DomainError("k must be nonnegative")
    return k


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def _near(x, y) -> bool:
    return math.isclose(x, y, rel_tol=BRANCH_RTOL, abs_tol=BRANCH_RTOL)


def _power_tail(rate: float, thresh: float, coef: float, n):
    """Noise term for a harmonic-type schedule.

    Returns coef/(thresh - rate) n^-rate, coef log(n) n^-thresh or
    e coef/(rate - thresh) n^-thresh depending on how ``rate`` compares with
    ``thresh``.
    """
    if _near(rate, thresh):
        return coef * np.log(n) / n**thresh
    if rate < thresh:
        return coef / (thresh - rate) / n**rate
    return math.e * coef / (rate - thresh) / n**thresh


def _require(p: BoundParams, regime: Regime):
    if p.regime is not regime:
        raise DomainError(f"parameters are for {p.regime.value}, not {regime.value}")


def _smooth_exp(p: BoundParams, k):
    k = _k(k)
    n = k + p.K
    ag = p.alpha * p.gamma
    ratio = p.C2a / p.C1a
    factor = p.L * (p.A + 2.0 * p.B * p.x_star_norm**2) / p.C1a
    if p.xi == 1:
        trans = ratio * p.E0 * (p.K / n) ** (ag / 2.0)
        noise = _power_tail(ag / 2.0, 1.0, 4.0 * p.alpha**2, n)
        return _out(trans + noise * factor)
    if p.xi == 0:
        base = 1.0 - ag / 2.0
        if base < 0:
            raise DomainError("constant step needs alpha * gamma <= 2")
        return _out(ratio * p.E0 * base**k + 2.0 * p.alpha / p.gamma * factor)
    e = 1.0 - p.xi
    trans = ratio * p.E0 * np.exp(-ag * (n**e - p.K**e) / (2.0 * e))
    return _out(trans + 4.0 * p.alpha / (p.gamma * n**p.xi) * factor)


def bound_smooth_exp(p: BoundParams, k):
    """Bound for a smooth Lyapunov function with exponential drift (c = 1)."""
    _require(p, Regime.SMOOTH_EXP)
    return _smooth_exp(p, k)


def smooth_subexp_alpha_limit(p: BoundParams) -> float:
    """Largest admissible alpha_0 for the sub-exponential one-iterate bound (c > 1)."""
    c = p.c
    return (p.C1a**c * (c - 1.0) ** c * p.A ** (c - 1.0) * p.gamma
            / (p.L**c * (p.C * p.C + 2.0 * p.B) ** c))


def bound_smooth_subexp(p: BoundParams, k, strict: bool = True):
    """Bound for a smooth Lyapunov function with sub-exponential drift (c >= 1).

    With ``strict`` the step-size smallness condition of the one-iterate
    bound is enforced; otherwise the formula is evaluated regardless (see
    :func:`preconditions`).
    """
    _require(p, Regime.SMOOTH_SUBEXP)
    c = p.c
    if c == 1:
        return _smooth_exp(replace(p, regime=Regime.SMOOTH_EXP), k)
    xi_max = c / (2.0 * c - 1.0)
    if p.xi > xi_max * (1 + 1e-15):
        raise DomainError(f"xi must be <= c/(2c-1) = {xi_max:g}")
    if not p.A > 0:
        raise DomainError("the sub-exponential bound needs A > 0")
    alpha0 = p.alpha / p.K**p.xi
    if strict and alpha0 > smooth_subexp_alpha_limit(p):
        raise DomainError(f"alpha_0 = {alpha0:g} exceeds the admissible {smooth_subexp_alpha_limit(p):g}")

    k = _k(k)
    n = k + p.K
    phi = p.phi
    ratio = p.C2a / p.C1a
    factor = p.L * (c * p.A + 2.0 * p.B * p.x_star_norm**2) / p.C1a
    Ag = p.A ** (1.0 - 1.0 / c) * p.gamma ** (1.0 / c)
    if _near(p.xi, xi_max):
        dprime = 2.0 * c / (2.0 * c - 1.0)
        trans = ratio * p.E0 * (p.K / n) ** phi
        noise = _power_tail(phi, dprime - 1.0, 2.0**dprime * p.alpha**2, n)
        return _out(trans + noise * factor)
    if p.xi == 0:
        base = 1.0 - phi
        if base < 0:
            raise DomainError("constant step needs phi <= 1")
        return _out(ratio * p.E0 * base**k + p.alpha ** (1.0 / c) / Ag * factor)
    xp = (2.0 * c - 1.0) * p.xi / c
    e = 1.0 - xp
    trans = ratio * p.E0 * np.exp(-phi * (n**e - p.K**e) / e)
    noise = 2.0 * p.alpha ** (1.0 / c) / (Ag * n ** (p.xi / c))
    return _out(trans + noise * factor)


def bound_nonsmooth_exp(p: BoundParams, k):
    """Bound via the Moreau envelope of V^(2/a) with a constant smoothing parameter."""
    _require(p, Regime.NONSMOOTH_EXP)
    gM = p.gamma_M
    if not gM > 0:
        raise DomainError(f"gamma_M = {gM:g} is not positive; mu too large")
    k = _k(k)
    n = k + p.K
    C1 = p.C1a ** (2.0 / p.a)
    C2 = p.C2a ** (2.0 / p.a)
    P = 1.0 / C1 + 2.0 * p.mu
    pref = C2 * P * p.E0
    N = (p.A + 2.0 * p.B * p.x_star_norm**2) / p.mu
    ag = p.alpha * gM
    if p.xi == 1:
        trans = pref * (p.K / n) ** (ag / 2.0)
        noise = _power_tail(ag / 2.0, 1.0, 4.0 * p.alpha**2, n)
        return _out(trans + P * noise * N)
    if p.xi == 0:
        base = 1.0 - ag / 2.0
        if base < 0:
            raise DomainError("constant step needs alpha * gamma_M <= 2")
        return _out(pref * base**k + P * 2.0 * p.alpha * N / gM)
    e = 1.0 - p.xi
    trans = pref * np.exp(-ag * (n**e - p.K**e) / (2.0 * e))
    return _out(trans + 4.0 * p.alpha * P * N / (gM * n**p.xi))


def nonsmooth_subexp_xi_max(a: float, c: float) -> float:
    d_ac = a * (c - 1.0) / 2.0 + 1.0
    return 2.0 * d_ac / (3.0 * d_ac - 1.0)


def bound_nonsmooth_subexp(p: BoundParams, k):
    """Bound via a Moreau envelope whose smoothing parameter shrinks like (k+K)^(-xi/2)."""
    _require(p, Regime.NONSMOOTH_SUBEXP)
    xi_max = 2.0 * p.d / 3.0
    if p.xi > xi_max * (1 + 1e-15):
        raise DomainError(f"xi must be <= 2d/3 = {xi_max:g}")
    k = _k(k)
    n = k + p.K
    C1 = p.C1a ** (2.0 / p.a)
    C2 = p.C2a ** (2.0 / p.a)
    P = 1.0 / C1 + 2.0 * p.mu0
    pref = C2 * P * p.E0
    phi, omega, d_ac, d = p.phi_ns, p.omega, p.d_ac, p.d
    if _near(p.xi, xi_max):
        trans = pref * (p.K / n) ** phi
        noise = _power_tail(phi, d - 1.0, 2.0**d * p.alpha**1.5 * omega, n)
        return _out(trans + P * noise)
    if p.xi == 0:
        base = 1.0 - phi
        if base < 0:
            raise DomainError("constant step needs phi <= 1")
        return _out(pref * base**k + omega * P / phi)
    xp = (3.0 * d_ac - 1.0) * p.xi / (2.0 * d_ac)
    e = 1.0 - xp
    trans = pref * np.exp(-phi * (n**e - p.K**e) / e)
    return _out(trans + 2.0 * p.alpha**1.5 * omega * P / (phi * n ** (p.xi / (2.0 * d_ac))))


EVALUATORS = {
    Regime.SMOOTH_EXP: bound_smooth_exp,
    Regime.NONSMOOTH_EXP: bound_nonsmooth_exp,
    Regime.SMOOTH_SUBEXP: bound_smooth_subexp,
    Regime.NONSMOOTH_SUBEXP: bound_nonsmooth_subexp,
}


def evaluate_bound(p: BoundParams, k, strict: bool = True):
    if p.regime is Regime.SMOOTH_SUBEXP:
        return bound_smooth_subexp(p, k, strict=strict)
    return EVALUATORS[p.regime](p, k)


def theorem_K(p: BoundParams) -> float:
    """Offset K the finite-time statements assume for this regime."""
    if p.regime is Regime.SMOOTH_SUBEXP and p.c > 1:
        xp = (2.0 * p.c - 1.0) * p.xi / p.c
        if xp >= 1 or p.xi == 0 or p.phi == 0:
            return 1.0  # phi = 0 only without noise, where no offset is needed
        return max(1.0, (2.0 * xp / ((2.0 * p.c - 1.0) * p.phi)) ** (1.0 / (1.0 - xp)))
    g = p.gamma_M if p.regime is Regime.NONSMOOTH_EXP else p.gamma
    if not g or g <= 0:
        return math.inf
    return compute_K(p.regime, p.alpha, p.xi, p.C, p.B, g)


def preconditions(p: BoundParams) -> list:
    """Human-readable list of theorem hypotheses that these parameters violate."""
    out = []
    K_req = theorem_K(p)
    if p.regime is not Regime.NONSMOOTH_SUBEXP and p.K < K_req:
        out.append(f"K = {p.K:g} is below the theorem offset {K_req:g}")
    if p.regime is Regime.NONSMOOTH_EXP and not p.gamma_M > 0:
        out.append(f"gamma_M = {p.gamma_M:g} is not positive")
    if p.regime is Regime.SMOOTH_SUBEXP and p.c > 1:
        lim = smooth_subexp_alpha_limit(p) if p.A > 0 else 0.0
        alpha0 = p.alpha / p.K**p.xi
        if alpha0 > lim:
            out.append(f"alpha_0 = {alpha0:g} exceeds the one-iterate limit {lim:g}")
        if p.xi > p.c / (2 * p.c - 1):
            out.append("xi exceeds c/(2c-1)")
    if p.regime is Regime.NONSMOOTH_SUBEXP and p.xi > 2 * p.d / 3:
        out.append("xi exceeds 2d/3")
    return out


def params_for_system(system, step=None, smoothing=None, x0=None, sigma: Optional[float] = None,
                      C: Optional[float] = None) -> BoundParams:
    """BoundParams for a benchmark system and (optionally overridden) schedules."""
    rec = system.recommended
    step = rec.step if step is None else step
    smoothing = rec.smoothing if smoothing is None else smoothing
    x0 = np.asarray(rec.x0 if x0 is None else x0, dtype=float)
    sigma = rec.sigma if sigma is None else sigma
    prob = system.problem.with_noise(sigma)
    V = system.lyapunov
    E0 = float(np.sum((x0 - prob.x_star) ** 2))
    mu = None
    if not V.regime.smooth:
        if smoothing is None:
            raise DomainError("nonsmooth regimes need a smoothing schedule")
        mu = smoothing.mu
    return BoundParams(
        regime=V.regime, alpha=step.alpha, xi=step.xi, K=step.K, E0=E0, C1a=V.C1a, C2a=V.C2a,
        gamma=V.gamma, C=prob.lipschitz_C if C is None else C, A=prob.noise_A, B=prob.noise_B,
        a=V.a, c=V.c, L=V.L, G=None if V.regime.smooth else V.G, x_star_norm=prob.x_star_norm,
        mu=mu,
    )
