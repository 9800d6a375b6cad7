"""Stochastic-approximation iteration, projection routine and Monte-Carlo ensembles.

The recursion is ``x_{k+1} = x_k + alpha_k (F(x_k) + w_k)`` with i.i.d.
Gaussian noise ``w_k ~ N(0, sigma^2 I)``.

Determinism
-----------
Replication ``i`` of an ensemble draws its noise from its own PCG64 stream
seeded with :func:`replication_seed` ``(base_seed, i)``. Noise is drawn for
every step (including projected steps) so streams never shift. Replications
are simulated in fixed-size blocks, and per-block statistics are merged in
block order. The result is therefore bit-identical for a given
configuration regardless of the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DomainError, NonFiniteError, ProblemSpec, StepSchedule

DIVERGENCE_GUARD = 1e12
BLOCK_REPS = 256
NOISE_CHUNK = 4096
MAX_RECORDED = 2000


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 1.0
    seed: int = 0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise DomainError("only Gaussian noise is supported")
        if not self.sigma >= 0:
            raise DomainError("sigma must be nonnegative")
        if int(self.seed) != self.seed or self.seed < 0:
            raise DomainError("seed must be a nonnegative integer")

    def constants(self, dim: int) -> tuple:
        """Second-moment constants (A, B) with E||w||^2 = A + B ||x||^2."""
        return dim * self.sigma**2, 0.0


@dataclass(frozen=True)
class ProjectionConfig:
    """Radial reset to the r/4 sphere; ``noise_envelope`` is kappa (None: 6 sigma sqrt(d))."""

    enabled: bool = False
    r: float = math.inf
    noise_envelope: Optional[float] = None

    def __post_init__(self):
        if self.enabled and not (self.r > 0 and math.isfinite(self.r)):
            raise DomainError("projection radius must be positive and finite")
        if self.noise_envelope is not None and not self.noise_envelope > 0:
            raise DomainError("noise envelope must be positive")

    def kappa(self, sigma: float, dim: int) -> float:
        if self.noise_envelope is not None:
            return float(self.noise_envelope)
        return 6.0 * sigma * math.sqrt(dim)

    def validate_for(self, p: ProblemSpec) -> None:
        if self.enabled and not self.r > 6.0 * p.x_star_norm:
            raise DomainError("projection radius must exceed 6 ||x*||")


@dataclass
class Trajectory:
    states: np.ndarray
    sq_errors: np.ndarray
    projections_applied: list
    seed: int


@dataclass
class EnsembleStats:
    """Replication mean and standard error of ||x_k - x*||^2 at the recorded k."""

    k: np.ndarray
    mse: np.ndarray
    stderr: np.ndarray
    n_reps: int
    base_seed: int
    stride: int
    k_max: int
    n_projections: int = 0
    captured: dict = field(default_factory=dict)

    def decimate(self, stride: int) -> "EnsembleStats":
        """Keep every point whose k is a multiple of ``stride`` (and the last point)."""
        if stride % self.stride:
            raise DomainError("new stride must be a multiple of the recorded stride")
        keep = (self.k % stride == 0) | (self.k == self.k_max)
        return EnsembleStats(self.k[keep], self.mse[keep], self.stderr[keep], self.n_reps,
                             self.base_seed, stride, self.k_max, self.n_projections, self.captured)


def default_stride(k_max: int) -> int:
    return max(1, math.ceil(k_max / MAX_RECORDED))


def replication_seed(base_seed: int, i: int) -> int:
    """64-bit seed of replication i, hashed from (base_seed, i)."""
    ss = np.random.SeedSequence([int(base_seed), int(i)])
    return int(ss.generate_state(1, np.uint64)[0])


def default_workers() -> int:
    cap = os.environ.get("SA_LAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise DomainError("SA_LAB_THREADS must be an integer") from None
    return n


def _row_norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _check_finite(x: np.ndarray, k: int, offset: int = 0) -> None:
    bad = ~np.all(np.isfinite(x) & (np.abs(x) <= DIVERGENCE_GUARD), axis=-1)
    if np.any(bad):
        rep = int(np.flatnonzero(np.atleast_1d(bad))[0]) + offset
        raise NonFiniteError(f"iterate diverged at k={k} (replication {rep})", k=k, replication=rep)


def sa_step(x, alpha_k: float, F, w) -> np.ndarray:
    """One SA update x + alpha_k (F(x) + w)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise DomainError("x and w must have the same shape")
    with np.errstate(invalid="ignore", over="ignore"):
        out = x + alpha_k * (F(x) + w)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite SA step")
    return out


def project_if_needed(x_next_mean, x_next, x_cur, alpha_k: float, cfg: ProjectionConfig,
                      sigma: float = 1.0):
    """Apply the projection rule row-wise.

    ``x_next_mean`` is ``x_cur + alpha_k F(x_cur)`` and ``x_next`` the noisy
    update. Rows with ``||x_next_mean|| + alpha_k kappa > r`` are replaced by
    ``(r/4) x_cur / ||x_cur||`` (0 stays 0). Returns ``(state, projected_mask)``.
    """
    x_next = np.asarray(x_next, dtype=float)
    if not cfg.enabled:
        return x_next, np.zeros(x_next.shape[:-1], dtype=bool)
    x_cur = np.asarray(x_cur, dtype=float)
    kappa = cfg.kappa(sigma, x_cur.shape[-1])
    trig = _row_norm(np.asarray(x_next_mean, dtype=float)) + alpha_k * kappa > cfg.r
    if not np.any(trig):
        return x_next, trig
    nx = _row_norm(x_cur)[..., None]
    target = np.where(nx > 0, (0.25 * cfg.r) * x_cur / np.where(nx > 0, nx, 1.0), 0.0)
    return np.where(trig[..., None], target, x_next), trig


def _recorded_ks(k_max: int, stride: int) -> np.ndarray:
    ks = np.arange(0, k_max + 1, stride)
    if ks[-1] != k_max:
        ks = np.append(ks, k_max)
    return ks


@dataclass
class _BlockResult:
    count: int
    mean: np.ndarray
    m2: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    n_projections: int
    projections: list
    states: Optional[np.ndarray]
    captured: dict


def _simulate_block(p: ProblemSpec, s: StepSchedule, proj: ProjectionConfig, sigma: float,
                    x0: np.ndarray, k_max: int, seeds: Sequence[int], ks: np.ndarray,
                    offset: int = 0, record_states: bool = False,
                    capture: Sequence[int] = ()) -> _BlockResult:
    n, d = len(seeds), p.dim
    gens = [np.random.Generator(np.random.PCG64(sd)) for sd in seeds]
    alphas = s.alpha / np.power(np.arange(k_max, dtype=float) + s.K, s.xi)
    kappa = proj.kappa(sigma, d) if proj.enabled else 0.0
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    x_star = p.x_star
    F = p.dynamics

    n_rec = len(ks)
    mean = np.empty(n_rec)
    m2 = np.empty(n_rec)
    vmin = np.empty(n_rec)
    vmax = np.empty(n_rec)
    states = np.empty((k_max + 1, n, d)) if record_states else None
    capture = set(int(c) for c in capture)
    captured = {}
    projections = []
    n_proj = 0
    rec_i = 0

    def record(k, x):
        nonlocal rec_i
        if rec_i < n_rec and ks[rec_i] == k:
            e = x - x_star
            v = np.sum(e * e, axis=1)
            mu = np.sum(v) / n
            mean[rec_i] = mu
            m2[rec_i] = np.sum((v - mu) ** 2)
            vmin[rec_i] = v.min()
            vmax[rec_i] = v.max()
            rec_i += 1
        if record_states:
            states[k] = x
        if k in capture:
            captured[k] = x.copy()

    noise = None
    for k in range(k_max):
        record(k, x)
        j = k % NOISE_CHUNK
        if j == 0:
            m = min(NOISE_CHUNK, k_max - k)
            if sigma > 0:
                noise = np.stack([g.standard_normal((m, d)) for g in gens], axis=1) * sigma
            else:
                noise = np.zeros((m, n, d))
        a = alphas[k]
        mean_next = x + a * F(x)
        nxt = mean_next + a * noise[j]
        if proj.enabled:
            nxt, trig = project_if_needed(mean_next, nxt, x, a, proj, sigma)
            if np.any(trig):
                hit = np.flatnonzero(trig)
                n_proj += hit.size
                if record_states:
                    projections.extend(k + 1 for _ in hit)
        _check_finite(nxt, k + 1, offset)
        x = nxt
    record(k_max, x)
    return _BlockResult(n, mean, m2, vmin, vmax, n_proj, projections, states, captured)


def _merge(blocks: Sequence[_BlockResult]):
    """Chan's parallel merge of per-block mean / M2, in block order."""
    count = blocks[0].count
    mean = blocks[0].mean.copy()
    m2 = blocks[0].m2.copy()
    vmin = blocks[0].vmin.copy()
    vmax = blocks[0].vmax.copy()
    for b in blocks[1:]:
        tot = count + b.count
        delta = b.mean - mean
        mean = mean + delta * (b.count / tot)
        m2 = m2 + b.m2 + delta * delta * (count * b.count / tot)
        vmin = np.minimum(vmin, b.vmin)
        vmax = np.maximum(vmax, b.vmax)
        count = tot
    return count, mean, m2, vmin, vmax


def _validate(p: ProblemSpec, proj: ProjectionConfig, x0, k_max: int) -> np.ndarray:
    if int(k_max) != k_max or k_max < 1:
        raise DomainError("k_max must be a positive integer")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (p.dim,):
        raise DomainError(f"x0 must have length {p.dim}")
    proj.validate_for(p)
    return x0


def run_trajectory(p: ProblemSpec, s: StepSchedule, proj: ProjectionConfig, noise: NoiseModel,
                   x0, k_max: int) -> Trajectory:
    """Run a single SA path and record every state."""
    x0 = _validate(p, proj, x0, k_max)
    ks = np.arange(k_max + 1)
    res = _simulate_block(p, s, proj, noise.sigma, x0, int(k_max), [noise.seed], ks,
                          record_states=True)
    states = res.states[:, 0, :]
    e = states - p.x_star
    return Trajectory(states, np.sum(e * e, axis=1), res.projections, noise.seed)


def run_ensemble(p: ProblemSpec, s: StepSchedule, proj: ProjectionConfig, noise: NoiseModel,
                 x0, k_max: int, n_reps: int, base_seed: int, stride: Optional[int] = None,
                 workers: Optional[int] = None, capture: Sequence[int] = ()) -> EnsembleStats:
    """Monte-Carlo estimate of E||x_k - x*||^2 over ``n_reps`` independent paths.

    ``noise.sigma`` sets the noise level; seeds come from ``base_seed``.
    ``capture`` lists iterations whose full replication states are returned
    in ``EnsembleStats.captured``.
    """
    x0 = _validate(p, proj, x0, k_max)
    if int(n_reps) != n_reps or n_reps < 1:
        raise DomainError("n_reps must be a positive integer")
    stride = default_stride(k_max) if stride is None else int(stride)
    if stride < 1:
        raise DomainError("stride must be >= 1")
    ks = _recorded_ks(int(k_max), stride)
    seeds = [replication_seed(base_seed, i) for i in range(n_reps)]
    starts = list(range(0, n_reps, BLOCK_REPS))

    def job(lo):
        return _simulate_block(p, s, proj, noise.sigma, x0, int(k_max), seeds[lo:lo + BLOCK_REPS],
                               ks, offset=lo, capture=capture)

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(starts))) as pool:
            blocks = list(pool.map(job, starts))
    else:
        blocks = [job(lo) for lo in starts]

    count, mean, m2, vmin, vmax = _merge(blocks)
    if count > 1:
        var = np.maximum(m2, 0.0) / (count - 1)
        var = np.where(vmin == vmax, 0.0, var)
        stderr = np.sqrt(var / count)
    else:
        stderr = np.zeros_like(mean)
    captured = {k: np.concatenate([b.captured[k] for b in blocks]) for k in blocks[0].captured}
    return EnsembleStats(ks, mean, stderr, int(n_reps), int(base_seed), stride, int(k_max),
                         sum(b.n_projections for b in blocks), captured)
