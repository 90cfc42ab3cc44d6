"""Geodesic random-walk Metropolis-Hastings and chain diagnostics.

Proposals are ``y = exp_x(step * xi)`` with ``xi`` standard normal in the
orthonormal frame at ``x``. On the homogeneous models supported here this
proposal is symmetric, so the acceptance ratio is ``exp(phi(x) - phi(y))``.

Several independent chains can run side by side. Each chain draws from its
own stream spawned from ``SeedSequence(seed)``, so chain ``c`` produces the
same output whatever the number of chains next to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import LengthMismatch, MixedManifolds, NeverAccepted, TooShort
from .geometry import CIRCLE, EUCLIDEAN, HYPERBOLIC, SPHERE, TORUS, ManifoldSpec
from .measures import TargetDensity


@dataclass(frozen=True)
class ChainConfig:
    n_samples: int
    step: float | None = None
    burn_in: int = 500
    thinning: int = 1
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1 or self.n_chains < 1:
            raise ValueError("thinning and n_chains must be >= 1")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")


@dataclass(eq=False)
class SampleSet:
    manifold: ManifoldSpec
    points: np.ndarray
    meta: dict = field(default_factory=dict)
    chain: np.ndarray | None = None

    def __len__(self):
        return len(self.points)


def default_step(spec: ManifoldSpec) -> float:
    """Proposal scale giving roughly 50% acceptance for unit-scale targets."""
    if spec.kind == CIRCLE:
        return 2.0
    if spec.kind in (TORUS, EUCLIDEAN):
        return 2.4 / math.sqrt(spec.dim)
    return 1.2 / math.sqrt(spec.dim / 2.0)


SUPPORTED = (CIRCLE, SPHERE, HYPERBOLIC, TORUS, EUCLIDEAN)


def geodesic_rw_mh(t: TargetDensity, cfg: ChainConfig, init=None) -> SampleSet:
    """Sample ``t`` with geodesic random-walk Metropolis-Hastings.

    Proposals leaving the support or entering a singular guard band of the
    density are rejected. Samples are stored chain by chain.
    """
    spec = t.manifold
    if spec.kind not in SUPPORTED:
        raise ValueError(f"no sampler for {spec.label}")
    m = spec.model
    step = cfg.step or default_step(spec)
    C = cfg.n_chains
    per_chain = -(-cfg.n_samples // C)
    steps = cfg.burn_in + per_chain * cfg.thinning

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(C)]
    xi = np.stack([r.standard_normal((steps, m.n)) for r in streams], axis=1)
    logu = np.log(np.stack([r.random(steps) for r in streams], axis=1))

    x0 = spec.origin() if init is None else np.asarray(init, dtype=float)
    X = np.broadcast_to(x0, (C, m.D)).copy()
    t.check_support(X)
    phi = t.family.phi(spec, X)
    out = np.empty((per_chain, C, m.D))
    accepted = 0
    kept = 0
    for s in range(steps):
        F = m.frame(X)
        Y = m.exp(X, step * np.einsum("ci,cid->cd", xi[s], F))
        ok = t.support_mask(Y) & ~t.singular_mask(Y)
        phiY = np.full(C, np.inf)
        if np.any(ok):
            phiY[ok] = t.family.phi(spec, Y[ok])
        acc = ok & (logu[s] < phi - phiY)
        X = np.where(acc[:, None], Y, X)
        phi = np.where(acc, phiY, phi)
        if s >= cfg.burn_in:
            accepted += int(np.sum(acc))
            if (s - cfg.burn_in + 1) % cfg.thinning == 0:
                out[kept] = X
                kept += 1
    post = steps - cfg.burn_in
    rate = accepted / (post * C) if post else 0.0
    if post and accepted == 0:
        raise NeverAccepted(f"no proposal accepted after burn-in (step={step})")
    pts = out.transpose(1, 0, 2).reshape(-1, m.D)[: cfg.n_samples]
    chain = np.repeat(np.arange(C), per_chain)[: cfg.n_samples]
    meta = {"seed": cfg.seed, "chain_length": steps, "burn_in": cfg.burn_in,
            "thinning": cfg.thinning, "n_chains": C, "step": step,
            "acceptance_rate": rate}
    return SampleSet(spec, pts, meta, chain)


def contaminate(p_samples: SampleSet, q_samples: SampleSet, t: float, seed: int) -> SampleSet:
    """Replace each point of ``p_samples`` by its ``q_samples`` partner with probability t."""
    if len(p_samples) != len(q_samples):
        raise LengthMismatch("sample sets differ in length")
    if p_samples.manifold.unrestricted() != q_samples.manifold.unrestricted():
        raise MixedManifolds("sample sets live on different manifolds")
    if not 0.0 <= t <= 1.0:
        raise ValueError("mixing weight must lie in [0, 1]")
    pick = np.random.default_rng(seed).random(len(p_samples)) < t
    pts = np.where(pick[:, None], q_samples.points, p_samples.points)
    meta = {"mixture_weight": t, "seed": seed, "from_q": int(pick.sum())}
    return SampleSet(p_samples.manifold, pts, meta)


class EffectiveSampleSize(NamedTuple):
    value: float
    zero_variance: bool = False

    def __float__(self):
        return float(self.value)


def _autocorr(x):
    n = len(x)
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    return acov / acov[0]


def ess_trace(x) -> EffectiveSampleSize:
    """ESS of a scalar trace by Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 100:
        raise TooShort(f"trace of length {n} < 100")
    if np.ptp(x) == 0:
        return EffectiveSampleSize(float(n), True)
    rho = _autocorr(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    # antithetic traces can give tau < 1; report at most n * log10(n) as Stan does
    tau = max(tau, 1.0 / math.log10(n))
    return EffectiveSampleSize(n / tau)


def effective_sample_size(s: SampleSet, statistic: Callable) -> EffectiveSampleSize:
    """ESS of ``statistic`` along the stored (chain-major) trace."""
    return ess_trace(np.asarray(statistic(s.points), dtype=float))
