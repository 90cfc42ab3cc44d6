"""Kernel Stein discrepancy with the second-order Stein kernel ``k_P = L_x L_y k``.

Two base kernels are provided:

* ``chordal``: ``exp(-|e(x) - e(y)|^2 / (2 l^2))`` for the model embedding
  ``e`` (angles map to the unit circle). Positive definite on every model.
* ``geodesic``: ``exp(-d(x, y)^2 / (2 l^2))``. The intrinsic choice, but not
  guaranteed positive definite on curved spaces.

Closed-form Stein kernels exist for chordal kernels on circles and spheres
(the kernel is zonal) and for either kernel on Euclidean space and flat tori
(a Gaussian RBF in wrapped coordinates). Everything else uses nested central
differences.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _stencil
from .errors import (
    CutLocus,
    EmptySample,
    InvalidLevel,
    MixedManifolds,
    SingularPoint,
    SupportBoundary,
    TooFewSamples,
)
from .geometry import CIRCLE, CUT_TOL, EUCLIDEAN, SPHERE, TORUS, ManifoldSpec, Point, wrap_angle
from .measures import TargetDensity
from .operator import DEFAULT_CFG, DiffConfig

log = logging.getLogger(__name__)

#: step for nested kernel differences; fourth differences of the kernel lose
#: about eps / h^4 to roundoff, which dominates below roughly 3e-3
NESTED_FD_STEP = 3e-3

CHORDAL = "chordal"
GEODESIC = "geodesic"


@dataclass(frozen=True)
class Kernel:
    kind: str = CHORDAL
    lengthscale: float = 1.0
    mode: str = "closed-form"  # or "nested-fd"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (CHORDAL, GEODESIC):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.lengthscale > 0 or not self.scale > 0:
            raise ValueError("lengthscale and scale must be positive")
        if self.mode not in ("closed-form", "nested-fd"):
            raise ValueError(f"unknown derivative mode {self.mode!r}")

    def scaled(self, c: float) -> Kernel:
        return Kernel(self.kind, self.lengthscale, self.mode, self.scale * c)

    def to_json(self) -> dict:
        return {"kind": self.kind, "lengthscale": self.lengthscale, "mode": self.mode,
                "scale": self.scale}


def embed(spec: ManifoldSpec, X):
    """Model embedding used by the chordal kernel."""
    X = np.asarray(X, dtype=float)
    if spec.kind in (CIRCLE, TORUS):
        return np.concatenate([np.cos(X), np.sin(X)], axis=-1)
    return X


def _embed_tangent(spec, X, V):
    if spec.kind in (CIRCLE, TORUS):
        return np.concatenate([-np.sin(X) * V, np.cos(X) * V], axis=-1)
    return V


def kernel_values(k: Kernel, spec: ManifoldSpec, X, Y):
    """Elementwise ``k(X[..., :], Y[..., :])`` with broadcasting over leading axes."""
    if k.kind == CHORDAL:
        diff = embed(spec, X) - embed(spec, Y)
        sq = np.sum(diff * diff, axis=-1)
    else:
        sq = spec.model.dist(X, Y) ** 2
    return k.scale * np.exp(-sq / (2.0 * k.lengthscale**2))


def kernel_eval(k: Kernel, x: Point, y: Point) -> float:
    if x.manifold.unrestricted() != y.manifold.unrestricted():
        raise MixedManifolds(f"{x.manifold.label} vs {y.manifold.label}")
    return float(kernel_values(k, x.manifold, x.coords, y.coords))


def has_closed_form(k: Kernel, spec: ManifoldSpec) -> bool:
    if k.mode != "closed-form":
        return False
    if k.kind == CHORDAL:
        return spec.kind in (CIRCLE, SPHERE, EUCLIDEAN)
    return spec.kind in (CIRCLE, TORUS, EUCLIDEAN)


# ---------------------------------------------------------------------------
# closed forms


def _zonal_stein(k, spec, X, Y, A, B):
    # k = K(t), t = <e(x), e(y)>, K(t) = exp((t - 1)/l^2); A, B are grad phi
    # at x and y in embedding coordinates.
    n = spec.dim
    ex, ey = embed(spec, X), embed(spec, Y)
    a = _embed_tangent(spec, X, A)
    b = _embed_tangent(spec, Y, B)
    t = np.sum(ex * ey, axis=-1)
    c = 1.0 / k.lengthscale**2
    K = k.scale * np.exp(c * (t - 1.0))
    K1, K2, K3, K4 = c * K, c**2 * K, c**3 * K, c**4 * K
    s = 1.0 - t * t
    D1 = s * K3 - (n + 2) * t * K2 - n * K1
    D2 = s * K4 - (n + 4) * t * K3 - (2 * n + 2) * K2
    lapD = s * D2 - n * t * D1
    ay = np.sum(a * ey, axis=-1)
    bx = np.sum(b * ex, axis=-1)
    ab = np.sum(a * b, axis=-1)
    return lapD - D1 * (ay + bx) + K2 * ay * bx + K1 * ab


def _rbf_stein(k, spec, X, Y, A, B):
    # k = F(s), s = |r|^2, r = x - y (wrapped on periodic models)
    d = spec.dim
    if k.kind == CHORDAL and spec.kind != EUCLIDEAN:
        raise ValueError("chordal RBF closed form is Euclidean only")
    r = np.asarray(X, float) - np.asarray(Y, float)
    if spec.kind in (CIRCLE, TORUS):
        r = wrap_angle(r)
    s = np.sum(r * r, axis=-1)
    c = -1.0 / (2.0 * k.lengthscale**2)
    F = k.scale * np.exp(c * s)
    F1, F2, F3, F4 = c * F, c**2 * F, c**3 * F, c**4 * F
    G1 = 4 * F3 * s + (2 * d + 4) * F2
    G2 = 4 * F4 * s + (2 * d + 8) * F3
    lap2 = 4 * G2 * s + 2 * d * G1
    ar = np.sum(A * r, axis=-1)
    br = np.sum(B * r, axis=-1)
    ab = np.sum(A * B, axis=-1)
    return lap2 + 2 * G1 * (br - ar) - 4 * F2 * ar * br - 2 * F1 * ab


def _closed(k, spec, X, Y, A, B):
    if k.kind == CHORDAL and spec.kind in (CIRCLE, SPHERE):
        return _zonal_stein(k, spec, X, Y, A, B)
    return _rbf_stein(k, spec, X, Y, A, B)


# ---------------------------------------------------------------------------
# nested finite differences


def _nested(t: TargetDensity, k: Kernel, X, Y, cfg: DiffConfig):
    """Nested central differences for pairs of rows (X[p], Y[p]).

    The inner operator acts on y with x fixed at each point of the outer
    stencil; the outer operator then acts on x. Both use ``cfg.h_lap``.
    """
    spec = t.manifold
    m = spec.model
    h = cfg.h_lap
    P, D = X.shape

    def stencil_set(Z):
        F, Zp, Zm = _stencil.stencil(m, Z, h)
        pts = np.concatenate([Z[:, None], Zp, Zm], axis=1)
        if not np.all(spec.contains(pts.reshape(-1, D), tol=0.0)):
            raise SupportBoundary("nested stencil leaves the support")
        return F, pts

    Fx, Xs = stencil_set(X)
    Fy, Ys = stencil_set(Y)
    nd = Fx.shape[1]
    if k.kind == GEODESIC:
        gap = m.cut_gap(Xs[:, :, None, :], Ys[:, None, :, :])
        if np.any(gap < CUT_TOL):
            raise CutLocus("stencil pair on the cut locus")
    Kv = kernel_values(k, spec, Xs[:, :, None, :], Ys[:, None, :, :])  # (P, 2n+1, 2n+1)
    by = m.inner(Y[:, None, :], Fy, t.grad_phi(Y, cfg.h_grad)[:, None, :])  # (P, n)
    ax = m.inner(X[:, None, :], Fx, t.grad_phi(X, cfg.h_grad)[:, None, :])

    def op(vals, coef):
        # vals (..., 2n+1) on a stencil; coef (P, n) frame coordinates of grad phi
        v0, vp, vm = vals[..., :1], vals[..., 1:nd + 1], vals[..., nd + 1:]
        lap = np.sum(vp - 2.0 * v0 + vm, axis=-1) / h**2
        grad = (vp - vm) / (2.0 * h)
        return lap - np.sum(coef * grad, axis=-1)

    u = op(Kv, by[:, None, :])  # inner operator in y: (P, 2n+1) over the x stencil
    return op(u, ax)


# ---------------------------------------------------------------------------
# Stein kernel and Gram matrix


def _pair_values(t, k, X, Y, cfg):
    spec = t.manifold
    if k.kind == GEODESIC and spec.is_compact_kind:
        if np.any(spec.model.cut_gap(X, Y) < CUT_TOL):
            raise CutLocus("pair lies on each other's cut locus")
    if has_closed_form(k, spec):
        return _closed(k, spec, X, Y, t.grad_phi(X, cfg.h_grad), t.grad_phi(Y, cfg.h_grad))
    return _nested(t, k, X, Y, cfg)


def stein_kernel(t: TargetDensity, k: Kernel, x: Point, y: Point,
                 cfg: DiffConfig = DEFAULT_CFG) -> float:
    """``k_P(x, y) = L_x L_y k(x, y)``."""
    if x.manifold.unrestricted() != y.manifold.unrestricted():
        raise MixedManifolds(f"{x.manifold.label} vs {y.manifold.label}")
    return float(_pair_values(t, k, x.coords[None], y.coords[None], cfg)[0])


@dataclass
class SteinGram:
    values: np.ndarray
    sample_ids: np.ndarray
    dropped: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _block_rows(n, block):
    return [(i0, min(i0 + block, n)) for i0 in range(0, n, block)]


def stein_gram(t: TargetDensity, k: Kernel, samples, cfg: DiffConfig = DEFAULT_CFG,
               n_jobs: int = 1, block: int = 128, on_cut: str = "raise") -> SteinGram:
    """Stein-kernel Gram matrix over a sample.

    The upper triangle is computed in fixed row blocks (so the result does not
    depend on ``n_jobs``) and mirrored. With ``on_cut="drop"`` the later point
    of every pair inside the cut-locus guard band is removed and reported in
    ``SteinGram.dropped``.
    """
    X = np.asarray(getattr(samples, "points", samples), dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptySample("no samples")
    ids = np.arange(len(X))
    spec = t.manifold
    t.check_support(X)
    bad = np.flatnonzero(t.singular_mask(X))
    if len(bad):
        raise SingularPoint(f"sample {int(bad[0])} lies on a singular set of the density")
    dropped = []
    if k.kind == GEODESIC and spec.is_compact_kind:
        gap = spec.model.cut_gap(X[:, None, :], X[None, :, :])
        iu, ju = np.nonzero(np.triu(gap < CUT_TOL, 1))
        if len(iu):
            if on_cut != "drop":
                raise CutLocus(f"samples ({int(iu[0])}, {int(ju[0])}) are on each other's cut locus")
            dropped = sorted(set(int(j) for j in ju))
            log.warning("dropping %d samples inside the cut-locus guard band", len(dropped))
            keep = np.setdiff1d(ids, dropped)
            X, ids = X[keep], ids[keep]
    n = len(X)
    G = np.zeros((n, n))
    grad = None
    if has_closed_form(k, spec):
        grad = t.grad_phi(X, cfg.h_grad)

    def work(rows):
        i0, i1 = rows
        I, J = np.triu_indices(n, 0)
        sel = (I >= i0) & (I < i1)
        I, J = I[sel], J[sel]
        if grad is not None:
            vals = _closed(k, spec, X[I], X[J], grad[I], grad[J])
        else:
            vals = _nested(t, k, X[I], X[J], cfg)
        return I, J, vals

    blocks = _block_rows(n, block)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    for I, J, vals in results:
        G[I, J] = vals
    iu = np.triu_indices(n, 1)
    G[(iu[1], iu[0])] = G[iu]
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("non-finite Stein kernel values")
    return SteinGram(G, ids, dropped)


# ---------------------------------------------------------------------------
# estimators and the bootstrap test


def _values(g):
    return g.values if isinstance(g, SteinGram) else np.asarray(g, dtype=float)


def v_statistic(g) -> float:
    G = _values(g)
    if G.shape[0] < 1:
        raise TooFewSamples("V-statistic needs at least one sample")
    return float(np.sum(G) / G.shape[0] ** 2)


def u_statistic(g) -> float:
    G = _values(g)
    n = G.shape[0]
    if n < 2:
        raise TooFewSamples("U-statistic needs at least two samples")
    return float((np.sum(G) - np.trace(G)) / (n * (n - 1)))


def ksd_estimate(g):
    """``(u_stat, v_stat)``; raises TooFewSamples for the U-statistic when n < 2."""
    return u_statistic(g), v_statistic(g)


def jackknife_se(g) -> float:
    """Jackknife standard error of the U-statistic."""
    G = _values(g)
    n = G.shape[0]
    if n < 3:
        raise TooFewSamples("jackknife needs at least three samples")
    off = G - np.diag(np.diag(G))
    total = off.sum()
    rows = off.sum(axis=1)
    loo = (total - 2.0 * rows) / ((n - 1) * (n - 2))
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def psd_report(g) -> dict:
    """Extreme eigenvalues of the Gram matrix and whether the PSD check passes."""
    ev = np.linalg.eigvalsh(_values(g))
    lo, hi = float(ev[0]), float(ev[-1])
    return {"min_eigenvalue": lo, "max_eigenvalue": hi,
            "psd_ok": bool(lo >= -1e-6 * max(hi, 0.0))}


@dataclass
class GofResult:
    ksd_u: float
    ksd_v: float
    threshold: float
    p_value: float
    reject: bool
    B: int
    seed: int
    level: float

    def to_json(self) -> dict:
        return {"ksd_u": self.ksd_u, "ksd_v": self.ksd_v, "threshold": self.threshold,
                "p_value": self.p_value, "reject": self.reject, "B": self.B,
                "seed": self.seed, "level": self.level}


def bootstrap_signs(n: int, B: int, seed: int) -> np.ndarray:
    """Rademacher signs, one independent stream per replicate."""
    streams = np.random.SeedSequence(seed).spawn(B)
    return np.stack([np.random.default_rng(s).integers(0, 2, n) * 2.0 - 1.0 for s in streams])


def gof_wild_bootstrap(g, level: float = 0.05, B: int = 1000, seed: int = 0) -> GofResult:
    """Wild-bootstrap goodness-of-fit test on the V-statistic.

    Each replicate is ``(1/n^2) sum_ij e_i e_j G_ij`` with Rademacher ``e``;
    the diagonal enters both the statistic and the replicates. The threshold
    is the ``ceil((1 - level) B)``-th order statistic of the replicates, and
    ``reject`` holds exactly when ``p_value <= level``.
    """
    if not 0 < level < 1:
        raise InvalidLevel(f"level must lie in (0, 1), got {level}")
    if B < 1:
        raise ValueError("B must be positive")
    G = _values(g)
    n = G.shape[0]
    if n < 10:
        raise TooFewSamples(f"the bootstrap test needs n >= 10, got {n}")
    E = bootstrap_signs(n, B, seed)
    boot = np.einsum("bi,bi->b", E @ G, E) / n**2
    v = v_statistic(G)
    u = u_statistic(G)
    srt = np.sort(boot)
    kth = int(np.ceil((1.0 - level) * B)) - 1
    threshold = float(srt[min(max(kth, 0), B - 1)])
    p = float(np.mean(boot >= v))
    return GofResult(u, v, threshold, p, bool(v > threshold), B, seed, level)
