"""The weighted-Laplacian Stein operator ``L_P f = Lap f - g(grad phi, grad f)``.

Derivatives are intrinsic: closed forms when a :class:`TestFunction` provides
them, otherwise central differences along geodesics of the deterministic
orthonormal frame (see :mod:`geostein._stencil`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _stencil
from .errors import EmptySample, NotOnBoundary, SupportBoundary
from .geometry import CUT_TOL, EUCLIDEAN, GeodesicBall, ManifoldSpec, Point, Tangent
from .measures import TargetDensity, expectation_quadrature
from .quadrature import QuadratureGrid


@dataclass(frozen=True)
class DiffConfig:
    h_grad: float = 1e-4
    h_lap: float = 1e-3
    scheme: str = "central"

    def __post_init__(self):
        if not 0 < self.h_grad <= self.h_lap < 0.1:
            raise ValueError("need 0 < h_grad <= h_lap < 0.1")
        if self.scheme != "central":
            raise ValueError("only central differences are implemented")


DEFAULT_CFG = DiffConfig()


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A scalar function on a manifold, optionally with closed-form derivatives.

    ``func``, ``gradient`` and ``laplacian`` act on coordinate batches
    ``(N, D)`` and return ``(N,)``, ``(N, D)`` (tangent vectors in model
    coordinates) and ``(N,)``.

    ``support`` is ``("global",)``, ``("ball", center, radius)`` for functions
    vanishing outside a geodesic ball, or ``("away", pole, margin)`` for
    functions only defined at distance >= margin from ``pole``.
    """

    __test__ = False  # keep pytest from collecting this class

    manifold: ManifoldSpec
    func: Callable
    gradient: Callable | None = None
    laplacian: Callable | None = None
    support: tuple = ("global",)
    label: str = ""

    def __call__(self, X):
        return np.asarray(self.func(np.asarray(X, dtype=float)), dtype=float)

    @property
    def has_closed_forms(self) -> bool:
        return self.gradient is not None and self.laplacian is not None


def _batch(x):
    if isinstance(x, Point):
        return x.coords[None], True
    X = np.asarray(x, dtype=float)
    return (X[None], True) if X.ndim == 1 else (X, False)


# ---------------------------------------------------------------------------
# builders


def constant(spec: ManifoldSpec, value: float = 1.0) -> TestFunction:
    return TestFunction(
        spec,
        lambda X: np.full(X.shape[0], float(value)),
        lambda X: np.zeros_like(X),
        lambda X: np.zeros(X.shape[0]),
        label=f"constant({value})",
    )


def linear(spec: ManifoldSpec, a) -> TestFunction:
    """``f(x) = <a, x>`` in ambient coordinates on spheres or Euclidean space.

    On S^n this is a degree-one spherical harmonic with ``Lap f = -n f``.
    """
    a = np.asarray(a, dtype=float)
    m = spec.model
    if spec.kind == "sphere":
        return TestFunction(spec, lambda X: X @ a,
                            lambda X: m.proj(X, np.broadcast_to(a, X.shape)),
                            lambda X: -spec.dim * (X @ a), label="linear")
    if spec.kind == EUCLIDEAN:
        return TestFunction(spec, lambda X: X @ a,
                            lambda X: np.broadcast_to(a, X.shape).copy(),
                            lambda X: np.zeros(X.shape[0]), label="linear")
    raise ValueError("linear test functions exist on spheres and Euclidean spaces")


def trig(spec: ManifoldSpec, kind: str = "cos", frequency: float = 1.0,
         phase: float = 0.0, axis: int = 0) -> TestFunction:
    """``cos`` or ``sin`` of ``frequency * x[axis] + phase`` on flat models."""
    if spec.model.curvature != 0 or spec.kind == "hyperbolic":
        raise ValueError("trig test functions exist on flat models")
    w, p = float(frequency), float(phase)
    shift = 0.0 if kind == "cos" else -np.pi / 2  # sin(u) = cos(u - pi/2)
    e = np.zeros(spec.ambient_dim)
    e[axis] = 1.0

    def f(X):
        return np.cos(w * X[:, axis] + p + shift)

    def g(X):
        return (-w * np.sin(w * X[:, axis] + p + shift))[:, None] * e

    return TestFunction(spec, f, g, lambda X: -(w**2) * f(X),
                        label=f"{kind}({w}*x{axis}+{p})")


def polynomial(spec: ManifoldSpec, coeffs, axis: int = 0) -> TestFunction:
    """``sum_k coeffs[k] * x[axis]^k`` on a Euclidean model."""
    if spec.kind != EUCLIDEAN:
        raise ValueError("polynomial test functions exist on Euclidean models")
    P = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    dP, d2P = P.deriv(1), P.deriv(2)
    e = np.zeros(spec.dim)
    e[axis] = 1.0
    return TestFunction(spec, lambda X: P(X[:, axis]),
                        lambda X: dP(X[:, axis])[:, None] * e,
                        lambda X: d2P(X[:, axis]), label=f"poly{list(coeffs)}")


def radial(spec: ManifoldSpec, center, beta, dbeta, d2beta, support=("global",),
           label="radial") -> TestFunction:
    """``f(x) = beta(d(x, center)^2)`` with closed-form derivatives.

    Uses grad d^2 = -2 Log_x(center) and Lap d^2 = 2 + (n-1) t(d), with t the
    tangential eigenvalue of Hess d^2 on the space form.
    """
    c = np.asarray(center, dtype=float)
    m = spec.model
    n = spec.dim

    def s_of(X):
        return m.dist(c, X) ** 2

    def grad(X):
        s = s_of(X)
        L = m.log(X, np.broadcast_to(c, X.shape), check=False)
        return (-2.0 * dbeta(s))[:, None] * L

    def lap(X):
        s = s_of(X)
        t = m.dist_sq_hess_tangential(np.sqrt(s))
        return 4.0 * s * d2beta(s) + dbeta(s) * (2.0 + (n - 1) * t)

    return TestFunction(spec, lambda X: beta(s_of(X)), grad, lap, support, label)


def bump(spec: ManifoldSpec, center, radius: float) -> TestFunction:
    """Smooth bump ``exp(1 - 1/(1 - d^2/R^2))`` supported in the open ball B(center, R)."""
    R2 = float(radius) ** 2
    if radius >= spec.model.inj_radius:
        raise ValueError("bump radius must stay below the injectivity radius")

    def parts(s):
        q = 1.0 - s / R2
        inside = q > 0
        qs = np.where(inside, q, 1.0)
        with np.errstate(over="ignore", under="ignore"):
            b = np.where(inside, np.exp(1.0 - 1.0 / qs), 0.0)
        return b, qs, inside

    def beta(s):
        return parts(s)[0]

    def dbeta(s):
        b, q, inside = parts(s)
        return np.where(inside, -b / (R2 * q**2), 0.0)

    def d2beta(s):
        b, q, inside = parts(s)
        return np.where(inside, b / R2**2 * (1.0 / q**4 - 2.0 / q**3), 0.0)

    return radial(spec, center, beta, dbeta, d2beta,
                  support=("ball", tuple(np.ravel(center)), float(radius)),
                  label=f"bump(R={radius})")


def from_callable(spec: ManifoldSpec, fn: Callable, support=("global",), label="") -> TestFunction:
    """A test function whose derivatives are taken by finite differences."""
    return TestFunction(spec, fn, support=support, label=label)


def combine(terms) -> TestFunction:
    """Linear combination ``sum a_k f_k`` of test functions on one manifold."""
    terms = [(float(a), f) for a, f in terms]
    spec = terms[0][1].manifold
    closed = all(f.has_closed_forms for _, f in terms)

    def f(X):
        return sum(a * fk(X) for a, fk in terms)

    grad = lap = None
    if closed:
        def grad(X):
            return sum(a * fk.gradient(X) for a, fk in terms)

        def lap(X):
            return sum(a * fk.laplacian(X) for a, fk in terms)

    return TestFunction(spec, f, grad, lap, label="combination")


def check_compact_support(f: TestFunction, count=100, seed=0, cfg=DEFAULT_CFG) -> bool:
    """Sample exterior points of a ball-supported function; True if f and grad f vanish."""
    if f.support[0] != "ball":
        return True
    _, center, radius = f.support
    m = f.manifold.model
    c = np.asarray(center, dtype=float)
    rng = np.random.default_rng(seed)
    F = m.frame(c)
    dirs = rng.standard_normal((count, m.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    reach = min(m.inj_radius - 1e-3, 2.0 * radius + 1.0) if np.isfinite(m.inj_radius) \
        else 2.0 * radius + 1.0
    r = rng.uniform(radius * (1 + 1e-6), max(reach, radius * 1.01), size=count)
    X = m.exp(np.broadcast_to(c, (count, m.D)), (r[:, None] * dirs) @ F)
    vals = f(X)
    grads = _gradient_batch(f, X, cfg, check_support=False)
    return bool(np.all(vals == 0) and np.all(np.abs(grads) < 1e-12))


# ---------------------------------------------------------------------------
# derivatives


def _check_stencil(f: TestFunction, X, pts, check_support):
    if not check_support:
        return
    spec = f.manifold
    _, P, M = pts
    for S in (P, M):
        flat = S.reshape(-1, S.shape[-1])
        if not np.all(spec.contains(flat, tol=0.0)):
            raise SupportBoundary("finite-difference stencil leaves the manifold support")
        if f.support[0] == "away":
            _, pole, margin = f.support
            if np.any(spec.model.dist(np.asarray(pole, float), flat) < margin):
                raise SupportBoundary("stencil enters the excluded neighbourhood")


def _check_points(f: TestFunction, X):
    if f.support[0] == "away":
        _, pole, margin = f.support
        if np.any(f.manifold.model.dist(np.asarray(pole, float), X) < margin):
            raise SupportBoundary("point lies in the excluded neighbourhood")


def _gradient_batch(f, X, cfg, check_support=True):
    _check_points(f, X)
    if f.gradient is not None:
        return np.asarray(f.gradient(X), dtype=float)
    m = f.manifold.model
    pts = _stencil.stencil(m, X, cfg.h_grad)
    _check_stencil(f, X, pts, check_support)
    return _stencil.gradient(m, f, X, cfg.h_grad, pts)


def _laplacian_batch(f, X, cfg, check_support=True):
    _check_points(f, X)
    if f.laplacian is not None:
        return np.asarray(f.laplacian(X), dtype=float)
    m = f.manifold.model
    pts = _stencil.stencil(m, X, cfg.h_lap)
    _check_stencil(f, X, pts, check_support)
    return _stencil.laplacian(m, f, X, cfg.h_lap, pts)


def intrinsic_gradient(f: TestFunction, x, cfg: DiffConfig = DEFAULT_CFG):
    """Riemannian gradient of ``f``; a :class:`Tangent` for a Point, else an (N, D) array."""
    X, single = _batch(x)
    G = _gradient_batch(f, X, cfg)
    if isinstance(x, Point):
        return Tangent(x, G[0])
    return G[0] if single else G


def intrinsic_laplacian(f: TestFunction, x, cfg: DiffConfig = DEFAULT_CFG):
    X, single = _batch(x)
    L = _laplacian_batch(f, X, cfg)
    return float(L[0]) if single else L


def stein_values(t: TargetDensity, f: TestFunction, X, cfg: DiffConfig = DEFAULT_CFG):
    """``L_P f`` at each row of ``X``."""
    X = t.check_support(X)
    lap = _laplacian_batch(f, X, cfg)
    grad_f = _gradient_batch(f, X, cfg)
    grad_phi = t.grad_phi(X, cfg.h_grad)
    return lap - t.manifold.model.inner(X, grad_phi, grad_f)


def stein_apply(t: TargetDensity, f: TestFunction, x, cfg: DiffConfig = DEFAULT_CFG):
    X, single = _batch(x)
    vals = stein_values(t, f, X, cfg)
    return float(vals[0]) if single else vals


def stein_identity_mc(t: TargetDensity, f: TestFunction, samples, cfg: DiffConfig = DEFAULT_CFG):
    """Sample mean and standard error of ``L_P f`` over ``samples``.

    The standard error is the iid formula ``std / sqrt(n)``; chains should be
    thinned (or run as many short chains) so that the draws are close to
    independent.
    """
    X = np.asarray(getattr(samples, "points", samples), dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySample("no samples")
    vals = stein_values(t, f, X, cfg)
    n = len(vals)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def symmetry_defect(t: TargetDensity, f: TestFunction, h: TestFunction, grid: QuadratureGrid,
                    cfg: DiffConfig = DEFAULT_CFG) -> float:
    """``E_P[h L_P f + g(grad f, grad h)]`` by quadrature.

    Vanishes for admissible pairs; otherwise it equals the boundary flux of
    ``h e^{-phi} grad f`` divided by the normalising constant.
    """
    X = grid.nodes[t.support_mask(grid.nodes)]
    full = np.zeros(len(grid.weights))
    inside = t.support_mask(grid.nodes)
    vals = h(X) * stein_values(t, f, X, cfg) + t.manifold.model.inner(
        X, _gradient_batch(f, X, cfg), _gradient_batch(h, X, cfg))
    full[inside] = vals
    return expectation_quadrature(t, grid, full)


def neumann_defect(f: TestFunction, domain: ManifoldSpec, boundary_grid,
                   cfg: DiffConfig = DEFAULT_CFG) -> float:
    """Largest ``|g(n, grad f)|`` over points on the boundary of a geodesic ball."""
    ball = domain.restriction
    if not isinstance(ball, GeodesicBall):
        raise NotOnBoundary("domain has no geodesic-ball boundary")
    m = domain.model
    X = np.asarray(boundary_grid, dtype=float)
    X = X[None] if X.ndim == 1 else X
    c = np.asarray(ball.center, dtype=float)
    if np.any(np.abs(m.dist(c, X) - ball.radius) > CUT_TOL):
        raise NotOnBoundary("boundary grid point off the ball boundary")
    N = -m.log(X, np.broadcast_to(c, X.shape))
    N = N / m.norm(X, N)[:, None]
    G = _gradient_batch(f, X, cfg, check_support=False)
    return float(np.max(np.abs(m.inner(X, N, G))))
