"""Target densities ``dP/dv ∝ exp(-phi)`` on the manifold models.

A :class:`TargetDensity` pairs a manifold with a family object. Families
provide ``phi`` and, when known in closed form, its Riemannian gradient; the
remaining gradients fall back to intrinsic central differences.

All batch methods take coordinates ``X`` of shape ``(N, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _stencil
from .errors import OutOfSupport, SingularPoint, UnsupportedFamily, UnsupportedManifold
from .geometry import (
    CIRCLE,
    CUT_TOL,
    EUCLIDEAN,
    SPHERE,
    GeodesicBall,
    ManifoldSpec,
    Point,
    Tangent,
    hess_dist_sq,
    validate_point,
)
from .quadrature import QuadratureGrid

#: gradients are refused this close to a family's singular set
SINGULAR_TOL = 1e-6
DEFAULT_H_GRAD = 1e-4

SMOOTH = "smooth"
LOCALLY_LIPSCHITZ = "locally-Lipschitz"
SMOOTH_OFF_CUT_LOCUS = "smooth-off-cut-locus"


def _as_batch(X):
    X = np.asarray(X, dtype=float)
    return X[None] if X.ndim == 1 else X


# ---------------------------------------------------------------------------
# families


class Family:
    name = ""

    def phi(self, spec, X):
        raise NotImplementedError

    def grad(self, spec, X):
        """Closed-form gradient of phi, or None when unavailable."""
        return None

    def singular_gap(self, spec, X):
        """Distance-like margin to the family's singular set."""
        return np.full(X.shape[0], np.inf)

    def support_mask(self, spec, X):
        return np.ones(X.shape[0], dtype=bool)

    def to_json(self) -> dict:
        return {"family": self.name}


@dataclass(frozen=True, eq=False)
class IntrinsicRadial(Family):
    """phi(x) = d(x, mu)^alpha / sigma^alpha with alpha >= 1."""

    mu: np.ndarray
    alpha: float = 2.0
    sigma: float = 1.0
    name = "intrinsic-radial"

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def phi(self, spec, X):
        d = spec.model.dist(self.mu, X)
        return (d / self.sigma) ** self.alpha

    def grad(self, spec, X):
        m = spec.model
        d = m.dist(self.mu, X)
        L = m.log(X, np.broadcast_to(self.mu, X.shape), check=False)
        if self.alpha == 2.0:
            scale = np.full_like(d, 2.0 / self.sigma**2)
        else:
            safe = np.where(d > 0, d, 1.0)
            scale = np.where(d > 0, self.alpha / self.sigma**self.alpha * safe ** (self.alpha - 2), 0.0)
        return -scale[:, None] * L

    def singular_gap(self, spec, X):
        gap = np.asarray(spec.model.cut_gap(self.mu, X), dtype=float)
        gap = np.broadcast_to(gap, X.shape[:1]).copy()
        if self.alpha < 2:
            gap = np.minimum(gap, spec.model.dist(self.mu, X))
        return gap

    def to_json(self):
        return {"family": self.name, "mu": self.mu.tolist(), "alpha": self.alpha,
                "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class RiemannianGaussian(Family):
    """phi(x) = c^T Gamma c with c the frame coordinates of Log_mu(x).

    ``frame`` is the orthonormal basis at ``mu`` in which ``Gamma`` is expressed
    (defaults to the deterministic frame of the model).
    """

    mu: np.ndarray
    gamma: np.ndarray
    frame: np.ndarray | None = None
    name = "riemannian-gaussian"

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if g.shape[0] != g.shape[1] or not np.allclose(g, g.T, atol=1e-12):
            raise ValueError("Gamma must be symmetric")
        if np.min(np.linalg.eigvalsh(g)) <= 0:
            raise ValueError("Gamma must be positive definite")
        object.__setattr__(self, "gamma", g)

    def _frame(self, spec):
        return spec.model.frame(self.mu) if self.frame is None else np.asarray(self.frame)

    def _coords(self, spec, X):
        m = spec.model
        L = m.log(np.broadcast_to(self.mu, X.shape), X, check=False)
        return m.inner(self.mu, self._frame(spec)[None], L[:, None, :])

    def phi(self, spec, X):
        c = self._coords(spec, X)
        return np.einsum("ni,ij,nj->n", c, self.gamma, c)

    def grad(self, spec, X):
        if spec.model.curvature != 0:
            return None
        # flat models: Log_mu(x) = x - mu (wrapped), so grad phi = 2 F^T Gamma c
        c = self._coords(spec, X)
        return 2.0 * (c @ self.gamma) @ self._frame(spec)

    def singular_gap(self, spec, X):
        return np.broadcast_to(spec.model.cut_gap(self.mu, X), X.shape[:1]).copy()

    def support_mask(self, spec, X):
        return self.singular_gap(spec, X) > CUT_TOL

    def to_json(self):
        return {"family": self.name, "mu": self.mu.tolist(), "gamma": self.gamma.tolist()}


@dataclass(frozen=True, eq=False)
class VonMisesFisher(Family):
    """phi(x) = -kappa <x, mu> on spheres; -kappa cos(theta - mu) on the circle."""

    mu: np.ndarray
    kappa: float = 1.0
    name = "von-mises-fisher"

    def phi(self, spec, X):
        if spec.kind == CIRCLE:
            return -self.kappa * np.cos(X[:, 0] - self.mu[0])
        return -self.kappa * (X @ self.mu)

    def grad(self, spec, X):
        if spec.kind == CIRCLE:
            return self.kappa * np.sin(X[:, 0] - self.mu[0])[:, None]
        return -self.kappa * spec.model.proj(X, np.broadcast_to(self.mu, X.shape))

    def to_json(self):
        return {"family": self.name, "mu": self.mu.tolist(), "kappa": self.kappa}


class Uniform(Family):
    """phi = 0 on the (possibly truncated) support."""

    name = "uniform"

    def phi(self, spec, X):
        return np.zeros(X.shape[0])

    def grad(self, spec, X):
        return np.zeros_like(X)


@dataclass(frozen=True, eq=False)
class EuclideanGibbs(Family):
    """User-supplied potential on a Euclidean model.

    ``phi``, ``grad`` and ``hess`` act on batches: ``(N, n) -> (N,)``,
    ``(N, n) -> (N, n)`` and ``(N, n) -> (N, n, n)``.
    """

    phi_fn: Callable
    grad_fn: Callable | None = None
    hess_fn: Callable | None = None
    label: str = "gibbs"
    params: dict = field(default_factory=dict)
    name = "euclidean-gibbs"

    def phi(self, spec, X):
        return np.asarray(self.phi_fn(X), dtype=float)

    def grad(self, spec, X):
        return None if self.grad_fn is None else np.asarray(self.grad_fn(X), dtype=float)

    def to_json(self):
        return {"family": self.name, "potential": self.label, **self.params}


# ---------------------------------------------------------------------------
# target density


@dataclass(frozen=True, eq=False)
class TargetDensity:
    manifold: ManifoldSpec
    family: Family
    smoothness: str = SMOOTH
    h_grad: float = DEFAULT_H_GRAD

    # batch evaluators ------------------------------------------------------
    def support_mask(self, X):
        X = _as_batch(X)
        return self.manifold.contains(X) & self.family.support_mask(self.manifold, X)

    def check_support(self, X):
        X = _as_batch(X)
        bad = ~self.support_mask(X)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise OutOfSupport(f"point {X[i]} is outside the support")
        return X

    def phi(self, X):
        X = self.check_support(X)
        return self.family.phi(self.manifold, X)

    def singular_mask(self, X):
        return self.family.singular_gap(self.manifold, _as_batch(X)) < SINGULAR_TOL

    def grad_phi(self, X, h=None):
        """Gradient of phi at each row of ``X``; finite differences with step
        ``h`` (default ``self.h_grad``) when no closed form exists."""
        X = self.check_support(X)
        if np.any(self.singular_mask(X)):
            raise SingularPoint("gradient requested at a singular point of the density")
        g = self.family.grad(self.manifold, X)
        if g is None:
            m = self.manifold.model
            g = _stencil.gradient(m, lambda Y: self.family.phi(self.manifold, Y), X,
                                  h or self.h_grad)
        return g

    def to_json(self) -> dict:
        return {"manifold": self.manifold.to_json(), **self.family.to_json(),
                "smoothness": self.smoothness}


# constructors --------------------------------------------------------------


def _point(spec, p):
    return validate_point(spec.unrestricted(), p).coords


def intrinsic_radial(spec, mu, alpha=2.0, sigma=1.0) -> TargetDensity:
    smooth = SMOOTH if alpha == 2.0 and not spec.is_compact_kind else (
        SMOOTH_OFF_CUT_LOCUS if spec.is_compact_kind else LOCALLY_LIPSCHITZ)
    return TargetDensity(spec, IntrinsicRadial(_point(spec, mu), float(alpha), float(sigma)),
                         smooth)


def riemannian_gaussian(spec, mu, gamma, frame=None) -> TargetDensity:
    return TargetDensity(spec, RiemannianGaussian(_point(spec, mu), np.asarray(gamma, float),
                                                  frame), SMOOTH_OFF_CUT_LOCUS)


def von_mises_fisher(spec, mu, kappa) -> TargetDensity:
    if spec.kind not in (CIRCLE, SPHERE):
        raise UnsupportedManifold("von Mises-Fisher lives on circles and spheres")
    if kappa < 0:
        raise ValueError("concentration must be >= 0")
    return TargetDensity(spec, VonMisesFisher(_point(spec, mu), float(kappa)))


def uniform(spec) -> TargetDensity:
    return TargetDensity(spec, Uniform())


def truncated_uniform(spec) -> TargetDensity:
    if not isinstance(spec.restriction, GeodesicBall):
        raise ValueError("a truncated uniform needs a geodesic-ball restriction")
    return TargetDensity(spec, Uniform())


def euclidean_gibbs(spec, phi, grad=None, hess=None, label="gibbs", params=None):
    if spec.kind != EUCLIDEAN:
        raise UnsupportedManifold("Gibbs potentials are supported on Euclidean models")
    return TargetDensity(spec, EuclideanGibbs(phi, grad, hess, label, dict(params or {})))


def gaussian(spec, sigma=1.0, mean=None) -> TargetDensity:
    """Isotropic Gaussian ``phi = |x - mean|^2 / (2 sigma^2)`` on a Euclidean model."""
    m = np.zeros(spec.dim) if mean is None else np.asarray(mean, dtype=float)
    s2 = float(sigma) ** 2
    return euclidean_gibbs(
        spec,
        lambda X: np.sum((X - m) ** 2, axis=-1) / (2 * s2),
        lambda X: (X - m) / s2,
        lambda X: np.broadcast_to(np.eye(spec.dim) / s2, X.shape[:-1] + (spec.dim, spec.dim)),
        label="gaussian",
        params={"sigma": float(sigma), "mean": m.tolist()},
    )


# ---------------------------------------------------------------------------
# checked single-point API


def log_density(t: TargetDensity, x: Point) -> float:
    """Unnormalised log-density ``-phi(x)``."""
    return -float(t.phi(x.coords)[0])


def grad_phi(t: TargetDensity, x: Point) -> Tangent:
    return Tangent(x, t.grad_phi(x.coords)[0])


def normalizing_quadrature(t: TargetDensity, grid: QuadratureGrid) -> float:
    """Quadrature approximation of the normalising constant ``int exp(-phi) dv``."""
    if grid.manifold.unrestricted() != t.manifold.unrestricted():
        raise UnsupportedManifold("grid and density live on different manifolds")
    inside = t.support_mask(grid.nodes)
    vals = np.zeros(len(grid.weights))
    vals[inside] = np.exp(-t.family.phi(t.manifold, grid.nodes[inside]))
    return grid.integrate(vals)


def expectation_quadrature(t: TargetDensity, grid: QuadratureGrid, values) -> float:
    """``E_P[values]`` for ``values`` given at the grid nodes."""
    inside = t.support_mask(grid.nodes)
    phi = np.full(len(grid.weights), np.inf)
    phi[inside] = t.family.phi(t.manifold, grid.nodes[inside])
    w = grid.weights * np.exp(-(phi - np.min(phi)))
    return float(np.dot(w, np.where(inside, values, 0.0)) / np.sum(w))


def cut_locus_jump(t: TargetDensity, cut_point, u, w=None, eps=1e-7) -> float:
    """|phi(exp_c(eps u)) - phi(exp_c(eps w))| at a point ``c`` of the cut locus.

    ``w`` defaults to ``-u``: the two one-sided limits across the cut locus.
    """
    m = t.manifold.model
    c = np.asarray(cut_point, dtype=float)
    u = np.asarray(u, dtype=float)
    w = -u if w is None else np.asarray(w, dtype=float)
    pts = m.exp(np.stack([c, c]), eps * np.stack([u / m.norm(c, u), w / m.norm(c, w)]))
    a, b = t.family.phi(t.manifold, pts)
    return float(abs(a - b))


def ricci_constant(spec: ManifoldSpec) -> float:
    """Constant Ricci curvature ``ric = k g`` of a space form."""
    return float(spec.model.ricci())


def bakry_emery_bound(t: TargetDensity, points) -> float:
    """Smallest eigenvalue of ``Ric + Hess(phi)`` over ``points``.

    Supported: radial families with alpha = 2 (using the closed-form Hessian
    of the squared distance) and Euclidean Gibbs potentials with a Hessian.
    """
    spec = t.manifold
    fam = t.family
    X = np.stack([p.coords if isinstance(p, Point) else np.asarray(p, float) for p in points])
    t.check_support(X)
    if np.any(t.singular_mask(X)):
        raise SingularPoint("curvature bound requested at a singular point")
    ric = ricci_constant(spec)
    if isinstance(fam, IntrinsicRadial) and fam.alpha == 2.0:
        mu = Point(spec.unrestricted(), fam.mu)
        mats = [hess_dist_sq(spec, mu, Point(spec.unrestricted(), x)) / fam.sigma**2
                for x in X]
    elif isinstance(fam, EuclideanGibbs) and fam.hess_fn is not None:
        mats = list(np.asarray(fam.hess_fn(X), dtype=float))
    else:
        raise UnsupportedFamily(f"no closed-form Hessian for {fam.name}")
    n = spec.dim
    return float(min(np.min(np.linalg.eigvalsh(ric * np.eye(n) + H)) for H in mats))


def quoted_hyperbolic_kappa(sigma: float, n: int) -> float:
    """The constant ``sigma^2 - n + 1`` often quoted for the hyperbolic Gaussian.

    It does not follow from ``Ric = -(n-1) g`` and ``Hess(d^2) >= g``; the CLI
    reports it next to the computed bound so the mismatch is visible.
    """
    return sigma**2 - n + 1

