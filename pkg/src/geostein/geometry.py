"""Concrete Riemannian manifold models.

Five model families are supported, each with closed-form exponential map,
logarithm map and distance:

========== ======================= =====================================
kind       coordinates             metric
========== ======================= =====================================
circle     angle in [-pi, pi)      d(a, b) = |wrap(b - a)|
sphere     unit vector in R^{n+1}  induced from R^{n+1}
hyperbolic hyperboloid in R^{n+1}  induced from the Minkowski form
torus      angles in [-pi, pi)^n   flat product metric
euclidean  vector in R^n           standard
========== ======================= =====================================

The model objects (``spec.model``) work on coordinate arrays with arbitrary
leading batch axes, ``X.shape == (..., D)``. The functions at the bottom of
the module (:func:`validate_point`, :func:`distance`, ...) are the checked,
single-point API built on :class:`Point` and :class:`Tangent`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    ConstraintViolation,
    CutLocus,
    MixedManifolds,
    NotOnBoundary,
    OutOfSupport,
)

CIRCLE = "circle"
SPHERE = "sphere"
HYPERBOLIC = "hyperbolic"
TORUS = "torus"
EUCLIDEAN = "euclidean"
KINDS = (CIRCLE, SPHERE, HYPERBOLIC, TORUS, EUCLIDEAN)
COMPACT_KINDS = (CIRCLE, SPHERE, TORUS)

#: points closer than this to a cut locus are treated as lying on it
CUT_TOL = 1e-9
#: model-constraint error above which a coordinate vector is rejected
CONSTRAINT_TOL = 1e-9
#: candidate vectors shorter than this are skipped when building frames
FRAME_SKIP_TOL = 1e-8


def wrap_angle(a):
    """Wrap angles into [-pi, pi), leaving in-range values bit-identical."""
    a = np.asarray(a, dtype=float)
    inside = (a >= -np.pi) & (a < np.pi)
    return np.where(inside, a, np.mod(a + np.pi, 2 * np.pi) - np.pi)


def minkowski(u, v):
    """Minkowski bilinear form <u, v> = -u0 v0 + sum_i ui vi over the last axis."""
    return np.sum(u[..., 1:] * v[..., 1:], axis=-1) - u[..., 0] * v[..., 0]


# ---------------------------------------------------------------------------
# restrictions and the manifold descriptor


@dataclass(frozen=True)
class GeodesicBall:
    """Closed geodesic ball ``{x : d(x, center) <= radius}``."""

    center: tuple
    radius: float


@dataclass(frozen=True)
class Punctured:
    """The manifold with a single point removed (a guard band of ``CUT_TOL``)."""

    pole: tuple


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    dim: int = 1
    restriction: GeodesicBall | Punctured | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind == CIRCLE and self.dim != 1:
            raise ValueError("the circle has dimension 1")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        r = self.restriction
        if isinstance(r, GeodesicBall):
            if not r.radius > 0:
                raise ValueError("ball radius must be positive")
            if self.kind in (SPHERE, CIRCLE) and not r.radius < math.pi:
                raise ValueError("ball radius must be < pi on the sphere and circle")
            if self.kind == TORUS and not r.radius < math.pi:
                raise ValueError("ball radius must be < pi on the torus")
            self.model.check_points(np.asarray(r.center, dtype=float))
        elif isinstance(r, Punctured):
            if self.kind not in COMPACT_KINDS:
                raise ValueError("punctured supports exist only on compact kinds")
            self.model.check_points(np.asarray(r.pole, dtype=float))
        elif r is not None:
            raise TypeError(f"unsupported restriction {r!r}")

    # constructors ---------------------------------------------------------
    @classmethod
    def circle(cls, restriction=None):
        return cls(CIRCLE, 1, restriction)

    @classmethod
    def sphere(cls, n=2, restriction=None):
        return cls(SPHERE, n, restriction)

    @classmethod
    def hyperbolic(cls, n=2, restriction=None):
        return cls(HYPERBOLIC, n, restriction)

    @classmethod
    def torus(cls, n=2, restriction=None):
        return cls(TORUS, n, restriction)

    @classmethod
    def euclidean(cls, n=1, restriction=None):
        return cls(EUCLIDEAN, n, restriction)

    def with_ball(self, center, radius) -> ManifoldSpec:
        center = tuple(float(c) for c in np.ravel(center))
        return ManifoldSpec(self.kind, self.dim, GeodesicBall(center, float(radius)))

    def punctured(self, pole) -> ManifoldSpec:
        pole = tuple(float(c) for c in np.ravel(pole))
        return ManifoldSpec(self.kind, self.dim, Punctured(pole))

    def unrestricted(self) -> ManifoldSpec:
        return ManifoldSpec(self.kind, self.dim)

    # properties -----------------------------------------------------------
    @cached_property
    def model(self):
        return _MODELS[self.kind](self.dim)

    @property
    def ambient_dim(self) -> int:
        return self.model.D

    @property
    def is_compact_kind(self) -> bool:
        return self.kind in COMPACT_KINDS

    @property
    def label(self) -> str:
        return self.kind if self.kind == CIRCLE else f"{self.kind}({self.dim})"

    def origin(self) -> np.ndarray:
        """A canonical interior point of the (restricted) domain."""
        r = self.restriction
        if isinstance(r, GeodesicBall):
            return np.asarray(r.center, dtype=float)
        if isinstance(r, Punctured):
            return self.model.antipode(np.asarray(r.pole, dtype=float))
        return self.model.origin()

    def contains(self, X, tol=CUT_TOL):
        """Boolean mask of the points of ``X`` lying in the restricted domain."""
        X = np.asarray(X, dtype=float)
        r = self.restriction
        if r is None:
            return np.ones(X.shape[:-1], dtype=bool)
        if isinstance(r, GeodesicBall):
            c = np.asarray(r.center, dtype=float)
            return self.model.dist(c, X) <= r.radius + tol
        return self.model.dist(np.asarray(r.pole, dtype=float), X) > tol

    def to_json(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        r = self.restriction
        if isinstance(r, GeodesicBall):
            out["restriction"] = {"type": "ball", "center": list(r.center),
                                  "radius": r.radius}
        elif isinstance(r, Punctured):
            out["restriction"] = {"type": "punctured", "pole": list(r.pole)}
        return out


# ---------------------------------------------------------------------------
# models


class _Model:
    """Vectorised geometry of one model family. Subclasses set ``D`` and ``n``."""

    kind = ""
    curvature = 0.0  # constant sectional curvature
    inj_radius = math.inf

    def __init__(self, n):
        self.n = n

    # point handling
    def check_points(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1:] != (self.D,):
            raise ConstraintViolation(
                f"{self.kind}({self.n}) expects {self.D} coordinates, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ConstraintViolation("non-finite coordinates")
        res = self.constraint_residual(X)
        if np.any(res > CONSTRAINT_TOL):
            raise ConstraintViolation(
                f"model constraint violated by {float(np.max(res)):.3e}")
        return self.project_point(X)

    def constraint_residual(self, X):
        return np.zeros(np.shape(X)[:-1])

    def project_point(self, X):
        return np.asarray(X, dtype=float)

    def tangency_residual(self, X, V):
        return np.zeros(np.shape(V)[:-1])

    def proj(self, X, V):
        return np.asarray(V, dtype=float)

    def inner(self, X, U, V):
        return np.sum(U * V, axis=-1)

    def norm(self, X, V):
        return np.sqrt(np.maximum(self.inner(X, V, V), 0.0))

    def cut_gap(self, X, Y):
        """Distance-like margin between ``Y`` and the cut locus of ``X``."""
        return np.full(np.broadcast_shapes(np.shape(X)[:-1], np.shape(Y)[:-1]), np.inf)

    def ricci(self):
        return self.curvature * (self.n - 1)

    def origin(self):
        return np.zeros(self.D)

    def antipode(self, X):
        raise NotImplementedError

    def frame(self, X):
        X = np.asarray(X, dtype=float)
        eye = np.eye(self.n, self.D)
        return np.broadcast_to(eye, X.shape[:-1] + (self.n, self.D)).copy()

    def dist_sq_hess_tangential(self, d):
        """Tangential eigenvalue of Hess d(., mu)^2 at distance d."""
        return np.full_like(np.asarray(d, dtype=float), 2.0)


class _Flat(_Model):
    periodic = False

    def exp(self, X, V):
        X = np.asarray(X, dtype=float)
        Y = X + V
        if self.periodic:
            Y = wrap_angle(Y)
        return np.where(np.all(np.asarray(V) == 0, axis=-1, keepdims=True), X, Y)

    def _delta(self, X, Y):
        d = np.asarray(Y, dtype=float) - np.asarray(X, dtype=float)
        return wrap_angle(d) if self.periodic else d

    def log(self, X, Y, check=True):
        d = self._delta(X, Y)
        if check and self.periodic and np.any(np.abs(d) > math.pi - CUT_TOL):
            raise CutLocus("point lies on the cut locus (a coordinate differs by pi)")
        return d

    def dist(self, X, Y):
        return np.linalg.norm(self._delta(X, Y), axis=-1)

    def cut_gap(self, X, Y):
        if not self.periodic:
            return super().cut_gap(X, Y)
        return np.min(math.pi - np.abs(self._delta(X, Y)), axis=-1)


class Euclidean(_Flat):
    kind = EUCLIDEAN

    def __init__(self, n):
        super().__init__(n)
        self.D = n


class FlatTorus(_Flat):
    kind = TORUS
    periodic = True
    inj_radius = math.pi

    def __init__(self, n):
        super().__init__(n)
        self.D = n

    def check_points(self, X):
        return wrap_angle(super().check_points(X))

    def project_point(self, X):
        return wrap_angle(X)

    def antipode(self, X):
        return wrap_angle(np.asarray(X, dtype=float) + math.pi)


class Circle(FlatTorus):
    kind = CIRCLE

    def __init__(self, n=1):
        super().__init__(1)


class Sphere(_Model):
    kind = SPHERE
    curvature = 1.0
    inj_radius = math.pi

    def __init__(self, n):
        super().__init__(n)
        self.D = n + 1

    def constraint_residual(self, X):
        return np.abs(np.linalg.norm(X, axis=-1) - 1.0)

    def project_point(self, X):
        X = np.asarray(X, dtype=float)
        return X / np.linalg.norm(X, axis=-1, keepdims=True)

    def tangency_residual(self, X, V):
        return np.abs(np.sum(X * V, axis=-1))

    def proj(self, X, V):
        return V - np.sum(X * V, axis=-1, keepdims=True) * X

    def exp(self, X, V):
        X = np.asarray(X, dtype=float)
        V = np.asarray(V, dtype=float)
        r = np.linalg.norm(V, axis=-1, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        Y = np.cos(r) * X + (np.sin(r) / safe) * V
        Y = Y / np.linalg.norm(Y, axis=-1, keepdims=True)
        return np.where(r > 0, Y, X)

    def _log_parts(self, X, Y):
        c = np.sum(X * Y, axis=-1, keepdims=True)
        W = Y - c * X
        nw = np.linalg.norm(W, axis=-1, keepdims=True)
        return np.arctan2(nw, c), W, nw

    def dist(self, X, Y):
        return self._log_parts(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))[0][..., 0]

    def log(self, X, Y, check=True):
        d, W, nw = self._log_parts(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        if check and np.any(d > math.pi - CUT_TOL):
            raise CutLocus("points are (nearly) antipodal")
        return np.where(nw > 0, d / np.where(nw > 0, nw, 1.0), 0.0) * W

    def cut_gap(self, X, Y):
        return math.pi - self.dist(X, Y)

    def origin(self):
        e = np.zeros(self.D)
        e[-1] = 1.0
        return e

    def antipode(self, X):
        return -np.asarray(X, dtype=float)

    def frame(self, X):
        X = np.asarray(X, dtype=float)
        cands = np.broadcast_to(np.eye(self.D), X.shape[:-1] + (self.D, self.D))
        return _gram_schmidt(X, cands, self)

    def dist_sq_hess_tangential(self, d):
        d = np.asarray(d, dtype=float)
        small = np.abs(d) < 1e-8
        safe = np.where(small, 1.0, d)
        return np.where(small, 2.0 - 2.0 * d**2 / 3.0, 2.0 * safe / np.tan(safe))


class Hyperbolic(_Model):
    kind = HYPERBOLIC
    curvature = -1.0

    def __init__(self, n):
        super().__init__(n)
        self.D = n + 1

    def constraint_residual(self, X):
        X = np.asarray(X, dtype=float)
        res = np.abs(minkowski(X, X) + 1.0) / np.maximum(1.0, X[..., 0] ** 2)
        return np.where(X[..., 0] > 0, res, np.inf)

    def project_point(self, X):
        X = np.array(X, dtype=float)
        X[..., 0] = np.sqrt(1.0 + np.sum(X[..., 1:] ** 2, axis=-1))
        return X

    def tangency_residual(self, X, V):
        scale = np.maximum(1.0, np.abs(X[..., 0])) * np.maximum(1.0, np.linalg.norm(V, axis=-1))
        return np.abs(minkowski(X, V)) / scale

    def inner(self, X, U, V):
        return minkowski(U, V)

    def proj(self, X, V):
        return V + minkowski(X, V)[..., None] * X

    def exp(self, X, V):
        X = np.asarray(X, dtype=float)
        V = np.asarray(V, dtype=float)
        r = np.sqrt(np.maximum(minkowski(V, V), 0.0))[..., None]
        safe = np.where(r > 0, r, 1.0)
        Y = self.project_point(np.cosh(r) * X + (np.sinh(r) / safe) * V)
        return np.where(r > 0, Y, X)

    def dist(self, X, Y):
        W = np.asarray(Y, dtype=float) - np.asarray(X, dtype=float)
        chord = np.sqrt(np.maximum(minkowski(W, W), 0.0))
        return 2.0 * np.arcsinh(chord / 2.0)

    def log(self, X, Y, check=True):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        d = self.dist(X, Y)[..., None]
        U = self.proj(X, Y)
        nu = np.sqrt(np.maximum(minkowski(U, U), 0.0))[..., None]
        return np.where(nu > 0, d / np.where(nu > 0, nu, 1.0), 0.0) * U

    def origin(self):
        e = np.zeros(self.D)
        e[0] = 1.0
        return e

    def frame(self, X):
        X = np.asarray(X, dtype=float)
        # spatial axes first: at the vertex they are already tangent
        order = list(range(1, self.D)) + [0]
        cands = np.broadcast_to(np.eye(self.D)[order], X.shape[:-1] + (self.D, self.D))
        return _gram_schmidt(X, cands, self)

    def dist_sq_hess_tangential(self, d):
        d = np.asarray(d, dtype=float)
        small = np.abs(d) < 1e-8
        safe = np.where(small, 1.0, d)
        return np.where(small, 2.0 + 2.0 * d**2 / 3.0, 2.0 * safe / np.tanh(safe))


def _gram_schmidt(X, cands, model):
    """Index-ordered Gram-Schmidt of projected candidates, batched over points.

    Each candidate is projected to the tangent space, orthogonalised twice
    against the accepted vectors, and skipped when what remains is shorter
    than ``FRAME_SKIP_TOL``.
    """
    lead = X.shape[:-1]
    D, n = model.D, model.n
    Xf = X.reshape(-1, D)
    Cf = np.asarray(cands).reshape(-1, cands.shape[-2], D)
    N = Xf.shape[0]
    basis = np.zeros((N, n, D))
    count = np.zeros(N, dtype=int)
    rows = np.arange(N)
    for k in range(Cf.shape[1]):
        if np.all(count == n):
            break
        v = model.proj(Xf, Cf[:, k])
        for _ in range(2):
            coef = model.inner(Xf[:, None], basis, v[:, None, :])
            v = model.proj(Xf, v - np.einsum("ij,ijk->ik", coef, basis))
        nv = model.norm(Xf, v)
        ok = (nv > FRAME_SKIP_TOL) & (count < n)
        if np.any(ok):
            idx = rows[ok]
            basis[idx, count[ok]] = v[ok] / nv[ok, None]
            count[ok] += 1
    return basis.reshape(lead + (n, D))


_MODELS = {
    CIRCLE: Circle,
    SPHERE: Sphere,
    HYPERBOLIC: Hyperbolic,
    TORUS: FlatTorus,
    EUCLIDEAN: Euclidean,
}


# ---------------------------------------------------------------------------
# checked single-point API


@dataclass(frozen=True, eq=False)
class Point:
    manifold: ManifoldSpec
    coords: np.ndarray

    def __repr__(self):
        return f"Point({self.manifold.label}, {np.array2string(self.coords, precision=6)})"


@dataclass(frozen=True, eq=False)
class Tangent:
    base: Point
    vec: np.ndarray

    def norm(self) -> float:
        m = self.base.manifold.model
        return float(m.norm(self.base.coords, self.vec))


@dataclass(frozen=True, eq=False)
class Frame:
    base: Point
    basis: np.ndarray = field(repr=False)

    @property
    def vectors(self):
        return [Tangent(self.base, b) for b in self.basis]

    def gram(self) -> np.ndarray:
        m = self.base.manifold.model
        B = self.basis
        return m.inner(self.base.coords, B[:, None, :], B[None, :, :])

    def coordinates(self, v) -> np.ndarray:
        """Frame coordinates of a tangent vector (array or :class:`Tangent`)."""
        vec = v.vec if isinstance(v, Tangent) else np.asarray(v, dtype=float)
        m = self.base.manifold.model
        return m.inner(self.base.coords, self.basis, vec)


def validate_point(spec: ManifoldSpec, coords) -> Point:
    """Check ``coords`` against the model constraint and restriction."""
    X = spec.model.check_points(np.array(coords, dtype=float).reshape(-1))
    if not spec.contains(X):
        raise OutOfSupport(f"{X} lies outside the support of {spec.label}")
    return Point(spec, X)


def make_tangent(x: Point, vec, tol=1e-10) -> Tangent:
    """Wrap ``vec`` as a tangent at ``x``; it must be tangent within ``tol``."""
    v = np.array(vec, dtype=float).reshape(-1)
    m = x.manifold.model
    if v.shape != x.coords.shape:
        raise ConstraintViolation("tangent has the wrong number of components")
    if m.tangency_residual(x.coords, v) > tol:
        raise ConstraintViolation("vector is not tangent at the base point")
    return Tangent(x, m.proj(x.coords, v))


def _same(x: Point, y: Point):
    if x.manifold.unrestricted() != y.manifold.unrestricted():
        raise MixedManifolds(f"{x.manifold.label} vs {y.manifold.label}")


def distance(x: Point, y: Point) -> float:
    _same(x, y)
    return float(x.manifold.model.dist(x.coords, y.coords))


def exp_map(x: Point, v: Tangent) -> Point:
    if v.base is not x:
        _same(x, v.base)
    spec = x.manifold
    Y = spec.model.exp(x.coords, v.vec)
    if not spec.contains(Y):
        raise OutOfSupport("geodesic leaves the restricted support")
    return Point(spec, Y)


def log_map(x: Point, y: Point) -> Tangent:
    _same(x, y)
    return Tangent(x, x.manifold.model.log(x.coords, y.coords))


def orthonormal_frame(x: Point) -> Frame:
    return Frame(x, x.manifold.model.frame(x.coords))


def hess_dist_sq(spec: ManifoldSpec, mu: Point, x: Point) -> np.ndarray:
    """Hessian of ``d(., mu)^2`` at ``x`` in the coordinates of the frame at ``x``.

    The radial eigenvalue is 2; the tangential one is ``2 d cot d`` on the
    sphere, ``2 d coth d`` on hyperbolic space and 2 on flat models. At the
    pole itself the limit ``2 I`` is returned.
    """
    _same(mu, x)
    m = spec.model
    n = m.n
    d = float(m.dist(mu.coords, x.coords))
    if d < CUT_TOL:
        return 2.0 * np.eye(n)
    if np.any(m.cut_gap(mu.coords, x.coords) < CUT_TOL):
        raise CutLocus("x lies on the cut locus of mu")
    frame = m.frame(x.coords)
    radial = -m.log(x.coords, mu.coords) / d
    u = m.inner(x.coords, frame, radial)
    t = float(m.dist_sq_hess_tangential(d))
    return t * np.eye(n) + (2.0 - t) * np.outer(u, u)


def boundary_normal(spec: ManifoldSpec, x: Point) -> Tangent:
    """Unit outward normal of a geodesic ball at a boundary point."""
    ball = spec.restriction
    if not isinstance(ball, GeodesicBall):
        raise NotOnBoundary("the manifold has no geodesic-ball boundary")
    m = spec.model
    c = np.asarray(ball.center, dtype=float)
    if abs(float(m.dist(c, x.coords)) - ball.radius) > CUT_TOL:
        raise NotOnBoundary("point is not on the ball boundary")
    v = -m.log(x.coords, c)
    return Tangent(x, v / m.norm(x.coords, v))


def boundary_points(spec: ManifoldSpec, count: int) -> np.ndarray:
    """Evenly spaced points on the boundary of a 1- or 2-dimensional geodesic ball."""
    ball = spec.restriction
    if not isinstance(ball, GeodesicBall):
        raise NotOnBoundary("the manifold has no geodesic-ball boundary")
    m = spec.model
    c = np.asarray(ball.center, dtype=float)
    frame = m.frame(c)
    if m.n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif m.n == 2:
        a = 2 * np.pi * np.arange(count) / count
        dirs = np.stack([np.cos(a), np.sin(a)], axis=-1)
    else:
        raise NotImplementedError("boundary grids exist for dimensions 1 and 2")
    V = ball.radius * dirs @ frame
    return m.exp(np.broadcast_to(c, V.shape), V)
