"""Quadrature rules on the low-dimensional models.

Periodic directions use the trapezoid rule (spectrally accurate for smooth
periodic integrands); bounded directions use Gauss-Legendre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedManifold
from .geometry import (
    CIRCLE,
    EUCLIDEAN,
    SPHERE,
    TORUS,
    GeodesicBall,
    ManifoldSpec,
    wrap_angle,
)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    manifold: ManifoldSpec
    nodes: np.ndarray  # (N, D) model coordinates
    weights: np.ndarray  # (N,) volume weights

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))


def _trapezoid(n, lo=-math.pi, hi=math.pi):
    h = (hi - lo) / n
    return lo + h * np.arange(n), np.full(n, h)


def _gauss(n, lo, hi):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def make_grid(spec: ManifoldSpec, resolution: int | None = None, *, bounds=None,
              pole=None) -> QuadratureGrid:
    """Build a quadrature grid covering the support of ``spec``.

    Args:
        spec: the manifold. Supported: circle (arcs too), torus of dimension
            <= 2, the 2-sphere (caps too), Euclidean spaces of dimension <= 2
            restricted to a ball or given ``bounds``.
        resolution: nodes per direction (trapezoid) or Gauss order.
        bounds: ``[(lo, hi), ...]`` per axis for unrestricted Euclidean grids.
        pole: sphere only; the polar axis of the spherical coordinates.
            Placing it at the centre of a localized integrand resolves it best.
    """
    kind, n, r = spec.kind, spec.dim, spec.restriction
    # punctures have measure zero and need no special handling
    spec_q = spec
    ball = r if isinstance(r, GeodesicBall) else None

    if kind in (CIRCLE, TORUS) and n <= 2:
        N = resolution or (4096 if n == 1 else 256)
        if ball is not None:
            if n != 1:
                raise UnsupportedManifold("torus balls have no quadrature grid")
            t, w = _gauss(N, -ball.radius, ball.radius)
            nodes = wrap_angle(ball.center[0] + t)[:, None]
            return QuadratureGrid(spec_q, nodes, w)
        t, w = _trapezoid(N)
        if n == 1:
            if r is not None:
                # stagger the nodes so none lands on the puncture
                t = wrap_angle(r.pole[0] + t + math.pi + 0.5 * w[0])
            return QuadratureGrid(spec_q, t[:, None], w)
        a, b = np.meshgrid(t, t, indexing="ij")
        return QuadratureGrid(spec_q, np.stack([a.ravel(), b.ravel()], -1),
                              np.outer(w, w).ravel())

    if kind == SPHERE and n == 2:
        N = resolution or 400
        model = spec.model
        if ball is not None:
            p = np.asarray(ball.center, dtype=float)
            zlo = math.cos(ball.radius)
        else:
            p = model.origin() if pole is None else model.project_point(np.asarray(pole, float))
            zlo = -1.0
        z, wz = _gauss(N, zlo, 1.0)
        a, wa = _trapezoid(2 * N, 0.0, 2 * math.pi)
        f1, f2 = model.frame(p)
        Z, A = np.meshgrid(z, a, indexing="ij")
        S = np.sqrt(np.maximum(1.0 - Z**2, 0.0))
        nodes = (Z[..., None] * p + S[..., None] * (np.cos(A)[..., None] * f1
                                                    + np.sin(A)[..., None] * f2))
        nodes = nodes.reshape(-1, 3)
        nodes /= np.linalg.norm(nodes, axis=-1, keepdims=True)
        return QuadratureGrid(spec_q, nodes, np.outer(wz, wa).ravel())

    if kind == EUCLIDEAN and n <= 2:
        N = resolution or (2000 if n == 1 else 200)
        if ball is not None:
            c = np.asarray(ball.center, dtype=float)
            if n == 1:
                t, w = _gauss(N, c[0] - ball.radius, c[0] + ball.radius)
                return QuadratureGrid(spec_q, t[:, None], w)
            rr, wr = _gauss(N, 0.0, ball.radius)
            a, wa = _trapezoid(2 * N, 0.0, 2 * math.pi)
            R, A = np.meshgrid(rr, a, indexing="ij")
            nodes = c + np.stack([R * np.cos(A), R * np.sin(A)], -1).reshape(-1, 2)
            return QuadratureGrid(spec_q, nodes, (np.outer(wr * rr, wa)).ravel())
        if bounds is None:
            raise UnsupportedManifold("unrestricted Euclidean grids need bounds")
        axes = [_gauss(N, lo, hi) for lo, hi in bounds]
        if len(axes) != n:
            raise UnsupportedManifold("bounds must give one interval per axis")
        if n == 1:
            return QuadratureGrid(spec_q, axes[0][0][:, None], axes[0][1])
        (x, wx), (y, wy) = axes
        X, Y = np.meshgrid(x, y, indexing="ij")
        return QuadratureGrid(spec_q, np.stack([X.ravel(), Y.ravel()], -1),
                              np.outer(wx, wy).ravel())

    raise UnsupportedManifold(f"no quadrature grid for {spec.label}")
