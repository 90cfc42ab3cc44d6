"""Intrinsic central-difference stencils along geodesics of an orthonormal frame.

Along the geodesic t -> exp_x(t e_i) the second derivative of f is
Hess f(e_i, e_i), so summing the frame second differences gives the
Laplace-Beltrami operator without any chart.
"""

import numpy as np


def stencil(model, X, h):
    """Frame and the +/- h geodesic neighbours of each point of ``X`` (N, D)."""
    F = model.frame(X)
    Xb = np.broadcast_to(X[:, None, :], F.shape)
    return F, model.exp(Xb, h * F), model.exp(Xb, -h * F)


def gradient(model, fn, X, h, pts=None):
    N, D = X.shape
    F, P, M = pts if pts is not None else stencil(model, X, h)
    n = F.shape[1]
    fp = fn(P.reshape(-1, D)).reshape(N, n)
    fm = fn(M.reshape(-1, D)).reshape(N, n)
    return np.einsum("ni,nid->nd", (fp - fm) / (2 * h), F)


def laplacian(model, fn, X, h, pts=None):
    N, D = X.shape
    F, P, M = pts if pts is not None else stencil(model, X, h)
    n = F.shape[1]
    fp = fn(P.reshape(-1, D)).reshape(N, n)
    fm = fn(M.reshape(-1, D)).reshape(N, n)
    f0 = fn(X)
    return np.sum(fp - 2.0 * f0[:, None] + fm, axis=1) / h**2


def hessian(model, fn, x, h):
    """Intrinsic Hessian matrix at a single point in frame coordinates.

    Diagonal entries are geodesic second differences; off-diagonal entries
    come from polarisation along the geodesics in directions (e_i +/- e_j)/sqrt 2.
    """
    x = np.asarray(x, dtype=float)
    F = model.frame(x)
    n = F.shape[0]
    f0 = float(fn(x[None])[0])

    def second(v):
        pts = model.exp(np.stack([x, x]), np.stack([h * v, -h * v]))
        fp, fm = fn(pts)
        return (fp - 2.0 * f0 + fm) / h**2

    H = np.empty((n, n))
    for i in range(n):
        H[i, i] = second(F[i])
        for j in range(i):
            up = second((F[i] + F[j]) / np.sqrt(2))
            um = second((F[i] - F[j]) / np.sqrt(2))
            H[i, j] = H[j, i] = (up - um) / 2.0
    return H
