"""Self-adjoint finite-volume discretisations of the weighted Laplacian.

Each node ``i`` carries a cell of volume ``v_i`` and mass ``m_i = e^{-phi(x_i)} v_i``.
Neighbouring cells exchange flux through faces with weight
``w_ij = e^{-phi(face)} * area / spacing``. With ``W`` the symmetric matrix of
face weights and zero row sums,

    L = diag(1/m) W,

so ``L 1 = 0`` and ``diag(m) L`` is symmetric by construction. Faces on the
domain boundary carry no flux, which is the Neumann closure. Faces whose
midpoint falls outside the support of the target (a cut point, for instance)
are dropped the same way.

Eigenvalues are those of the pencil ``-W f = lambda M f`` with ``M = diag(m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateKernel,
    IllSeparatedSpectrum,
    SingularNode,
    SolverFailure,
    UnsupportedManifold,
    ZeroGradient,
)
from .geometry import CIRCLE, EUCLIDEAN, TORUS, GeodesicBall, ManifoldSpec, wrap_angle
from .measures import TargetDensity

PERIODIC = "periodic"
NEUMANN = "neumann"
MIN_RESOLUTION = 16
DENSE_LIMIT = 1024
#: structural checks are relative to the largest matrix entry
STRUCTURE_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Structured grid on a circle, a 2-torus, an interval, a rectangle or a disk.

    Intervals and disks come from a Euclidean geodesic-ball restriction;
    intervals and rectangles can instead be given by ``bounds``.
    ``allow_coarse`` lifts the resolution floor for stencil inspection.
    """

    manifold: ManifoldSpec
    resolution: int
    boundary: str | None = None
    bounds: tuple | None = None
    allow_coarse: bool = False

    def __post_init__(self):
        floor = 3 if self.allow_coarse else MIN_RESOLUTION
        if self.resolution < floor:
            raise ValueError(f"resolution must be >= {floor}")
        natural = PERIODIC if self.manifold.kind in (CIRCLE, TORUS) else NEUMANN
        if self.boundary is None:
            object.__setattr__(self, "boundary", natural)
        elif self.boundary != natural:
            raise ValueError(f"{self.manifold.label} needs {natural} boundary handling")
        if self.bounds is not None:
            object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))


@dataclass(eq=False)
class DiscreteOperator:
    W: sp.csr_matrix
    m: np.ndarray
    nodes: np.ndarray
    manifold: ManifoldSpec | None = None
    wall: np.ndarray | None = None  # nodes whose cells touch the domain boundary
    L: sp.csr_matrix = field(init=False)
    p: np.ndarray = field(init=False)

    def __post_init__(self):
        self.L = sp.csr_matrix(sp.diags(1.0 / self.m) @ self.W)
        self.p = self.m / self.m.sum()
        if self.wall is None:
            self.wall = np.zeros(len(self.m), dtype=bool)
        self.check()

    @property
    def n_nodes(self) -> int:
        return len(self.m)

    def structure_residuals(self) -> dict:
        L = self.L
        scale = max(abs(L).max(), 1.0)
        S = sp.diags(self.p) @ L
        off = L - sp.diags(L.diagonal())
        return {
            "row_sum": float(np.max(np.abs(L @ np.ones(self.n_nodes)))) / scale,
            "symmetry": float(abs(S - S.T).max()) / max(abs(S).max(), 1e-300),
            "min_offdiag": float(off.min()) if off.nnz else 0.0,
        }

    def check(self):
        r = self.structure_residuals()
        if r["row_sum"] > STRUCTURE_TOL or r["symmetry"] > STRUCTURE_TOL or r["min_offdiag"] < 0:
            raise AssertionError(f"discrete operator lost its structure: {r}")

    def inner(self, f, g) -> float:
        return float(np.dot(self.p, f * g))

    def norm(self, f) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    def mean(self, f) -> float:
        return float(np.dot(self.p, f))

    def dirichlet_energy(self, f) -> float:
        """``-<f, L f>_p``, the discrete ``||grad f||^2``."""
        return float(-np.dot(f, self.W @ f) / self.m.sum())


# ---------------------------------------------------------------------------
# assembly


def _potential(t, X):
    """phi at X, +inf where it cannot be evaluated."""
    out = np.full(len(X), np.inf)
    ok = t.support_mask(X) & ~t.singular_mask(X)
    if np.any(ok):
        out[ok] = t.family.phi(t.manifold, X[ok])
    return out


def _assemble(t, nodes, vol, edges, face_pts, coef, wall=None) -> DiscreteOperator:
    phi_n = _potential(t, nodes)
    if not np.all(np.isfinite(phi_n)):
        i = int(np.argmax(~np.isfinite(phi_n)))
        raise SingularNode(f"grid node {nodes[i]} hits a singular or excluded point")
    shift = phi_n.min()
    m = np.exp(-(phi_n - shift)) * vol
    w = coef * np.exp(-(_potential(t, face_pts) - shift))
    i, j = edges[:, 0], edges[:, 1]
    n = len(nodes)
    W = sp.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    W = W - sp.diags(np.asarray(W.sum(axis=1)).ravel())
    wall = np.zeros(n, dtype=bool) if wall is None else wall
    return DiscreteOperator(sp.csr_matrix(W), m, nodes, t.manifold, wall)


def _cells(lo, hi, N):
    h = (hi - lo) / N
    return lo + h * (np.arange(N) + 0.5), h


def _tensor_2d(x, y):
    X, Y = np.meshgrid(x, y, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], -1)


def _grid_edges(active, periodic):
    """Face list of an ``N x N`` (or length-N) cell grid restricted to ``active``."""
    idx = -np.ones(active.shape, dtype=int)
    idx[active] = np.arange(int(active.sum()))
    edges, axes = [], []
    for ax in range(active.ndim):
        nb = np.roll(idx, -1, axis=ax)
        if not periodic:
            sl = [slice(None)] * active.ndim
            sl[ax] = -1
            nb[tuple(sl)] = -1
        ok = (idx >= 0) & (nb >= 0)
        edges.append(np.stack([idx[ok], nb[ok]], -1))
        axes.append(np.full(int(ok.sum()), ax))
    return np.concatenate(edges), np.concatenate(axes)


#: cut cells smaller than this fraction of a full cell are dropped
MIN_CUT_FRACTION = 1e-3
_CUT_SAMPLES = 64


def _chord(a, b, s):
    """Overlap of [a, b] with [-s, s] as (length, midpoint)."""
    lo, hi = np.maximum(a, -s), np.minimum(b, s)
    return np.clip(hi - lo, 0.0, None), 0.5 * (lo + hi)


def _disk(t, c, R, N) -> DiscreteOperator:
    """Cut-cell grid of a disk: every square cell meeting the disk keeps the
    area and centroid of its intersection, and faces keep their cut length."""
    x, h = _cells(-R, R, N)
    X, Y = np.meshgrid(x, x, indexing="ij")
    # integrate the exact vertical chord over sub-columns of each cell
    u = X[..., None] + h * ((np.arange(_CUT_SAMPLES) + 0.5) / _CUT_SAMPLES - 0.5)
    ln, mid = _chord(Y[..., None] - h / 2, Y[..., None] + h / 2,
                     np.sqrt(np.clip(R**2 - u**2, 0.0, None)))
    area = ln.mean(-1) * h
    with np.errstate(invalid="ignore", divide="ignore"):
        cx = np.sum(u * ln, -1) / np.sum(ln, -1)
        cy = np.sum(mid * ln, -1) / np.sum(ln, -1)
    active = area > MIN_CUT_FRACTION * h * h
    nodes = c + np.stack([cx[active], cy[active]], -1)
    edges, axes = _grid_edges(active, periodic=False)
    # cut length and midpoint of each shared face
    ia = np.argwhere(active)
    a = ia[edges[:, 0]]
    fx = x[a[:, 0]] + np.where(axes == 0, h / 2, 0.0)
    fy = x[a[:, 1]] + np.where(axes == 1, h / 2, 0.0)
    along = np.where(axes == 0, fy, fx)
    across = np.where(axes == 0, fx, fy)
    flen, fmid = _chord(along - h / 2, along + h / 2, np.sqrt(np.clip(R**2 - across**2, 0, None)))
    faces = c + np.where((axes == 0)[:, None], np.stack([fx, fmid], -1), np.stack([fmid, fy], -1))
    keep = flen > 1e-9 * h
    edges, faces, flen = edges[keep], faces[keep], flen[keep]
    full = np.isclose(area[active], h * h, rtol=1e-12)
    deg = np.bincount(edges.ravel(), minlength=len(nodes))
    return _assemble(t, nodes, area[active], edges, faces, flen / h, ~full | (deg < 4))


def discretize(t: TargetDensity, gs: GridSpec) -> DiscreteOperator:
    """Flux-form discretisation of the weighted Laplacian of ``t`` on ``gs``."""
    spec, N = gs.manifold, gs.resolution
    if spec.unrestricted() != t.manifold.unrestricted():
        raise ValueError("grid and target live on different manifolds")
    kind, n = spec.kind, spec.dim
    ball = spec.restriction if isinstance(spec.restriction, GeodesicBall) else None

    if kind in (CIRCLE, TORUS) and n <= 2 and ball is None:
        x, h = _cells(-math.pi, math.pi, N)
        nodes = x[:, None] if n == 1 else _tensor_2d(x, x)
        active = np.ones((N,) * n, dtype=bool)
        edges, axes = _grid_edges(active, periodic=True)
        step = np.zeros((len(edges), n))
        step[np.arange(len(edges)), axes] = 0.5 * h
        faces = wrap_angle(nodes[edges[:, 0]] + step)
        return _assemble(t, nodes, np.full(len(nodes), h**n), edges, faces,
                         np.full(len(edges), h ** (n - 2)))

    if kind == EUCLIDEAN and n == 2 and ball is not None:
        return _disk(t, np.asarray(ball.center, dtype=float), ball.radius, N)

    if kind == EUCLIDEAN and n in (1, 2):
        if ball is not None:
            box = [(ball.center[0] - ball.radius, ball.center[0] + ball.radius)]
        elif gs.bounds is not None and len(gs.bounds) == n:
            box = list(gs.bounds)
        else:
            raise UnsupportedManifold("Euclidean grids need a ball restriction or bounds")
        axes_pts = [_cells(lo, hi, N) for lo, hi in box]
        hvec = np.array([a[1] for a in axes_pts])
        if n == 1:
            nodes = axes_pts[0][0][:, None]
        else:
            nodes = _tensor_2d(axes_pts[0][0], axes_pts[1][0])
        active = np.ones((N,) * n, dtype=bool)
        edges, axes = _grid_edges(active, periodic=False)
        faces = nodes[edges[:, 0]].copy()
        faces[np.arange(len(edges)), axes] += 0.5 * hvec[axes]
        vol = float(np.prod(hvec))
        wall = np.zeros((N,) * n, dtype=bool)
        for ax in range(n):
            idx = [slice(None)] * n
            idx[ax] = [0, -1]
            wall[tuple(idx)] = True
        return _assemble(t, nodes, np.full(len(nodes), vol), edges, faces,
                         vol / hvec[axes] ** 2, wall.ravel())

    raise UnsupportedManifold(f"no structured grid for {spec.label}")


def disjoint_union(*ops: DiscreteOperator) -> DiscreteOperator:
    """Block-diagonal operator on the union of several grids (no coupling)."""
    W = sp.block_diag([o.W for o in ops], format="csr")
    return DiscreteOperator(W, np.concatenate([o.m for o in ops]),
                            np.concatenate([o.nodes for o in ops]),
                            wall=np.concatenate([o.wall for o in ops]))


# ---------------------------------------------------------------------------
# spectra


class Spectrum(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray  # columns are p-orthonormal node vectors
    lam_max: float


def _sym(op):
    s = 1.0 / np.sqrt(op.m)
    return sp.csr_matrix(sp.diags(s) @ (-op.W) @ sp.diags(s))


def eigenpairs(op: DiscreteOperator, k: int = 8, method: str = "auto") -> Spectrum:
    """The ``k`` smallest eigenpairs of ``-L`` together with the largest eigenvalue.

    ``method`` is ``dense`` (full symmetric eigensolve), ``sparse``
    (shift-invert Lanczos) or ``auto`` (dense up to 1024 nodes).
    """
    B = _sym(op)
    n = op.n_nodes
    k = min(k, n - 1)
    if method == "dense" or (method == "auto" and n <= DENSE_LIMIT):
        vals, vecs = sla.eigh(B.toarray())
        lam_max = float(vals[-1])
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        lam_max = float(spla.eigsh(B, k=1, which="LA", return_eigenvectors=False,
                                   tol=1e-6)[0])
        shift = -1e-3 * max(lam_max, 1.0) / n
        v0 = np.ones(n) / math.sqrt(n)
        vals, vecs = spla.eigsh(B, k=k, sigma=shift, which="LM", v0=v0, tol=0)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    # back to node vectors, normalised in the p inner product
    vecs = vecs / np.sqrt(op.m)[:, None] * math.sqrt(op.m.sum())
    return Spectrum(vals, vecs, lam_max)


def kernel_dimension(op: DiscreteOperator, tol: float | None = None, *,
                     spectrum: Spectrum | None = None, return_separation=False):
    """Number of eigenvalues of ``-L`` below ``tol`` (default 1e-8 * largest).

    Raises IllSeparatedSpectrum unless the first eigenvalue above ``tol``
    exceeds ``100 * tol``.
    """
    k = 8
    while True:
        sp_ = spectrum if spectrum is not None else eigenpairs(op, k)
        thr = tol if tol is not None else 1e-8 * sp_.lam_max
        below = int(np.sum(sp_.values < thr))
        if below < len(sp_.values) or len(sp_.values) >= op.n_nodes - 1:
            break
        if spectrum is not None:
            spectrum = None
        k *= 2
    if below == len(sp_.values):
        raise IllSeparatedSpectrum("every computed eigenvalue lies below tol")
    nxt = float(sp_.values[below])
    sep = nxt / thr
    if sep < 100:
        raise IllSeparatedSpectrum(f"eigenvalue {nxt:.3g} within 100x of tol {thr:.3g}")
    return (below, sep) if return_separation else below


def spectral_gap(op: DiscreteOperator, *, spectrum: Spectrum | None = None):
    """``(lambda_1, C2)`` with ``C2 = lambda_1 ** -0.5``."""
    s = spectrum if spectrum is not None else eigenpairs(op)
    if kernel_dimension(op, spectrum=s) != 1:
        raise DegenerateKernel("the kernel is larger than the constants")
    lam1 = float(s.values[1])
    return lam1, lam1 ** -0.5


@dataclass
class SpectralReport:
    eigenvalues: list
    kernel_dim: int
    gap: float | None
    wpi_constant: float | None
    separation: float
    n_nodes: int

    def __post_init__(self):
        floor = -1e-10 * max(1.0, abs(self.eigenvalues[-1]))
        if min(self.eigenvalues) < floor or self.kernel_dim < 1:
            raise AssertionError("spectral report violates its invariants")

    def to_json(self) -> dict:
        return {"eigenvalues": list(map(float, self.eigenvalues)),
                "kernel_dim": self.kernel_dim, "gap": self.gap,
                "wpi_constant": self.wpi_constant, "separation": self.separation,
                "n_nodes": self.n_nodes}


def spectral_report(op: DiscreteOperator, k: int = 8) -> SpectralReport:
    s = eigenpairs(op, k)
    kd, sep = kernel_dimension(op, spectrum=s, return_separation=True)
    gap = float(s.values[1]) if kd == 1 else None
    return SpectralReport(list(s.values), kd, gap, gap ** -0.5 if gap else None,
                          float(sep), op.n_nodes)


# ---------------------------------------------------------------------------
# Stein equation


def solve_stein_equation(op: DiscreteOperator, h) -> np.ndarray:
    """Mean-zero ``f`` with ``L f = h - P(h)``.

    The constraint ``sum p_i f_i = 0`` enters as an extra row and column, which
    keeps the system symmetric.
    """
    h = np.asarray(h, dtype=float)
    if kernel_dimension(op) != 1:
        raise DegenerateKernel("Stein equation is not uniquely solvable")
    target = h - op.mean(h)
    m = op.m
    A = sp.bmat([[op.W, sp.csr_matrix(m[:, None])], [sp.csr_matrix(m[None, :]), None]],
                format="csc")
    lu = spla.splu(A)
    rhs = np.r_[m * target, 0.0]
    sol = lu.solve(rhs)
    sol += lu.solve(rhs - A @ sol)  # one step of iterative refinement
    f = sol[:-1]
    res = stein_residual(op, f, h)
    if not np.all(np.isfinite(f)) or res > 1e-8:
        raise SolverFailure(f"Stein solve residual {res:.3g} exceeds 1e-8")
    return f


def stein_residual(op: DiscreteOperator, f, h) -> float:
    h = np.asarray(h, dtype=float)
    return op.norm(op.L @ f - (h - op.mean(h)))


def boundary_derivative(f, spacing) -> tuple[float, float]:
    """One-sided normal derivatives at both ends of a cell-centred 1D grid.

    Uses the quadratic through the three cells nearest each wall.
    """
    f = np.asarray(f, dtype=float)
    left = (-2 * f[0] + 3 * f[1] - f[2]) / spacing
    right = (-2 * f[-1] + 3 * f[-2] - f[-3]) / spacing
    return float(left), float(right)


# ---------------------------------------------------------------------------
# Poincare checks


@dataclass
class WpiResult:
    max_ratio: float
    c2: float
    max_c1_ratio: float
    c1: float
    eigvec_ratio: float
    trials: int

    @property
    def holds(self) -> bool:
        return (self.max_ratio <= self.c2 * (1 + 1e-8)
                and self.max_c1_ratio <= self.c1 * (1 + 1e-8))

    def to_json(self) -> dict:
        return {**self.__dict__, "holds": self.holds}


def wpi_ratio(op: DiscreteOperator, f) -> float:
    e = op.dirichlet_energy(f)
    if e <= 0:
        raise ZeroGradient("trial vector has zero discrete gradient")
    return op.norm(f - op.mean(f)) / math.sqrt(e)


def wpi_check(op: DiscreteOperator, trials: int, seed: int, *,
              spectrum: Spectrum | None = None) -> WpiResult:
    """Largest Poincare ratio ``||f - P f|| / ||grad f||`` over seeded random vectors.

    Also tracks ``||f - P f|| / ||L f||`` against ``C1 = 1 / lambda_1`` and the
    ratio of the first non-constant eigenvector, which should equal ``C2``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    s = spectrum if spectrum is not None else eigenpairs(op)
    lam1, c2 = spectral_gap(op, spectrum=s)
    rng = np.random.default_rng(seed)
    best, best1, done = 0.0, 0.0, 0
    for _ in range(trials):
        for _retry in range(10):
            f = rng.standard_normal(op.n_nodes)
            try:
                r = wpi_ratio(op, f)
            except ZeroGradient:
                continue
            break
        else:
            continue
        best = max(best, r)
        best1 = max(best1, op.norm(f - op.mean(f)) / op.norm(op.L @ f))
        done += 1
    if done == 0:
        raise ZeroGradient("every trial vector was constant")
    return WpiResult(best, c2, best1, 1.0 / lam1, wpi_ratio(op, s.vectors[:, 1]), done)


# ---------------------------------------------------------------------------
# image projections


def _p_projection_residual(op, A, v) -> float:
    """p-norm of the residual of ``v`` after p-orthogonal projection on range(A).

    ``A`` is sparse with full column rank; the normal equations are solved
    with a sparse LU factorisation.
    """
    P = sp.diags(op.p)
    G = sp.csc_matrix(A.T @ P @ A)
    coef = spla.splu(G).solve(A.T @ (op.p * v))
    return op.norm(v - A @ coef)


def interior_nodes(op: DiscreteOperator) -> np.ndarray:
    """Nodes that neither touch the boundary nor neighbour a node that does.

    Vectors supported there vanish on a full layer of cells along the wall,
    so their image under ``L`` never sees the boundary closure.
    """
    A = (op.W != 0).astype(int)
    near = op.wall | (A @ op.wall.astype(int) > 0)
    return np.flatnonzero(~near)


@dataclass
class HarmonicReport:
    resolution: int
    norm: float
    dirichlet_residual: float
    neumann_residual: float

    @property
    def dirichlet_fraction(self) -> float:
        return self.dirichlet_residual / self.norm


def harmonic_counterexample(resolution: int) -> HarmonicReport:
    """Project ``e^x cos y - 1`` on the unit disk onto two images of ``L``.

    With uniform weights on the Neumann disk grid, ``e^x cos y`` is harmonic
    with mean 1. The image of ``L`` acting on vectors supported at interior
    nodes (Dirichlet padding) stays nearly orthogonal to it, while the full
    Neumann image is the mean-zero subspace and the residual is only the
    discrete mean of the vector.
    """
    from .measures import uniform

    spec = ManifoldSpec.euclidean(2).with_ball((0.0, 0.0), 1.0)
    op = discretize(uniform(spec), GridSpec(spec, resolution))
    x, y = op.nodes[:, 0], op.nodes[:, 1]
    v = np.exp(x) * np.cos(y) - 1.0
    inner = interior_nodes(op)
    dres = _p_projection_residual(op, op.L.tocsc()[:, inner], v)
    # the Neumann image is the p-mean-zero subspace; its closest element solves L f = v - P(v)
    nres = op.norm(v - op.L @ solve_stein_equation(op, v))
    return HarmonicReport(resolution, op.norm(v), dres, nres)
