"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line (shown in the terminal summary) and then
asserts the same conditions.
"""

import json
import math
import time

import numpy as np
import pytest

from geostein import cli
from geostein import ksd as K
from geostein import measures as M
from geostein import operator as O
from geostein import spectral as S
from geostein import _stencil
from geostein.geometry import CUT_TOL, ManifoldSpec
from geostein.quadrature import make_grid
from geostein.sampling import ChainConfig, contaminate, effective_sample_size, geodesic_rw_mh

CIRCLE = ManifoldSpec.circle()
S2 = ManifoldSpec.sphere(2)
H2 = ManifoldSpec.hyperbolic(2)
T2 = ManifoldSpec.torus(2)
R1 = ManifoldSpec.euclidean(1)
NORTH = np.array([0.0, 0.0, 1.0])


def iid(t, n, seed, burn_in=300):
    """One draw from each of n independent chains."""
    return geodesic_rw_mh(t, ChainConfig(n_samples=n, n_chains=n, burn_in=burn_in, seed=seed))


def mc_check(t, f, s):
    """Stein-identity estimate with an ESS-corrected standard error."""
    est, se_iid = O.stein_identity_mc(t, f, s)
    ess = effective_sample_size(s, lambda X: O.stein_values(t, f, X)).value
    return est, se_iid * math.sqrt(len(s) / min(ess, len(s))), ess


def test_criterion_01_stein_identity(criterion):
    t0 = time.perf_counter()
    t = M.von_mises_fisher(S2, NORTH, 2.0)
    s = geodesic_rw_mh(t, ChainConfig(n_samples=50_000, n_chains=50, thinning=4,
                                      burn_in=500, seed=1))
    f = O.bump(S2, NORTH, 1.0)
    est, se, ess = mc_check(t, f, s)
    grid = make_grid(S2, 400, pole=NORTH)
    quad = M.expectation_quadrature(t, grid, O.stein_values(t, f, grid.nodes))
    secs = time.perf_counter() - t0
    ok = abs(est) <= 3 * se and ess >= 5000 and abs(quad) <= 1e-6 and secs < 60
    criterion(1, "Stein identity, vMF on S2", ok,
              f"mean={est:.3g} se={se:.3g} ess={ess:.0f} quadrature={quad:.2g} ({secs:.1f}s)")
    assert ok


def test_criterion_02_extendability_identity(criterion):
    t0 = time.perf_counter()
    t = M.von_mises_fisher(CIRCLE, (0.3,), 2.0)
    grid = make_grid(CIRCLE, 4096)
    pairs = [(O.trig(CIRCLE, "sin"), O.trig(CIRCLE, "cos", 2.0)),
             (O.trig(CIRCLE, "cos", 3.0, 0.5), O.trig(CIRCLE, "sin", 1.0, 0.2)),
             (O.constant(CIRCLE), O.trig(CIRCLE, "cos"))]
    worst = max(abs(O.symmetry_defect(t, f, h, grid)) for f, h in pairs)
    interval = R1.with_ball((0.5,), 0.5)
    u = M.truncated_uniform(interval)
    boundary = O.symmetry_defect(u, O.polynomial(interval, [0.0, 0.0, 0.5]),
                                 O.constant(interval), make_grid(interval, 64))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and abs(boundary - 1.0) <= 1e-8 and secs < 1
    criterion(2, "extendability identity", ok,
              f"max circle defect={worst:.2g}, interval boundary term={boundary:.12f} ({secs:.2f}s)")
    assert ok


def test_criterion_03_kernel_is_constants(criterion):
    t0 = time.perf_counter()
    circle = S.discretize(M.von_mises_fisher(CIRCLE, (0.0,), 2.0), S.GridSpec(CIRCLE, 512))
    iv = R1.with_ball((0.5,), 0.5)
    interval = S.discretize(M.truncated_uniform(iv), S.GridSpec(iv, 512))
    dims = [S.kernel_dimension(op, return_separation=True) for op in (circle, interval)]
    split = S.kernel_dimension(S.disjoint_union(circle, interval))
    secs = time.perf_counter() - t0
    ok = all(d == 1 and sep >= 100 for d, sep in dims) and split == 2 and secs < 10
    criterion(3, "kernel of the operator", ok,
              f"dims={[d for d, _ in dims]} separations={[f'{s:.2g}' for _, s in dims]} "
              f"two components -> {split} ({secs:.1f}s)")
    assert ok


def test_criterion_04_spectral_gap_and_poincare(criterion):
    t0 = time.perf_counter()
    lines, ok = [], True
    circle = S.discretize(M.uniform(CIRCLE), S.GridSpec(CIRCLE, 2000))
    lam = S.spectral_gap(circle)[0]
    ok &= abs(lam - 1) <= 1e-2
    lines.append(f"circle {lam:.6f}")
    torus = S.discretize(M.uniform(T2), S.GridSpec(T2, 64))
    lam = S.spectral_gap(torus)[0]
    ok &= abs(lam - 1) <= 2e-2
    lines.append(f"torus {lam:.6f}")
    ops = [circle, torus]
    for sigma in (0.5, 1.0, 2.0):
        g = []
        for N in (2000, 4000):
            op = S.discretize(M.gaussian(R1, sigma), S.GridSpec(R1, N, bounds=[(-8 * sigma, 8 * sigma)]))
            g.append(S.spectral_gap(op)[0] * sigma**2)
        rich = (4 * g[1] - g[0]) / 3
        ok &= abs(g[1] - 1) <= 2e-2 and abs(rich - 1) <= 2e-2 and abs(g[1] - g[0]) <= 1e-3
        lines.append(f"gauss sigma={sigma} {g[1]:.6f}")
        ops.append(op)
    worst, eig = 0.0, 0.0
    for op in ops:
        r = S.wpi_check(op, trials=50, seed=7)
        ok &= r.holds
        worst = max(worst, r.max_ratio / r.c2)
        eig = max(eig, abs(r.eigvec_ratio / r.c2 - 1))
    ok &= eig <= 1e-8
    secs = time.perf_counter() - t0
    ok &= secs < 60
    criterion(4, "spectral gap and weighted Poincare", ok,
              f"lambda1: {', '.join(lines)}; max ratio/C2={worst:.3g}; "
              f"eigvec |ratio/C2-1|={eig:.2g} ({secs:.1f}s)")
    assert ok


def test_criterion_05_stein_equation(criterion):
    t0 = time.perf_counter()
    iv = R1.with_ball((0.5,), 0.5)
    op = S.discretize(M.truncated_uniform(iv), S.GridSpec(iv, 1000))
    x = op.nodes[:, 0]
    h = np.cos(math.pi * x)
    f = S.solve_stein_equation(op, h)
    err = np.max(np.abs(f + np.cos(math.pi * x) / math.pi**2))
    res = S.stein_residual(op, f, h)
    bd = max(map(abs, S.boundary_derivative(f, x[1] - x[0])))
    secs = time.perf_counter() - t0
    ok = err <= 1e-4 and res <= 1e-8 and bd <= 1e-6 and secs < 5
    criterion(5, "Stein equation with Neumann condition", ok,
              f"max error={err:.2g} residual={res:.2g} boundary derivative={bd:.2g} ({secs:.2f}s)")
    assert ok


@pytest.fixture(scope="module")
def vm():
    return M.von_mises_fisher(CIRCLE, (0.0,), 2.0)


@pytest.fixture(scope="module")
def antipodal():
    return M.von_mises_fisher(CIRCLE, (math.pi,), 2.0)


def test_criterion_06_ksd_discrimination(criterion, vm, antipodal):
    t0 = time.perf_counter()
    n = 2000
    p, q = iid(vm, n, seed=61), iid(antipodal, n, seed=62)
    stats = []
    for i, level in enumerate((0.0, 0.1, 0.25, 0.5)):
        g = K.stein_gram(vm, K.Kernel(), contaminate(p, q, level, seed=63 + i))
        stats.append((K.u_statistic(g), K.jackknife_se(g)))
    # gaps are compared with the standard error of the difference
    z = [(b[0] - a[0]) / math.hypot(a[1], b[1]) for a, b in zip(stats, stats[1:])]
    secs = time.perf_counter() - t0
    ok = min(z) > 3 and secs < 300
    criterion(6, "KSD discrimination", ok,
              f"u={[f'{u:.4g}' for u, _ in stats]} gap/SE={[f'{v:.1f}' for v in z]} ({secs:.1f}s)")
    assert ok


def test_criterion_07_gof_calibration(criterion, vm, antipodal):
    t0 = time.perf_counter()
    reps, n, B = 500, 200, 500
    null = iid(vm, reps * n, seed=71).points.reshape(reps, n, 1)
    rejected = 0
    for r in range(reps):
        g = K.stein_gram(vm, K.Kernel(), null[r])
        rejected += K.gof_wild_bootstrap(g, 0.05, B, seed=r).reject
    size = rejected / reps
    power_reps = 100
    p = iid(vm, power_reps * n, seed=72)
    q = iid(antipodal, power_reps * n, seed=73)
    mixed = contaminate(p, q, 0.5, seed=74).points.reshape(power_reps, n, 1)
    hits = 0
    for r in range(power_reps):
        g = K.stein_gram(vm, K.Kernel(), mixed[r])
        hits += K.gof_wild_bootstrap(g, 0.05, B, seed=10_000 + r).reject
    power = hits / power_reps
    secs = time.perf_counter() - t0
    ok = 0.02 <= size <= 0.08 and power >= 0.9 and secs < 600
    criterion(7, "goodness-of-fit calibration", ok,
              f"size={size:.3f} over {reps} reps, power={power:.2f} at t=0.5 ({secs:.1f}s)")
    assert ok


def test_criterion_08_hyperbolic_curvature(criterion, tmp_path):
    t0 = time.perf_counter()
    mu = np.array([1.0, 0.0, 0.0])
    ok, parts = True, []
    for sigma, expected in ((0.5, 7.0), (2.0, -0.5)):
        doc = {"command": "curvature-check", "manifold": {"kind": "hyperbolic", "dim": 2},
               "density": {"family": "intrinsic-radial", "mu": mu.tolist(), "alpha": 2,
                           "sigma": sigma}, "seed": 8}
        out = tmp_path / f"s{sigma}"
        code = cli.run(cli.parse_config(json.dumps(doc)), out)
        payload = json.loads((out / cli.REPORT_NAME).read_text())["payload"]
        t = M.intrinsic_radial(H2, mu, 2.0, sigma)
        # finite-difference Hessian oracle at points off the centre
        rng = np.random.default_rng(0)
        V = rng.uniform(-1.5, 1.5, (20, 2)) @ H2.model.frame(mu)
        X = H2.model.exp(np.broadcast_to(mu, V.shape), V)
        fd = min(np.linalg.eigvalsh(H2.model.ricci() * np.eye(2) + _stencil.hessian(
            H2.model, lambda Y: t.family.phi(H2, Y), x, 1e-3))[0] for x in X)
        kappa = payload["kappa_hat"]
        ok &= (code == 0 and abs(kappa - expected) <= 1e-4 and abs(fd - expected) <= 1e-4
               and payload["discrepancy"])
        parts.append(f"sigma={sigma}: kappa={kappa:.8g} fd={fd:.6g} "
                     f"quoted={payload['quoted_kappa']:.4g} flagged={payload['discrepancy']}")
    secs = time.perf_counter() - t0
    ok &= secs < 10
    criterion(8, "hyperbolic curvature bound", ok, "; ".join(parts) + f" ({secs:.1f}s)")
    assert ok


def test_criterion_09_cut_locus_support(criterion):
    t0 = time.perf_counter()
    # on the circle the only anisotropy available is a scalar precision
    t = M.riemannian_gaussian(CIRCLE, (0.0,), [[3.0]])
    jump = M.cut_locus_jump(t, (-math.pi,), (1.0,))
    f = O.bump(CIRCLE, (0.0,), math.pi - 0.2)
    s = geodesic_rw_mh(t, ChainConfig(n_samples=50_000, n_chains=50, thinning=2, seed=9))
    est, se, ess = mc_check(t, f, s)
    grid = make_grid(CIRCLE, 4096)
    inside = t.support_mask(grid.nodes)  # f vanishes near the excluded cut point
    vals = np.zeros(len(grid.weights))
    vals[inside] = O.stein_values(t, f, grid.nodes[inside])
    quad = M.expectation_quadrature(t, grid, vals)
    gap = np.abs(np.abs(s.points[:, 0]) - math.pi)
    in_band = int(np.sum(gap <= CUT_TOL))
    # the same construction on the torus and sphere, where anisotropy is possible
    torus_jump = M.cut_locus_jump(M.riemannian_gaussian(T2, (0.0, 0.0), [[1.0, 0.3], [0.3, 1.0]]),
                                  (-math.pi, 1.0), (1.0, 0.0))
    secs = time.perf_counter() - t0
    identity = abs(est) <= 3 * se and ess >= 5000 and abs(quad) <= 1e-6
    ok = jump > 1e-3 and identity and in_band == 0 and secs < 60
    criterion(9, "cut-locus support", ok,
              f"circle jump={jump:.2g} (needs > 1e-3), torus jump={torus_jump:.3g}, "
              f"mean={est:.3g} se={se:.3g} quadrature={quad:.2g}, guard-band samples={in_band} "
              f"({secs:.1f}s)")
    assert identity and in_band == 0 and torus_jump > 1e-3
    assert jump > 1e-3, "the circle admits no anisotropic Gaussian; the jump is zero"


def test_criterion_10_harmonic_counterexample(criterion):
    t0 = time.perf_counter()
    reports = [S.harmonic_counterexample(N) for N in (32, 64, 128)]
    frac = [r.dirichlet_fraction for r in reports]
    neu = [r.neumann_residual for r in reports]
    secs = time.perf_counter() - t0
    ok = min(frac) > 0.5 and neu[0] > neu[1] > neu[2] and secs < 120
    criterion(10, "harmonic counterexample", ok,
              f"Dirichlet fraction={[f'{v:.4f}' for v in frac]} "
              f"Neumann residual={[f'{v:.3g}' for v in neu]} ({secs:.1f}s)")
    assert ok
