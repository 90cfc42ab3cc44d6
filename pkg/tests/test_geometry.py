import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geostein import _stencil
from geostein.errors import ConstraintViolation, CutLocus, MixedManifolds, NotOnBoundary, OutOfSupport
from geostein.geometry import (
    ManifoldSpec,
    Point,
    boundary_normal,
    boundary_points,
    distance,
    exp_map,
    hess_dist_sq,
    log_map,
    make_tangent,
    orthonormal_frame,
    validate_point,
    wrap_angle,
)

SPECS = {
    "circle": ManifoldSpec.circle(),
    "sphere2": ManifoldSpec.sphere(2),
    "sphere3": ManifoldSpec.sphere(3),
    "hyperbolic2": ManifoldSpec.hyperbolic(2),
    "hyperbolic3": ManifoldSpec.hyperbolic(3),
    "torus2": ManifoldSpec.torus(2),
    "euclidean3": ManifoldSpec.euclidean(3),
}


def random_points(spec, count, rng, scale=1.5):
    """Points at geodesic distance up to ``scale`` from a random base point."""
    m = spec.model
    base = m.exp(spec.origin(), rng.standard_normal(m.n) @ m.frame(spec.origin()))
    V = scale * rng.uniform(-1, 1, (count, m.n)) @ m.frame(base)
    return m.exp(np.broadcast_to(base, V.shape), V)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# validate_point -------------------------------------------------------------


@pytest.mark.parametrize("spec, coords", [
    (ManifoldSpec.sphere(2), (1.0, 0.0, 0.0)),
    (ManifoldSpec.hyperbolic(2), (1.0, 0.0, 0.0)),
    (ManifoldSpec.circle(), (-math.pi,)),
    (ManifoldSpec.euclidean(2), (4.0, -2.0)),
])
def test_valid_points(spec, coords):
    p = validate_point(spec, coords)
    assert isinstance(p, Point)
    np.testing.assert_array_equal(p.coords, coords)


@pytest.mark.parametrize("spec, coords", [
    (ManifoldSpec.sphere(2), (1.0, 1.0, 0.0)),
    (ManifoldSpec.hyperbolic(2), (2.0, 0.0, 0.0)),
    (ManifoldSpec.hyperbolic(2), (-1.0, 0.0, 0.0)),
    (ManifoldSpec.circle(), (float("nan"),)),
    (ManifoldSpec.sphere(2), (1.0, 0.0)),
])
def test_constraint_violations(spec, coords):
    with pytest.raises(ConstraintViolation):
        validate_point(spec, coords)


def test_angles_are_wrapped_into_canonical_range():
    C = ManifoldSpec.circle()
    assert validate_point(C, (math.pi,)).coords[0] == -math.pi
    assert validate_point(C, (4.0,)).coords[0] == pytest.approx(4.0 - 2 * math.pi)


def test_restriction_is_enforced():
    ball = ManifoldSpec.euclidean(2).with_ball((0.0, 0.0), 1.0)
    validate_point(ball, (0.5, 0.5))
    with pytest.raises(OutOfSupport):
        validate_point(ball, (1.0, 1.0))
    punct = ManifoldSpec.circle().punctured((math.pi - 1e-12,))
    with pytest.raises(OutOfSupport):
        validate_point(punct, (-math.pi,))


def test_sphere_ball_radius_must_stay_below_pi():
    with pytest.raises(ValueError):
        ManifoldSpec.sphere(2).with_ball((0.0, 0.0, 1.0), math.pi)


def test_punctured_only_on_compact_kinds():
    with pytest.raises(ValueError):
        ManifoldSpec.euclidean(2).punctured((0.0, 0.0))
    with pytest.raises(ValueError):
        ManifoldSpec.hyperbolic(2).punctured((1.0, 0.0, 0.0))


def test_wrap_angle_leaves_canonical_values_untouched():
    a = np.array([-math.pi, -1.0, 0.0, 3.0])
    np.testing.assert_array_equal(wrap_angle(a), a)
    assert wrap_angle(math.pi) == -math.pi


# distance ---------------------------------------------------------------------


def test_distance_examples():
    S = ManifoldSpec.sphere(2)
    assert distance(validate_point(S, (0, 0, 1.0)), validate_point(S, (1.0, 0, 0))) == \
        pytest.approx(math.pi / 2, abs=1e-15)
    H = ManifoldSpec.hyperbolic(2)
    y = validate_point(H, (math.cosh(1), math.sinh(1), 0.0))
    assert distance(validate_point(H, (1.0, 0, 0)), y) == pytest.approx(1.0, abs=1e-14)
    C = ManifoldSpec.circle()
    assert distance(validate_point(C, (3.0,)), validate_point(C, (-3.0,))) == \
        pytest.approx(2 * math.pi - 6.0, abs=1e-15)


def test_distance_rejects_mixed_manifolds():
    with pytest.raises(MixedManifolds):
        distance(validate_point(ManifoldSpec.sphere(2), (1.0, 0, 0)),
                 validate_point(ManifoldSpec.hyperbolic(2), (1.0, 0, 0)))


@pytest.mark.parametrize("name", list(SPECS))
def test_distance_metric_axioms(name, rng):
    spec = SPECS[name]
    m = spec.model
    X, Y, Z = (random_points(spec, 200, rng) for _ in range(3))
    dxy, dyx = m.dist(X, Y), m.dist(Y, X)
    np.testing.assert_allclose(dxy, dyx, atol=1e-12)
    assert np.all(m.dist(X, X) <= 1e-12)
    assert np.all(dxy <= m.dist(X, Z) + m.dist(Z, Y) + 1e-9)


# exp / log --------------------------------------------------------------------


def test_exp_examples():
    C = ManifoldSpec.circle()
    x = validate_point(C, (0.0,))
    assert exp_map(x, make_tangent(x, (math.pi / 2,))).coords[0] == pytest.approx(math.pi / 2)
    S = ManifoldSpec.sphere(2)
    north = validate_point(S, (0, 0, 1.0))
    south = exp_map(north, make_tangent(north, (math.pi, 0, 0)))
    np.testing.assert_allclose(south.coords, [0, 0, -1.0], atol=1e-15)


@pytest.mark.parametrize("name", list(SPECS))
def test_exp_of_zero_is_identity(name, rng):
    spec = SPECS[name]
    X = random_points(spec, 20, rng)
    np.testing.assert_array_equal(spec.model.exp(X, np.zeros_like(X)), X)


@pytest.mark.parametrize("name", list(SPECS))
def test_log_round_trip_and_isometry(name, rng):
    spec = SPECS[name]
    m = spec.model
    X, Y = random_points(spec, 300, rng), random_points(spec, 300, rng)
    keep = np.all(m.cut_gap(X, Y) > 1e-3, axis=-1) if m.cut_gap(X, Y).ndim > 1 \
        else m.cut_gap(X, Y) > 1e-3
    X, Y = X[keep], Y[keep]
    V = m.log(X, Y)
    assert np.max(m.dist(m.exp(X, V), Y)) <= 1e-10
    np.testing.assert_allclose(m.norm(X, V), m.dist(X, Y), atol=1e-10)
    assert np.max(np.abs(m.tangency_residual(X, V))) <= 1e-10


def test_log_at_cut_locus_raises():
    S = ManifoldSpec.sphere(2)
    with pytest.raises(CutLocus):
        log_map(validate_point(S, (0, 0, 1.0)), validate_point(S, (0, 0, -1.0)))
    C = ManifoldSpec.circle()
    with pytest.raises(CutLocus):
        log_map(validate_point(C, (0.0,)), validate_point(C, (-math.pi,)))


def test_log_of_self_is_zero():
    H = ManifoldSpec.hyperbolic(2)
    x = validate_point(H, (math.cosh(2), 0.0, math.sinh(2)))
    assert log_map(x, x).norm() == 0.0


@pytest.mark.parametrize("n", [2, 3, 5])
def test_hyperboloid_exp_stays_on_model_for_long_vectors(n):
    H = ManifoldSpec.hyperbolic(n)
    m = H.model
    rng = np.random.default_rng(n)
    X = random_points(H, 50, rng, scale=2.0)
    dirs = rng.standard_normal((50, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    V = 20.0 * np.einsum("ci,cid->cd", dirs, m.frame(X))
    Y = m.exp(X, V)
    assert np.max(m.constraint_residual(Y)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.0, 2.5))
def test_sphere_log_inverts_exp(a, b, r):
    S = ManifoldSpec.sphere(2)
    m = S.model
    x = m.project_point(np.array([a, b, 1.0]))
    u = m.frame(x)
    v = r * (np.cos(a) * u[0] + np.sin(a) * u[1])
    y = m.exp(x, v)
    np.testing.assert_allclose(m.log(x, y), v, atol=1e-9)


# frames -------------------------------------------------------------------------


@pytest.mark.parametrize("name", list(SPECS))
def test_frames_are_orthonormal_and_tangent(name, rng):
    spec = SPECS[name]
    for x in random_points(spec, 25, rng, scale=3.0):
        f = orthonormal_frame(validate_point(spec, x))
        np.testing.assert_allclose(f.gram(), np.eye(spec.dim), atol=1e-10)
        assert np.max(np.abs(spec.model.tangency_residual(x, f.basis))) <= 1e-10


def test_frame_examples():
    f = orthonormal_frame(validate_point(ManifoldSpec.sphere(2), (0, 0, 1.0)))
    np.testing.assert_allclose(f.basis @ [0, 0, 1.0], 0.0, atol=1e-15)
    e = orthonormal_frame(validate_point(ManifoldSpec.euclidean(3), (1.0, 2.0, 3.0)))
    np.testing.assert_array_equal(e.basis, np.eye(3))


def test_frame_is_deterministic():
    x = validate_point(ManifoldSpec.hyperbolic(2), (math.cosh(1), 0.0, math.sinh(1)))
    np.testing.assert_array_equal(orthonormal_frame(x).basis, orthonormal_frame(x).basis)


# Hessian of the squared distance --------------------------------------------------


def test_hess_at_pole_is_2i():
    S = ManifoldSpec.sphere(2)
    mu = validate_point(S, (0, 0, 1.0))
    np.testing.assert_array_equal(hess_dist_sq(S, mu, mu), 2 * np.eye(2))


def test_hess_sphere_quarter_circle():
    S = ManifoldSpec.sphere(2)
    H = hess_dist_sq(S, validate_point(S, (0, 0, 1.0)), validate_point(S, (1.0, 0, 0)))
    np.testing.assert_allclose(np.linalg.eigvalsh(H), [0.0, 2.0], atol=1e-12)


def test_hess_hyperbolic_unit_distance_matches_fd():
    H2 = ManifoldSpec.hyperbolic(2)
    mu = validate_point(H2, (1.0, 0, 0))
    x = validate_point(H2, (math.cosh(1), math.sinh(1), 0.0))
    closed = hess_dist_sq(H2, mu, x)
    assert np.linalg.eigvalsh(closed)[1] == pytest.approx(2 / math.tanh(1), abs=1e-12)
    fd = _stencil.hessian(H2.model, lambda Y: H2.model.dist(mu.coords, Y) ** 2, x.coords, 1e-3)
    np.testing.assert_allclose(fd, closed, atol=1e-4)


def test_hess_at_cut_locus_raises():
    C = ManifoldSpec.circle()
    with pytest.raises(CutLocus):
        hess_dist_sq(C, validate_point(C, (0.0,)), validate_point(C, (-math.pi,)))


@pytest.mark.parametrize("name", ["sphere2", "hyperbolic2", "torus2", "euclidean3", "circle"])
def test_hess_matches_fd_oracle(name, rng):
    spec = SPECS[name]
    m = spec.model
    mus = random_points(spec, 100, rng)
    xs = random_points(spec, 100, rng)
    for mu, x in zip(mus, xs):
        if np.any(m.cut_gap(mu, x) < 0.5) or m.dist(mu, x) < 1e-3:
            continue
        closed = hess_dist_sq(spec, Point(spec, mu), Point(spec, x))
        fd = _stencil.hessian(m, lambda Y, mu=mu: m.dist(mu, Y) ** 2, x, 1e-3)
        np.testing.assert_allclose(fd, closed, atol=1e-4)


# boundary normals -------------------------------------------------------------------


def test_boundary_normal_euclidean():
    B = ManifoldSpec.euclidean(2).with_ball((1.0, 2.0), 0.5)
    x = validate_point(B, (1.3, 2.4))
    n = boundary_normal(B, x)
    np.testing.assert_allclose(n.vec, [0.6, 0.8], atol=1e-12)


@pytest.mark.parametrize("spec", [
    ManifoldSpec.sphere(2).with_ball((0.0, 0.0, 1.0), 1.0),
    ManifoldSpec.hyperbolic(2).with_ball((1.0, 0.0, 0.0), 1.5),
    ManifoldSpec.euclidean(2).with_ball((0.0, 0.0), 2.0),
])
def test_boundary_normal_is_unit_and_orthogonal_to_the_boundary(spec):
    m = spec.model
    pts = boundary_points(spec, 16)
    for i, x in enumerate(pts):
        n = boundary_normal(spec, validate_point(spec.unrestricted(), x))
        assert n.norm() == pytest.approx(1.0, abs=1e-10)
        # boundary tangent by differencing along the boundary circle
        a, b = pts[(i + 1) % 16], pts[i - 1]
        t = m.proj(x, a - b)
        assert abs(m.inner(x, n.vec, t)) / np.linalg.norm(t) < 1e-2


def test_boundary_normal_off_boundary_raises():
    B = ManifoldSpec.euclidean(2).with_ball((0.0, 0.0), 1.0)
    with pytest.raises(NotOnBoundary):
        boundary_normal(B, validate_point(B, (0.2, 0.1)))
