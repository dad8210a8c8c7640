import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from gphlvm.errors import DimensionError, DomainError
from gphlvm.manifold import (
    distance,
    exp_map,
    frechet_mean,
    from_poincare,
    geodesic,
    is_on_manifold,
    lift,
    log_map,
    minkowski_inner,
    origin,
    pairwise_distance,
    parallel_transport,
    poincare_distance,
    project_to_tangent,
    random_points,
    tangent_basis,
    to_poincare,
)

coords = st.floats(-3.0, 3.0, allow_nan=False)


def tangent_at(x, w):
    w = np.asarray(w, dtype=float)
    return project_to_tangent(x, np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1))


class TestInner:
    def test_origin_self(self):
        assert minkowski_inner([1, 0, 0], [1, 0, 0]) == -1

    def test_spacelike_unit(self):
        assert minkowski_inner([0, 1, 0], [0, 1, 0]) == 1

    def test_substitution(self):
        assert minkowski_inner([1, 2, 3], [4, 5, 6]) == 24

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            minkowski_inner([1, 0, 0], [1, 0])


class TestDistance:
    def test_identity(self):
        assert distance(origin(2), origin(2)) == 0.0

    def test_unit_speed(self):
        y = exp_map(origin(2), np.array([0.0, 0.7, 0.0]))
        assert distance(origin(2), y) == pytest.approx(0.7, abs=1e-12)

    def test_symmetry(self, rng):
        x, y = random_points(rng, 50, 3), random_points(rng, 50, 3)
        np.testing.assert_allclose(distance(x, y), distance(y, x), rtol=0, atol=1e-12)

    def test_matches_arcosh_form(self, rng):
        x, y = random_points(rng, 50, 2, 2.0), random_points(rng, 50, 2, 2.0)
        ref = np.arccosh(np.maximum(1.0, -minkowski_inner(x, y)))
        np.testing.assert_allclose(distance(x, y), ref, rtol=1e-9)

    def test_pairwise_shape(self, rng):
        X = random_points(rng, 4, 2)
        D = pairwise_distance(X)
        assert D.shape == (4, 4)
        np.testing.assert_allclose(np.diag(D), 0.0)


class TestExpLog:
    def test_exp_zero(self):
        np.testing.assert_array_equal(exp_map(origin(2), np.zeros(3)), origin(2))

    def test_exp_formula(self):
        t = 1.3
        np.testing.assert_allclose(exp_map([1.0, 0, 0], [0, t, 0]), [math.cosh(t), math.sinh(t), 0], atol=1e-12)

    def test_log_self(self, rng):
        x = random_points(rng, 1, 2)[0]
        np.testing.assert_allclose(log_map(x, x), np.zeros(3), atol=1e-12)

    def test_log_norm_is_distance(self, rng):
        x, y = random_points(rng, 100, 2, 1.5), random_points(rng, 100, 2, 1.5)
        u = log_map(x, y)
        np.testing.assert_allclose(np.sqrt(minkowski_inner(u, u)), distance(x, y), atol=1e-9)

    @given(st.lists(coords, min_size=2, max_size=2), st.lists(coords, min_size=2, max_size=2))
    def test_exp_log_inverse(self, a, b):
        x, y = lift(np.array(a)), lift(np.array(b))
        np.testing.assert_allclose(exp_map(x, log_map(x, y)), y, atol=1e-9 * max(1.0, y[0]))

    @given(st.lists(coords, min_size=3, max_size=3), st.lists(st.floats(-2.8, 2.8), min_size=3, max_size=3))
    def test_log_exp_inverse(self, a, w):
        x = lift(np.array(a))
        u = tangent_at(x, np.array(w))
        n = math.sqrt(max(minkowski_inner(u, u), 0.0))
        if n > 5:
            u = u * 5 / n
        np.testing.assert_allclose(log_map(x, exp_map(x, u)), u, atol=1e-8 * max(1.0, x[0]) ** 2)

    @given(st.lists(coords, min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
    def test_exp_stays_on_manifold(self, a, w):
        x = lift(np.array(a))
        assert is_on_manifold(exp_map(x, tangent_at(x, np.array(w))))


class TestTransport:
    def test_self_transport(self, rng):
        x = random_points(rng, 1, 2)[0]
        v = tangent_at(x, rng.normal(size=2))
        np.testing.assert_allclose(parallel_transport(x, x, v), v, atol=1e-12)

    def test_isometry_and_tangency(self, rng):
        x, y = random_points(rng, 100, 3), random_points(rng, 100, 3)
        v = tangent_at(x, rng.normal(size=(100, 3)))
        w = tangent_at(x, rng.normal(size=(100, 3)))
        pv, pw = parallel_transport(x, y, v), parallel_transport(x, y, w)
        np.testing.assert_allclose(minkowski_inner(pv, pw), minkowski_inner(v, w), atol=1e-8)
        np.testing.assert_allclose(minkowski_inner(y, pv), 0.0, atol=1e-9)

    def test_round_trip(self, rng):
        x, y = random_points(rng, 100, 2), random_points(rng, 100, 2)
        v = tangent_at(x, rng.normal(size=(100, 2)))
        np.testing.assert_allclose(parallel_transport(y, x, parallel_transport(x, y, v)), v, atol=1e-9)


class TestPoincare:
    def test_origin(self):
        np.testing.assert_array_equal(to_poincare(origin(2)), [0.0, 0.0])
        np.testing.assert_array_equal(from_poincare([0.0, 0.0]), origin(2))

    def test_formula(self):
        t = 0.8
        np.testing.assert_allclose(to_poincare([math.cosh(t), math.sinh(t), 0.0]), [math.tanh(t / 2), 0.0], atol=1e-15)

    def test_round_trip(self, rng):
        x = random_points(rng, 100, 2, 2.0)
        np.testing.assert_allclose(from_poincare(to_poincare(x)), x, rtol=1e-9, atol=1e-9)

    def test_outside_ball(self):
        with pytest.raises(DomainError):
            from_poincare([0.6, 0.8])

    def test_distances_preserved(self, rng):
        x, y = random_points(rng, 100, 2), random_points(rng, 100, 2)
        np.testing.assert_allclose(poincare_distance(to_poincare(x), to_poincare(y)), distance(x, y), atol=1e-8)


class TestGeodesic:
    def test_endpoints(self, rng):
        x, y = random_points(rng, 2, 2)
        np.testing.assert_array_equal(geodesic(x, y, 0.0), x)
        np.testing.assert_array_equal(geodesic(x, y, 1.0), y)

    def test_midpoint(self, rng):
        x, y = random_points(rng, 2, 3)
        m = geodesic(x, y, 0.5)
        assert distance(x, m) == pytest.approx(distance(m, y), abs=1e-10)

    def test_triangle_equality_along_path(self, rng):
        x, y = random_points(rng, 2, 2, 2.0)
        path = geodesic(x, y, np.linspace(0, 1, 30))
        seg = distance(path[:-1], path[1:]).sum()
        assert seg == pytest.approx(distance(x, y), abs=1e-8)

    def test_out_of_range(self, rng):
        x, y = random_points(rng, 2, 2)
        with pytest.raises(DomainError):
            geodesic(x, y, 1.5)


class TestProjectionAndLift:
    def test_tangent_unchanged(self, rng):
        x = random_points(rng, 1, 2)[0]
        v = tangent_at(x, rng.normal(size=2))
        np.testing.assert_allclose(project_to_tangent(x, v), v, atol=1e-12)

    def test_radial_vanishes(self, rng):
        x = random_points(rng, 1, 2)[0]
        np.testing.assert_allclose(project_to_tangent(x, x), 0.0, atol=1e-12)

    def test_idempotent(self, rng):
        x = random_points(rng, 1, 3)[0]
        v = rng.normal(size=4)
        p = project_to_tangent(x, v)
        np.testing.assert_allclose(project_to_tangent(x, p), p, atol=1e-12)

    def test_lift_values(self):
        np.testing.assert_array_equal(lift([0.0, 0.0]), origin(2))
        np.testing.assert_allclose(lift([1.0, 0.0]), [math.sqrt(2), 1.0, 0.0])

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=4))
    def test_lift_on_manifold(self, z):
        assert is_on_manifold(lift(np.array(z)))


def test_triangle_inequality(rng):
    x, y, z = (random_points(rng, 500, 2, 2.0) for _ in range(3))
    assert np.all(distance(x, z) <= distance(x, y) + distance(y, z) + 1e-10)


def test_tangent_basis_orthonormal(rng):
    x = random_points(rng, 1, 3)[0]
    E = tangent_basis(x)
    G = np.array([[minkowski_inner(a, b) for b in E] for a in E])
    np.testing.assert_allclose(G, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(minkowski_inner(E, x), 0.0, atol=1e-10)


def test_frechet_mean_pair_is_midpoint(rng):
    x, y = random_points(rng, 2, 2)
    m, it = frechet_mean(np.stack([x, y]))
    np.testing.assert_allclose(m, geodesic(x, y, 0.5), atol=1e-8)
    assert it <= 100


def test_torch_inputs_stay_differentiable():
    x = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    u = torch.tensor([0.0, 0.3, 0.4], dtype=torch.float64, requires_grad=True)
    d = distance(x, exp_map(x, u))
    d.backward()
    # spatial part of the ambient gradient of |u| at the origin
    np.testing.assert_allclose(u.grad.numpy()[1:], [0.6, 0.8], atol=1e-12)
