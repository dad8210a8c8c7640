import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gphlvm.errors import DomainError, ValidationError
from gphlvm.evalmotion import (
    DEFAULT_DT,
    DEFAULT_STEPS,
    Trajectory,
    class_centroids,
    error_matrix,
    interpolate,
    jerkiness,
    nearest_centroid,
    nearest_classes,
    stress_report,
)
from gphlvm.graphtax import balanced_tree
from gphlvm.gplvm import GphlvmModel, TrainConfig, decode
from gphlvm.kernels import KernelSpec
from gphlvm.manifold import distance, exp_map, geodesic, lift, origin


def _model(latents, classes, geometry="euclidean"):
    graph = balanced_tree(1, 2)
    X = np.asarray(latents, dtype=float)
    kernel = KernelSpec("euclidean_se" if geometry == "euclidean" else "hyperbolic_l2_mc")
    rng = np.random.default_rng(0)
    return GphlvmModel(geometry=geometry, latent_dim=2, latents=X, kernel=kernel, noise=np.full(3, 0.1),
                       prior_alpha=1.0, observations=rng.normal(size=(len(X), 3)), classes=tuple(classes),
                       graph=graph, train_config=TrainConfig(geometry=geometry))


@pytest.fixture
def perfect():
    # r.0 -- r -- r.1 on a line: graph distances 1, 1, 2
    return _model([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]], ["r.0", "r", "r.1"])


# -- stress report and error matrix -------------------------------------------------------


def test_perfect_embedding_report(perfect):
    rep = stress_report(perfect)
    assert rep.mean == pytest.approx(0.0, abs=1e-24) and rep.std == pytest.approx(0.0, abs=1e-24)
    assert np.array_equal(error_matrix(perfect), np.zeros((3, 3)))


def test_single_pair_report():
    m = _model([[0.0, 0.0], [1.0, 0.0]], ["r.0", "r.1"])
    rep = stress_report(m)
    assert rep.mean == pytest.approx(1.0, abs=1e-14)
    assert rep.per_pair == ((0, 1, pytest.approx(1.0, abs=1e-14)),)


def test_report_with_extras_counts_pairs(tree30_stress_model):
    m = tree30_stress_model
    extra = [(lift(np.array([0.1, 0.2])), "r.0"), (lift(np.array([-0.3, 0.0])), "r.1.0")]
    rep = stress_report(m, extra=extra)
    n = m.n + len(extra)
    assert rep.n_pairs == n * (n - 1) // 2


def test_report_stats_recomputable(tree30_stress_model):
    rep = stress_report(tree30_stress_model)
    errs = np.array([e for _, _, e in rep.per_pair])
    assert abs(errs.mean() - rep.mean) <= 1e-12
    assert abs(errs.std() - rep.std) <= 1e-12
    assert all(i < j for i, j, _ in rep.per_pair)


def test_error_matrix_consistent_with_report(tree30_stress_model):
    m = tree30_stress_model
    E = error_matrix(m)
    N = m.n
    assert np.array_equal(E, E.T) and np.all(np.diag(E) == 0)
    assert (E**2).sum() / 2 * 2 / (N * (N - 1)) == pytest.approx(stress_report(m).mean, abs=1e-12)


def test_report_rejects_row_mismatch(perfect, tree30):
    _, ds = tree30
    with pytest.raises(ValidationError):
        stress_report(perfect, dataset=ds)


# -- interpolation ---------------------------------------------------------------------------


def test_interpolate_endpoints_and_spacing(tree30_stress_model):
    m = tree30_stress_model
    traj = interpolate(m, 0, m.n - 1)
    assert traj.steps == DEFAULT_STEPS and traj.dt == DEFAULT_DT
    assert np.array_equal(traj.latent_path[0], m.latents[0])
    assert np.array_equal(traj.latent_path[-1], m.latents[-1])
    da, _ = decode(m, m.latents[0])
    db, _ = decode(m, m.latents[-1])
    assert np.array_equal(traj.decoded[0], da) and np.array_equal(traj.decoded[-1], db)
    steps = distance(traj.latent_path[:-1], traj.latent_path[1:])
    assert np.ptp(steps) <= 1e-8
    assert steps.sum() == pytest.approx(float(distance(m.latents[0], m.latents[-1])), abs=1e-6)
    assert traj.class_path[0] == m.classes[0] and traj.class_path[-1] == m.classes[-1]


def test_interpolate_euclidean_straight_line(perfect):
    traj = interpolate(perfect, 0, 2, T=4)
    assert np.allclose(traj.latent_path[:, 0], np.linspace(-1.0, 1.0, 4), atol=1e-15)
    assert traj.class_path == ("r.0", "r", "r", "r.1")


def test_interpolate_coordinates_and_errors(tree30_stress_model):
    m = tree30_stress_model
    a, b = lift(np.array([0.2, 0.1])), lift(np.array([-0.4, 0.3]))
    traj = interpolate(m, a, b, T=7, dt=0.5)
    assert np.array_equal(traj.latent_path[0], a) and np.array_equal(traj.latent_path[-1], b)
    with pytest.raises(ValidationError):
        interpolate(m, 0, m.n)
    with pytest.raises(ValidationError):
        interpolate(m, 0, 1, T=1)
    with pytest.raises(ValidationError):
        interpolate(m, np.zeros(2), 1)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_geodesic_length_equals_distance(x1, y1, x2, y2):
    a, b = lift(np.array([x1, y1])), lift(np.array([x2, y2]))
    path = geodesic(a, b, np.linspace(0, 1, 50))
    assert distance(path[:-1], path[1:]).sum() == pytest.approx(float(distance(a, b)), abs=1e-6)


def _leaf_pair_ok(m, traj, ca, cb):
    g = m.graph
    dab = g.dist[g.index[ca], g.index[cb]]
    return all(g.dist[g.index[c], g.index[ca]] <= dab and g.dist[g.index[c], g.index[cb]] <= dab
               for c in set(traj.class_path))


def test_class_path_follows_taxonomy(tree30_stress_model):
    m = tree30_stress_model
    leaves = [i for i, c in enumerate(m.classes) if c.count(".") == 3]
    pairs = [(i, j) for i, j in itertools.combinations(leaves, 2) if m.classes[i] != m.classes[j]]
    ok = [_leaf_pair_ok(m, interpolate(m, i, j, T=60), m.classes[i], m.classes[j]) for i, j in pairs]
    assert np.mean(ok) >= 0.9


# -- jerkiness ---------------------------------------------------------------------------------


def test_jerkiness_constant_and_quadratic():
    t = np.arange(20.0)
    assert jerkiness(np.ones((20, 3))) == 0.0
    quad = np.stack([t**2, 3 * t**2 - t + 1], 1)
    assert jerkiness(quad) == pytest.approx(0.0, abs=1e-8)


def test_jerkiness_cubic():
    t = np.arange(10.0)
    assert jerkiness(t**3) == pytest.approx(36.0, abs=1e-9)


def test_jerkiness_scales_with_dt():
    t = np.arange(10.0)
    traj = Trajectory(np.zeros((10, 2)), (t**3)[:, None], ("r",) * 10, dt=0.5)
    assert jerkiness(traj) == pytest.approx(36.0 / 0.5**6, rel=1e-12)


def test_jerkiness_needs_four_steps():
    with pytest.raises(DomainError):
        jerkiness(np.zeros((3, 2)))


@given(st.integers(4, 40), st.integers(0, 10_000))
def test_jerkiness_nonnegative(T, seed):
    assert jerkiness(np.random.default_rng(seed).normal(size=(T, 2))) >= 0.0


# -- centroids -----------------------------------------------------------------------------------


def test_centroid_single_point_and_pair():
    a = exp_map(origin(2), np.array([0.0, 0.5, 0.2]))
    b = exp_map(origin(2), np.array([0.0, -0.3, 0.9]))
    c = lift(np.array([1.0, 1.0]))
    m = _model(np.stack([a, b, c]), ["r.0", "r.0", "r.1"], geometry="lorentz")
    cents = class_centroids(m)
    assert np.allclose(cents["r.1"], c, atol=1e-12)
    assert float(distance(cents["r.0"], geodesic(a, b, np.array([0.5]))[0])) <= 1e-8


def test_centroid_euclidean_mean_and_lookup_error(perfect):
    cents = class_centroids(perfect)
    assert np.array_equal(cents["r"], np.zeros(2))
    with pytest.raises(KeyError):
        class_centroids(perfect, classes=["r.5"])


def test_centroids_of_trained_model(tree30_stress_model):
    m = tree30_stress_model
    cents = class_centroids(m)
    assert set(cents) == set(m.classes)
    assert nearest_centroid(m, cents, m.latents) == tuple(m.classes)
    assert nearest_classes(m, m.latents) == tuple(m.classes)
