import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from neuralcv import geometry as g


def test_registry_names_and_unknown():
    assert set(g.PROBLEMS) >= {"disk-harmonic", "square-poisson", "square-highfreq", "ball3d-harmonic",
                                "star3d-harmonic", "square-poisson-highfreq-forcing"}
    with pytest.raises(KeyError):
        g.registry_lookup("bunny")


def test_distance_to_boundary_disk():
    spec = g.registry_lookup("disk-harmonic")
    assert_allclose(g.distance_to_boundary(spec, [0.3, 0.4]), 0.5)
    with pytest.raises(ValueError):
        g.distance_to_boundary(spec, [1.0, 0.0])


def test_box_sdf_inside_is_distance_to_nearest_edge():
    spec = g.registry_lookup("square-poisson")
    assert_allclose(g.distance_to_boundary(spec, [0.2, 0.7]), 0.2)
    assert_allclose(spec.domain.project(np.array([0.2, 0.7])), [0.0, 0.7])


@pytest.mark.parametrize("name", ["disk-harmonic", "square-poisson", "ball3d-harmonic", "star3d-harmonic"])
def test_sdf_is_one_lipschitz(name):
    spec = g.registry_lookup(name)
    rng = np.random.default_rng(0)
    lo, hi = spec.domain.bbox()
    a = rng.uniform(lo - 0.1, hi + 0.1, (2000, spec.dim))
    b = a + rng.normal(scale=0.05, size=a.shape)
    ds = np.abs(spec.domain.sdf(a) - spec.domain.sdf(b))
    assert np.all(ds <= np.linalg.norm(a - b, axis=-1) * (1 + 1e-9))


def test_star_projection_lands_on_boundary():
    spec = g.registry_lookup("star3d-harmonic")
    x = g.sample_interior(spec, np.random.default_rng(1), 200)
    p = spec.domain.project(x)
    assert np.max(np.abs(spec.domain.sdf(p))) < 1e-8


def test_highfreq_boundary_data_is_nonzero():
    spec = g.registry_lookup("square-highfreq")
    lo, hi = spec.domain.bbox()
    t = np.linspace(lo[0], hi[0], 101)
    edge = np.stack([t, np.full_like(t, lo[1])], axis=-1)
    assert np.max(np.abs(spec.boundary_g(edge))) > 0.9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sphere_samples_have_exact_radius(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3)
    p = g.sample_uniform_boundary_sphere(c, 0.7, rng, n=50)
    assert_allclose(np.linalg.norm(p - c, axis=-1), 0.7)


def test_sphere_sampling_is_uniform_first_moments():
    rng = np.random.default_rng(2)
    d = g.uniform_directions(rng, 200000, 3)
    # E[z] = 0, E[z^2] = 1/3 for uniform directions
    assert abs(d[:, 2].mean()) < 4 * np.sqrt(1 / 3 / 200000)
    assert abs((d[:, 2] ** 2).mean() - 1 / 3) < 4 * np.sqrt(4 / 45 / 200000)


def test_ball_sampling_radius_distribution():
    rng = np.random.default_rng(3)
    p = g.sample_uniform_ball(np.zeros(2), 2.0, rng, n=200000)
    r = np.linalg.norm(p, axis=-1)
    # uniform in the disk: E[r] = 2R/3
    assert abs(r.mean() - 4 / 3) < 4 * r.std() / np.sqrt(r.size)
    assert r.max() <= 2.0
    with pytest.raises(ValueError):
        g.sample_uniform_ball(np.zeros(3), 1.0, rng)
    with pytest.raises(ValueError):
        g.sample_uniform_ball(np.zeros(2), 0.0, rng)


def test_interior_samples_respect_min_distance():
    spec = g.registry_lookup("square-poisson")
    x = g.sample_interior(spec, np.random.default_rng(4), 500, min_distance=0.1)
    assert x.shape == (500, 2)
    assert np.all(spec.domain.sdf(x) < -0.1)
