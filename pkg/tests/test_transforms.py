import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from neuralcv import transforms as tr
from neuralcv.quadrature import cube_integral, domain_integral

CASES = [("circle2d", (0.1, 0.2), 0.3), ("disk2d", (0.1, 0.2), 0.3), ("sphere3d", (0.1, 0.2, -0.3), 0.4)]


def T(kind, c, R, eps=0.05):
    return tr.DomainTransform(kind, np.array(c), R, eps)


def _fd_jacobian(t, u, h=1e-6):
    cols = []
    for i in range(t.param_dim):
        e = np.zeros(t.param_dim)
        e[i] = h
        cols.append((tr.phi(t, u + e) - tr.phi(t, u - e)) / (2 * h))
    J = np.stack(cols, axis=-1)
    if t.param_dim == 1:
        return np.linalg.norm(J[:, 0])
    if t.kind == "disk2d":
        return abs(np.linalg.det(J))
    return np.linalg.norm(np.cross(J[:, 0], J[:, 1]))


@pytest.mark.parametrize("kind,c,R", CASES)
def test_jacobian_matches_finite_differences(kind, c, R):
    t = T(kind, c, R)
    rng = np.random.default_rng(0)
    for u in rng.uniform(-0.95, 0.95, (20, t.param_dim)):
        assert_allclose(tr.jacobian_det(t, u), _fd_jacobian(t, u), rtol=1e-6)


@pytest.mark.parametrize("kind,c,R", CASES)
def test_cube_integral_of_jacobian_is_measure(kind, c, R):
    t = T(kind, c, R, 0.0)
    assert_allclose(cube_integral(lambda u: tr.jacobian_det(t, u), t.param_dim), t.measure(), rtol=1e-12)


@pytest.mark.parametrize("kind,c,R", CASES)
def test_change_of_variables_nonconstant(kind, c, R):
    t = T(kind, c, R, 0.0)
    F = lambda x: np.exp(x[..., 0]) * (1 + x[..., 1] ** 2)
    lhs = cube_integral(lambda u: F(tr.phi(t, u)) * tr.jacobian_det(t, u), t.param_dim)
    assert_allclose(lhs, domain_integral(kind, F, c, R), rtol=1e-11)


def test_known_jacobian_values():
    assert_allclose(tr.jacobian_det(T("disk2d", (0, 0), 1.0), np.array([1.0, 0.0])), np.pi / 2)
    assert_allclose(tr.jacobian_det(T("sphere3d", (0, 0, 0), 1.0), np.array([0.0, 0.0])), np.pi**2 / 2)
    assert_allclose(tr.jacobian_det(T("circle2d", (0, 0), 2.0), np.array([0.3])), 2 * np.pi)


@pytest.mark.parametrize("kind,c,R", CASES)
def test_shrunk_jacobian_bounded_below(kind, c, R):
    t = T(kind, c, R, 0.05)
    u = np.random.default_rng(1).uniform(-1, 1, (5000, t.param_dim))
    u = np.concatenate([u, tr.corners(t.param_dim)[0]])
    assert np.all(tr.jacobian_det(t, tr.eps_shrink(t, u)) >= tr.jacobian_lower_bound(t) * (1 - 1e-12))


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(CASES), st.integers(0, 2**31 - 1))
def test_phi_inverse_roundtrip(case, seed):
    kind, c, R = case
    t = T(kind, c, R)
    u = np.random.default_rng(seed).uniform(-0.999, 0.999, (10, t.param_dim))
    x = tr.phi(t, u)
    assert_allclose(tr.phi(t, tr.phi_inverse(t, x)), x, atol=1e-12)
    assert_allclose(tr.phi_inverse(t, x), u, atol=1e-9)


@pytest.mark.parametrize("kind,c,R", CASES)
def test_shrink_preimage_and_indicator(kind, c, R):
    t = T(kind, c, R)
    u = np.random.default_rng(2).uniform(-1, 1, (100, t.param_dim))
    back, ok = tr.eps_shrink_preimage(t, tr.eps_shrink(t, u))
    assert ok.all()
    assert_allclose(back, u, atol=1e-14)


def test_indicator_excludes_disk_core_and_sphere_caps():
    t = T("disk2d", (0, 0), 1.0, 0.1)
    x = np.array([[0.04, 0.0], [0.06, 0.0]])
    _, ok = tr.eps_shrink_preimage(t, tr.phi_inverse(t, x))
    assert list(ok) == [False, True]
    s = T("sphere3d", (0, 0, 0), 1.0, 0.1)
    a = np.array([0.9 * np.pi * 0.05, 1.1 * np.pi * 0.05])
    pts = np.stack([np.sin(a), np.zeros(2), np.cos(a)], axis=-1)
    _, ok = tr.eps_shrink_preimage(s, tr.phi_inverse(s, pts))
    assert list(ok) == [False, True]


def test_transform_validation():
    with pytest.raises(ValueError):
        tr.DomainTransform("torus", np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        tr.DomainTransform("disk2d", np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        tr.phi(T("disk2d", (0, 0), 1.0), np.array([1.5, 0.0]))
    with pytest.raises(ValueError):
        tr.phi_inverse(T("circle2d", (0, 0), 1.0), np.array([0.5, 0.0]))


def test_corners_signs():
    pts, signs = tr.corners(2)
    assert_allclose(signs, np.prod(pts, axis=-1))
    assert sorted(signs) == [-1, -1, 1, 1]
