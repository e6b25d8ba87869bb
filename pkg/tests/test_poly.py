import numpy as np
import pytest
from numpy.testing import assert_allclose

from neuralcv.control_variates import estimate, output_scale
from neuralcv.geometry import sample_uniform_boundary_sphere
from neuralcv.poly import make_poly, monomial_exponents, monomial_integrals, poly_integral
from neuralcv.quadrature import cube_integral
from neuralcv.transforms import DomainTransform, jacobian_det_eps, phi_inverse

BBOX = (np.zeros(2), np.ones(2))


def test_coefficient_count():
    for d in (1, 2):
        assert len(monomial_exponents(2, d)) == 3**d


@pytest.mark.parametrize("d", [1, 2])
def test_monomial_integrals_match_quadrature(d):
    for alpha in monomial_exponents(3, d):
        q = cube_integral(lambda u: np.prod(u**alpha, axis=-1), d)
        assert abs(monomial_integrals(alpha[None])[0] - q) < 1e-10


def _zeroed(pd):
    m = make_poly(pd, 2, BBOX, np.random.default_rng(0))
    m.params["L"][:] = 0
    return m


def test_zero_coefficients_integrate_to_zero():
    assert poly_integral(_zeroed(2), np.array([[0.5, 0.5]]))[0] == 0


def test_constant_term_integrates_to_cube_measure():
    m = _zeroed(2)
    m.params["l"][0] = 1.5  # exponent (0, 0)
    assert_allclose(poly_integral(m, np.array([[0.5, 0.5]])), 4 * 1.5)


def test_square_term_d1():
    m = _zeroed(1)
    m.params["l"][2] = 1.0  # exponent (2,)
    assert_allclose(poly_integral(m, np.array([[0.5, 0.5]])), 2 / 3)


def test_exact_on_span_after_least_squares():
    c = np.array([0.5, 0.5])
    R = 0.3
    t = DomainTransform("circle2d", c, R, 0.05)
    rng = np.random.default_rng(1)
    x = sample_uniform_boundary_sphere(c, R, rng, 4000)
    u = phi_inverse(t, x)
    q = 0.3 - 1.2 * u[:, 0] + 0.7 * u[:, 0] ** 2
    # integrand whose Jacobian-weighted cube image is the quadratic q
    f = q * output_scale(t) / jacobian_det_eps(t, u)
    m = _zeroed(1)
    target = f * jacobian_det_eps(t, u) / output_scale(t)
    m.params["l"] = np.linalg.lstsq(m.basis(u), target, rcond=None)[0]
    br = estimate(m, f, x, t.uniform_density(), c, t)
    assert np.var(br.total) < 1e-10


def test_poly_estimator_unbiased_for_random_coefficients():
    c = np.array([0.5, 0.5])
    R = 0.3
    t = DomainTransform("circle2d", c, R, 0.05)
    m = make_poly(1, 2, BBOX, np.random.default_rng(2))
    m.params["l"] = np.array([0.5, 2.0, -1.0])
    x = sample_uniform_boundary_sphere(c, R, np.random.default_rng(3), 200_000)
    f = np.sin(5 * x[:, 0])
    br = estimate(m, f, x, t.uniform_density(), c, t)
    a = np.linspace(-np.pi, np.pi, 200001)[:-1]
    truth = np.mean(np.sin(5 * (c[0] + R * np.cos(a)))) * 2 * np.pi * R
    assert abs(br.total.mean() - truth) < 4 * br.total.std() / np.sqrt(br.total.size)
