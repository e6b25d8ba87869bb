"""Stabilized control-variate estimator and its variance-minimizing losses.

For a model with cube integrand ``g(u, c)`` (mixed partial of an
antiderivative network, or a polynomial value) and analytic cube integral
``I(c)``, a sample ``x`` with density ``p(x)`` gives the single-sample
estimate::

    I(c) + f(x) / p(x) - 1[u in U] * g(u, c) / (|J_eps(u)| * p(x))

where ``u`` is the preimage of ``x`` under the stabilized map. The indicator
drops the thin region the stabilized map does not cover, so the expected
control term is exactly ``I(c)`` for every parameter setting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .transforms import DomainTransform, eps_shrink_preimage, jacobian_det_eps, phi_inverse


@dataclass
class CvSampleBreakdown:
    raw_term: np.ndarray
    cv_term: np.ndarray
    i_theta: np.ndarray
    total: np.ndarray


@dataclass
class CvEstimator:
    """A model paired with a transform kind and stabilization ``eps``."""

    model: object
    transform_kind: str
    eps: float = 0.05

    def transform(self, center, radius) -> DomainTransform:
        return DomainTransform(self.transform_kind, center, radius, self.eps)

    def estimate(self, f_sample, x, density, c, center, radius) -> CvSampleBreakdown:
        return estimate(self.model, f_sample, x, density, c, self.transform(center, radius))


def _rows(a, n, d):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = np.broadcast_to(a, (n, d))
    return a


def cube_coordinates(t: DomainTransform, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stabilized cube preimage of ``x``: ``(u, in_range, |J_eps(u)|)``.

    ``u`` is clipped into the cube so it is always a valid model input;
    rows with ``in_range`` false must be masked by the caller.
    """
    u_raw = phi_inverse(t, x)
    u, ok = eps_shrink_preimage(t, u_raw)
    u = np.clip(u, -1.0, 1.0)
    return u, ok, jacobian_det_eps(t, u)


def output_scale(t: Optional[DomainTransform]) -> np.ndarray:
    """Known per-condition factor applied to both the integrand and ``I(c)``.

    Scaling by a function of the condition alone leaves the estimator
    unbiased; it only changes what the model has to fit. A forcing integrand
    over a disk is ``O(1)`` in the radius, so its Jacobian-weighted cube image
    shrinks like ``R^2``. For sphere averages only the non-constant part of
    ``u`` carries variance and it shrinks like ``R``, against a Jacobian that
    grows like ``R^2``. Circle averages train best unscaled.
    """
    if t is None:
        return np.ones(())
    if t.kind == "disk2d":
        return t.radius**2
    if t.kind == "sphere3d":
        return np.array(t.radius)
    return np.ones(np.shape(t.radius))


def corner_sum(model, c, transform: Optional[DomainTransform] = None, tape=None):
    """Analytic integral ``I(c)`` of the model's control variate.

    Apart from :func:`output_scale` it is independent of the transform: the
    Jacobian cancels between the integrand's change of variables and the
    estimator's denominator.
    """
    out = model.integral(c, tape) * output_scale(transform)
    return out if tape is not None else out.val


def _cv_node(model, x, c, t: DomainTransform, tape=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u, ok, jac = cube_coordinates(t, x)
    cc = _rows(c, x.shape[0], model.cond_dim)
    g = model.integrand(u, cc, tape)
    weight = np.where(ok, output_scale(t) / jac, 0.0)
    return g * weight, ok


def cv_integrand(model, x, c, transform: DomainTransform) -> np.ndarray:
    """Control-variate integrand value at domain point(s) ``x`` (no density)."""
    node, _ = _cv_node(model, x, c, transform)
    return node.val


def estimate(model, f_sample, x, density, c, transform: DomainTransform) -> CvSampleBreakdown:
    """Single-sample estimates for a batch of samples ``x``."""
    density = np.asarray(density, dtype=np.float64)
    if np.any(density <= 0):
        raise ValueError("sampling density must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cc = _rows(c, x.shape[0], model.cond_dim)
    i_theta = corner_sum(model, cc, transform)
    raw = np.asarray(f_sample, dtype=np.float64) / density
    cv = cv_integrand(model, x, cc, transform) / density
    return CvSampleBreakdown(raw, cv, i_theta, i_theta + raw - cv)


# --- losses -------------------------------------------------------------------


def loss_int(model, c, transform: DomainTransform, x_uniform, f_value, tape: ad.Tape) -> ad.HyperDual:
    """Mean of ``(f(x) |Omega| - I)^2`` over uniform samples (taped)."""
    f_value = np.asarray(f_value, dtype=np.float64)
    if f_value.size == 0:
        raise ValueError("empty batch")
    n = f_value.shape[0]
    cc = _rows(c, n, model.cond_dim)
    i_theta = corner_sum(model, cc, transform, tape)
    resid = i_theta - f_value * transform.measure()
    return ad.square(resid).mean()


def loss_diff(model, c, transform: DomainTransform, x, density, f_value, tape: ad.Tape) -> ad.HyperDual:
    """Batch mean of ``(f - cv)^2 / p^2`` with the indicator applied.

    Samples in the region the stabilized map does not reach carry no
    gradient, so only survivors are evaluated; the mean still divides by the
    full batch size so the gradient stays unbiased.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    f_value = np.broadcast_to(np.asarray(f_value, dtype=np.float64), (x.shape[0],))
    density = np.broadcast_to(np.asarray(density, dtype=np.float64), (x.shape[0],))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    _, ok, _ = cube_coordinates(transform, x)
    if not np.any(ok):
        raise ValueError("every sample was discarded by the indicator")
    t = _subset(transform, ok)
    cc = _rows(c, x.shape[0], model.cond_dim)[ok]
    node, _ = _cv_node(model, x[ok], cc, t, tape)
    resid = (node - f_value[ok]) * (1.0 / density[ok])
    return ad.square(resid).mean() * (np.count_nonzero(ok) / x.shape[0])


def _subset(t: DomainTransform, mask) -> DomainTransform:
    center = t.center if t.center.ndim == 1 else t.center[mask]
    radius = t.radius if t.radius.ndim == 0 else t.radius[mask]
    return DomainTransform(t.kind, center, radius, t.eps)


@dataclass
class ConditionBatch:
    """Samples for one integration domain in a multi-domain objective."""

    c: np.ndarray
    transform: DomainTransform
    x: np.ndarray
    density: np.ndarray
    f_value: np.ndarray


def loss_multi(model, batches: Sequence[ConditionBatch], tape: ad.Tape) -> ad.HyperDual:
    """Average of ``loss_diff - loss_int`` over conditions."""
    if not batches:
        raise ValueError("no conditions")
    total = None
    for b in batches:
        term = loss_diff(model, b.c, b.transform, b.x, b.density, b.f_value, tape) - loss_int(
            model, b.c, b.transform, b.x, b.f_value, tape
        )
        total = term if total is None else total + term
    return total * (1.0 / len(batches))


def pseudo_loss(model, c, transform: DomainTransform, x, f_value, tape: ad.Tape) -> ad.HyperDual:
    """Vectorized ``loss_multi`` with one uniform sample per condition.

    Row ``i`` is its own domain (batched transform). The diff term averages
    over rows that survive the indicator, the integral term over all rows;
    with uniform sampling ``1/p = |Omega|`` so label noise cancels between
    the two terms in expectation.
    """
    density = transform.uniform_density()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ld = loss_diff(model, c, transform, x, np.broadcast_to(density, (x.shape[0],)), f_value, tape)
    li = loss_int(model, c, transform, x, f_value, tape)
    return ld - li
