"""Polynomial control variate with grid-conditioned coefficients.

The polynomial models the Jacobian-weighted integrand on the cube,
``f(phi_eps(u)) * |J_phi_eps(u)|``, as a tensor-product monomial expansion of
per-axis degree ``degree``. Its cube integral is then closed-form and plays
the role the corner sum plays for antiderivative networks. Coefficients are
a single linear layer applied to multi-resolution grid features of the walk
center.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .networks import FeatureGrid


def monomial_exponents(degree: int, d: int) -> np.ndarray:
    """All exponent tuples with each entry in ``0..degree`` ((degree+1)^d rows)."""
    return np.array(list(itertools.product(range(degree + 1), repeat=d)), dtype=np.int64)


def monomial_integrals(exponents: np.ndarray) -> np.ndarray:
    """Closed-form ``int_{[-1,1]^d} u^alpha du`` per exponent row."""
    per_axis = np.where(exponents % 2 == 1, 0.0, 2.0 / (exponents + 1.0))
    return np.prod(per_axis, axis=-1)


@dataclass
class PolyModel:
    param_dim: int
    cond_dim: int
    grid: FeatureGrid
    degree: int = 2
    params: dict = field(default_factory=dict)
    arch: str = "poly"

    def __post_init__(self):
        self.exponents = monomial_exponents(self.degree, self.param_dim)
        self.basis_integrals = monomial_integrals(self.exponents)

    @property
    def n_coef(self) -> int:
        return (self.degree + 1) ** self.param_dim

    def param_shapes(self) -> dict[str, tuple]:
        shapes = dict(self.grid.param_shapes())
        shapes["L"] = (self.n_coef, self.grid.out_dim)
        shapes["l"] = (self.n_coef,)
        return shapes

    def param_order(self) -> list[str]:
        return list(self.param_shapes())

    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def _nodes(self, tape):
        if tape is None:
            return {k: ad.HyperDual(v) for k, v in self.params.items()}
        return {k: tape.param(k, v) for k, v in self.params.items()}

    def coefficients(self, c, tape: Optional[ad.Tape] = None) -> ad.HyperDual:
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        p = self._nodes(tape)
        z = self.grid.encode(c, p)
        return ad.linear(z, p["L"], p["l"])

    def basis(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        return np.prod(u[:, None, :] ** self.exponents[None, :, :], axis=-1)

    def integrand(self, u, c, tape: Optional[ad.Tape] = None) -> ad.HyperDual:
        """Polynomial value on the cube (the analog of the mixed partial)."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        coef = self.coefficients(c, tape)
        return ad.hsum(coef * self.basis(u), axis=1)

    def integral(self, c, tape: Optional[ad.Tape] = None) -> ad.HyperDual:
        return ad.hsum(self.coefficients(c, tape) * self.basis_integrals, axis=1)

    def copy(self) -> PolyModel:
        return PolyModel(self.param_dim, self.cond_dim, self.grid, self.degree,
                         {k: v.copy() for k, v in self.params.items()})


def init_poly(model: PolyModel, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in model.param_shapes().items():
        if name.startswith("grid"):
            params[name] = rng.uniform(-1e-4, 1e-4, shape)
        elif name == "L":
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            params[name] = np.zeros(shape)
    model.params = params
    return params


def make_poly(param_dim, cond_dim, bbox, rng=None, degree=2, grid_kwargs=None) -> PolyModel:
    grid = FeatureGrid.for_domain(*bbox, **(grid_kwargs or {}))
    model = PolyModel(param_dim, cond_dim, grid, degree)
    if rng is not None:
        init_poly(model, rng)
    return model


def poly_integral(model: PolyModel, c) -> np.ndarray:
    return model.integral(c).val
