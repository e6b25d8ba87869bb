"""Maps from the parameter cube ``[-1, 1]^d`` onto circles, disks and spheres.

``phi`` sends a cube point to the integration domain centred on a walk point,
``jacobian_det`` is its exact measure factor (constants included), and the
``eps_shrink`` pair implements an inward affine reparameterization of the
cube that keeps the Jacobian bounded away from zero. The composite map
``phi(eps_shrink(u))`` covers a slightly smaller region of the domain; samples
outside that region are flagged by ``eps_shrink_preimage``.

Transforms may carry a batch of centers/radii; every function broadcasts
``u``/``x`` rows against them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("circle2d", "disk2d", "sphere3d")
PARAM_DIM = {"circle2d": 1, "disk2d": 2, "sphere3d": 2}
AMBIENT_DIM = {"circle2d": 2, "disk2d": 2, "sphere3d": 3}

_CUBE_TOL = 1e-12


@dataclass(frozen=True)
class DomainTransform:
    kind: str
    center: np.ndarray
    radius: np.ndarray
    eps: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.eps < 0.5:
            raise ValueError("eps must lie in [0, 0.5)")
        c = np.asarray(self.center, dtype=np.float64)
        r = np.asarray(self.radius, dtype=np.float64)
        if c.shape[-1] != AMBIENT_DIM[self.kind]:
            raise ValueError("center dimension does not match transform kind")
        if np.any(r <= 0):
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def param_dim(self) -> int:
        return PARAM_DIM[self.kind]

    @property
    def dim(self) -> int:
        return AMBIENT_DIM[self.kind]

    def measure(self) -> np.ndarray:
        """Length, area or surface area of the full (unshrunk) domain."""
        r = self.radius
        if self.kind == "circle2d":
            return 2 * np.pi * r
        if self.kind == "disk2d":
            return np.pi * r * r
        return 4 * np.pi * r * r

    def uniform_density(self) -> np.ndarray:
        return 1.0 / self.measure()

    def shrink_factor(self) -> float:
        """Constant Jacobian of ``eps_shrink``."""
        if self.kind == "disk2d":
            return (2.0 - self.eps) / 2.0
        if self.kind == "sphere3d":
            return 1.0 - self.eps
        return 1.0


def _r(t: DomainTransform):
    return t.radius[..., None]


def _check_cube(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) > 1.0 + _CUBE_TOL):
        raise ValueError("parameter point outside [-1, 1]^d")
    return u


def _as_rows(u, d):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0 or u.shape[-1] != d:
        u = u[..., None]
    return u


def phi(t: DomainTransform, u) -> np.ndarray:
    """Cube point(s) ``u`` of shape ``(..., d)`` to domain point(s)."""
    u = _check_cube(_as_rows(u, t.param_dim))
    c, R = t.center, _r(t)
    if t.kind == "circle2d":
        a = np.pi * u[..., 0]
        return c + R * np.stack([np.cos(a), np.sin(a)], axis=-1)
    if t.kind == "disk2d":
        rho = (u[..., 0] + 1.0) / 2.0
        a = np.pi * u[..., 1]
        return c + R * (rho[..., None] * np.stack([np.cos(a), np.sin(a)], axis=-1))
    polar = np.pi * (u[..., 1] + 1.0) / 2.0
    azim = np.pi * (u[..., 0] + 1.0)
    s = np.sin(polar)
    return c + R * np.stack([s * np.cos(azim), s * np.sin(azim), np.cos(polar)], axis=-1)


def jacobian_det(t: DomainTransform, u) -> np.ndarray:
    """Exact ``|J_phi(u)|``: arc-length, area or surface element."""
    u = _check_cube(_as_rows(u, t.param_dim))
    R = t.radius
    if t.kind == "circle2d":
        return np.broadcast_to(np.pi * R, u.shape[:-1]).astype(np.float64)
    if t.kind == "disk2d":
        return np.pi * R * R * (u[..., 0] + 1.0) / 4.0
    return 0.5 * np.pi**2 * R * R * np.sin(np.pi * (u[..., 1] + 1.0) / 2.0)


def phi_inverse(t: DomainTransform, x, tol: float = 1e-9) -> np.ndarray:
    """Principal-branch cube coordinates of domain point(s) ``x``."""
    x = np.asarray(x, dtype=np.float64)
    v = x - t.center
    R = t.radius
    rho = np.linalg.norm(v, axis=-1)
    if t.kind in ("circle2d", "sphere3d"):
        if np.any(np.abs(rho - R) > tol * np.maximum(R, 1.0)):
            raise ValueError("point is not on the transform's circle/sphere")
    elif np.any(rho > R * (1.0 + tol) + tol):
        raise ValueError("point is outside the transform's disk")
    if t.kind == "circle2d":
        return (np.arctan2(v[..., 1], v[..., 0]) / np.pi)[..., None]
    if t.kind == "disk2d":
        u1 = np.minimum(2.0 * rho / R - 1.0, 1.0)
        u2 = np.where(rho > 0, np.arctan2(v[..., 1], v[..., 0]) / np.pi, 0.0)
        return np.stack([u1, u2], axis=-1)
    polar = np.arctan2(np.hypot(v[..., 0], v[..., 1]), v[..., 2])
    azim = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi)
    u1 = azim / np.pi - 1.0
    u1 = np.where(u1 >= 1.0, -1.0, u1)
    u2 = 2.0 * polar / np.pi - 1.0
    return np.stack([u1, u2], axis=-1)


def eps_shrink(t: DomainTransform, u) -> np.ndarray:
    """Inward affine map of the cube onto the stabilized sub-cube."""
    u = np.array(_as_rows(u, t.param_dim), dtype=np.float64)
    e = t.eps
    if t.kind == "disk2d":
        u[..., 0] = u[..., 0] * (2.0 - e) / 2.0 + e / 2.0
    elif t.kind == "sphere3d":
        u[..., 1] = u[..., 1] * (1.0 - e)
    return u


def eps_shrink_preimage(t: DomainTransform, u_eps) -> tuple[np.ndarray, np.ndarray]:
    """Invert ``eps_shrink``; the flag marks preimages that lie in the cube."""
    u = np.array(_as_rows(u_eps, t.param_dim), dtype=np.float64)
    e = t.eps
    if t.kind == "disk2d":
        u[..., 0] = (u[..., 0] - e / 2.0) / ((2.0 - e) / 2.0)
    elif t.kind == "sphere3d":
        u[..., 1] = u[..., 1] / (1.0 - e)
    inside = np.all(np.abs(u) <= 1.0 + _CUBE_TOL, axis=-1)
    return u, inside


def jacobian_det_eps(t: DomainTransform, u) -> np.ndarray:
    """Jacobian of the composite ``phi(eps_shrink(u))`` at cube point ``u``."""
    return jacobian_det(t, eps_shrink(t, u)) * t.shrink_factor()


def jacobian_lower_bound(t: DomainTransform) -> np.ndarray:
    """Lower bound on ``jacobian_det(eps_shrink(u))`` over the cube."""
    R = t.radius
    if t.kind == "circle2d":
        return np.pi * R
    if t.kind == "disk2d":
        return np.pi * R * R * t.eps / 8.0
    return 0.5 * np.pi**2 * R * R * np.sin(np.pi * t.eps / 2.0)


def corners(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Cube corners ``{-1, 1}^d`` and their signs ``prod(u_i)``."""
    grids = np.meshgrid(*([np.array([-1.0, 1.0])] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    return pts, np.prod(pts, axis=-1)
