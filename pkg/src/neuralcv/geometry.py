"""Analytic signed-distance domains, test problems and uniform samplers.

SDFs are negative inside and 1-Lipschitz, so ``|sdf(x)|`` is always a safe
empty-ball radius for walk-on-spheres. Every stochastic function takes an
explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ScalarField = Callable[[np.ndarray], np.ndarray]


# --- domains ------------------------------------------------------------------


class Domain:
    """Base class: vectorized SDF over points of shape ``(..., dim)``."""

    dim: int

    def sdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def project(self, x: np.ndarray) -> np.ndarray:
        """Boundary point reached by Newton steps along the SDF gradient.

        Exact for points within the walk stopping shell; from deeper points
        it converges to a nearby (not always the nearest) boundary point.
        """
        x = np.asarray(x, dtype=np.float64)
        p = x.copy()
        for _ in range(50):
            s = self.sdf(p)
            if np.all(np.abs(s) < 1e-12):
                break
            grad = self._fd_gradient(p)
            norm2 = np.sum(grad * grad, axis=-1, keepdims=True)
            p = p - s[..., None] * grad / np.maximum(norm2, 1e-300)
        return p

    def _fd_gradient(self, x, h=1e-7):
        g = np.empty_like(x)
        for i in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[i] = h
            g[..., i] = (self.sdf(x + e) - self.sdf(x - e)) / (2 * h)
        return g

    def diameter(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def contains(self, x) -> np.ndarray:
        return self.sdf(np.asarray(x, dtype=np.float64)) < 0


@dataclass(frozen=True)
class Ball(Domain):
    """Disk (2D) or ball (3D)."""

    center: tuple
    radius: float = 1.0

    @property
    def dim(self):
        return len(self.center)

    def sdf(self, x):
        return np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(self.center), axis=-1) - self.radius

    def bbox(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius

    def project(self, x):
        c = np.asarray(self.center, dtype=np.float64)
        v = np.asarray(x, dtype=np.float64) - c
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        return c + self.radius * v / np.maximum(n, 1e-300)


@dataclass(frozen=True)
class Box(Domain):
    """Axis-aligned box ``[lo, hi]``; exact SDF inside."""

    lo: tuple
    hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def sdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        c, h = (lo + hi) / 2, (hi - lo) / 2
        q = np.abs(x - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def bbox(self):
        return np.asarray(self.lo, dtype=np.float64), np.asarray(self.hi, dtype=np.float64)

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        p = np.clip(x, lo, hi)
        gaps = np.concatenate([p - lo, hi - p], axis=-1)
        side = np.argmin(gaps, axis=-1)
        d = x.shape[-1]
        axis = side % d
        target = np.where(side < d, lo[axis], hi[axis])
        np.put_along_axis(p, axis[..., None], target[..., None], axis=-1)
        return p


@dataclass(frozen=True)
class SmoothUnion(Domain):
    """Polynomial smooth-min blend of child SDFs (stays 1-Lipschitz)."""

    children: tuple
    k: float = 0.2

    @property
    def dim(self):
        return self.children[0].dim

    def sdf(self, x):
        d = self.children[0].sdf(x)
        for c in self.children[1:]:
            b = c.sdf(x)
            h = np.maximum(self.k - np.abs(d - b), 0.0) / self.k
            d = np.minimum(d, b) - h * h * self.k * 0.25
        return d

    def bbox(self):
        los, his = zip(*(c.bbox() for c in self.children))
        # blending can only grow the union by k/4
        pad = self.k / 4
        return np.min(los, axis=0) - pad, np.max(his, axis=0) + pad


# --- problems -----------------------------------------------------------------


@dataclass
class ProblemSpec:
    """Dirichlet problem ``Δu = f`` in a domain with ``u = g`` on its boundary."""

    name: str
    domain: Domain
    boundary_g: ScalarField
    forcing_f: ScalarField
    equation: str
    analytic_solution: Optional[ScalarField] = None
    notes: str = field(default="", repr=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def domain_sdf(self, x):
        return self.domain.sdf(x)


def _zero(x):
    return np.zeros(np.shape(x)[:-1])


def _registry() -> dict[str, Callable[[], ProblemSpec]]:
    def disk_harmonic():
        u = lambda p: p[..., 0] ** 2 - p[..., 1] ** 2
        return ProblemSpec("disk-harmonic", Ball((0.0, 0.0), 1.0), u, _zero, "laplace", u)

    def square_poisson():
        u = lambda p: p[..., 0] ** 2 + p[..., 1] ** 2
        f = lambda p: np.full(np.shape(p)[:-1], 4.0)
        return ProblemSpec("square-poisson", Box((0.0, 0.0), (1.0, 1.0)), u, f, "poisson", u)

    def square_highfreq():
        g = lambda p: np.sin(8 * np.pi * p[..., 0]) * np.sin(8 * np.pi * p[..., 1]) * np.exp(p[..., 0])
        # on [0, 1]^2 this g vanishes on every edge; offsetting by 1/16 puts
        # the edges on its crests
        lo, hi = 1.0 / 16.0, 17.0 / 16.0
        return ProblemSpec("square-highfreq", Box((lo, lo), (hi, hi)), g, _zero, "laplace")

    def square_poisson_highfreq_forcing():
        amp = 100.0
        f = lambda p: amp * np.sin(4 * np.pi * p[..., 0]) * np.sin(4 * np.pi * p[..., 1])
        u = lambda p: -amp / (32 * np.pi**2) * np.sin(4 * np.pi * p[..., 0]) * np.sin(4 * np.pi * p[..., 1])
        return ProblemSpec(
            "square-poisson-highfreq-forcing", Box((0.0, 0.0), (1.0, 1.0)), _zero, f, "poisson", u
        )

    def ball3d_harmonic():
        u = lambda p: p[..., 0] ** 2 + p[..., 1] ** 2 - 2 * p[..., 2] ** 2
        return ProblemSpec("ball3d-harmonic", Ball((0.0, 0.0, 0.0), 1.0), u, _zero, "laplace", u)

    def star3d_harmonic():
        u = lambda p: p[..., 0] ** 2 + p[..., 1] ** 2 - 2 * p[..., 2] ** 2
        lobes = [Ball((0.0, 0.0, 0.0), 0.6)]
        for axis in range(3):
            for s in (-1.0, 1.0):
                c = [0.0, 0.0, 0.0]
                c[axis] = 0.55 * s
                lobes.append(Ball(tuple(c), 0.35))
        return ProblemSpec("star3d-harmonic", SmoothUnion(tuple(lobes), k=0.2), u, _zero, "laplace", u)

    return {
        "disk-harmonic": disk_harmonic,
        "square-poisson": square_poisson,
        "square-highfreq": square_highfreq,
        "square-poisson-highfreq-forcing": square_poisson_highfreq_forcing,
        "ball3d-harmonic": ball3d_harmonic,
        "star3d-harmonic": star3d_harmonic,
    }


PROBLEMS = tuple(_registry())


def registry_lookup(name: str) -> ProblemSpec:
    """Return the named analytic test problem."""
    try:
        return _registry()[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}") from None


# --- queries and samplers -----------------------------------------------------


def distance_to_boundary(spec: ProblemSpec, x) -> np.ndarray:
    """Empty-ball radius ``|sdf(x)|`` for interior points."""
    s = spec.domain.sdf(np.asarray(x, dtype=np.float64))
    if np.any(s >= 0):
        raise ValueError("point is outside or on the boundary of the domain")
    return -s


def _check_radius(radius):
    r = np.asarray(radius, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    return r


def uniform_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Unit vectors uniform on the circle (2D) or sphere (3D)."""
    if dim == 2:
        t = rng.uniform(-np.pi, np.pi, n)
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if dim == 3:
        z = rng.uniform(-1.0, 1.0, n)
        t = rng.uniform(-np.pi, np.pi, n)
        rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        return np.stack([rho * np.cos(t), rho * np.sin(t), z], axis=-1)
    raise ValueError("dim must be 2 or 3")


def sample_uniform_boundary_sphere(center, radius, rng: np.random.Generator, n: Optional[int] = None):
    """Uniform point(s) on the circle/sphere ``|p - center| = radius``.

    ``center`` may be a single point or a ``(n, dim)`` batch with matching
    ``radius``; ``n`` draws that many samples around a single center.
    """
    c = np.asarray(center, dtype=np.float64)
    r = _check_radius(radius)
    single = c.ndim == 1 and n is None
    count = n if n is not None else (1 if c.ndim == 1 else c.shape[0])
    dirs = uniform_directions(rng, count, c.shape[-1])
    p = c + np.reshape(r, np.shape(r) + (1,)) * dirs
    return p[0] if single else p


def sample_uniform_ball(center, radius, rng: np.random.Generator, n: Optional[int] = None):
    """Uniform point(s) in the disk ``|p - center| <= radius`` (2D only).

    Radii below ``1e-12 * radius`` are redrawn so Green's-function weights
    stay finite.
    """
    c = np.asarray(center, dtype=np.float64)
    r = _check_radius(radius)
    if c.shape[-1] != 2:
        raise ValueError("ball sampling is implemented for 2D disks")
    single = c.ndim == 1 and n is None
    count = n if n is not None else (1 if c.ndim == 1 else c.shape[0])
    s = np.sqrt(rng.uniform(0.0, 1.0, count))
    bad = s < 1e-12
    while np.any(bad):
        s[bad] = np.sqrt(rng.uniform(0.0, 1.0, int(bad.sum())))
        bad = s < 1e-12
    t = rng.uniform(-np.pi, np.pi, count)
    p = c + (np.reshape(r, np.shape(r) + (1,)) * s[:, None]) * np.stack([np.cos(t), np.sin(t)], axis=-1)
    return p[0] if single else p


def sample_interior(spec: ProblemSpec, rng: np.random.Generator, n: int, min_distance: float = 0.0) -> np.ndarray:
    """Uniform points inside the domain by rejection from its bounding box."""
    lo, hi = spec.domain.bbox()
    out = np.empty((0, spec.dim))
    while out.shape[0] < n:
        m = max(2 * (n - out.shape[0]), 64)
        x = rng.uniform(lo, hi, size=(m, spec.dim))
        keep = spec.domain.sdf(x) < -min_distance
        out = np.concatenate([out, x[keep]])
    return out[:n]
