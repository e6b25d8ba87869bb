"""Walk-on-spheres estimators for Laplace/Poisson with optional control variates.

All walkers are advanced together: each row of the start array is one
independent walk. The recursive term (the solution averaged over the step
sphere) and, for 2D Poisson, the forcing term (Green's-function-weighted
source over the step disk) can each be replaced by a control-variate
estimate built from a trained model; every variant has the same mean as the
plain walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .control_variates import estimate
from .geometry import ProblemSpec, sample_uniform_ball, sample_uniform_boundary_sphere
from .transforms import DomainTransform


@dataclass
class WalkConfig:
    eps_shell: float = 1e-3
    max_steps: int = 10_000
    # add the recursive control term at the terminal point as well
    terminal_cv: bool = True
    eps: float = 0.05

    def __post_init__(self):
        if self.eps_shell <= 0:
            raise ValueError("eps_shell must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    @classmethod
    def for_problem(cls, spec: ProblemSpec, rel_shell: float = 1e-3, **kwargs) -> WalkConfig:
        eps_shell = rel_shell * spec.domain.diameter()
        kwargs.setdefault("max_steps", 10 * math.ceil(1.0 / eps_shell))
        return cls(eps_shell=eps_shell, **kwargs)


@dataclass
class WalkResult:
    value: np.ndarray
    steps: np.ndarray
    terminated_on_boundary: np.ndarray

    def mean(self) -> float:
        return float(np.mean(self.value))

    def stderr(self) -> float:
        return float(np.std(self.value, ddof=1) / np.sqrt(self.value.size))


class RunningStats:
    """Streaming mean/variance, merged batch-wise (Chan et al. update)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> RunningStats:
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            return self
        nb = v.size
        mb = float(v.mean())
        m2b = float(((v - mb) ** 2).sum())
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else float("nan")

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n)


def greens_ball_2d(r, R):
    """Green's function of the disk of radius ``R``, pole at its center."""
    r = np.asarray(r, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("Green's function is singular at r = 0")
    if np.any(r > R * (1 + 1e-12)):
        raise ValueError("r must not exceed R")
    return np.log(R / r) / (2 * np.pi)


def _start_points(x, n_walks):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = np.broadcast_to(x, (1 if n_walks is None else n_walks, x.shape[0]))
    elif n_walks is not None:
        x = np.repeat(x, n_walks, axis=0)
    return np.array(x)


def _recursive_transform_kind(dim):
    return "circle2d" if dim == 2 else "sphere3d"


def walk(
    spec: ProblemSpec,
    x,
    cfg: WalkConfig,
    rng: np.random.Generator,
    n_walks: Optional[int] = None,
    recursive_model=None,
    forcing_model=None,
    check_start: bool = True,
) -> WalkResult:
    """Generic walker; the named ``wos_*`` functions pick the models.

    ``recursive_model`` controls the sphere average of the solution (model
    ``param_dim`` 1 in 2D, 2 in 3D). ``forcing_model`` controls the 2D
    Poisson source integral (``param_dim`` 2).
    """
    x = _start_points(x, n_walks)
    n, dim = x.shape
    if dim != spec.dim:
        raise ValueError("start points do not match the problem dimension")
    sdf = spec.domain.sdf(x)
    if check_start and np.any(sdf >= 0):
        raise ValueError("walk start point outside the domain")
    poisson = spec.equation == "poisson"
    if poisson and dim != 2:
        raise NotImplementedError("Poisson walks are implemented in 2D")
    if forcing_model is not None and not poisson:
        raise ValueError("forcing control variate needs a Poisson problem")
    rkind = _recursive_transform_kind(dim)

    # terminal CV samples come from their own stream so that every variant
    # walks the same paths as the plain walker for a given generator state
    terminal_rng = np.random.default_rng(rng.integers(2**63))
    value = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    terminated = np.zeros(n, dtype=bool)
    active = np.arange(n)

    def recursive_term(centers, radius, nxt):
        t = DomainTransform(rkind, centers, radius, cfg.eps)
        density = t.uniform_density()
        # the tracked integrand is u / |dB|; its density-weighted sample is
        # supplied by the continuation of the walk, so only I - cv/p is added
        br = estimate(recursive_model, np.zeros(len(radius)), nxt, density, centers, t)
        return br.i_theta - br.cv_term

    while active.size:
        xa = x[active]
        R = -spec.domain.sdf(xa)
        near = R < cfg.eps_shell
        hit_cap = steps[active] >= cfg.max_steps
        stop = near | hit_cap
        if np.any(stop):
            ids = active[stop]
            xs = xa[stop]
            value[ids] += spec.boundary_g(spec.domain.project(xs))
            terminated[ids] = near[stop]
            if recursive_model is not None and cfg.terminal_cv:
                ok = (R[stop] > 0) & near[stop]
                if np.any(ok):
                    c, r = xs[ok], R[stop][ok]
                    nxt = sample_uniform_boundary_sphere(c, r, terminal_rng)
                    value[ids[ok]] += recursive_term(c, r, nxt)
        go = ~stop
        if not np.any(go):
            break
        ids = active[go]
        c = xa[go]
        r = R[go]
        if poisson:
            y = sample_uniform_ball(c, r, rng)
            dist = np.linalg.norm(y - c, axis=-1)
            area = np.pi * r * r
            contribution = -spec.forcing_f(y) * greens_ball_2d(dist, r)
            if forcing_model is None:
                value[ids] += area * contribution
            else:
                t = DomainTransform("disk2d", c, r, cfg.eps)
                value[ids] += estimate(forcing_model, contribution, y, 1.0 / area, c, t).total
        nxt = sample_uniform_boundary_sphere(c, r, rng)
        if recursive_model is not None:
            value[ids] += recursive_term(c, r, nxt)
        x[ids] = nxt
        steps[ids] += 1
        active = ids
    return WalkResult(value, steps, terminated)


def wos_plain(spec, x, cfg, rng, n_walks=None, **kw) -> WalkResult:
    return walk(spec, x, cfg, rng, n_walks, **kw)


def wos_cv_circle(spec, x, cfg, model, rng, n_walks=None, **kw) -> WalkResult:
    if spec.dim != 2 or model.param_dim != 1:
        raise ValueError("circle control variate needs a 2D problem and a 1D-parameter model")
    return walk(spec, x, cfg, rng, n_walks, recursive_model=model, **kw)


def wos_cv_disk(spec, x, cfg, model, rng, n_walks=None, **kw) -> WalkResult:
    if spec.dim != 2 or model.param_dim != 2:
        raise ValueError("disk control variate needs a 2D problem and a 2D-parameter model")
    return walk(spec, x, cfg, rng, n_walks, forcing_model=model, **kw)


def wos_cv_both(spec, x, cfg, model_circle, model_disk, rng, n_walks=None, **kw) -> WalkResult:
    return walk(spec, x, cfg, rng, n_walks, recursive_model=model_circle, forcing_model=model_disk, **kw)


def wos_cv_sphere3d(spec, x, cfg, model, rng, n_walks=None, **kw) -> WalkResult:
    if spec.dim != 3 or model.param_dim != 2:
        raise ValueError("sphere control variate needs a 3D problem and a 2D-parameter model")
    return walk(spec, x, cfg, rng, n_walks, recursive_model=model, **kw)
