"""Composite Gauss-Legendre quadrature over circles, disks and spheres.

Used as the independent oracle for corner sums, changes of variables and
estimator means. Panels can be split at known discontinuities (the edge of
the region covered by the stabilized map) so the rules stay spectrally
accurate on each piece.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss


def gauss_panels(breaks, order=32):
    """Nodes and weights of a composite rule on the sorted ``breaks``."""
    x, w = leggauss(order)
    breaks = np.asarray(breaks, dtype=np.float64)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = (a + b) / 2 + (b - a) / 2 * x
    weights = (b - a) / 2 * w
    return nodes.ravel(), weights.ravel()


def _even(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def circle_integral(F, center, radius, panels=16, order=32):
    """``int F ds`` over the circle ``|x - center| = radius``."""
    c = np.asarray(center, dtype=np.float64)
    t, w = gauss_panels(_even(-np.pi, np.pi, panels), order)
    x = c + radius * np.stack([np.cos(t), np.sin(t)], axis=-1)
    return float(np.sum(w * radius * F(x)))


def disk_integral(F, center, radius, r_breaks=(), panels=8, order=32):
    """``int F dx`` over the disk, polar coordinates; ``r_breaks`` in ``(0, R)``."""
    c = np.asarray(center, dtype=np.float64)
    rb = np.unique(np.concatenate([[0.0], np.asarray(r_breaks, dtype=np.float64), [radius]]))
    edges = np.concatenate([np.linspace(a, b, panels + 1)[:-1] for a, b in zip(rb[:-1], rb[1:])] + [[radius]])
    r, wr = gauss_panels(edges, order)
    t, wt = gauss_panels(_even(-np.pi, np.pi, 2 * panels), order)
    R, T = np.meshgrid(r, t, indexing="ij")
    x = c + np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
    vals = F(x.reshape(-1, 2)).reshape(R.shape)
    return float(np.einsum("i,j,ij->", wr, wt, vals * R))


def sphere_integral(F, center, radius, polar_breaks=(), panels=8, order=32):
    """``int F dA`` over the sphere; ``polar_breaks`` are polar angles in ``(0, pi)``."""
    c = np.asarray(center, dtype=np.float64)
    pb = np.unique(np.concatenate([[0.0], np.asarray(polar_breaks, dtype=np.float64), [np.pi]]))
    edges = np.concatenate([np.linspace(a, b, panels + 1)[:-1] for a, b in zip(pb[:-1], pb[1:])] + [[np.pi]])
    a, wa = gauss_panels(edges, order)
    p, wp = gauss_panels(_even(0.0, 2 * np.pi, 2 * panels), order)
    A, P = np.meshgrid(a, p, indexing="ij")
    s = np.sin(A)
    x = c + radius * np.stack([s * np.cos(P), s * np.sin(P), np.cos(A)], axis=-1)
    vals = F(x.reshape(-1, 3)).reshape(A.shape)
    return float(np.einsum("i,j,ij->", wa, wp, vals * s * radius * radius))


def cube_integral(g, d, panels=4, order=32):
    """``int g(u) du`` over ``[-1, 1]^d`` for ``d`` in (1, 2)."""
    t, w = gauss_panels(_even(-1.0, 1.0, panels), order)
    if d == 1:
        return float(np.sum(w * g(t[:, None])))
    U1, U2 = np.meshgrid(t, t, indexing="ij")
    vals = g(np.stack([U1.ravel(), U2.ravel()], axis=-1)).reshape(U1.shape)
    return float(np.einsum("i,j,ij->", w, w, vals))


def domain_integral(kind, F, center, radius, eps=0.0, **kw):
    """Integral over the transform domain, split at the stabilized-region edge."""
    if kind == "circle2d":
        return circle_integral(F, center, radius, **kw)
    if kind == "disk2d":
        return disk_integral(F, center, radius, r_breaks=[eps * radius / 2] if eps > 0 else [], **kw)
    if kind == "sphere3d":
        br = [np.pi * eps / 2, np.pi - np.pi * eps / 2] if eps > 0 else []
        return sphere_integral(F, center, radius, polar_breaks=br, **kw)
    raise ValueError(f"unknown transform kind {kind!r}")
