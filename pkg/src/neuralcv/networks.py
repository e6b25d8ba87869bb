"""Conditional antiderivative networks ``G(u, c)`` over the hyper-dual engine.

Three architectures share one interface:

``cat_siren``
    sine MLP on the concatenation ``[u, c]``.
``mod_siren``
    sine MLP on ``u`` whose pre-activations are multiplied by the outputs of
    a parallel ReLU network of ``c``.
``mgc_siren``
    ``cat_siren`` on ``[u, z(c)]`` where ``z`` is read from a dense
    multi-resolution feature grid.

The control variate integrand is the mixed partial ``d^d G / du`` and its
integral over the cube is the signed corner sum, so any parameter setting of
any architecture yields a valid control variate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .transforms import corners

ARCHS = ("cat_siren", "mod_siren", "mgc_siren")


class FeatureGrid:
    """Dense multi-resolution grid of learnable features over a bounding box.

    Level ``l`` has ``base_resolution * growth**l`` cells per axis and stores
    ``features`` values per vertex; queries are multilinearly interpolated
    and the per-level results concatenated.
    """

    def __init__(self, lo, hi, levels=4, base_resolution=16, growth=2.0, features=2):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.dim = self.lo.shape[0]
        self.levels = int(levels)
        self.base_resolution = int(base_resolution)
        self.growth = float(growth)
        self.features = int(features)
        self.resolutions = [int(round(self.base_resolution * self.growth**l)) for l in range(self.levels)]
        self._offsets = corners(self.dim)[0] > 0  # (2^dim, dim) bool

    @classmethod
    def for_domain(cls, lo, hi, inflate=0.05, **kwargs):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        pad = inflate * (hi - lo)
        return cls(lo - pad, hi + pad, **kwargs)

    @property
    def out_dim(self) -> int:
        return self.levels * self.features

    def param_shapes(self) -> dict[str, tuple]:
        return {f"grid{l}": ((r + 1) ** self.dim, self.features) for l, r in enumerate(self.resolutions)}

    def spec(self) -> dict:
        return {
            "grid_lo": self.lo.tolist(),
            "grid_hi": self.hi.tolist(),
            "grid_levels": self.levels,
            "grid_base": self.base_resolution,
            "grid_growth": self.growth,
            "grid_features": self.features,
        }

    def weights(self, c) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-level ``(vertex index, weight)`` arrays of shape ``(B, 2^dim)``."""
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if np.any(c < self.lo) or np.any(c > self.hi):
            raise ValueError("query lies outside the feature grid bounding box")
        g = (c - self.lo) / (self.hi - self.lo)
        out = []
        for r in self.resolutions:
            s = g * r
            i0 = np.clip(np.floor(s), 0, r - 1).astype(np.int64)
            frac = s - i0
            idx = np.zeros((c.shape[0], len(self._offsets)), dtype=np.int64)
            w = np.ones((c.shape[0], len(self._offsets)))
            for k, off in enumerate(self._offsets):
                flat = np.zeros(c.shape[0], dtype=np.int64)
                for a in range(self.dim):
                    ia = i0[:, a] + off[a]
                    flat = flat * (r + 1) + ia
                    w[:, k] *= np.where(off[a], frac[:, a], 1.0 - frac[:, a])
                idx[:, k] = flat
            out.append((idx, w))
        return out

    def encode(self, c, tables) -> ad.HyperDual:
        """Interpolated features ``(B, levels * features)``.

        ``tables`` maps ``grid{l}`` to hyper-dual parameter nodes.
        """
        parts = []
        for l, (idx, w) in enumerate(self.weights(c)):
            rows = ad.take(tables[f"grid{l}"], idx)  # (B, K, F)
            parts.append(ad.hsum(rows * w[:, :, None], axis=1))
        return ad.concat(parts, axis=-1)


@dataclass
class AntiderivativeNet:
    arch: str
    param_dim: int
    cond_dim: int
    hidden: tuple = (64, 64, 64, 64)
    omega0: float = 30.0
    grid: Optional[FeatureGrid] = None
    params: dict = field(default_factory=dict)
    # test hook: freeze ModSIREN modulation outputs to this constant
    modulation_override: Optional[float] = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.param_dim not in (1, 2):
            raise ValueError("param_dim must be 1 or 2")
        if self.arch == "mgc_siren" and self.grid is None:
            raise ValueError("mgc_siren needs a FeatureGrid")
        self.hidden = tuple(int(h) for h in self.hidden)

    # --- parameters ---------------------------------------------------------
    @property
    def cond_features(self) -> int:
        return self.grid.out_dim if self.arch == "mgc_siren" else self.cond_dim

    def param_shapes(self) -> dict[str, tuple]:
        shapes: dict[str, tuple] = {}
        if self.arch == "mod_siren":
            fan = self.param_dim
        else:
            fan = self.param_dim + self.cond_features
        for i, h in enumerate(self.hidden):
            shapes[f"W{i}"] = (h, fan)
            shapes[f"b{i}"] = (h,)
            fan = h
        shapes["Wout"] = (1, fan)
        shapes["bout"] = (1,)
        if self.arch == "mod_siren":
            prev = 0
            for i, h in enumerate(self.hidden):
                shapes[f"M{i}"] = (h, self.cond_dim + prev)
                shapes[f"m{i}"] = (h,)
                prev = h
        if self.grid is not None and self.arch == "mgc_siren":
            shapes.update(self.grid.param_shapes())
        return shapes

    def param_order(self) -> list[str]:
        return list(self.param_shapes())

    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def _nodes(self, tape):
        if tape is None:
            return {k: ad.HyperDual(v) for k, v in self.params.items()}
        return {k: tape.param(k, v) for k, v in self.params.items()}

    # --- evaluation ---------------------------------------------------------
    def forward(self, u, c, tape: Optional[ad.Tape] = None, seed: bool = True) -> ad.HyperDual:
        """``G(u, c)`` for row batches; ``u`` is seeded along u1 (and u2)."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if u.shape[-1] != self.param_dim or c.shape[-1] != self.cond_dim:
            raise ValueError("input dimension mismatch")
        if c.shape[0] != u.shape[0]:
            c = np.broadcast_to(c, (u.shape[0], self.cond_dim))
        p = self._nodes(tape)
        uin = ad.seed_columns(u) if seed else ad.lift_input(u)
        w0 = self.omega0
        if self.arch == "mod_siren":
            z = uin
            h = None
            for i in range(len(self.hidden)):
                inp = c if h is None else ad.concat([ad.HyperDual(c), h], axis=-1)
                h = ad.relu(ad.linear(inp, p[f"M{i}"], p[f"m{i}"]))
                pre = ad.matmul(z, ad.transpose(p[f"W{i}"]))
                mod = h if self.modulation_override is None else self.modulation_override
                z = ad.sin((pre * mod + p[f"b{i}"]) * w0)
        else:
            cin = self.grid.encode(c, p) if self.arch == "mgc_siren" else ad.HyperDual(c)
            z = ad.concat([uin, cin], axis=-1)
            for i in range(len(self.hidden)):
                z = ad.sin(ad.linear(z, p[f"W{i}"], p[f"b{i}"]) * w0)
        out = ad.linear(z, p["Wout"], p["bout"])
        return ad.reshape(out, (u.shape[0],))

    def integrand(self, u, c, tape: Optional[ad.Tape] = None) -> ad.HyperDual:
        """Mixed partial ``d^d G / du`` as a real-valued node."""
        g = self.forward(u, c, tape)
        return g.component("d1" if self.param_dim == 1 else "d12")

    def integral(self, c, tape: Optional[ad.Tape] = None) -> ad.HyperDual:
        """Signed corner sum: exact cube integral of :meth:`integrand`."""
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        pts, signs = corners(self.param_dim)
        k = len(signs)
        b = c.shape[0]
        u = np.tile(pts, (b, 1))
        cc = np.repeat(c, k, axis=0)
        g = self.forward(u, cc, tape, seed=False)
        return ad.hsum(ad.reshape(g, (b, k)) * signs, axis=1)

    def copy(self) -> AntiderivativeNet:
        other = AntiderivativeNet(
            self.arch, self.param_dim, self.cond_dim, self.hidden, self.omega0, self.grid,
            {k: v.copy() for k, v in self.params.items()}, self.modulation_override,
        )
        return other


def init_siren(net, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """SIREN initialization (in place); returns the parameter dict.

    First sine layer ``U(-1/fan_in, 1/fan_in)``, later sine layers and the
    output layer ``U(-sqrt(6/fan_in)/omega0, +)``, grid features
    ``U(-1e-4, 1e-4)``. ModSIREN modulation nets start near the identity
    modulation (bias 1).
    """
    shapes = net.param_shapes()
    params = {}
    for name, shape in shapes.items():
        if name.startswith("grid"):
            params[name] = rng.uniform(-1e-4, 1e-4, shape)
        elif name.startswith("W"):
            fan = shape[1]
            if name == "W0":
                bound = 1.0 / fan
            else:
                bound = np.sqrt(6.0 / fan) / net.omega0
            params[name] = rng.uniform(-bound, bound, shape)
        elif name == "bout":
            params[name] = np.zeros(shape)
        elif name.startswith("b"):
            i = int(name[1:])
            fan = shapes[f"W{i}"][1]
            params[name] = rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan)
        elif name.startswith("M"):
            fan = shape[1]
            params[name] = rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan)
        elif name.startswith("m"):
            params[name] = np.ones(shape)
        else:
            raise KeyError(name)
    net.params = params
    return params


def make_net(arch, param_dim, cond_dim, rng=None, hidden=None, omega0=30.0, bbox=None, grid_kwargs=None):
    """Build (and SIREN-initialize when ``rng`` is given) a network."""
    if hidden is None:
        hidden = (64,) * 4 if cond_dim == 2 else (128,) * 4
    grid = None
    if arch == "mgc_siren":
        if bbox is None:
            raise ValueError("mgc_siren needs the domain bounding box")
        grid = FeatureGrid.for_domain(*bbox, **(grid_kwargs or {}))
    net = AntiderivativeNet(arch, param_dim, cond_dim, tuple(hidden), omega0, grid)
    if rng is not None:
        init_siren(net, rng)
    return net


# per-kind settings that train reliably at desk scale. Mixed second
# partials pick up a factor omega0 per parameter axis, so the two-parameter
# kinds start with a gentler first layer.
RECOMMENDED = {
    "circle2d": {"arch": "mgc_siren", "omega0": 30.0},
    "disk2d": {"arch": "cat_siren", "omega0": 10.0},
    "sphere3d": {"arch": "cat_siren", "omega0": 10.0, "hidden": (64, 64)},
}


def make_recommended(kind, cond_dim, rng=None, bbox=None, **overrides):
    """Network for transform ``kind`` with the :data:`RECOMMENDED` settings."""
    opts = dict(RECOMMENDED[kind])
    opts.update({k: v for k, v in overrides.items() if v is not None})
    arch = opts.pop("arch")
    grid_kwargs = opts.pop("grid_kwargs", None)
    if arch == "mgc_siren" and grid_kwargs is None and cond_dim == 3:
        # 3D tables grow with the cube of the resolution
        grid_kwargs = {"base_resolution": 8}
    pd = 1 if kind == "circle2d" else 2
    return make_net(arch, pd, cond_dim, rng, opts.get("hidden"), opts.get("omega0", 30.0), bbox, grid_kwargs)


def encode_condition(net, c) -> np.ndarray:
    """Conditioning features seen by the sine layers (identity unless grid)."""
    if getattr(net, "grid", None) is None or getattr(net, "arch", "") == "mod_siren":
        return np.atleast_2d(np.asarray(c, dtype=np.float64))
    tables = {k: ad.HyperDual(v) for k, v in net.params.items() if k.startswith("grid")}
    return net.grid.encode(c, tables).val


def forward_hyperdual(net, u, c, tape=None) -> ad.HyperDual:
    return net.forward(u, c, tape)
