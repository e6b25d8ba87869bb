"""Command-line driver: ``solve``, ``train``, ``convergence`` and ``selftest``.

Usage::

    neuralcv solve --config run.cfg [--seed N] [--out DIR]

The config is a flat ``key = value`` file (``#`` starts a comment). Every key
can be overridden by an environment variable ``NCV_<KEY>`` (upper case), and
``--seed`` / ``--out`` override both. Keys and defaults are listed in
:data:`DEFAULTS`.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import geometry, training
from .checkpoint import load_checkpoint
from .networks import ARCHS, make_net, make_recommended
from .poly import make_poly
from .wos import RunningStats, WalkConfig, walk

METHODS = ("plain", "cv-circle", "cv-disk", "cv-both", "cv-sphere", "poly")
ENV_PREFIX = "NCV_"

# method -> training variant
_VARIANT = {"cv-circle": "circle2d", "cv-disk": "disk2d", "cv-both": "both", "cv-sphere": "sphere3d"}


@dataclass
class RunConfig:
    problem: str = "disk-harmonic"
    method: str = "plain"
    # "auto" picks the per-kind settings in networks.RECOMMENDED
    arch: str = "auto"
    resolution: int = 256
    walks_per_pixel: int = 16
    seed: int = 0
    out: str = "out"
    checkpoint: str = ""
    # solve
    slice_z: float = 0.0
    # training
    profile: str = "desk"
    steps: int = 5000
    batch: int = 256
    lr: float = 1e-4
    cache_capacity: int = 4096
    cache_points: int = 256
    walks_per_label: int = 32
    hidden: str = ""
    # 0 keeps the arch default (30, or the recommended value under "auto")
    omega0: float = 0.0
    # 0 picks 16 in 2D and 8 in 3D
    grid_base: int = 0
    degree: int = 2
    eps: float = 0.05
    rel_shell: float = 1e-3
    train_walk_fraction: float = 0.1
    resume: bool = False
    # convergence
    n_list: str = "64,128,256,512,1024,2048,4096,8192,16384"
    methods: str = ""
    repeats: int = 4
    reference_walks: int = 1 << 20
    # selftest mutation hook: multiplies the Jacobian used by the change-of-variables check
    selftest_jacobian_scale: float = 1.0

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        if self.walks_per_pixel < 1:
            raise ValueError("walks_per_pixel must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.arch != "auto" and self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected 'auto' or one of {ARCHS}")
        if self.profile not in ("desk", "full"):
            raise ValueError("profile must be 'desk' or 'full'")

    def check_problem(self) -> geometry.ProblemSpec:
        spec = geometry.registry_lookup(self.problem)
        need3d = self.method == "cv-sphere"
        need2d = self.method in ("cv-circle", "cv-disk", "cv-both")
        if (need3d and spec.dim != 3) or (need2d and spec.dim != 2):
            raise ValueError(f"method {self.method} does not fit the {spec.dim}D problem {self.problem}")
        if self.method in ("cv-disk", "cv-both") and spec.equation != "poisson":
            raise ValueError(f"method {self.method} needs a Poisson problem")
        return spec

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else self.out_dir / "model.ckpt"

    def hidden_layers(self) -> Optional[tuple]:
        return tuple(int(h) for h in self.hidden.split(",")) if self.hidden else None

    def train_config(self) -> training.TrainConfig:
        kw = dict(steps=self.steps, batch=self.batch, lr=self.lr, cache_capacity=self.cache_capacity,
                  cache_points=self.cache_points, walks_per_label=self.walks_per_label, eps=self.eps,
                  rel_shell=self.rel_shell, train_walk_fraction=self.train_walk_fraction)
        if self.profile == "full":
            return training.TrainConfig.full_profile(lr=self.lr, walks_per_label=self.walks_per_label, eps=self.eps,
                                                      rel_shell=self.rel_shell,
                                                      train_walk_fraction=self.train_walk_fraction)
        return training.TrainConfig(**kw)

    def walk_config(self, spec) -> WalkConfig:
        return WalkConfig.for_problem(spec, self.rel_shell, eps=self.eps)


DEFAULTS = {f.name: f.default for f in fields(RunConfig)}


def _coerce(name, raw: str):
    default = DEFAULTS[name]
    if isinstance(default, bool):
        v = raw.strip().lower()
        if v not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return v in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"line {n}: expected 'key = value'")
        if key not in DEFAULTS:
            raise ValueError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(key, value.strip())
    return values


def load_config(path=None, env=None, **overrides) -> RunConfig:
    """Config file, then ``NCV_*`` environment variables, then explicit overrides."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    env = os.environ if env is None else env
    for key in DEFAULTS:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# --- models -------------------------------------------------------------------


def _variant(cfg: RunConfig, spec) -> str:
    if cfg.method == "poly":
        return "circle2d" if spec.dim == 2 else "sphere3d"
    if cfg.method == "plain":
        raise ValueError("plain walks have no model to train")
    return _VARIANT[cfg.method]


def build_models(cfg: RunConfig, spec, rng) -> list:
    variant = _variant(cfg, spec)
    kinds = ["circle2d", "disk2d"] if variant == "both" else [variant]
    bbox = spec.domain.bbox()
    grid_kwargs = {"base_resolution": cfg.grid_base or (8 if spec.dim == 3 else 16)}
    models = []
    for k in kinds:
        pd = 1 if k == "circle2d" else 2
        omega0 = cfg.omega0 if cfg.omega0 > 0 else None
        if cfg.method == "poly":
            models.append(make_poly(pd, spec.dim, bbox, rng, cfg.degree, grid_kwargs))
        elif cfg.arch == "auto":
            models.append(make_recommended(k, spec.dim, rng, bbox, hidden=cfg.hidden_layers(), omega0=omega0,
                                           grid_kwargs=grid_kwargs))
        else:
            models.append(make_net(cfg.arch, pd, spec.dim, rng, cfg.hidden_layers(), omega0 or 30.0, bbox, grid_kwargs))
    return models


def load_models(cfg: RunConfig, spec) -> list:
    path = cfg.checkpoint_path
    if not path.exists():
        raise FileNotFoundError(f"method {cfg.method} needs a checkpoint; {path} does not exist")
    ck = load_checkpoint(path)
    variant = _variant(cfg, spec)
    expect = ["circle2d", "disk2d"] if variant == "both" else [variant]
    if ck.roles != expect:
        raise ValueError(f"checkpoint holds {ck.roles}, method {cfg.method} needs {expect}")
    return ck.models


def run_walks(spec, method, models, x, wcfg, rng, n_walks=None, check_start=True):
    """Walk values for ``method`` from start point(s) ``x``."""
    rec = frc = None
    if method in ("cv-circle", "cv-sphere", "poly"):
        rec = models[0]
    elif method == "cv-disk":
        frc = models[0]
    elif method == "cv-both":
        rec, frc = models
    return walk(spec, x, wcfg, rng, n_walks, recursive_model=rec, forcing_model=frc, check_start=check_start)


# --- solve --------------------------------------------------------------------


def pixel_grid(spec, resolution, slice_z=0.0):
    """Pixel-center coordinates ``(res, res, dim)``; row 0 is the top (max y)."""
    lo, hi = spec.domain.bbox()
    xs = lo[0] + (np.arange(resolution) + 0.5) * (hi[0] - lo[0]) / resolution
    ys = hi[1] - (np.arange(resolution) + 0.5) * (hi[1] - lo[1]) / resolution
    X, Y = np.meshgrid(xs, ys)
    pts = [X, Y] if spec.dim == 2 else [X, Y, np.full_like(X, slice_z)]
    return np.stack(pts, axis=-1)


def _row_rng(seed, row, tag=0):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tag), int(row)]))


def to_ppm_bytes(grid: np.ndarray, vmin: float, vmax: float) -> bytes:
    """P5 image: interior values mapped to 1..255, NaN (exterior) to 0."""
    h, w = grid.shape
    interior = np.isfinite(grid)
    span = vmax - vmin
    scaled = np.zeros_like(grid)
    if span > 0:
        scaled[interior] = (grid[interior] - vmin) / span
    px = np.where(interior, 1 + np.rint(254 * scaled), 0).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode() + px.tobytes()


def read_raw_grid(path, resolution) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").reshape(resolution, resolution)


def cmd_solve(cfg: RunConfig) -> dict:
    spec = cfg.check_problem()
    models = load_models(cfg, spec) if cfg.method != "plain" else []
    wcfg = cfg.walk_config(spec)
    pts = pixel_grid(spec, cfg.resolution, cfg.slice_z)
    res = cfg.resolution
    value = np.full((res, res), np.nan)
    stderr = np.full((res, res), np.nan)
    t0 = time.perf_counter()
    k = cfg.walks_per_pixel
    for row in range(res):
        inside = spec.domain.sdf(pts[row]) < 0
        if not np.any(inside):
            continue
        rng = _row_rng(cfg.seed, row)
        r = run_walks(spec, cfg.method, models, pts[row][inside], wcfg, rng, n_walks=k)
        v = r.value.reshape(-1, k)
        value[row, inside] = v.mean(axis=1)
        stderr[row, inside] = v.std(axis=1, ddof=1) / math.sqrt(k) if k > 1 else np.nan
    wall = time.perf_counter() - t0

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    value.astype("<f8").tofile(out / "solution.f64")
    stderr.astype("<f8").tofile(out / "stderr.f64")
    interior = np.isfinite(value)
    vmin = float(np.min(value[interior])) if interior.any() else 0.0
    vmax = float(np.max(value[interior])) if interior.any() else 0.0
    (out / "solution.ppm").write_bytes(to_ppm_bytes(value, vmin, vmax))
    stats = {
        "problem": cfg.problem, "method": cfg.method, "resolution": res, "walks_per_pixel": k,
        "interior_pixels": int(interior.sum()), "total_walks": int(interior.sum()) * k,
        "value_min": vmin, "value_max": vmax, "seed": cfg.seed, "wall_time_s": wall,
    }
    if spec.analytic_solution is not None and interior.any():
        exact = spec.analytic_solution(pts[interior])
        stats["mse"] = float(np.mean((value[interior] - exact) ** 2))
        stats["reference"] = "analytic"
    with open(out / "stats.txt", "w") as fh:
        for key, v in stats.items():
            fh.write(f"{key} = {v:.17g}\n" if isinstance(v, float) else f"{key} = {v}\n")
    return stats


# --- train --------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> training.TrainResult:
    spec = cfg.check_problem()
    variant = _variant(cfg, spec)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    resume = None
    path = cfg.checkpoint_path
    if cfg.resume and path.exists():
        resume = load_checkpoint(path)
        models = resume.models
        # continue the random stream past the steps already taken
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, resume.step]))
    else:
        models = build_models(cfg, spec, rng)
    hyper = cfg.train_config()
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return training.train(models, spec, variant, hyper, rng, checkpoint_path=path,
                          loss_csv=out / "loss.csv", resume=resume)


# --- convergence --------------------------------------------------------------


def probe_points(spec, n=16) -> np.ndarray:
    """Fixed interior evaluation points for convergence studies."""
    rng = np.random.default_rng(20240607)
    return geometry.sample_interior(spec, rng, n, min_distance=0.02 * spec.domain.diameter())


def reference_values(spec, probes, walks, seed=0) -> np.ndarray:
    """Analytic values, or a high-budget plain-walk estimate when none exists."""
    if spec.analytic_solution is not None:
        return spec.analytic_solution(probes)
    wcfg = WalkConfig.for_problem(spec)
    out = np.empty(len(probes))
    for i, p in enumerate(probes):
        stats = RunningStats()
        rng = _row_rng(seed, i, tag=99)
        left = walks
        while left > 0:
            m = min(left, 1 << 16)
            stats.update(walk(spec, p, wcfg, rng, m).value)
            left -= m
        out[i] = stats.mean
    return out


def fit_slope(n, mse) -> float:
    return float(np.polyfit(np.log2(n), np.log2(mse), 1)[0])


def convergence_table(spec, method, models, probes, ref, n_list, wcfg, seed, repeats, tag=0):
    rows = []
    for n in n_list:
        err = []
        for i, p in enumerate(probes):
            rng = _row_rng(seed, i * 1_000_003 + n, tag=tag)
            v = run_walks(spec, method, models, p, wcfg, rng, n_walks=n * repeats).value.reshape(repeats, n)
            err.extend((v.mean(axis=1) - ref[i]) ** 2)
        rows.append((n, float(np.mean(err))))
    return rows


def cmd_convergence(cfg: RunConfig) -> dict:
    spec = geometry.registry_lookup(cfg.problem)
    methods = [m.strip() for m in cfg.methods.split(",") if m.strip()] or sorted({"plain", cfg.method})
    n_list = [int(v) for v in cfg.n_list.split(",")]
    probes = probe_points(spec)
    ref = reference_values(spec, probes, cfg.reference_walks, cfg.seed)
    wcfg = cfg.walk_config(spec)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    slopes = {}
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "N", "MSE"])
        for k, method in enumerate(methods):
            sub = RunConfig(**{**cfg.__dict__, "method": method})
            models = load_models(sub, spec) if method != "plain" else []
            rows = convergence_table(spec, method, models, probes, ref, n_list, wcfg, cfg.seed, cfg.repeats, tag=k)
            for n, mse in rows:
                w.writerow([method, n, f"{mse:.17g}"])
            slopes[method] = fit_slope([r[0] for r in rows], [r[1] for r in rows])
    with open(out / "convergence_slopes.txt", "w") as fh:
        for m, s in slopes.items():
            fh.write(f"{m} = {s:.17g}\n")
    return slopes


# --- selftest -----------------------------------------------------------------


def cmd_selftest(cfg: RunConfig, stream=None) -> int:
    from .selftest import run_selftest

    stream = stream or sys.stdout
    results = run_selftest(jacobian_scale=cfg.selftest_jacobian_scale)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: error {r.error:.3e} (tol {r.tol:.1e})", file=stream)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=stream)
    return 0 if failed == 0 else 1


# --- entry point --------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="neuralcv", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=["solve", "train", "convergence", "selftest"])
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "solve":
            stats = cmd_solve(cfg)
            print(" ".join(f"{k}={v}" for k, v in stats.items()))
        elif args.command == "train":
            res = cmd_train(cfg)
            last = res.trace[-1] if res.trace else None
            print(f"trained to step {res.step}; checkpoint {cfg.checkpoint_path}"
                  + (f"; final loss {last[1]:.6g}" if last else ""))
        elif args.command == "convergence":
            for m, s in cmd_convergence(cfg).items():
                print(f"{m}: log-log slope {s:.3f}")
        else:
            return cmd_selftest(cfg)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
