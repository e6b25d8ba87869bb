"""Sample cache, walk-generated labels, Adam and the training loop.

Each cache entry is one integration domain (the walk sphere or disk around
an interior center) with one sample point on it and a noisy label of the
controlled integrand at that point. A training step refreshes part of the
cache, draws a batch of entries and takes an Adam step on the pseudo-loss
``L_diff - L_int``, whose gradient is an unbiased estimate of the gradient of
the estimator variance.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, save_checkpoint
from .control_variates import estimate, pseudo_loss
from .geometry import ProblemSpec, sample_interior, sample_uniform_ball, sample_uniform_boundary_sphere
from .transforms import DomainTransform, phi, phi_inverse
from .wos import WalkConfig, greens_ball_2d, walk

log = logging.getLogger(__name__)

VARIANTS = ("circle2d", "disk2d", "sphere3d", "both")


# --- cache --------------------------------------------------------------------


class SampleCache:
    """Fixed-capacity ring of ``(center, radius, u, label, walk_count)``.

    ``u`` is the (unstabilized) cube coordinate of the labeled sample on the
    domain around ``center``; new entries overwrite the oldest.
    """

    def __init__(self, capacity: int, dim: int, param_dim: int, kind: str):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.kind = kind
        self.centers = np.zeros((capacity, dim))
        self.radius = np.zeros(capacity)
        self.u = np.zeros((capacity, param_dim))
        self.label = np.zeros(capacity)
        self.walk_count = np.zeros(capacity, dtype=np.int64)
        self.head = 0
        self.count = 0

    def __len__(self):
        return self.count

    def add(self, centers, radius, u, label, walk_count):
        n = len(label)
        if n > self.capacity:
            centers, radius, u, label, walk_count = (a[-self.capacity:] for a in (centers, radius, u, label, walk_count))
            n = self.capacity
        idx = (self.head + np.arange(n)) % self.capacity
        self.centers[idx] = centers
        self.radius[idx] = radius
        self.u[idx] = u
        self.label[idx] = label
        self.walk_count[idx] = walk_count
        self.head = int((self.head + n) % self.capacity)
        self.count = min(self.capacity, self.count + n)

    def transform(self, idx, eps) -> DomainTransform:
        return DomainTransform(self.kind, self.centers[idx], self.radius[idx], eps)

    def points(self, idx, eps) -> np.ndarray:
        return phi(self.transform(idx, eps), self.u[idx])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.count == 0:
            raise ValueError("cache is empty")
        return rng.integers(0, self.count, size=n)


def _kind_param_dim(kind):
    return 1 if kind == "circle2d" else 2


def draw_labels(spec: ProblemSpec, kind: str, centers, cfg: WalkConfig, rng, walks_per_label: int):
    """One sample point per center and its label; returns ``(radius, x, label, walk_count)``.

    Circle/sphere labels are the mean of ``walks_per_label`` plain walks from
    the sample point divided by the sphere measure. Disk labels are the
    Green's-weighted forcing ``-f(y) G(|y - c|, R)``, which is known exactly.
    """
    centers = np.atleast_2d(centers)
    n = centers.shape[0]
    radius = -spec.domain.sdf(centers)
    if kind == "disk2d":
        y = sample_uniform_ball(centers, radius, rng)
        dist = np.linalg.norm(y - centers, axis=-1)
        label = -spec.forcing_f(y) * greens_ball_2d(dist, radius)
        return radius, y, label, np.zeros(n, dtype=np.int64)
    x = sample_uniform_boundary_sphere(centers, radius, rng)
    res = walk(spec, x, cfg, rng, n_walks=walks_per_label, check_start=False)
    u_hat = res.value.reshape(n, walks_per_label).mean(axis=1)
    measure = DomainTransform(kind, centers, radius, cfg.eps).measure()
    return radius, x, u_hat / measure, np.full(n, walks_per_label, dtype=np.int64)


def cache_update(cache: SampleCache, spec: ProblemSpec, cfg: WalkConfig, rng: np.random.Generator,
                 n_points: int = 1024, walks_per_label: int = 32) -> None:
    """Replace the ``n_points`` oldest entries with freshly labeled ones."""
    centers = sample_interior(spec, rng, n_points, min_distance=cfg.eps_shell)
    radius, x, label, count = draw_labels(spec, cache.kind, centers, cfg, rng, walks_per_label)
    t = DomainTransform(cache.kind, centers, radius, cfg.eps)
    cache.add(centers, radius, phi_inverse(t, x), label, count)


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    skipped: int = 0

    @classmethod
    def for_params(cls, params: dict, lr: float = 1e-4, **kwargs) -> AdamState:
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, lr, **kwargs)

    def to_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step": self.step, "skipped": self.skipped}

    @classmethod
    def from_dict(cls, d: dict) -> AdamState:
        return cls({k: np.array(v) for k, v in d["m"].items()}, {k: np.array(v) for k, v in d["v"].items()},
                   d["lr"], d["beta1"], d["beta2"], d["eps"], int(d["step"]), int(d.get("skipped", 0)))


def adam_step(state: AdamState, params: dict, grads: dict) -> bool:
    """Bias-corrected Adam update in place; returns False if the step was skipped."""
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient, skipping optimizer step (%d skipped so far)", state.skipped)
        return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global L2 norm ``max_norm``; returns the raw norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if np.isfinite(norm) and norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


# --- training loop ------------------------------------------------------------


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults are the desk-scale profile."""

    steps: int = 5000
    batch: int = 256
    lr: float = 1e-4
    cache_capacity: int = 4096
    cache_points: int = 256
    walks_per_label: int = 32
    clip_norm: float = 10.0
    checkpoint_every: int = 500
    heldout_every: int = 500
    heldout_conditions: int = 64
    heldout_samples: int = 16
    eps: float = 0.05
    rel_shell: float = 1e-3
    train_walk_fraction: float = 0.1

    @classmethod
    def full_profile(cls, **kwargs) -> TrainConfig:
        base = dict(steps=25000, batch=1024, cache_capacity=16384, cache_points=1024)
        base.update(kwargs)
        return cls(**base)

    def training_walks(self) -> int:
        """Walks consumed by label generation (circle/sphere caches)."""
        return self.steps * self.cache_points * self.walks_per_label + self.cache_capacity * self.walks_per_label

    def inference_walk_budget(self) -> int:
        """Inference walks for which this run is ``train_walk_fraction`` of the total."""
        f = self.train_walk_fraction
        return int(round(self.training_walks() * (1 - f) / f))

    @classmethod
    def for_budget(cls, inference_walks: int, **kwargs) -> TrainConfig:
        """Choose ``cache_points`` so training spends ``train_walk_fraction`` of all walks."""
        cfg = cls(**kwargs)
        f = cfg.train_walk_fraction
        target = inference_walks * f / (1 - f)
        per_step = target / (cfg.steps * cfg.walks_per_label)
        cfg.cache_points = max(1, int(per_step))
        return cfg


@dataclass
class TrainResult:
    models: list
    kinds: list
    trace: list = field(default_factory=list)  # (step, loss, heldout_variance)
    adam: list = field(default_factory=list)
    step: int = 0

    @property
    def model(self):
        return self.models[0]


def _variant_kinds(spec, variant) -> list[str]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "sphere3d":
        if spec.dim != 3:
            raise ValueError("sphere3d training needs a 3D problem")
        return ["sphere3d"]
    if spec.dim != 2:
        raise ValueError(f"{variant} training needs a 2D problem")
    if variant in ("disk2d", "both") and spec.equation != "poisson":
        raise ValueError("disk training needs a Poisson problem")
    return ["circle2d", "disk2d"] if variant == "both" else [variant]


@dataclass
class HeldOut:
    """Fixed conditions with several labeled samples each."""

    kind: str
    centers: np.ndarray
    radius: np.ndarray
    x: np.ndarray
    label: np.ndarray

    @classmethod
    def draw(cls, spec, kind, cfg: WalkConfig, rng, n_conditions, n_samples, walks_per_label):
        centers = sample_interior(spec, rng, n_conditions, min_distance=cfg.eps_shell)
        rep = np.repeat(centers, n_samples, axis=0)
        radius, x, label, _ = draw_labels(spec, kind, rep, cfg, rng, walks_per_label)
        return cls(kind, rep, radius, x, label)

    def variance(self, model, eps, n_samples) -> float:
        """Mean within-condition variance of the single-sample CV estimate."""
        t = DomainTransform(self.kind, self.centers, self.radius, eps)
        br = estimate(model, self.label, self.x, t.uniform_density(), self.centers, t)
        tot = br.total.reshape(-1, n_samples)
        return float(np.mean(np.var(tot, axis=1, ddof=1)))


def _loss_and_grads(model, cache: SampleCache, idx, eps):
    tape = ad.Tape()
    t = cache.transform(idx, eps)
    x = cache.points(idx, eps)
    loss = pseudo_loss(model, cache.centers[idx], t, x, cache.label[idx], tape)
    return float(loss.val), ad.grad_params(tape, loss)


def train(
    models,
    spec: ProblemSpec,
    variant: str,
    hyper: Optional[TrainConfig] = None,
    rng: Optional[np.random.Generator] = None,
    checkpoint_path=None,
    loss_csv=None,
    resume: Optional[Checkpoint] = None,
) -> TrainResult:
    """Train one model (or ``(circle_model, disk_model)`` for ``both``) in place.

    ``resume`` restores Adam moments and the step counter from a checkpoint;
    training then runs until the counter reaches ``hyper.steps``.
    """
    hyper = hyper or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()
    kinds = _variant_kinds(spec, variant)
    models = list(models) if isinstance(models, (list, tuple)) else [models]
    if len(models) != len(kinds):
        raise ValueError(f"variant {variant} needs {len(kinds)} model(s)")
    for m, k in zip(models, kinds):
        if m.param_dim != _kind_param_dim(k) or m.cond_dim != spec.dim:
            raise ValueError(f"model dimensions do not fit the {k} transform")

    wcfg = WalkConfig.for_problem(spec, hyper.rel_shell, eps=hyper.eps)
    start = 0
    if resume is not None:
        start = int(resume.step)
        adams = [AdamState.from_dict(a) if a is not None else AdamState.for_params(m.params, hyper.lr)
                 for m, a in zip(models, resume.adam + [None] * len(models))]
    else:
        adams = [AdamState.for_params(m.params, hyper.lr) for m in models]

    caches = []
    for k in kinds:
        c = SampleCache(hyper.cache_capacity, spec.dim, _kind_param_dim(k), k)
        cache_update(c, spec, wcfg, rng, hyper.cache_capacity, hyper.walks_per_label)
        caches.append(c)
    heldout = [HeldOut.draw(spec, k, wcfg, rng, hyper.heldout_conditions, hyper.heldout_samples,
                            hyper.walks_per_label) for k in kinds]

    def heldout_variance():
        return sum(h.variance(m, hyper.eps, hyper.heldout_samples) for h, m in zip(heldout, models))

    result = TrainResult(models, kinds, adam=adams, step=start)
    csv_fh = None
    writer = None
    if loss_csv is not None:
        Path(loss_csv).parent.mkdir(parents=True, exist_ok=True)
        csv_fh = open(loss_csv, "a" if resume is not None else "w", newline="")
        writer = csv.writer(csv_fh)
        if resume is None:
            writer.writerow(["step", "loss", "heldout_variance"])

    try:
        for step in range(start + 1, hyper.steps + 1):
            total = 0.0
            for model, cache, adam in zip(models, caches, adams):
                cache_update(cache, spec, wcfg, rng, hyper.cache_points, hyper.walks_per_label)
                idx = cache.sample(rng, hyper.batch)
                try:
                    loss, grads = _loss_and_grads(model, cache, idx, hyper.eps)
                except ValueError:
                    # every sample fell outside the stabilized region; retry once
                    idx = cache.sample(rng, hyper.batch)
                    loss, grads = _loss_and_grads(model, cache, idx, hyper.eps)
                clip_gradients(grads, hyper.clip_norm)
                adam_step(adam, model.params, grads)
                total += loss
            hv = heldout_variance() if step % hyper.heldout_every == 0 or step == hyper.steps else float("nan")
            result.trace.append((step, total, hv))
            result.step = step
            if writer is not None:
                writer.writerow([step, f"{total:.17g}", f"{hv:.17g}"])
            if checkpoint_path is not None and (step % hyper.checkpoint_every == 0 or step == hyper.steps):
                save_checkpoint(checkpoint_path, Checkpoint(models, kinds, step, [a.to_dict() for a in adams]))
    finally:
        if csv_fh is not None:
            csv_fh.close()
    return result


def initial_heldout_variance(models, spec, variant, hyper: TrainConfig, rng) -> float:
    """Held-out variance of ``models`` on a fresh held-out set (before/after studies)."""
    kinds = _variant_kinds(spec, variant)
    models = list(models) if isinstance(models, (list, tuple)) else [models]
    wcfg = WalkConfig.for_problem(spec, hyper.rel_shell, eps=hyper.eps)
    total = 0.0
    for m, k in zip(models, kinds):
        h = HeldOut.draw(spec, k, wcfg, rng, hyper.heldout_conditions, hyper.heldout_samples, hyper.walks_per_label)
        total += h.variance(m, hyper.eps, hyper.heldout_samples)
    return total


def loss_trace_rows(result: TrainResult) -> Sequence[tuple]:
    return list(result.trace)
