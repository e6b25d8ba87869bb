import csv
import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from neuralcv import autodiff as ad
from neuralcv import geometry as g
from neuralcv import training as T
from neuralcv.checkpoint import load_checkpoint
from neuralcv.control_variates import pseudo_loss
from neuralcv.networks import make_net
from neuralcv.quadrature import circle_integral
from neuralcv.transforms import DomainTransform
from neuralcv.wos import WalkConfig


def small_hyper(**kw):
    base = dict(steps=20, batch=32, cache_capacity=128, cache_points=16, walks_per_label=4,
                heldout_every=10, heldout_conditions=8, heldout_samples=4, checkpoint_every=10)
    base.update(kw)
    return T.TrainConfig(**base)


def tiny(pd, dim, seed=0, bbox=None):
    return make_net("cat_siren", pd, dim, np.random.default_rng(seed), hidden=(8,), bbox=bbox)


def test_cache_update_fills_entries():
    spec = g.registry_lookup("disk-harmonic")
    cfg = WalkConfig.for_problem(spec)
    cache = T.SampleCache(2048, 2, 1, "circle2d")
    T.cache_update(cache, spec, cfg, np.random.default_rng(0), 1024, 32)
    assert len(cache) == 1024
    assert np.all(cache.walk_count[:1024] == 32)
    # the stored cube coordinate maps back onto the walk circle
    x = cache.points(np.arange(1024), 0.0)
    assert_allclose(np.linalg.norm(x - cache.centers[:1024], axis=-1), cache.radius[:1024], rtol=1e-12)
    assert np.all(cache.radius[:1024] > 0)


def test_cache_ring_overwrites_oldest():
    cache = T.SampleCache(4, 2, 1, "circle2d")
    for start in (0, 3, 6):
        n = 3
        lab = np.arange(start, start + n, dtype=float)
        cache.add(np.zeros((n, 2)), np.ones(n), np.zeros((n, 1)), lab, np.ones(n, dtype=int))
    assert len(cache) == 4
    assert sorted(cache.label) == [5.0, 6.0, 7.0, 8.0]
    cache.add(np.zeros((9, 2)), np.ones(9), np.zeros((9, 1)), np.arange(9.0), np.ones(9, dtype=int))
    assert sorted(cache.label) == [5.0, 6.0, 7.0, 8.0]
    with pytest.raises(ValueError):
        T.SampleCache(0, 2, 1, "circle2d")
    with pytest.raises(ValueError):
        T.SampleCache(4, 2, 1, "circle2d").sample(np.random.default_rng(0), 1)


def test_circle_labels_average_to_boundary_mean():
    # for a harmonic solution, label * measure is an unbiased estimate of u at the sample point
    spec = g.registry_lookup("disk-harmonic")
    cfg = WalkConfig.for_problem(spec)
    c = np.array([[0.1, -0.2]])
    centers = np.repeat(c, 4000, axis=0)
    radius, x, label, count = T.draw_labels(spec, "circle2d", centers, cfg, np.random.default_rng(1), 8)
    R = radius[0]
    est = np.mean(label) * 2 * np.pi * R
    quad = circle_integral(spec.analytic_solution, c[0], R) / (2 * np.pi * R)
    se = np.std(label) * 2 * np.pi * R / np.sqrt(label.size)
    assert abs(est - quad) < 4 * se + 5 * cfg.eps_shell
    assert np.all(count == 8)


def test_disk_labels_are_exact_weighted_forcing():
    spec = g.registry_lookup("square-poisson")
    cfg = WalkConfig.for_problem(spec)
    radius, y, label, count = T.draw_labels(spec, "disk2d", np.array([[0.5, 0.5]]), cfg,
                                            np.random.default_rng(2), 32)
    r = np.linalg.norm(y - 0.5, axis=-1)
    assert_allclose(label, -4.0 * np.log(radius / r) / (2 * np.pi))
    assert np.all(count == 0)


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    st = T.AdamState.for_params(p, lr=1e-3)
    assert T.adam_step(st, p, {"w": np.array([0.5, -7.0, 1e-3])})
    assert_allclose(p["w"], [1.0 - 1e-3, -2.0 + 1e-3, 3.0 - 1e-3], rtol=1e-6)
    assert st.step == 1


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, 2.0])}
    st = T.AdamState.for_params(p)
    T.adam_step(st, p, {"w": np.zeros(2)})
    assert np.array_equal(p["w"], [1.0, 2.0])


def test_adam_is_deterministic_and_roundtrips():
    def run():
        p = {"w": np.linspace(0, 1, 5)}
        st = T.AdamState.for_params(p, lr=1e-2)
        rng = np.random.default_rng(3)
        for _ in range(10):
            T.adam_step(st, p, {"w": rng.normal(size=5)})
        return p, st

    a, sa = run()
    b, sb = run()
    assert np.array_equal(a["w"], b["w"])
    again = T.AdamState.from_dict(sa.to_dict())
    assert again.step == 10 and np.array_equal(again.v["w"], sa.v["w"])


def test_adam_skips_nonfinite_gradient(caplog):
    p = {"w": np.ones(3)}
    st = T.AdamState.for_params(p)
    with caplog.at_level(logging.WARNING):
        ok = T.adam_step(st, p, {"w": np.array([1.0, np.nan, 0.0])})
    assert not ok and st.skipped == 1 and st.step == 0
    assert np.array_equal(p["w"], np.ones(3))
    assert "non-finite" in caplog.text


def test_clip_gradients():
    gr = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert T.clip_gradients(gr, 1.0) == 5.0
    assert_allclose(np.hypot(gr["a"], gr["b"]), 1.0)
    small = {"a": np.array([0.1])}
    T.clip_gradients(small, 1.0)
    assert small["a"][0] == 0.1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_short_run_has_finite_losses(seed):
    spec = g.registry_lookup("disk-harmonic")
    m = tiny(1, 2, seed)
    res = T.train(m, spec, "circle2d", small_hyper(), np.random.default_rng(seed))
    losses = np.array([t[1] for t in res.trace])
    assert len(losses) == 20 and np.all(np.isfinite(losses))
    assert res.step == 20


def test_training_reduces_heldout_variance():
    spec = g.registry_lookup("square-poisson")
    m = make_net("cat_siren", 2, 2, np.random.default_rng(4), hidden=(16, 16), omega0=10.0,
                 bbox=spec.domain.bbox())
    hyper = small_hyper(steps=300, lr=1e-3, batch=64, cache_capacity=512, cache_points=64,
                        heldout_every=300, heldout_conditions=16, heldout_samples=16)
    before = T.initial_heldout_variance(m, spec, "disk2d", hyper, np.random.default_rng(5))
    T.train(m, spec, "disk2d", hyper, np.random.default_rng(6))
    after = T.initial_heldout_variance(m, spec, "disk2d", hyper, np.random.default_rng(5))
    assert after < 0.5 * before


def test_gradient_unbiased_under_label_noise():
    # the pseudo-loss gradient is affine in the labels, so zero-mean label
    # noise averages out
    rng = np.random.default_rng(7)
    m = tiny(1, 2, 8)
    n = 16
    centers = rng.uniform(0.3, 0.7, (n, 2))
    radius = rng.uniform(0.1, 0.2, n)
    t = DomainTransform("circle2d", centers, radius, 0.05)
    x = g.sample_uniform_boundary_sphere(centers, radius, rng)
    clean = np.cos(3 * x[:, 0])

    def grad(labels):
        tape = ad.Tape()
        return ad.grad_params(tape, pseudo_loss(m, centers, t, x, labels, tape))

    ref = grad(clean)
    draws = [grad(clean + rng.normal(scale=0.5, size=n)) for _ in range(1000)]
    for k in ref:
        stack = np.stack([d[k] for d in draws])
        se = stack.std(axis=0) / np.sqrt(len(draws))
        assert np.all(np.abs(stack.mean(axis=0) - ref[k]) <= 4 * se + 1e-12)


def test_resume_continues_step_counter(tmp_path):
    spec = g.registry_lookup("disk-harmonic")
    ck = tmp_path / "m.ckpt"
    loss = tmp_path / "loss.csv"
    m = tiny(1, 2, 9)
    T.train(m, spec, "circle2d", small_hyper(steps=10), np.random.default_rng(0), ck, loss)
    saved = load_checkpoint(ck)
    assert saved.step == 10 and saved.adam[0]["step"] == 10
    res = T.train(saved.models[0], spec, "circle2d", small_hyper(steps=15), np.random.default_rng(1), ck, loss,
                  resume=saved)
    assert [t[0] for t in res.trace] == list(range(11, 16))
    assert res.adam[0].step == 15
    with open(loss) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "loss", "heldout_variance"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 16))
    assert load_checkpoint(ck).step == 15


def test_both_variant_needs_two_models():
    spec = g.registry_lookup("square-poisson")
    bbox = spec.domain.bbox()
    with pytest.raises(ValueError):
        T.train(tiny(1, 2), spec, "both", small_hyper(), np.random.default_rng(0))
    res = T.train([tiny(1, 2, bbox=bbox), tiny(2, 2, bbox=bbox)], spec, "both", small_hyper(steps=3),
                  np.random.default_rng(0))
    assert res.kinds == ["circle2d", "disk2d"]


def test_variant_checks():
    with pytest.raises(ValueError):
        T.train(tiny(2, 2), g.registry_lookup("disk-harmonic"), "disk2d", small_hyper())
    with pytest.raises(ValueError):
        T.train(tiny(2, 2), g.registry_lookup("disk-harmonic"), "sphere3d", small_hyper())
    with pytest.raises(ValueError):
        T.train(tiny(2, 2), g.registry_lookup("disk-harmonic"), "circle2d", small_hyper())


def test_walk_budget_helpers():
    h = T.TrainConfig(steps=100, cache_points=10, walks_per_label=4, cache_capacity=50)
    assert h.training_walks() == 100 * 10 * 4 + 50 * 4
    assert h.inference_walk_budget() == 9 * h.training_walks()
    b = T.TrainConfig.for_budget(9_000_000, steps=100, walks_per_label=4)
    assert b.cache_points == int(1_000_000 / 400)
    assert T.TrainConfig.full_profile().steps == 25000
