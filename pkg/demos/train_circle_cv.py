"""Train a circle control variate on square-highfreq and compare walks.

A few hundred steps are enough to see the per-walk variance drop. The
acceptance suite uses the full 5000-step desk profile.

    python3 demos/train_circle_cv.py [steps]
"""

import sys

import numpy as np

from neuralcv import geometry, training, wos
from neuralcv.networks import make_recommended

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500
spec = geometry.registry_lookup("square-highfreq")
rng = np.random.default_rng(0)
model = make_recommended("circle2d", 2, rng, spec.domain.bbox())
result = training.train(model, spec, "circle2d", training.TrainConfig(steps=steps, heldout_every=max(steps // 5, 1)), rng)
for step, loss, held in result.trace:
    if np.isfinite(held):
        print(f"step {step:5d}  pseudo-loss {loss:+.4e}  held-out variance {held:.4e}")

cfg = wos.WalkConfig.for_problem(spec)
x = np.array([0.43, 0.71])
plain = wos.wos_plain(spec, x, cfg, np.random.default_rng(1), n_walks=4000)
cv = wos.wos_cv_circle(spec, x, cfg, model, np.random.default_rng(2), n_walks=4000)
print(f"plain  u = {plain.mean():+.4f} +- {plain.stderr():.4f}  per-walk var {plain.value.var():.4f}")
print(f"cv     u = {cv.mean():+.4f} +- {cv.stderr():.4f}  per-walk var {cv.value.var():.4f}")
