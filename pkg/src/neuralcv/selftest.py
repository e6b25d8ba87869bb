"""Fast invariant checks behind ``neuralcv selftest``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .control_variates import corner_sum, cv_integrand
from .geometry import registry_lookup
from .networks import make_net
from .quadrature import cube_integral, disk_integral, domain_integral
from .training import AdamState, adam_step
from .transforms import DomainTransform, jacobian_det, phi
from .wos import WalkConfig, greens_ball_2d, wos_plain


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


_CASES = (("circle2d", (0.3, -0.2), 0.4), ("disk2d", (0.1, 0.2), 0.5), ("sphere3d", (0.1, -0.2, 0.3), 0.6))


def _tiny_net(kind, seed):
    pd = 1 if kind == "circle2d" else 2
    dim = 2 if kind != "sphere3d" else 3
    return make_net("cat_siren", pd, dim, np.random.default_rng(seed), hidden=(16, 16))


def check_corner_sum() -> CheckResult:
    worst = 0.0
    for kind, c, R in _CASES:
        net = _tiny_net(kind, 1)
        t = DomainTransform(kind, np.array(c), R, 0.05)
        exact = float(corner_sum(net, np.array(c), t)[0])
        quad = domain_integral(kind, lambda x: cv_integrand(net, x, np.array(c), t), c, R, eps=0.05)
        worst = max(worst, abs(exact - quad) / (abs(exact) + 1e-9))
    return CheckResult("corner_sum_vs_quadrature", worst, 1e-6)


def check_gradients() -> CheckResult:
    net = make_net("cat_siren", 2, 2, np.random.default_rng(2), hidden=(6, 6))
    u = np.random.default_rng(3).uniform(-1, 1, (5, 2))
    c = np.random.default_rng(4).uniform(0, 1, (5, 2))

    def objective(tape=None):
        g = net.forward(u, c, tape)
        return ad.square(g.component("d12")).mean() + ad.square(net.integral(c, tape)).mean()

    tape = ad.Tape()
    grads = ad.grad_params(tape, objective(tape))
    worst = 0.0
    rng = np.random.default_rng(5)
    h = 1e-6
    for name, p in net.params.items():
        flat = p.reshape(-1)
        for j in rng.choice(flat.size, min(3, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + h
            a = float(objective().val)
            flat[j] = old - h
            b = float(objective().val)
            flat[j] = old
            fd = (a - b) / (2 * h)
            an = grads[name].reshape(-1)[j]
            worst = max(worst, abs(fd - an) / max(abs(fd), 1e-3))
    return CheckResult("reverse_mode_vs_finite_difference", worst, 1e-4)


def check_change_of_variables(jacobian_scale: float = 1.0) -> CheckResult:
    worst = 0.0
    F = lambda x: 1.0 + np.sum(x * x, axis=-1) + x[..., 0]
    for kind, c, R in _CASES:
        t = DomainTransform(kind, np.array(c), R, 0.0)
        cube = cube_integral(lambda u: F(phi(t, u)) * jacobian_det(t, u) * jacobian_scale, t.param_dim)
        ref = domain_integral(kind, F, c, R)
        worst = max(worst, abs(cube - ref) / abs(ref))
    return CheckResult("jacobian_change_of_variables", worst, 1e-9)


def check_greens_integral() -> CheckResult:
    R = 0.7
    val = disk_integral(lambda x: greens_ball_2d(np.maximum(np.linalg.norm(x, axis=-1), 1e-300), R),
                        (0.0, 0.0), R, r_breaks=[1e-3 * R, 1e-2 * R, 0.1 * R])
    return CheckResult("greens_ball_integral", abs(val - R * R / 4) / (R * R / 4), 1e-8)


def check_adam() -> CheckResult:
    def run():
        rng = np.random.default_rng(7)
        params = {"w": rng.normal(size=(4, 3))}
        st = AdamState.for_params(params, lr=1e-3)
        for _ in range(5):
            adam_step(st, params, {"w": np.sin(params["w"]) + rng.normal(size=(4, 3))})
        return params["w"]

    a, b = run(), run()
    params = {"w": np.zeros(3)}
    st = AdamState.for_params(params, lr=1e-3)
    adam_step(st, params, {"w": np.ones(3)})
    first = float(np.max(np.abs(params["w"] + 1e-3)))
    err = first / 1e-3 + (0.0 if np.array_equal(a, b) else 1.0)
    return CheckResult("adam_first_step_and_determinism", err, 1e-4)


def check_wos() -> CheckResult:
    spec = registry_lookup("disk-harmonic")
    x = np.array([0.3, 0.4])
    r = wos_plain(spec, x, WalkConfig.for_problem(spec), np.random.default_rng(11), n_walks=20000)
    # error in standard errors; pass below 4
    return CheckResult("wos_disk_harmonic_z_score", abs(r.mean() - spec.analytic_solution(x)) / r.stderr(), 4.0)


def run_selftest(jacobian_scale: float = 1.0) -> list[CheckResult]:
    return [
        check_corner_sum(),
        check_gradients(),
        check_change_of_variables(jacobian_scale),
        check_greens_integral(),
        check_adam(),
        check_wos(),
    ]
