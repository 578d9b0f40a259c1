"""Quick invariant checks runnable from the command line."""

from __future__ import annotations

import numpy as np

from .estimator import EstimatorConfig, estimate, nmse
from .model import SystemDims, check_psd
from .phase_opt import build_gain_matrix, optimize_steering
from .protocol import build_phase_plan
from .synthetic import random_instance


def _exact_recovery():
    worst = max(nmse(estimate(i.record, i.plan, i.pilots, i.covariances)[0], i.channels.cascaded)
                for i in (random_instance(2, 4, 2, seed=s, noise_var=0.0) for s in range(10)))
    return worst < 1e-10, f"worst NMSE {worst:.2e}"


def _monotone():
    slack = 0.0
    for s in range(5):
        i = random_instance(4, 16, 4, seed=s, noise_var=0.05)
        _, st = estimate(i.record, i.plan, i.pilots, i.covariances, EstimatorConfig(max_iters=10))
        slack = min(slack, float(np.min(np.diff(st.update_trajectory))))
    return slack >= -1e-9, f"largest decrease {max(0.0, -slack):.2e}"


def _phase_design():
    rng = np.random.default_rng(0)
    dev = 0.0
    for N in (4, 16, 64):
        Phi = build_phase_plan(np.exp(2j * np.pi * rng.uniform(size=N)), SystemDims(1, N, 1)).Phi
        dev = max(dev, abs(np.trace(np.linalg.inv(Phi @ Phi.conj().T)).real - 1))
    return dev < 1e-10, f"max |tr - 1| {dev:.2e}"


def _sca_ascent():
    i = random_instance(2, 8, 2, seed=0)
    E = build_gain_matrix(i.covariances, None, i.dims.L1)
    res = optimize_steering(E, np.exp(2j * np.pi * np.random.default_rng(1).uniform(size=8)))
    ok = np.all(np.diff(res.trajectory) >= -1e-10) and np.allclose(np.abs(res.vartheta), 1)
    return bool(ok and check_psd(E)), f"f_B {res.trajectory[0]:.4g} -> {res.trajectory[-1]:.4g}"


CHECKS = [("exact noiseless recovery", _exact_recovery),
          ("objective monotone", _monotone),
          ("phase design trace", _phase_design),
          ("steering ascent", _sca_ascent)]


def run_selftest(out=print) -> bool:
    all_ok = True
    for name, check in CHECKS:
        ok, detail = check()
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
