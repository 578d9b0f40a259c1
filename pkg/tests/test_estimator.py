import warnings

import numpy as np
import pytest
from scipy import linalg

from conftest import crandn
from oracles import stationarity_ratio
from irsce import estimator as est
from irsce.estimator import (EstimatorConfig, MapProblem, assemble_cascaded, canonical_factors,
                             common_link_systems, estimate, estimate_direct, init_common_link,
                             nmse, objective_fA, objective_terms, update_common_link,
                             update_user_specific)
from irsce.synthetic import random_instance


def problem_of(inst, use_prior=True):
    return MapProblem.from_record(inst.record, inst.plan, inst.pilots, inst.covariances,
                                  use_prior=use_prior)


def fA_oracle(H_g, H_u, inst):
    """Scalar-loop evaluation of the MAP objective."""
    rec, plan, xbar = inst.record, inst.plan, inst.pilots.xbar
    N, M = H_g.shape
    K = H_u.shape[1]
    L1 = rec.dims.L1
    total = 0.0
    for ell in range(1, L1 + 1):
        for m in range(M):
            for k in range(K):
                pred = sum(H_g[n, m] * plan.theta[ell][n] * H_u[n, k] for n in range(N))
                total -= abs(rec.Rtilde[ell - 1][m, k] - pred) ** 2 / rec.sigma2_tilde[ell - 1]
    for ell in range(L1 + 1, N + 1):
        for m in range(M):
            pred = sum(H_g[n, m] * plan.theta[ell][n] * H_u[n, k] * xbar[k]
                       for n in range(N) for k in range(K))
            total -= abs(rec.rbar[ell - 1][m] - pred) ** 2 / rec.sigma2_bar[ell - 1]
    for m in range(M):
        for k in range(K):
            h = H_u[:, k] * H_g[:, m]
            total -= (h.conj() @ np.linalg.inv(inst.covariances.C_cascaded[m, k]) @ h).real
    return total


def _start(inst, p):
    return init_common_link(inst.record.rbar, inst.plan.Phi)


def test_objective_matches_termwise_oracle():
    inst = random_instance(2, 3, 2, seed=1, noise_var=0.1)
    p = problem_of(inst)
    rng = np.random.default_rng(0)
    H_g, H_u = crandn(rng, 3, 2), crandn(rng, 3, 2)
    assert np.isclose(objective_fA(H_g, H_u, p), fA_oracle(H_g, H_u, inst), rtol=1e-12)


def test_objective_trivial_cases():
    inst = random_instance(2, 4, 2, seed=2, noise_var=0.0)
    p = problem_of(inst)
    zero_data = MapProblem(**{**p.__dict__, "Rtilde": 0 * p.Rtilde, "rbar": 0 * p.rbar})
    assert objective_fA(np.zeros((4, 2)), crandn(np.random.default_rng(1), 4, 2), zero_data) == 0
    # noiseless data at the true factors: the residuals vanish
    inst = random_instance(2, 4, 2, seed=2, noise_var=1e-3)
    H_g, H_u = canonical_factors(inst.channels, inst.pilots.xbar)
    clean = random_instance(2, 4, 2, seed=2, noise_var=0.0)
    p = MapProblem(**{**problem_of(inst).__dict__, "Rtilde": clean.record.Rtilde,
                      "rbar": clean.record.rbar})
    lik, prior = objective_terms(H_g, H_u, p)
    assert abs(lik) < 1e-18 * prior
    assert np.isclose(objective_fA(H_g, H_u, p), -prior, rtol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_user_specific_update_is_stationary(seed):
    inst = random_instance(2, 4, 3, seed=seed, noise_var=0.05)
    p = problem_of(inst)
    H_g = _start(inst, p)
    H_u = update_user_specific(H_g, p)
    assert stationarity_ratio(lambda Z: objective_terms(H_g, Z, p), H_u) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_common_link_update_is_stationary(seed):
    inst = random_instance(2, 4, 3, seed=seed, noise_var=0.05)
    p = problem_of(inst)
    H_u = update_user_specific(_start(inst, p), p)
    H_g = update_common_link(H_u, p)
    assert stationarity_ratio(lambda Z: objective_terms(Z, H_u, p), H_g) < 1e-6


def test_inverse_prior_variant_is_not_stationary():
    inst = random_instance(2, 4, 3, seed=4, noise_var=0.05)
    p = problem_of(inst)
    H_u = update_user_specific(_start(inst, p), p)
    Lam, nu = common_link_systems(H_u, p)
    C_g = np.einsum("ki,mkij,kj->mij", H_u.T.conj(), p.C_inv, H_u.T)
    bad = np.stack([np.linalg.solve(Lam[m] - C_g[m] + np.linalg.inv(C_g[m]), nu[:, m])
                    for m in range(Lam.shape[0])], axis=1)
    assert stationarity_ratio(lambda Z: objective_terms(Z, H_u, p), bad) > 1e-3


def _prior_rows(C_inv):
    # z^H C^{-1} z = |U z|^2 with C^{-1} = U^H U
    return np.linalg.cholesky(C_inv).conj().T


def dense_user_specific(H_g, p):
    """Weighted stacked least squares in vec(H_u), built row by row."""
    N, M = H_g.shape
    K = p.xbar.shape[0]
    rows, rhs = [], []
    for i, th in enumerate(p.theta1):
        for m in range(M):
            for k in range(K):
                a = np.zeros(N * K, dtype=complex)
                a[k * N:(k + 1) * N] = H_g[:, m] * th
                rows.append(np.sqrt(p.w1[i]) * a)
                rhs.append(np.sqrt(p.w1[i]) * p.Rtilde[i, m, k])
    for i, th in enumerate(p.theta2):
        for m in range(M):
            a = np.concatenate([H_g[:, m] * th * p.xbar[k] for k in range(K)])
            rows.append(np.sqrt(p.w2[i]) * a)
            rhs.append(np.sqrt(p.w2[i]) * p.rbar2[i, m])
    if p.prior_scale:
        for m in range(M):
            for k in range(K):
                U = _prior_rows(p.C_inv[m, k])
                A = np.zeros((N, N * K), dtype=complex)
                A[:, k * N:(k + 1) * N] = U * H_g[:, m][None, :]
                rows.extend(A)
                rhs.extend(np.zeros(N))
    x = linalg.lstsq(np.array(rows), np.array(rhs))[0]
    return x.reshape(K, N).T


def dense_common_link(H_u, p):
    N, K = H_u.shape
    M = p.Rtilde.shape[1]
    u = H_u @ p.xbar
    out = np.empty((N, M), dtype=complex)
    for m in range(M):
        rows, rhs = [], []
        for i, th in enumerate(p.theta1):
            for k in range(K):
                rows.append(np.sqrt(p.w1[i]) * th * H_u[:, k])
                rhs.append(np.sqrt(p.w1[i]) * p.Rtilde[i, m, k])
        for i, th in enumerate(p.theta2):
            rows.append(np.sqrt(p.w2[i]) * th * u)
            rhs.append(np.sqrt(p.w2[i]) * p.rbar2[i, m])
        if p.prior_scale:
            for k in range(K):
                rows.extend(_prior_rows(p.C_inv[m, k]) * H_u[:, k][None, :])
                rhs.extend(np.zeros(N))
        out[:, m] = linalg.lstsq(np.array(rows), np.array(rhs))[0]
    return out


@pytest.mark.parametrize("MNK", [(1, 3, 1), (2, 4, 2), (2, 5, 3), (3, 7, 2)])
@pytest.mark.parametrize("use_prior", [True, False])
def test_updates_match_dense_oracles(MNK, use_prior):
    inst = random_instance(*MNK, seed=sum(MNK), noise_var=0.1)
    p = problem_of(inst, use_prior)
    H_g = _start(inst, p)
    H_u = update_user_specific(H_g, p)
    ref = dense_user_specific(H_g, p)
    assert np.linalg.norm(H_u - ref) <= 1e-8 * np.linalg.norm(ref)
    H_g2 = update_common_link(H_u, p)
    ref = dense_common_link(H_u, p)
    assert np.linalg.norm(H_g2 - ref) <= 1e-8 * np.linalg.norm(ref)


def test_common_link_hand_sized_instance():
    inst = random_instance(1, 2, 1, seed=8, noise_var=0.2)
    p = problem_of(inst)
    H_u = np.array([[0.7 - 0.2j], [1.3 + 0.4j]])
    ref = dense_common_link(H_u, p)
    assert np.allclose(update_common_link(H_u, p), ref, rtol=1e-10, atol=0)


def test_user_specific_recovers_canonical_factor():
    inst = random_instance(2, 4, 2, seed=6, noise_var=1e-12)
    p = problem_of(inst)
    H_g, H_u = canonical_factors(inst.channels, inst.pilots.xbar)
    got = update_user_specific(H_g, p)
    assert np.linalg.norm(got - H_u) <= 1e-6 * np.linalg.norm(H_u)


@pytest.mark.parametrize("seed", range(20))
def test_exact_recovery_noiseless(seed):
    inst = random_instance(2, 4, 2, seed=seed, noise_var=0.0)
    cascaded, state = estimate(inst.record, inst.plan, inst.pilots, inst.covariances)
    assert nmse(cascaded, inst.channels.cascaded) < 1e-10


def test_exact_recovery_without_prior():
    inst = random_instance(2, 6, 3, seed=3, noise_var=0.0)
    cfg = EstimatorConfig(use_prior=False)
    cascaded, _ = estimate(inst.record, inst.plan, inst.pilots, None, cfg)
    assert nmse(cascaded, inst.channels.cascaded) < 1e-10


def test_prior_requires_covariances():
    inst = random_instance(2, 4, 2, seed=3)
    with pytest.raises(ValueError):
        estimate(inst.record, inst.plan, inst.pilots, None)


@pytest.mark.parametrize("seed", range(5))
def test_trajectory_monotone(seed):
    inst = random_instance(4, 16, 4, seed=seed, noise_var=0.05)
    _, state = estimate(inst.record, inst.plan, inst.pilots, inst.covariances,
                        EstimatorConfig(max_iters=30))
    traj = np.array(state.update_trajectory)
    assert np.all(np.diff(traj) >= -1e-9)
    assert state.objective_trajectory == state.update_trajectory[1::2]


def test_ambiguity_invariance():
    inst = random_instance(2, 6, 3, seed=11, noise_var=0.05)
    p = problem_of(inst)
    _, state = estimate(inst.record, inst.plan, inst.pilots, inst.covariances)
    base = state.cascaded
    f0 = objective_fA(state.H_g, state.H_u, p)
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = (0.2 + rng.uniform(size=6)) * np.exp(2j * np.pi * rng.uniform(size=6))
        H_g, H_u = a[:, None] * state.H_g, state.H_u / a[:, None]
        casc = assemble_cascaded(H_g, H_u)
        assert np.max(np.abs(casc - base)) <= 1e-12 * np.max(np.abs(base))
        assert abs(objective_fA(H_g, H_u, p) - f0) <= 1e-10 * abs(f0)


def test_init_examples():
    c, th = 2.0 - 1.0j, np.exp(0.3j)
    assert np.allclose(init_common_link(np.array([[c]]), np.array([[th]])), [[c / th]])
    inst = random_instance(2, 5, 3, seed=1, noise_var=0.0)
    H_g, _ = canonical_factors(inst.channels, inst.pilots.xbar)
    assert np.allclose(init_common_link(inst.record.rbar, inst.plan.Phi), H_g, atol=1e-12)
    with pytest.raises(ValueError):
        init_common_link(np.ones((2, 1)), np.ones((2, 2)))


def test_init_unbiased():
    from irsce.protocol import preprocess, simulate_training

    inst = random_instance(2, 4, 2, seed=9, noise_var=0.0)
    H_g, _ = canonical_factors(inst.channels, inst.pilots.xbar)
    seeds = np.random.SeedSequence(4).spawn(10_000)
    draws = np.array([
        init_common_link(preprocess(simulate_training(inst.channels, inst.plan, inst.pilots,
                                                      0.5, s), inst.pilots).rbar, inst.plan.Phi)
        for s in seeds])
    mean = draws.mean(axis=0)
    se_re = draws.real.std(axis=0, ddof=1) / np.sqrt(len(draws))
    se_im = draws.imag.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(mean.real - H_g.real) < 3 * se_re)
    assert np.all(np.abs(mean.imag - H_g.imag) < 3 * se_im)


def test_estimate_direct_examples():
    rng = np.random.default_rng(2)
    R0 = crandn(rng, 3, 2)
    C_d = np.stack([np.eye(3) * 2.0, np.eye(3) * 0.5])
    assert np.allclose(estimate_direct(R0, C_d, 0.0, 2), R0)
    s0 = 0.4
    out = estimate_direct(R0, C_d, s0, 2)
    for k, c in enumerate((2.0, 0.5)):
        assert np.allclose(out[:, k], c / (c + s0 / 4) * R0[:, k])
    with pytest.raises(ValueError):
        estimate_direct(R0, C_d[:1], s0, 2)


def test_nmse_examples():
    rng = np.random.default_rng(0)
    h = crandn(rng, 2, 3, 4)
    assert nmse(h, h) == 0
    assert nmse(np.zeros_like(h), h) == 1
    assert nmse(2 * h, h) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        nmse(h, np.zeros_like(h))
    with pytest.raises(ValueError):
        nmse(h[0], h)


def test_singular_system_falls_back_with_warning():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        x = est._solve_psd(A, np.array([2.0, 2.0]))
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    assert np.allclose(A @ x, [2.0, 2.0])


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(max_iters=0)
    with pytest.raises(ValueError):
        EstimatorConfig(tol=0)


def test_restarts_never_worse():
    inst = random_instance(2, 6, 3, seed=12, noise_var=0.05)
    _, one = estimate(inst.record, inst.plan, inst.pilots, inst.covariances)
    _, many = estimate(inst.record, inst.plan, inst.pilots, inst.covariances,
                       EstimatorConfig(restarts=3, seed=0))
    assert many.objective_trajectory[-1] >= one.objective_trajectory[-1]
