import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn, frob_rel, random_psd
from irsce.model import (AngularPower, PathGains, SystemDims, angular_profile,
                         cascaded_channel, cascaded_channels, cascaded_covariance,
                         channel_covariances, check_psd, clip_psd,
                         estimate_covariance_from_samples, is_full_rank, make_angular_bases,
                         sample_channels)
from irsce.synthetic import random_power


def test_dims_stage_lengths():
    d = SystemDims(8, 32, 8)
    assert (d.L1, d.L2) == (4, 28)
    assert d.total_samples == d.K + d.N + d.L1 * (d.K - 1) == 68


@pytest.mark.parametrize("M,N,K", [(1, 1, 1), (3, 10, 2), (16, 4, 5)])
def test_dims_overhead_identity(M, N, K):
    d = SystemDims(M, N, K)
    assert d.L2 >= 0
    assert d.total_samples == K + N + -(-N // M) * (K - 1)


def test_dims_reject_nonpositive():
    with pytest.raises(ValueError):
        SystemDims(0, 4, 2)


def test_angular_bases_small_sizes():
    b1 = make_angular_bases(SystemDims(1, 1, 1))
    assert np.allclose(b1.F_B, [[1]])
    b2 = make_angular_bases(SystemDims(2, 3, 1))
    assert np.allclose(b2.F_B, np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-15)


@pytest.mark.parametrize("size", [4, 7, 16])
def test_angular_bases_unitary(size):
    b = make_angular_bases(SystemDims(size, size, 1))
    assert np.abs(b.F_B.conj().T @ b.F_B - np.eye(size)).max() < 1e-14
    assert np.abs(b.F_R.conj().T @ b.F_R - np.eye(size)).max() < 1e-12


def _setup(M=2, N=4, K=2, seed=3):
    dims = SystemDims(M, N, K)
    power = random_power(dims, np.random.default_rng(seed))
    gains = PathGains(bs_irs=2.0, irs_user=np.array([1.0, 0.5]), direct=np.array([0.3, 0.7]))
    return dims, make_angular_bases(dims), power, gains


def test_sample_channels_rejects_zero_power():
    dims, bases, power, gains = _setup()
    bad = np.zeros(dims.N)
    bad[0] = 1.0  # a lone guard angle, the rest zero
    with pytest.raises(ValueError):
        sample_channels(dims, bases, AngularPower(bad, power.bs_irs_bs, power.irs_user,
                                                  power.direct), gains, 0)


def test_sample_channels_deterministic():
    dims, bases, power, gains = _setup()
    a = sample_channels(dims, bases, power, gains, 7)
    b = sample_channels(dims, bases, power, gains, 7)
    for name in ("H_d", "G", "H_r"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = sample_channels(dims, bases, power, gains, 8)
    assert not np.array_equal(a.G, c.G)


def test_sample_channels_shapes():
    dims, bases, power, gains = _setup()
    ch = sample_channels(dims, bases, power, gains, 1)
    assert ch.H_d.shape == (2, 2) and ch.G.shape == (4, 2) and ch.H_r.shape == (4, 2)
    assert ch.cascaded.shape == (2, 2, 4)


@pytest.fixture(scope="module")
def many_draws():
    dims, bases, power, gains = _setup()
    ss = np.random.SeedSequence(99).spawn(100_000)
    G, Hr, Hd = [], [], []
    for s in ss:
        ch = sample_channels(dims, bases, power, gains, s)
        G.append(ch.G)
        Hr.append(ch.H_r)
        Hd.append(ch.H_d)
    cov = channel_covariances(dims, bases, power, gains)
    return np.array(G), np.array(Hr), np.array(Hd), cov


def test_monte_carlo_bs_irs_covariance(many_draws):
    G, _, _, cov = many_draws
    for m in range(G.shape[2]):
        emp = estimate_covariance_from_samples(G[:, :, m])
        assert frob_rel(emp, cov.C_g[m]) < 0.02


def test_monte_carlo_direct_and_user_covariance(many_draws):
    _, Hr, Hd, cov = many_draws
    for k in range(Hr.shape[2]):
        assert frob_rel(estimate_covariance_from_samples(Hr[:, :, k]), cov.C_r[k]) < 0.02
        assert frob_rel(estimate_covariance_from_samples(Hd[:, :, k]), cov.C_d[k]) < 0.02


def test_generator_matches_cascaded_covariance(many_draws):
    G, Hr, _, cov = many_draws
    for m in range(G.shape[2]):
        for k in range(Hr.shape[2]):
            hI = Hr[:, :, k] * G[:, :, m]  # diag(h_r,k) g_m per draw
            emp = estimate_covariance_from_samples(hI)
            assert frob_rel(emp, cov.C_cascaded[m, k]) < 0.02


def test_covariance_set_invariants():
    dims, bases, power, gains = _setup(M=3, N=6, K=2)
    cov = channel_covariances(dims, bases, power, gains)
    for C in (cov.C_g, cov.C_r, cov.C_cascaded, cov.C_d):
        assert check_psd(C)
    assert is_full_rank(cov.C_cascaded)
    hadamard = cov.C_r[None, :] * cov.C_g[:, None]
    assert np.abs(hadamard - cov.C_cascaded).max() < 1e-14
    inv = cov.cascaded_inverse
    eye = np.einsum("mkij,mkjl->mkil", inv, cov.C_cascaded)
    assert np.abs(eye - np.eye(6)).max() < 1e-9


def test_cascaded_channel_examples(rng):
    G = crandn(rng, 3, 2)
    assert np.allclose(cascaded_channel(G, np.ones(3)), G.T)
    e1 = np.array([1.0, 0, 0])
    H = cascaded_channel(G, e1)
    assert np.allclose(H[:, 0], G[0, :]) and np.all(H[:, 1:] == 0)
    h = crandn(rng, 3)
    H = cascaded_channel(G, h)
    for m in range(2):
        for n in range(3):
            assert abs(H[m, n] - h[n] * G[n, m]) < 1e-15


def test_cascaded_channel_shape_mismatch(rng):
    with pytest.raises(ValueError):
        cascaded_channel(crandn(rng, 3, 2), crandn(rng, 4))


def test_cascaded_channels_stack(rng):
    G, Hr = crandn(rng, 5, 3), crandn(rng, 5, 2)
    stacked = cascaded_channels(G, Hr)
    for k in range(2):
        assert np.allclose(stacked[k], cascaded_channel(G, Hr[:, k]))


def test_cascaded_covariance_examples():
    assert np.array_equal(cascaded_covariance(np.eye(3), np.eye(3)), np.eye(3))
    assert np.allclose(cascaded_covariance(2.0 * np.eye(3), 0.5 * np.eye(3)), np.eye(3))
    with pytest.raises(ValueError):
        cascaded_covariance(np.eye(3), np.eye(4))


def test_cascaded_covariance_monte_carlo(rng):
    N, J = 4, 1_000_000
    Cg, Cr = random_psd(rng, N), random_psd(rng, N)
    g = crandn(rng, J, N) @ np.linalg.cholesky(Cg).T
    h = crandn(rng, J, N) @ np.linalg.cholesky(Cr).T
    emp = estimate_covariance_from_samples(h * g)
    assert frob_rel(emp, cascaded_covariance(Cg, Cr)) < 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_hadamard_of_psd_is_psd(n, seed):
    rng = np.random.default_rng(seed)
    A = crandn(rng, n, max(1, n // 2))
    B = crandn(rng, n, n)
    C = cascaded_covariance(A @ A.conj().T, B @ B.conj().T)
    assert check_psd(C)


def test_sample_covariance_examples(rng):
    h = crandn(rng, 3)
    assert np.allclose(estimate_covariance_from_samples([h]), np.outer(h, h.conj()))
    assert np.allclose(estimate_covariance_from_samples([[1, 0], [0, 1]]), 0.5 * np.eye(2))
    with pytest.raises(ValueError):
        estimate_covariance_from_samples([])


def test_sample_covariance_law_of_large_numbers(rng):
    C = random_psd(rng, 5)
    x = crandn(rng, 100_000, 5) @ np.linalg.cholesky(C).T
    assert frob_rel(estimate_covariance_from_samples(x), C) < 0.02


def test_psd_clip_and_check():
    C = np.diag([1.0, 0.5, -1e-12])
    assert check_psd(C)
    assert np.linalg.eigvalsh(clip_psd(C)).min() >= 0
    with pytest.raises(ValueError):
        clip_psd(np.diag([1.0, -0.1]))


def test_angular_profile_positive_and_normalised():
    p = angular_profile(16, "exponential", 2.0, center=3.3)
    assert np.all(p > 0) and np.isclose(p.mean(), 1.0)
    assert np.argmax(p) == 3
    assert np.array_equal(angular_profile(5, "uniform"), np.ones(5))
