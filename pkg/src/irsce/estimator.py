"""MAP estimation of cascaded channels by alternating convex updates.

The cascaded channel of user ``k`` at antenna ``m`` is parameterised as
``diag(h_u[:, k]) @ h_g[:, m]``.  For fixed ``H_g`` the negative objective
is a convex quadratic in ``vec(H_u)`` and vice versa, so each half-step is
a Hermitian positive definite linear solve.

Noise-free records (``noise_var == 0``) make the likelihood weights
infinite; the estimator then works with ``noise_var * f_A`` in the limit,
which keeps the relative stage weights and drops the prior.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .model import ChannelRealization, CovarianceSet
from .protocol import PhasePlan, PilotMatrix, TrainingRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    max_iters: int = 20
    tol: float = 1e-6
    epsilon: float = 0.0
    use_prior: bool = True
    restarts: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.epsilon < 0 or self.restarts < 0:
            raise ValueError("epsilon and restarts must be non-negative")


@dataclass
class EstimatorState:
    H_g: np.ndarray  # (N, M)
    H_u: np.ndarray  # (N, K)
    objective_trajectory: list = field(default_factory=list)
    update_trajectory: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def cascaded(self) -> np.ndarray:
        return assemble_cascaded(self.H_g, self.H_u)


@dataclass(frozen=True)
class MapProblem:
    """Preprocessed observations and weights entering the MAP objective."""

    Rtilde: np.ndarray  # (L1, M, K)
    rbar: np.ndarray  # (N, M), slots 1..N
    theta: np.ndarray  # (N+1, N)
    xbar: np.ndarray  # (K,)
    w1: np.ndarray  # (L1,) stage-I likelihood weights
    w2: np.ndarray  # (N-L1,) stage-II likelihood weights
    prior_scale: float
    C_inv: np.ndarray  # (M, K, N, N)
    epsilon: float = 0.0

    @property
    def L1(self) -> int:
        return self.Rtilde.shape[0]

    @property
    def theta1(self) -> np.ndarray:
        return self.theta[1:self.L1 + 1]

    @property
    def theta2(self) -> np.ndarray:
        return self.theta[self.L1 + 1:]

    @property
    def rbar2(self) -> np.ndarray:
        return self.rbar[self.L1:]

    @cached_property
    def gram1(self) -> np.ndarray:
        return _phase_gram(self.theta1, self.w1)

    @cached_property
    def gram2(self) -> np.ndarray:
        return _phase_gram(self.theta2, self.w2)

    @classmethod
    def from_record(cls, record: TrainingRecord, plan: PhasePlan, pilots: PilotMatrix,
                    covariances: CovarianceSet | None, use_prior: bool = True,
                    epsilon: float = 0.0) -> "MapProblem":
        if not record.preprocessed:
            raise ValueError("record must be preprocessed first")
        L1 = record.dims.L1
        s0 = record.noise_var
        if s0 > 0:
            w1 = 1.0 / record.sigma2_tilde
            w2 = 1.0 / record.sigma2_bar[L1:]
            prior_scale = 1.0 if use_prior else 0.0
        else:
            # noise-free limit of noise_var * f_A
            K = record.dims.K
            w1 = np.full(L1, 2.0 * K / 3.0)
            w1[0] = 2.0 * K
            w2 = np.full(record.dims.N - L1, 2.0 / 3.0)
            prior_scale = 0.0
        if prior_scale > 0 and covariances is None:
            raise ValueError("covariances are required when the prior is used")
        if covariances is not None:
            C_inv = covariances.cascaded_inverse
        else:
            d = record.dims
            C_inv = np.zeros((d.M, d.K, d.N, d.N), dtype=complex)
        return cls(Rtilde=record.Rtilde, rbar=record.rbar, theta=plan.theta, xbar=pilots.xbar,
                   w1=w1, w2=w2, prior_scale=prior_scale, C_inv=C_inv, epsilon=epsilon)


def assemble_cascaded(H_g: np.ndarray, H_u: np.ndarray) -> np.ndarray:
    """``diag(h_u,k) h_g,m`` for all users and antennas, shape (K, M, N)."""
    return H_u.T[:, None, :] * H_g.T[None, :, :]


def canonical_factors(channels: ChannelRealization, xbar: np.ndarray):
    """Factor pair built on the virtual reference ``H_r @ xbar``."""
    v = channels.H_r @ xbar
    return v[:, None] * channels.G, channels.H_r / v[:, None]


def _solve_psd(A: np.ndarray, b: np.ndarray, epsilon: float = 0.0) -> np.ndarray:
    A = 0.5 * (A + A.conj().T)
    if epsilon > 0:
        A = A + epsilon * np.eye(A.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), b,
                                check_finite=False)
    except linalg.LinAlgError:
        warnings.warn("normal matrix not positive definite; using least squares", RuntimeWarning,
                      stacklevel=3)
        return linalg.lstsq(A, b)[0]


def _phase_gram(thetas: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_l w_l conj(theta_l) theta_l^T``."""
    return np.einsum("l,li,lj->ij", weights, thetas.conj(), thetas)


def init_common_link(rbar: np.ndarray, Phi: np.ndarray) -> np.ndarray:
    """Least-squares ``([rbar_1..rbar_N] Phi^{-1})^T``; ``rbar`` is (N, M)."""
    rbar = np.asarray(rbar)
    Phi = np.asarray(Phi)
    if Phi.shape[0] != Phi.shape[1] or rbar.shape[0] != Phi.shape[1]:
        raise ValueError("rbar and Phi shapes are inconsistent")
    try:
        # [r_1..r_N] Phi^{-1} = (Phi^{-T} rbar)^T, so H_g = Phi^{-T} rbar
        return linalg.solve(Phi.T, rbar)
    except linalg.LinAlgError as exc:
        raise ValueError("phase configuration matrix is singular") from exc


def predicted_stage1(H_g, H_u, thetas):
    """``H_g^T diag(theta_l) H_u`` for each row of ``thetas``."""
    return np.einsum("nm,ln,nk->lmk", H_g, thetas, H_u)


def objective_terms(H_g: np.ndarray, H_u: np.ndarray, problem: MapProblem):
    """Return ``(likelihood, prior)`` parts; ``f_A = likelihood - prior``."""
    p = problem
    res1 = p.Rtilde - predicted_stage1(H_g, H_u, p.theta1)
    lik = -np.sum(p.w1 * np.sum(np.abs(res1) ** 2, axis=(1, 2)))
    if len(p.w2):
        u = H_u @ p.xbar
        res2 = p.rbar2 - (p.theta2 * u[None, :]) @ H_g
        lik -= np.sum(p.w2 * np.sum(np.abs(res2) ** 2, axis=1))
    prior = 0.0
    if p.prior_scale:
        hI = assemble_cascaded(H_g, H_u)  # (K, M, N)
        prior = p.prior_scale * np.einsum("kmi,mkij,kmj->", hI.conj(), p.C_inv, hI).real
    return float(lik), float(prior)


def objective_fA(H_g: np.ndarray, H_u: np.ndarray, problem: MapProblem) -> float:
    lik, prior = objective_terms(H_g, H_u, problem)
    return lik - prior


def user_specific_system(H_g: np.ndarray, problem: MapProblem):
    """Normal matrix and right-hand side of the ``vec(H_u)`` subproblem."""
    p = problem
    N, K = H_g.shape[0], p.xbar.shape[0]
    P = H_g.conj() @ H_g.T
    A1 = P * p.gram1
    A2 = P * p.gram2
    Lam = np.kron(np.eye(K), A1) + np.kron(np.outer(p.xbar.conj(), p.xbar), A2)
    if p.prior_scale:
        C_u = np.einsum("mi,mkij,mj->kij", H_g.T.conj(), p.C_inv, H_g.T)
        Lam += p.prior_scale * linalg.block_diag(*C_u)
    HgH_R = np.einsum("nm,lmk->lnk", H_g.conj(), p.Rtilde)
    nu = np.einsum("l,ln,lnk->nk", p.w1, p.theta1.conj(), HgH_R)
    if len(p.w2):
        s = np.einsum("l,ln,lm,nm->n", p.w2, p.theta2.conj(), p.rbar2, H_g.conj())
        nu = nu + np.outer(s, p.xbar.conj())
    return Lam, nu.T.reshape(-1)


def update_user_specific(H_g: np.ndarray, problem: MapProblem) -> np.ndarray:
    """Global minimiser of the ``H_u`` subproblem for fixed ``H_g``."""
    Lam, nu = user_specific_system(H_g, problem)
    K = problem.xbar.shape[0]
    return _solve_psd(Lam, nu, problem.epsilon).reshape(K, -1).T


def common_link_systems(H_u: np.ndarray, problem: MapProblem):
    """Per-antenna normal matrices (M, N, N) and right-hand sides (N, M)."""
    p = problem
    M = p.Rtilde.shape[1]
    Q = (H_u.conj() @ H_u.T) * p.gram1
    nu = np.einsum("l,ln,nk,lmk->nm", p.w1, p.theta1.conj(), H_u.conj(), p.Rtilde)
    if len(p.w2):
        u = H_u @ p.xbar
        Q = Q + np.outer(u.conj(), u) * p.gram2
        nu = nu + np.einsum("l,ln,lm->nm", p.w2, (p.theta2 * u[None, :]).conj(), p.rbar2)
    Lam = np.broadcast_to(Q, (M,) + Q.shape).copy()
    if p.prior_scale:
        C_g = np.einsum("ki,mkij,kj->mij", H_u.T.conj(), p.C_inv, H_u.T)
        Lam += p.prior_scale * C_g
    return Lam, nu


def update_common_link(H_u: np.ndarray, problem: MapProblem) -> np.ndarray:
    """Global minimiser of the ``H_g`` subproblem, solved antenna by antenna."""
    Lam, nu = common_link_systems(H_u, problem)
    return np.stack([_solve_psd(Lam[m], nu[:, m], problem.epsilon)
                     for m in range(Lam.shape[0])], axis=1)


def _data_energy(problem: MapProblem) -> float:
    p = problem
    e = np.sum(p.w1 * np.sum(np.abs(p.Rtilde) ** 2, axis=(1, 2)))
    return float(e + np.sum(p.w2 * np.sum(np.abs(p.rbar2) ** 2, axis=1)))


def _run_ao(H_g, problem: MapProblem, config: EstimatorConfig) -> EstimatorState:
    state = EstimatorState(H_g=H_g, H_u=None)
    # f_A is bounded by 0 once the prior is dropped; this floor stops
    # noise-free runs that sit at round-off level
    floor = 1e-12 * _data_energy(problem)
    f_old = None
    for it in range(1, config.max_iters + 1):
        state.H_u = update_user_specific(state.H_g, problem)
        f_half = objective_fA(state.H_g, state.H_u, problem)
        state.H_g = update_common_link(state.H_u, problem)
        f_new = objective_fA(state.H_g, state.H_u, problem)
        state.update_trajectory += [f_half, f_new]
        state.objective_trajectory.append(f_new)
        state.iterations = it
        ref = f_half if f_old is None else f_old
        if abs(f_new - ref) <= config.tol * max(abs(ref), floor):
            state.converged = True
            break
        f_old = f_new
    return state


def estimate(record: TrainingRecord, plan: PhasePlan, pilots: PilotMatrix,
             covariances: CovarianceSet | None, config: EstimatorConfig = EstimatorConfig()):
    """Run LS initialisation and alternating updates.

    Returns ``(cascaded, state)`` where ``cascaded`` is (K, M, N).
    """
    problem = MapProblem.from_record(record, plan, pilots, covariances,
                                     use_prior=config.use_prior, epsilon=config.epsilon)
    H_g0 = init_common_link(record.rbar, plan.Phi)
    best = _run_ao(H_g0, problem, config)
    if config.restarts:
        rng = np.random.default_rng(config.seed)
        scale = np.sqrt(np.mean(np.abs(H_g0) ** 2))
        for _ in range(config.restarts):
            start = scale * (rng.standard_normal(H_g0.shape)
                             + 1j * rng.standard_normal(H_g0.shape)) / np.sqrt(2)
            cand = _run_ao(start, problem, config)
            if cand.objective_trajectory[-1] > best.objective_trajectory[-1]:
                best = cand
    return best.cascaded, best


def estimate_direct(R0: np.ndarray, C_d: np.ndarray, noise_var: float, K: int) -> np.ndarray:
    """LMMSE of the direct channels from ``R0``; returns (M, K)."""
    R0 = np.asarray(R0)
    M = R0.shape[0]
    if C_d.shape != (R0.shape[1], M, M):
        raise ValueError("C_d must be (K, M, M) matching R0")
    out = np.empty_like(R0, dtype=complex)
    s2 = noise_var / (2 * K)
    for k in range(R0.shape[1]):
        A = C_d[k] + s2 * np.eye(M)
        out[:, k] = C_d[k] @ np.linalg.solve(A, R0[:, k])
    return out


def nmse(estimates, truth) -> float:
    """Total squared error over total truth energy."""
    est = np.asarray(estimates)
    tru = np.asarray(truth)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    den = np.sum(np.abs(tru) ** 2)
    if den == 0:
        raise ValueError("truth is identically zero")
    return float(np.sum(np.abs(est - tru) ** 2) / den)
