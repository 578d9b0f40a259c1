"""Selected on-off training baseline with a fixed reference user.

Timeline (all 0-based):

* stage I, ``K`` samples: IRS off, users send the pilot matrix ``X``;
* stage II, ``N`` samples: only user 0 transmits ``1``, IRS fully on with
  phases ``Phi[:, t]``;
* stage III, ``ceil(N/M)`` samples per user ``k = 1..K-1``: only user ``k``
  transmits ``1`` while a block of at most ``M`` elements is switched on.

Relative channels ``h_u,k = h_r,k / h_r,0`` are recovered block by block
from the reference cascaded channel estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ChannelRealization, SystemDims, dft_matrix
from .protocol import build_pilots, received_samples


@dataclass(frozen=True)
class OnOffPlan:
    dims: SystemDims
    Phi: np.ndarray  # (N, N) stage-II phases
    masks: np.ndarray  # (I, N) 0/1 stage-III activation masks
    reference_user: int = 0

    @property
    def slots_per_user(self) -> int:
        return self.masks.shape[0]

    @property
    def total_samples(self) -> int:
        d = self.dims
        return d.K + d.N + self.slots_per_user * (d.K - 1)

    def blocks(self) -> list[np.ndarray]:
        return [np.flatnonzero(mask) for mask in self.masks]


@dataclass(frozen=True)
class OnOffRecord:
    plan: OnOffPlan
    samples: np.ndarray  # (T, M)
    noise_var: float

    @property
    def stage1(self) -> np.ndarray:
        """(M, K) block received with the IRS off."""
        K = self.plan.dims.K
        return self.samples[:K].T

    @property
    def stage2(self) -> np.ndarray:
        """(M, N) reference-user observations."""
        d = self.plan.dims
        return self.samples[d.K:d.K + d.N].T

    @property
    def stage3(self) -> np.ndarray:
        """(K-1, I, M) observations of the non-reference users."""
        d = self.plan.dims
        rest = self.samples[d.K + d.N:]
        return rest.reshape(d.K - 1, self.plan.slots_per_user, d.M)


def build_onoff_plan(dims: SystemDims, Phi: np.ndarray | None = None) -> OnOffPlan:
    N, M = dims.N, dims.M
    if Phi is None:
        Phi = dft_matrix(N, normalized=False)
    I = math.ceil(N / M)
    masks = np.zeros((I, N))
    for i in range(I):
        masks[i, i * M:min((i + 1) * M, N)] = 1.0
    return OnOffPlan(dims=dims, Phi=np.asarray(Phi), masks=masks)


def reflection_power_fraction(plan: OnOffPlan) -> np.ndarray:
    """Fraction of IRS elements reflecting in each stage-III slot."""
    return plan.masks.sum(axis=1) / plan.dims.N


def onoff_schedule(plan: OnOffPlan):
    d = plan.dims
    T = plan.total_samples
    thetas = np.zeros((T, d.N), dtype=complex)
    symbols = np.zeros((T, d.K), dtype=complex)
    symbols[:d.K] = build_pilots(d.K).X.T
    thetas[d.K:d.K + d.N] = plan.Phi.T
    symbols[d.K:d.K + d.N, plan.reference_user] = 1.0
    t = d.K + d.N
    for k in range(d.K):
        if k == plan.reference_user:
            continue
        for mask in plan.masks:
            thetas[t] = mask
            symbols[t, k] = 1.0
            t += 1
    return thetas, symbols


def simulate_onoff(channels: ChannelRealization, plan: OnOffPlan, noise_var: float,
                   rng_seed=None) -> OnOffRecord:
    if plan.reference_user != 0:
        raise ValueError("only user 0 is supported as the reference user")
    thetas, symbols = onoff_schedule(plan)
    y = received_samples(channels, thetas, symbols, noise_var, rng_seed)
    return OnOffRecord(plan=plan, samples=y, noise_var=float(noise_var))


def estimate_direct_off(record: OnOffRecord, C_d: np.ndarray | None = None) -> np.ndarray:
    """Direct channels from the IRS-off block; LMMSE when ``C_d`` is given."""
    K = record.plan.dims.K
    X = build_pilots(K).X
    R = record.stage1 @ X.conj().T / K
    if C_d is None:
        return R
    M = R.shape[0]
    s2 = record.noise_var / K
    return np.stack([C_d[k] @ np.linalg.solve(C_d[k] + s2 * np.eye(M), R[:, k])
                     for k in range(K)], axis=1)


def estimate_reference(observations: np.ndarray, Phi: np.ndarray,
                       h_d_ref: np.ndarray | None = None) -> np.ndarray:
    """LS reconstruction ``(Y - h_d 1^T) Phi^{-1}`` of the reference cascaded channel."""
    Y = np.asarray(observations)
    if h_d_ref is not None:
        Y = Y - np.asarray(h_d_ref)[:, None]
    try:
        return np.linalg.solve(Phi.T, Y.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("stage-II phase matrix is singular") from exc


def _block_solve(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    if A.shape[0] == A.shape[1]:
        if np.linalg.cond(A) < 1 / np.finfo(float).eps:
            return np.linalg.solve(A, y)
        warnings.warn("singular reference block; using least squares", RuntimeWarning,
                      stacklevel=3)
    return np.linalg.lstsq(A, y, rcond=None)[0]


def estimate_relative(observations: np.ndarray, H_ref: np.ndarray, masks: np.ndarray,
                      h_d: np.ndarray | None = None, relative_cov: np.ndarray | None = None,
                      noise_var: float = 0.0) -> np.ndarray:
    """Relative channels of the non-reference users, returned as (N, K) with column 0 = 1.

    ``observations`` is (K-1, I, M) and ``h_d`` the (M, K) direct channels
    to subtract.  With ``relative_cov`` (K, N, N) the blockwise inverse is
    replaced by an LMMSE shrinkage over the stacked stage-III system.
    """
    obs = np.asarray(observations)
    Km1, I, M = obs.shape
    N = H_ref.shape[1]
    H_u = np.ones((N, Km1 + 1), dtype=complex)
    blocks = [np.flatnonzero(mask) for mask in masks]
    for j in range(Km1):
        k = j + 1
        y = obs[j] - (h_d[:, k][None, :] if h_d is not None else 0.0)
        if relative_cov is None:
            for i, idx in enumerate(blocks):
                H_u[idx, k] = _block_solve(H_ref[:, idx], y[i])
        else:
            A = np.concatenate([H_ref * mask[None, :] for mask in masks], axis=0)
            C = relative_cov[k]
            S = A @ C @ A.conj().T + noise_var * np.eye(A.shape[0])
            H_u[:, k] = C @ A.conj().T @ np.linalg.solve(S, y.reshape(-1))
    return H_u


def estimate_onoff(record: OnOffRecord, h_d: np.ndarray | None = None,
                   relative_cov: np.ndarray | None = None) -> np.ndarray:
    """Full baseline estimate of all cascaded channels, shape (K, M, N).

    ``h_d`` defaults to the LS estimate from the IRS-off block.
    """
    plan = record.plan
    if h_d is None:
        h_d = estimate_direct_off(record)
    H_ref = estimate_reference(record.stage2, plan.Phi, h_d[:, plan.reference_user])
    H_u = estimate_relative(record.stage3, H_ref, plan.masks, h_d, relative_cov, record.noise_var)
    return H_u.T[:, None, :] * H_ref[None, :, :]
