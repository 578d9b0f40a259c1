"""Steering-vector design for the stage-I training phases.

Maximises ``f_B(v) = v^H E v`` over unit-modulus ``v`` by successive
linearisation: each step maximises ``2 Re(vbar^H E v) - vbar^H E vbar``,
whose solution is the elementwise phase of ``E @ vbar``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CovarianceSet, dft_matrix


@dataclass(frozen=True)
class SteeringResult:
    vartheta: np.ndarray
    trajectory: np.ndarray
    iterations: int


def build_gain_matrix(covariances: CovarianceSet | np.ndarray, F: np.ndarray | None,
                      L1: int) -> np.ndarray:
    """``E = sum_{l<=L1} sum_k sum_m diag(f_l)^H conj(C_m^(k)) diag(f_l)``.

    ``covariances`` is a :class:`CovarianceSet` or an (M, K, N, N) array;
    ``F`` defaults to the unnormalised N-point DFT.
    """
    C = covariances.C_cascaded if isinstance(covariances, CovarianceSet) else np.asarray(covariances)
    if C.ndim != 4 or C.shape[-1] != C.shape[-2]:
        raise ValueError("expected an (M, K, N, N) array of cascaded covariances")
    N = C.shape[-1]
    if F is None:
        F = dft_matrix(N, normalized=False)
    if L1 < 1 or L1 > F.shape[1]:
        raise ValueError("L1 out of range")
    S = np.conj(C.sum(axis=(0, 1)))
    f = F[:, :L1]  # columns f_1..f_L1
    E = S * np.einsum("il,jl->ij", f.conj(), f)
    return 0.5 * (E + E.conj().T)


def eval_fB(vartheta: np.ndarray, E: np.ndarray) -> float:
    v = np.asarray(vartheta)
    return float(np.real(v.conj() @ E @ v))


def surrogate(vartheta, vartheta_bar, E) -> float:
    """First-order lower bound of ``f_B`` around ``vartheta_bar`` (E PSD)."""
    vb = np.asarray(vartheta_bar)
    return float(2 * np.real(vb.conj() @ E @ vartheta) - np.real(vb.conj() @ E @ vb))


def sca_step(vartheta_bar: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``exp(j * angle(E @ vartheta_bar))``; zero entries keep their old phase."""
    vb = np.asarray(vartheta_bar, dtype=complex)
    g = E @ vb
    mag = np.abs(g)
    out = vb / np.abs(vb)
    nz = mag > 0
    out[nz] = g[nz] / mag[nz]
    return out


def principal_phase(E: np.ndarray) -> np.ndarray:
    """Elementwise phase of the dominant eigenvector of ``E``."""
    _, V = np.linalg.eigh(0.5 * (E + E.conj().T))
    v = V[:, -1]
    mag = np.abs(v)
    out = np.ones_like(v)
    nz = mag > 0
    out[nz] = v[nz] / mag[nz]
    return out


def optimize_steering(E: np.ndarray, init: np.ndarray | None = None, tol: float = 1e-8,
                      max_iters: int = 200) -> SteeringResult:
    """Iterate :func:`sca_step` until the relative change of ``f_B`` drops below ``tol``."""
    N = E.shape[0]
    v = np.ones(N, dtype=complex) if init is None else np.asarray(init, dtype=complex).copy()
    if np.any(np.abs(np.abs(v) - 1) > 1e-9):
        raise ValueError("init must be unit-modulus")
    traj = [eval_fB(v, E)]
    it = 0
    for it in range(1, max_iters + 1):
        v = sca_step(v, E)
        traj.append(eval_fB(v, E))
        if abs(traj[-1] - traj[-2]) <= tol * max(abs(traj[-2]), np.finfo(float).tiny):
            break
    return SteeringResult(vartheta=v, trajectory=np.array(traj), iterations=it)


def best_steering(E: np.ndarray, tol: float = 1e-8, max_iters: int = 200) -> SteeringResult:
    """Run the SCA from the all-ones and the dominant-eigenvector phase starts, keep the best.

    The all-ones vector is a fixed point whenever ``E`` is circulant, so a
    single all-ones start can stall at a poor stationary point.
    """
    runs = [optimize_steering(E, None, tol, max_iters),
            optimize_steering(E, principal_phase(E), tol, max_iters)]
    return max(runs, key=lambda r: r.trajectory[-1])
