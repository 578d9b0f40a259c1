"""System dimensions, angular-domain channel synthesis and covariance algebra.

Channels follow a separable angular Gaussian model: the BS-IRS matrix is
``G = F_R @ Gdd @ F_B.T`` and each IRS-user channel is ``h_r = F_R @ hdd``,
with independent zero-mean complex Gaussian angular coefficients whose
per-angle powers are diagonal.  Under this model the cascaded covariances
are available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PSD_TOL = 1e-10
RANK_TOL = 1e-9


@dataclass(frozen=True)
class SystemDims:
    """Array sizes and the derived training-stage lengths."""

    M: int
    N: int
    K: int

    def __post_init__(self):
        for name in ("M", "N", "K"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def L1(self) -> int:
        return math.ceil(self.N / self.M)

    @property
    def L2(self) -> int:
        return self.N - self.L1

    @property
    def total_samples(self) -> int:
        return self.K * (self.L1 + 1) + self.L2


@dataclass(frozen=True)
class AngularBases:
    F_B: np.ndarray
    F_R: np.ndarray


@dataclass(frozen=True)
class AngularPower:
    """Per-angle power profiles (all entries strictly positive).

    ``bs_irs_irs`` (N,) and ``bs_irs_bs`` (M,) shape the BS-IRS link,
    ``irs_user`` (K, N) the IRS-user links and ``direct`` (K, M) the
    BS-user links.
    """

    bs_irs_irs: np.ndarray
    bs_irs_bs: np.ndarray
    irs_user: np.ndarray
    direct: np.ndarray


@dataclass(frozen=True)
class PathGains:
    """Large-scale power gains (linear) of every link."""

    bs_irs: float
    irs_user: np.ndarray
    direct: np.ndarray


@dataclass(frozen=True)
class ChannelRealization:
    H_d: np.ndarray  # (M, K)
    G: np.ndarray  # (N, M)
    H_r: np.ndarray  # (N, K)
    gains: PathGains | None = None

    @property
    def cascaded(self) -> np.ndarray:
        """All cascaded channels stacked as a (K, M, N) array."""
        return cascaded_channels(self.G, self.H_r)


@dataclass(frozen=True)
class CovarianceSet:
    C_g: np.ndarray  # (M, N, N)
    C_r: np.ndarray  # (K, N, N)
    C_cascaded: np.ndarray  # (M, K, N, N)
    C_d: np.ndarray  # (K, M, M)
    _inverse: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def cascaded_inverse(self) -> np.ndarray:
        """Inverses of every cascaded covariance, (M, K, N, N), cached."""
        if "inv" not in self._inverse:
            inv = np.linalg.inv(self.C_cascaded)
            self._inverse["inv"] = 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))
        return self._inverse["inv"]


def dft_matrix(size: int, normalized: bool = True) -> np.ndarray:
    """DFT matrix with entries ``exp(-2j*pi*p*q/size)``, optionally / sqrt(size)."""
    idx = np.arange(size)
    F = np.exp(-2j * np.pi * np.outer(idx, idx) / size)
    if normalized:
        F = F / np.sqrt(size)
    return F


def make_angular_bases(dims: SystemDims) -> AngularBases:
    return AngularBases(F_B=dft_matrix(dims.M), F_R=dft_matrix(dims.N))


def angular_profile(size: int, kind: str = "exponential", spread: float = 2.0,
                    center: float = 0.0, floor: float = 0.05) -> np.ndarray:
    """Per-angle power profile normalised to unit mean.

    ``exponential`` decays with circular distance (in DFT bins) from
    ``center``; ``floor`` keeps every angle strictly positive.
    """
    if kind == "uniform":
        return np.ones(size)
    if kind != "exponential":
        raise ValueError(f"unknown angular profile {kind!r}")
    if spread <= 0 or floor <= 0:
        raise ValueError("spread and floor must be positive")
    n = np.arange(size)
    dist = np.abs(n - center)
    dist = np.minimum(dist, size - dist)
    p = floor + np.exp(-dist / spread)
    return p / p.mean()


def _check_positive(name: str, arr: np.ndarray):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def _validate_power(dims: SystemDims, power: AngularPower, gains: PathGains):
    M, N, K = dims.M, dims.N, dims.K
    shapes = {
        "bs_irs_irs": (N,), "bs_irs_bs": (M,), "irs_user": (K, N), "direct": (K, M),
    }
    out = {}
    for name, shape in shapes.items():
        arr = _check_positive(f"angular power {name}", getattr(power, name))
        if arr.shape != shape:
            raise ValueError(f"angular power {name} has shape {arr.shape}, expected {shape}")
        out[name] = arr
    g_bs = float(_check_positive("bs_irs gain", gains.bs_irs))
    g_ru = _check_positive("irs_user gains", np.broadcast_to(gains.irs_user, (K,)))
    g_d = _check_positive("direct gains", np.broadcast_to(gains.direct, (K,)))
    return out, g_bs, g_ru, g_d


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def sample_channels(dims: SystemDims, bases: AngularBases, power: AngularPower,
                    gains: PathGains, rng_seed=None) -> ChannelRealization:
    """Draw one channel realization; deterministic for a fixed seed.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    p, g_bs, g_ru, g_d = _validate_power(dims, power, gains)
    rng = np.random.default_rng(rng_seed)
    M, N, K = dims.M, dims.N, dims.K

    std_g = np.sqrt(g_bs * np.outer(p["bs_irs_irs"], p["bs_irs_bs"]))
    Gdd = std_g * _cn(rng, (N, M))
    G = bases.F_R @ Gdd @ bases.F_B.T

    std_r = np.sqrt(g_ru[:, None] * p["irs_user"])  # (K, N)
    H_r = bases.F_R @ (std_r * _cn(rng, (K, N))).T

    std_d = np.sqrt(g_d[:, None] * p["direct"])  # (K, M)
    H_d = bases.F_B @ (std_d * _cn(rng, (K, M))).T
    return ChannelRealization(H_d=H_d, G=G, H_r=H_r, gains=gains)


def channel_covariances(dims: SystemDims, bases: AngularBases, power: AngularPower,
                        gains: PathGains) -> CovarianceSet:
    """Closed-form covariances matching :func:`sample_channels`."""
    p, g_bs, g_ru, g_d = _validate_power(dims, power, gains)
    F_B, F_R = bases.F_B, bases.F_R

    # column m of G mixes the BS angles with weights |F_B[m, j]|^2
    bs_weight = (np.abs(F_B) ** 2) @ p["bs_irs_bs"]  # (M,)
    base_g = (F_R * p["bs_irs_irs"]) @ F_R.conj().T
    C_g = g_bs * bs_weight[:, None, None] * base_g[None]

    C_r = np.einsum("ij,kj,lj->kil", F_R, g_ru[:, None] * p["irs_user"], F_R.conj())
    C_d = np.einsum("ij,kj,lj->kil", F_B, g_d[:, None] * p["direct"], F_B.conj())

    C_casc = cascaded_covariance(C_g[:, None], C_r[None, :])
    return CovarianceSet(C_g=_hermitize(C_g), C_r=_hermitize(C_r),
                         C_cascaded=_hermitize(C_casc), C_d=_hermitize(C_d))


def _hermitize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def cascaded_channel(G: np.ndarray, h_r_k: np.ndarray) -> np.ndarray:
    """``G.T @ diag(h_r_k)``, the M x N cascaded channel of one user."""
    G = np.asarray(G)
    h = np.asarray(h_r_k).reshape(-1)
    if G.ndim != 2 or G.shape[0] != h.shape[0]:
        raise ValueError(f"shape mismatch: G {G.shape}, h_r {np.shape(h_r_k)}")
    return G.T * h[None, :]


def cascaded_channels(G: np.ndarray, H_r: np.ndarray) -> np.ndarray:
    """Cascaded channels of every user, shape (K, M, N)."""
    if G.shape[0] != H_r.shape[0]:
        raise ValueError(f"shape mismatch: G {G.shape}, H_r {H_r.shape}")
    return G.T[None, :, :] * H_r.T[:, None, :]


def cascaded_covariance(C_g_m: np.ndarray, C_r_k: np.ndarray) -> np.ndarray:
    """Covariance of ``diag(h_r) g`` for independent zero-mean ``h_r`` and ``g``.

    This is the Hadamard product ``C_r_k * C_g_m``; both arguments may carry
    leading batch axes that broadcast.
    """
    C_g_m = np.asarray(C_g_m)
    C_r_k = np.asarray(C_r_k)
    if C_g_m.shape[-2:] != C_r_k.shape[-2:] or C_g_m.shape[-1] != C_g_m.shape[-2]:
        raise ValueError(f"shape mismatch: {C_g_m.shape} vs {C_r_k.shape}")
    return C_r_k * C_g_m


def estimate_covariance_from_samples(samples) -> np.ndarray:
    """Sample covariance ``(1/J) sum_j h_j h_j^H`` of zero-mean vectors."""
    S = np.asarray(samples)
    if S.size == 0 or S.ndim != 2 or S.shape[0] == 0:
        raise ValueError("need a non-empty (J, N) collection of samples")
    return S.T @ S.conj() / S.shape[0]


def check_psd(C: np.ndarray, tol: float = PSD_TOL) -> bool:
    """Hermitian and no eigenvalue below ``-tol * trace/N``."""
    C = np.asarray(C)
    n = C.shape[-1]
    scale = np.maximum(np.abs(np.trace(C, axis1=-2, axis2=-1)) / n, np.finfo(float).tiny)
    herm = np.abs(C - np.conj(np.swapaxes(C, -1, -2))).max() <= 1e-12 * max(1.0, np.abs(C).max())
    eig = np.linalg.eigvalsh(_hermitize(C))
    return bool(herm and np.all(eig.min(axis=-1) >= -tol * scale))


def clip_psd(C: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Project tiny negative eigenvalues (within tolerance) to zero."""
    if not check_psd(C, tol):
        raise ValueError("matrix is not PSD within tolerance")
    w, V = np.linalg.eigh(_hermitize(C))
    w = np.clip(w, 0.0, None)
    return (V * w[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def is_full_rank(C: np.ndarray, rank_tol: float = RANK_TOL) -> bool:
    eig = np.linalg.eigvalsh(_hermitize(np.asarray(C)))
    return bool(np.all(eig[..., 0] > rank_tol * eig[..., -1]))
