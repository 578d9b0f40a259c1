"""Pilots, phase plans, two-stage always-ON training and its preprocessing.

Slot layout (0-based sample indices ``t``):

* stage I, slots ``l = 0..L1``: ``K`` samples each, ``t = K*l + j`` carrying
  pilot column ``j`` of ``X``;
* stage II, slots ``l = L1+1..N``: one sample each carrying ``xbar``, at
  ``t = l + (K-1)*L1 + K - 1``.

``ybar_l`` reuses the first sample of every stage-I slot, see
:func:`sample_index_map`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ChannelRealization, SystemDims, dft_matrix

log = logging.getLogger(__name__)

UNIT_TOL = 1e-12


@dataclass(frozen=True)
class PilotMatrix:
    X: np.ndarray  # (K, K)

    @property
    def xbar(self) -> np.ndarray:
        return self.X[:, 0]

    @property
    def K(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class PhasePlan:
    theta: np.ndarray  # (N+1, N), row l is theta_l
    vartheta: np.ndarray  # (N,)
    amplitude_mask: np.ndarray  # (N+1, N)

    @property
    def Phi(self) -> np.ndarray:
        """``[theta_1, ..., theta_N]`` as an N x N matrix."""
        return self.theta[1:].T


@dataclass(frozen=True)
class TrainingRecord:
    """Raw training samples and, once preprocessed, the derived observations.

    ``Rtilde[l-1]`` holds slot ``l = 1..L1``, ``rbar[l-1]`` slot ``l = 1..N``.
    ``sigma2_tilde`` and ``sigma2_bar`` are the per-entry noise variances of
    those observations.
    """

    dims: SystemDims
    samples: np.ndarray  # (T, M)
    noise_var: float
    R0: np.ndarray | None = None
    Rtilde: np.ndarray | None = None  # (L1, M, K)
    rbar: np.ndarray | None = None  # (N, M)
    sigma2_tilde: np.ndarray | None = None  # (L1,)
    sigma2_bar: np.ndarray | None = None  # (N,)

    @property
    def Y_stage1(self) -> np.ndarray:
        """Stage-I blocks ``Y_l`` as an (L1+1, M, K) array."""
        idx = sample_index_map(self.dims)["stage1"]
        return np.transpose(self.samples[idx], (0, 2, 1))

    @property
    def ybar(self) -> np.ndarray:
        """``ybar_l`` for ``l = 0..N`` as an (N+1, M) array."""
        return self.samples[sample_index_map(self.dims)["bar"]]

    @property
    def preprocessed(self) -> bool:
        return self.Rtilde is not None


def build_pilots(K: int) -> PilotMatrix:
    """Unnormalised K-point DFT pilots: unit-modulus, ``X^H X = K I``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return PilotMatrix(X=dft_matrix(K, normalized=False))


def build_phase_plan(vartheta, dims: SystemDims) -> PhasePlan:
    """Phase vectors ``theta_l = diag(vartheta) f_l`` and ``theta_0 = -theta_1``."""
    v = np.asarray(vartheta, dtype=complex).reshape(-1)
    if v.shape != (dims.N,):
        raise ValueError(f"vartheta must have length {dims.N}")
    if np.any(np.abs(np.abs(v) - 1.0) > 1e-9):
        raise ValueError("vartheta entries must have unit modulus")
    F = dft_matrix(dims.N, normalized=False)
    theta = np.empty((dims.N + 1, dims.N), dtype=complex)
    theta[1:] = (v[:, None] * F).T
    theta[0] = -theta[1]
    return PhasePlan(theta=theta, vartheta=v, amplitude_mask=np.ones((dims.N + 1, dims.N)))


def sample_index_map(dims: SystemDims) -> dict:
    """Explicit slot-to-sample table (0-based)."""
    M, N, K, L1 = dims.M, dims.N, dims.K, dims.L1
    stage1 = K * np.arange(L1 + 1)[:, None] + np.arange(K)[None, :]
    bar = np.empty(N + 1, dtype=int)
    bar[: L1 + 1] = K * np.arange(L1 + 1)
    ell = np.arange(L1 + 1, N + 1)
    bar[L1 + 1:] = ell + (K - 1) * L1 + K - 1
    return {"stage1": stage1, "bar": bar, "total": dims.total_samples}


def training_schedule(dims: SystemDims, plan: PhasePlan, pilots: PilotMatrix):
    """Per-sample IRS phase vectors (T, N) and user pilot symbols (T, K)."""
    K, L1 = dims.K, dims.L1
    T = dims.total_samples
    thetas = np.empty((T, dims.N), dtype=complex)
    symbols = np.empty((T, K), dtype=complex)
    eff_theta = plan.theta * plan.amplitude_mask
    for ell in range(L1 + 1):
        thetas[K * ell:K * (ell + 1)] = eff_theta[ell]
        symbols[K * ell:K * (ell + 1)] = pilots.X.T
    idx = sample_index_map(dims)["bar"]
    for ell in range(L1 + 1, dims.N + 1):
        thetas[idx[ell]] = eff_theta[ell]
        symbols[idx[ell]] = pilots.xbar
    return thetas, symbols


def received_samples(channels: ChannelRealization, thetas: np.ndarray, symbols: np.ndarray,
                     noise_var: float, rng=None) -> np.ndarray:
    """``y_t = sum_k (h_dk + G^T diag(theta_t) h_rk) x_kt + z_t`` for every row t."""
    H_d, G, H_r = channels.H_d, channels.G, channels.H_r
    if thetas.shape[1] != G.shape[0] or symbols.shape[1] != H_r.shape[1]:
        raise ValueError("schedule does not match channel dimensions")
    refl = thetas * (symbols @ H_r.T)  # (T, N)
    y = symbols @ H_d.T + refl @ G
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    if noise_var > 0:
        rng = np.random.default_rng(rng)
        z = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(noise_var / 2) * z
    return y


def simulate_training(channels: ChannelRealization, plan: PhasePlan, pilots: PilotMatrix,
                      noise_var: float, rng_seed=None, cond_tol: float = 1e-6) -> TrainingRecord:
    M, K = channels.H_d.shape
    N = channels.G.shape[0]
    if channels.G.shape != (N, M) or channels.H_r.shape != (N, K) or pilots.K != K:
        raise ValueError("dimension mismatch between channels and pilots")
    if plan.theta.shape != (N + 1, N):
        raise ValueError("phase plan does not match N")
    dims = SystemDims(M, N, K)
    virt = np.abs(channels.H_r @ pilots.xbar)
    if np.any(virt < cond_tol * virt.mean()):
        log.warning("virtual reference H_r @ xbar is nearly zero on some elements")
    thetas, symbols = training_schedule(dims, plan, pilots)
    y = received_samples(channels, thetas, symbols, noise_var, rng_seed)
    return TrainingRecord(dims=dims, samples=y, noise_var=float(noise_var))


def preprocess(record: TrainingRecord, pilots: PilotMatrix) -> TrainingRecord:
    """Remove the direct channel and de-spread the stage-I pilots."""
    dims = record.dims
    if record.samples.shape != (dims.total_samples, dims.M):
        raise ValueError("record is missing training slots")
    K, L1 = dims.K, dims.L1
    Xinv = pilots.X.conj().T / K
    Y = record.Y_stage1
    mean01 = 0.5 * (Y[0] + Y[1])
    R0 = mean01 @ Xinv
    Rtilde = np.empty((L1, dims.M, K), dtype=complex)
    Rtilde[0] = 0.5 * (Y[1] - Y[0]) @ Xinv
    Rtilde[1:] = (Y[2:] - mean01) @ Xinv
    yb = record.ybar
    rbar = yb[1:] - 0.5 * (yb[0] + yb[1])

    s0 = record.noise_var
    sigma2_tilde = np.full(L1, 1.5 * s0 / K)
    sigma2_tilde[0] = 0.5 * s0 / K
    sigma2_bar = np.full(dims.N, 1.5 * s0)
    sigma2_bar[0] = 0.5 * s0
    return TrainingRecord(dims=dims, samples=record.samples, noise_var=s0, R0=R0,
                          Rtilde=Rtilde, rbar=rbar, sigma2_tilde=sigma2_tilde,
                          sigma2_bar=sigma2_bar)


_RECORD_ARRAYS = ("samples", "R0", "Rtilde", "rbar")


def save_record(record: TrainingRecord, path) -> tuple[Path, Path]:
    """Write complex arrays as little-endian interleaved re/im float64 plus a JSON sidecar."""
    path = Path(path)
    bin_path, meta_path = path.with_suffix(".bin"), path.with_suffix(".json")
    meta = {"dims": [record.dims.M, record.dims.N, record.dims.K],
            "noise_var": record.noise_var, "arrays": []}
    offset = 0
    with open(bin_path, "wb") as fh:
        for name in _RECORD_ARRAYS:
            arr = getattr(record, name)
            if arr is None:
                continue
            flat = np.ascontiguousarray(arr, dtype=np.complex128).reshape(-1)
            inter = np.empty(2 * flat.size, dtype="<f8")
            inter[0::2], inter[1::2] = flat.real, flat.imag
            fh.write(inter.tobytes())
            meta["arrays"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += inter.nbytes
    meta_path.write_text(json.dumps(meta, indent=2))
    return bin_path, meta_path


def load_record(path) -> TrainingRecord:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays = {}
    for entry in meta["arrays"]:
        n = int(np.prod(entry["shape"]))
        start = entry["offset"] // 8
        chunk = raw[start:start + 2 * n]
        arrays[entry["name"]] = (chunk[0::2] + 1j * chunk[1::2]).reshape(entry["shape"])
    dims = SystemDims(*meta["dims"])
    record = TrainingRecord(dims=dims, samples=arrays["samples"], noise_var=meta["noise_var"])
    if "Rtilde" in arrays:
        pre = preprocess(record, build_pilots(dims.K))
        return TrainingRecord(**{**pre.__dict__, **arrays})
    return record
