"""Seeded Monte-Carlo NMSE sweeps over training schemes and transmit powers.

A run first fixes a *scenario* from the base seed: user drop, angular power
profiles, large-scale gains, covariances and the optimised steering vector.
Every (scheme, power, trial) cell then draws small-scale fading and noise
from its own ``SeedSequence`` keyed by those indices, so results do not
depend on the number of worker threads.
"""

from __future__ import annotations

import io
import logging
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import estimator as est
from .config import ExperimentConfig
from .model import (AngularBases, AngularPower, CovarianceSet, PathGains, SystemDims,
                    angular_profile, channel_covariances, make_angular_bases, sample_channels)
from .onoff import build_onoff_plan, estimate_direct_off, estimate_onoff, simulate_onoff
from .phase_opt import SteeringResult, best_steering, build_gain_matrix
from .protocol import PilotMatrix, build_phase_plan, build_pilots, preprocess, simulate_training

log = logging.getLogger(__name__)

CSV_SCHEMA = 1
CSV_COLUMNS = ("scheme", "power_dbm", "M", "N", "K", "trials", "failed", "nmse", "nmse_db",
               "stderr", "mean_iters")
_SCENARIO_KEY = 0x5CE7A


@dataclass(frozen=True)
class Scenario:
    dims: SystemDims
    bases: AngularBases
    power: AngularPower
    gains: PathGains  # normalised so the mean cascaded entry power is 1
    covariances: CovarianceSet
    noise_scale: float  # physical noise (mW) maps to noise_mw * noise_scale
    user_positions: np.ndarray
    steering: SteeringResult


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    power_dbm: float
    M: int
    N: int
    K: int
    trials: int
    failed: int
    nmse: float
    nmse_db: float
    stderr: float
    mean_iters: float
    wall_time: float = 0.0


@dataclass(frozen=True)
class TrialResult:
    nmse: float
    iterations: int
    ok: bool


def path_loss_db(d: float, a: float, b: float, extra: float = 0.0) -> float:
    return a + b * math.log10(d) + extra


def build_scenario(config: ExperimentConfig) -> Scenario:
    dims = SystemDims(config.M, config.N, config.K)
    bases = make_angular_bases(dims)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_SCENARIO_KEY,)))
    x0, x1, y0, y1 = config.user_area
    users = np.column_stack([rng.uniform(x0, x1, dims.K), rng.uniform(y0, y1, dims.K),
                             np.full(dims.K, config.user_height)])
    bs, irs = np.asarray(config.bs_position), np.asarray(config.irs_position)
    d_g = max(np.linalg.norm(irs - bs), 1.0)
    d_r = np.maximum(np.linalg.norm(users - irs, axis=1), 1.0)
    d_d = np.maximum(np.linalg.norm(users - bs, axis=1), 1.0)
    beta_g = config.reflection_efficiency * 10 ** (
        -path_loss_db(d_g, config.pl_irs_a, config.pl_irs_b) / 10)
    beta_r = 10 ** (-np.array([path_loss_db(d, config.pl_irs_a, config.pl_irs_b) for d in d_r]) / 10)
    beta_d = 10 ** (-np.array([path_loss_db(d, config.pl_direct_a, config.pl_direct_b,
                                            config.penetration_db) for d in d_d]) / 10)
    # rescale so the BS-IRS link and the mean IRS-user link have unit gain;
    # the direct link and noise scale alike so all SNRs are unchanged
    a, b = beta_g, beta_r.mean()
    gains = PathGains(bs_irs=1.0, irs_user=beta_r / b, direct=beta_d / (a * b))

    def profile(size):
        return angular_profile(size, config.angular_profile, config.angular_spread,
                               center=rng.uniform(0, size), floor=config.angular_floor)

    power = AngularPower(bs_irs_irs=profile(dims.N), bs_irs_bs=profile(dims.M),
                         irs_user=np.stack([profile(dims.N) for _ in range(dims.K)]),
                         direct=np.stack([profile(dims.M) for _ in range(dims.K)]))
    cov = channel_covariances(dims, bases, power, gains)
    E = build_gain_matrix(cov, None, dims.L1)
    steering = best_steering(E)
    return Scenario(dims=dims, bases=bases, power=power, gains=gains, covariances=cov,
                    noise_scale=1.0 / (a * b), user_positions=users, steering=steering)


def noise_variance(config: ExperimentConfig, scenario: Scenario, power_dbm: float) -> float:
    """Per-sample noise variance relative to unit-power pilots at ``power_dbm``."""
    return config.noise_mw * scenario.noise_scale / 10 ** (power_dbm / 10)


def trial_seed(base_seed: int, scheme: str, power_index: int, trial: int) -> np.random.SeedSequence:
    code = zlib.crc32(scheme.encode("utf-8"))
    return np.random.SeedSequence(base_seed, spawn_key=(code, power_index, trial))


def random_vartheta(N: int, rng) -> np.ndarray:
    return np.exp(2j * np.pi * rng.uniform(size=N))


def _scheme_vartheta(config, scenario: Scenario, scheme: str, seed) -> np.ndarray:
    if scheme == "proposed_random_vartheta":
        return random_vartheta(scenario.dims.N, np.random.default_rng(seed))
    if config.phase_opt:
        return scenario.steering.vartheta
    return np.ones(scenario.dims.N, dtype=complex)


def run_trial(config: ExperimentConfig, scenario: Scenario, scheme: str, power_index: int,
              trial: int, pilots: PilotMatrix | None = None, vartheta=None,
              stream: str | None = None) -> TrialResult:
    """One seeded trial.  ``vartheta`` pins the steering vector of the proposed
    scheme; ``stream`` replaces the scheme name in the seed key."""
    s_chan, s_noise, s_extra = trial_seed(config.seed, stream or scheme, power_index,
                                          trial).spawn(3)
    dims = scenario.dims
    sigma2 = noise_variance(config, scenario, config.power_dbm[power_index])
    channels = sample_channels(dims, scenario.bases, scenario.power, scenario.gains, s_chan)
    truth = channels.cascaded
    pilots = pilots or build_pilots(dims.K)
    try:
        if scheme == "onoff":
            plan = build_onoff_plan(dims)
            record = simulate_onoff(channels, plan, sigma2, s_noise)
            if config.onoff_direct == "genie":
                h_d = channels.H_d
            else:
                h_d = estimate_direct_off(record, scenario.covariances.C_d)
            estimate, iters = estimate_onoff(record, h_d=h_d), 0
        else:
            if vartheta is None:
                vartheta = _scheme_vartheta(config, scenario, scheme, s_extra)
            plan = build_phase_plan(vartheta, dims)
            record = preprocess(simulate_training(channels, plan, pilots, sigma2, s_noise), pilots)
            cfg = est.EstimatorConfig(max_iters=config.max_iters, tol=config.tol,
                                      use_prior=config.use_prior)
            estimate, state = est.estimate(record, plan, pilots, scenario.covariances, cfg)
            iters = state.iterations
        value = est.nmse(estimate, truth)
        if not np.isfinite(value):
            raise FloatingPointError("non-finite NMSE")
        return TrialResult(nmse=value, iterations=iters, ok=True)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        log.warning("trial %s/%s/%d failed: %s", scheme, power_index, trial, exc)
        return TrialResult(nmse=float("nan"), iterations=0, ok=False)


def aggregate(scheme: str, power_dbm: float, dims: SystemDims, results, wall_time=0.0) -> ResultRow:
    ok = [r for r in results if r.ok]
    values = np.array([r.nmse for r in ok])
    n = len(values)
    mean = float(values.mean()) if n else float("nan")
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    iters = float(np.mean([r.iterations for r in ok])) if n else float("nan")
    db = 10 * math.log10(mean) if n and mean > 0 else float("-inf") if n else float("nan")
    return ResultRow(scheme=scheme, power_dbm=float(power_dbm), M=dims.M, N=dims.N, K=dims.K,
                     trials=len(results), failed=len(results) - n, nmse=mean, nmse_db=db,
                     stderr=stderr, mean_iters=iters, wall_time=wall_time)


def run_experiment(config: ExperimentConfig, out_path=None, threads: int | None = None,
                   scenario: Scenario | None = None):
    """Run every (scheme, power) cell; returns the rows and writes the CSV if requested."""
    scenario = scenario or build_scenario(config)
    threads = threads or config.threads
    pilots = build_pilots(config.K)
    cells = [(s, p) for s in config.schemes for p in range(len(config.power_dbm))]
    rows = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for scheme, p in cells:
            t0 = time.perf_counter()
            results = list(pool.map(
                lambda i, s=scheme, p=p: run_trial(config, scenario, s, p, i, pilots),
                range(config.trials)))
            rows.append(aggregate(scheme, config.power_dbm[p], scenario.dims, results,
                                  time.perf_counter() - t0))
    if out_path is not None:
        write_csv(rows, out_path, include_timing=config.include_timing)
    return rows


def vartheta_bank(config: ExperimentConfig, count: int) -> list[np.ndarray]:
    """``count`` fixed random steering vectors derived from the base seed."""
    key = zlib.crc32(b"vartheta_bank")
    return [random_vartheta(config.N, np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(key, j)))) for j in range(count)]


def run_random_baselines(config: ExperimentConfig, count: int = 20, threads: int | None = None,
                         scenario: Scenario | None = None) -> list[list[ResultRow]]:
    """Proposed estimator under each of ``count`` fixed random steering vectors.

    Returns one list of rows (one per power) per steering vector; every
    vector uses its own trial streams.
    """
    scenario = scenario or build_scenario(config)
    pilots = build_pilots(config.K)
    out = []
    with ThreadPoolExecutor(max_workers=threads or config.threads) as pool:
        for j, v in enumerate(vartheta_bank(config, count)):
            stream = f"random_vartheta_{j}"
            rows = []
            for p in range(len(config.power_dbm)):
                results = list(pool.map(
                    lambda i, p=p: run_trial(config, scenario, "proposed", p, i, pilots,
                                             vartheta=v, stream=stream),
                    range(config.trials)))
                rows.append(aggregate(stream, config.power_dbm[p], scenario.dims, results))
            out.append(rows)
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def format_csv(rows, include_timing: bool = False) -> str:
    cols = CSV_COLUMNS + (("wall_time",) if include_timing else ())
    buf = io.StringIO()
    buf.write(f"# schema={CSV_SCHEMA}\n")
    buf.write(",".join(cols) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(getattr(row, c)) for c in cols) + "\n")
    return buf.getvalue()


def write_csv(rows, path, include_timing: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(rows, include_timing))
    return path


def read_csv(path) -> list[dict]:
    """Parse a results CSV written by :func:`write_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"# schema={CSV_SCHEMA}":
        raise ValueError("unsupported results schema")
    header = lines[1].split(",")
    out = []
    for line in lines[2:]:
        rec = dict(zip(header, line.split(",")))
        for key in header:
            if key != "scheme":
                rec[key] = float(rec[key])
        out.append(rec)
    return out
