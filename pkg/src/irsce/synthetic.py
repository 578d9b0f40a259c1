"""Unit-gain synthetic instances for tests and the built-in self-test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (AngularPower, ChannelRealization, CovarianceSet, PathGains, SystemDims,
                    angular_profile, channel_covariances, make_angular_bases, sample_channels)
from .protocol import (PhasePlan, PilotMatrix, TrainingRecord, build_phase_plan, build_pilots,
                       preprocess, simulate_training)


@dataclass(frozen=True)
class Instance:
    dims: SystemDims
    channels: ChannelRealization
    covariances: CovarianceSet
    pilots: PilotMatrix
    plan: PhasePlan
    record: TrainingRecord


def random_power(dims: SystemDims, rng, spread: float = 2.0) -> AngularPower:
    def prof(size):
        return angular_profile(size, "exponential", spread, center=rng.uniform(0, size))

    return AngularPower(bs_irs_irs=prof(dims.N), bs_irs_bs=prof(dims.M),
                        irs_user=np.stack([prof(dims.N) for _ in range(dims.K)]),
                        direct=np.stack([prof(dims.M) for _ in range(dims.K)]))


def random_instance(M: int, N: int, K: int, seed: int = 0, noise_var: float = 0.01,
                    vartheta=None, spread: float = 2.0) -> Instance:
    """Unit path gains, random angular profiles, one preprocessed training record."""
    dims = SystemDims(M, N, K)
    ss = np.random.SeedSequence(seed)
    s_prof, s_chan, s_noise, s_phase = ss.spawn(4)
    rng = np.random.default_rng(s_prof)
    power = random_power(dims, rng, spread)
    gains = PathGains(bs_irs=1.0, irs_user=np.ones(K), direct=np.ones(K))
    bases = make_angular_bases(dims)
    cov = channel_covariances(dims, bases, power, gains)
    channels = sample_channels(dims, bases, power, gains, s_chan)
    pilots = build_pilots(K)
    if vartheta is None:
        vartheta = np.ones(N, dtype=complex)
    elif isinstance(vartheta, str) and vartheta == "random":
        vartheta = np.exp(2j * np.pi * np.random.default_rng(s_phase).uniform(size=N))
    plan = build_phase_plan(vartheta, dims)
    record = preprocess(simulate_training(channels, plan, pilots, noise_var, s_noise), pilots)
    return Instance(dims=dims, channels=channels, covariances=cov, pilots=pilots, plan=plan,
                    record=record)
