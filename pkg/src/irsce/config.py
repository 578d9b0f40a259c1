"""Line-oriented ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored.  Lists are comma separated,
booleans are ``true``/``false``.  Unset keys take the desk-scale defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

SCHEMES = ("proposed", "proposed_random_vartheta", "onoff")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ExperimentConfig:
    M: int = 4
    N: int = 16
    K: int = 4
    power_dbm: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    noise_psd_dbm_hz: float = -170.0
    bandwidth_hz: float = 200e3
    # overrides the PSD/bandwidth noise when set; 0 gives noise-free training
    noise_power_mw: float | None = None
    # path loss in dB: a + b*log10(d) (+ penetration for the direct link)
    pl_irs_a: float = 40.0
    pl_irs_b: float = 17.3
    pl_direct_a: float = 30.0
    pl_direct_b: float = 31.9
    penetration_db: float = 20.0
    reflection_efficiency: float = 0.8
    bs_position: tuple = (0.0, 0.0, 3.0)
    irs_position: tuple = (0.0, 10.0, 3.0)
    user_height: float = 1.5
    # x_min, x_max, y_min, y_max of the square the users are dropped in
    user_area: tuple = (0.0, 5.0, 5.0, 10.0)
    angular_profile: str = "exponential"
    angular_spread: float = 2.0
    angular_floor: float = 0.05
    trials: int = 200
    seed: int = 1
    schemes: tuple = ("proposed", "onoff")
    phase_opt: bool = True
    onoff_direct: str = "genie"
    max_iters: int = 20
    tol: float = 1e-6
    use_prior: bool = True
    threads: int = 1
    include_timing: bool = False
    output: str = "results.csv"

    def __post_init__(self):
        self.validate()

    @property
    def noise_mw(self) -> float:
        """Receiver noise power in mW."""
        if self.noise_power_mw is not None:
            return float(self.noise_power_mw)
        return 10 ** ((self.noise_psd_dbm_hz + 10 * math.log10(self.bandwidth_hz)) / 10)

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}", key=key)

        for key in ("M", "N", "K", "trials", "max_iters", "threads"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if not self.power_dbm:
            bad("power_dbm", "must be a non-empty list")
        if not self.schemes:
            bad("schemes", "must be a non-empty list")
        for s in self.schemes:
            if s not in SCHEMES:
                bad("schemes", f"unknown scheme {s!r} (choose from {', '.join(SCHEMES)})")
        if self.noise_power_mw is not None and self.noise_power_mw < 0:
            bad("noise_power_mw", "must be non-negative")
        if self.bandwidth_hz <= 0:
            bad("bandwidth_hz", "must be positive")
        if not 0 < self.reflection_efficiency <= 1:
            bad("reflection_efficiency", "must lie in (0, 1]")
        if self.angular_profile not in ("exponential", "uniform"):
            bad("angular_profile", "must be exponential or uniform")
        if self.angular_spread <= 0 or self.angular_floor <= 0:
            bad("angular_spread", "spread and floor must be positive")
        if self.onoff_direct not in ("genie", "estimated"):
            bad("onoff_direct", "must be genie or estimated")
        if not self.tol > 0:
            bad("tol", "must be positive")
        if self.seed < 0:
            bad("seed", "must be non-negative")
        if len(self.bs_position) != 3 or len(self.irs_position) != 3:
            bad("bs_position", "positions need three coordinates")
        if len(self.user_area) != 4:
            bad("user_area", "needs x_min, x_max, y_min, y_max")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_TUPLE_KIND = {"power_dbm": float, "schemes": str, "bs_position": float,
               "irs_position": float, "user_area": float}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, text: str):
    default = _FIELDS[key].default
    if key in _TUPLE_KIND:
        kind = _TUPLE_KIND[key]
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(kind(t) for t in items)
    if key == "noise_power_mw":
        return None if text.lower() in ("none", "") else float(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str, **overrides) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line=lineno, key=key) from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, **overrides)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


def format_config(config: ExperimentConfig) -> str:
    """Render a config back to the text format."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


__all__ = ["ConfigError", "ExperimentConfig", "SCHEMES", "format_config", "load_config",
           "parse_config", "with_overrides"]
