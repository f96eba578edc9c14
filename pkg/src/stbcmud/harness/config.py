"""Simulation configuration: a flat JSON object with the field names below."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

DETECTORS = ("ml", "ap", "ap_whitened_ml")
METRICS = ("ser", "ber")
THREADS_ENV = "STBC_MUD_THREADS"

__all__ = ["ConfigError", "SimConfig", "load_config", "resolve_threads", "DETECTORS", "THREADS_ENV"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SimConfig:
    """Monte Carlo run description.

    ``min_errors``/``max_trials`` form the stop rule per SNR point: a point
    stops at the first chunk boundary where the error count reaches
    ``min_errors`` or the trial count reaches ``max_trials``. Trials are
    counted in decided symbols (``ser``) or bits (``ber``) of the target
    user. ``noiseless`` switches noise off for structural checks.
    """

    users: int = 2
    tx_antennas: int = 2
    rx_antennas: int = 2
    detector: str = "ap"
    constellation: str = "qpsk"
    rotation: float | None = None
    snr_grid_db: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    min_errors: int = 100
    max_trials: int = 10_000_000
    seed: int = 0
    threads: int | None = None
    target_user: int = 0
    chunk_size: int = 4096
    error_metric: str = "ser"
    noiseless: bool = False
    eps_grid: list = field(default_factory=lambda: [5e-3, 1e-2, 2e-2, 5e-2, 1e-1])
    outage_samples: int = 1_000_000
    label: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> "SimConfig":
        def nat(name, lo=1):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise ConfigError(name, f"must be an integer >= {lo}, got {v!r}")

        for name in ("users", "rx_antennas", "min_errors", "max_trials", "chunk_size", "outage_samples"):
            nat(name)
        nat("seed", 0)
        nat("target_user", 0)
        if self.tx_antennas not in (2, 4):
            raise ConfigError("tx_antennas", f"must be 2 or 4, got {self.tx_antennas!r}")
        if self.detector not in DETECTORS:
            raise ConfigError("detector", f"must be one of {DETECTORS}, got {self.detector!r}")
        if self.detector != "ml" and self.rx_antennas < self.users:
            raise ConfigError("rx_antennas", f"array processing needs rx_antennas >= users ({self.users})")
        if self.target_user >= self.users:
            raise ConfigError("target_user", f"must be < users ({self.users})")
        if self.error_metric not in METRICS:
            raise ConfigError("error_metric", f"must be one of {METRICS}")
        if self.threads is not None:
            nat("threads")
        try:
            from ..stcodes import get_constellation

            get_constellation(self.constellation, self.rotation)
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError("constellation", str(exc)) from None
        for name in ("snr_grid_db", "eps_grid"):
            grid = getattr(self, name)
            if not isinstance(grid, (list, tuple)) or len(grid) == 0:
                raise ConfigError(name, "must be a nonempty list")
            try:
                vals = [float(v) for v in grid]
            except (TypeError, ValueError):
                raise ConfigError(name, "must contain numbers") from None
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(name, "must be strictly ascending")
            setattr(self, name, vals)
        if any(e <= 0 for e in self.eps_grid):
            raise ConfigError("eps_grid", "thresholds must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        return cls(**d)


def load_config(path) -> SimConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return SimConfig.from_dict(data)


def resolve_threads(explicit: int | None = None) -> int:
    """Thread count: explicit value, else ``$STBC_MUD_THREADS``, else 1."""
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(THREADS_ENV, f"not an integer: {env!r}") from None
    return 1
