"""Monte Carlo engine, verification suites, export and command line."""

from .config import ConfigError, SimConfig, load_config, resolve_threads
from .engine import RunRecord, run_ber, run_outage
from .export import export, load_record
from .verify import SUITES, VerifyReport, run_verify

__all__ = [
    "ConfigError",
    "SimConfig",
    "load_config",
    "resolve_threads",
    "RunRecord",
    "run_ber",
    "run_outage",
    "export",
    "load_record",
    "SUITES",
    "VerifyReport",
    "run_verify",
]
