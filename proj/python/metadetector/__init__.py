"""Python access to the detector core and its command line."""

import json

from ._core import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    Error,
    ParseError,
    compute_weights,
    median_bandwidths,
    mmd_squared,
    run_cli,
)
from . import _core


def metrics(predictions, labels):
    """Accuracy plus per-class precision/recall/F1; 0 is fake, 1 is real."""
    return json.loads(_core.metrics_json(list(predictions), list(labels)))


def default_config():
    return json.loads(_core.default_config_json())


def cli(*args):
    """Run a subcommand and return its parsed JSON report; raises on failure."""
    code, out, err = run_cli([str(a) for a in args])
    if code != 0:
        raise RuntimeError(f"exit {code}: {err.strip()}")
    return json.loads(out)


__all__ = [
    "ConfigError", "ContractError", "DataError", "DimensionError", "Error",
    "ParseError", "cli", "compute_weights", "default_config", "median_bandwidths",
    "metrics", "mmd_squared", "run_cli",
]
