"""Street-lamp state classification with federated training (C++ core)."""

import json

from . import _flsl
from ._flsl import (
    bilinear_resize,
    center_crop,
    cli,
    compute_metrics,
    config_keys,
    expected_state,
    fedavg,
    forward,
    load_checkpoint,
    load_ppm,
    make_fleet,
    preprocess,
    save_checkpoint,
    save_ppm,
)

__all__ = [
    "bilinear_resize",
    "center_crop",
    "cli",
    "compare",
    "compute_metrics",
    "config_keys",
    "expected_state",
    "fedavg",
    "forward",
    "load_checkpoint",
    "load_ppm",
    "make_fleet",
    "preprocess",
    "run",
    "save_checkpoint",
    "save_ppm",
]


def _entries(overrides):
    return [(str(k), str(v)) for k, v in (overrides or {}).items()]


def run(config=None, **overrides):
    """Train and evaluate one method; returns the report as a dict.

    Keyword arguments are config keys with dots replaced by double
    underscores, e.g. ``fl__rounds=5``.
    """
    keys = {k.replace("__", "."): v for k, v in overrides.items()}
    return json.loads(_flsl.run(config, _entries(keys)))


def compare(config=None, **overrides):
    """Personalised, centralised and FL on one fleet; returns three report dicts."""
    keys = {k.replace("__", "."): v for k, v in overrides.items()}
    return [json.loads(r) for r in _flsl.compare(config, _entries(keys))]
