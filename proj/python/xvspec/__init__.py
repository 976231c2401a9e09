"""Cross-vocabulary speculative decoding toolkit."""

from __future__ import annotations

import json
from os import PathLike
from typing import Any, Iterable

from ._core import (
    DirectMap,
    Tokenizer,
    acceptance_label,
    compute_speedup,
    early_exit,
    elevate,
    residual,
)
from . import _core

__all__ = [
    "DirectMap",
    "Tokenizer",
    "acceptance_label",
    "compute_speedup",
    "early_exit",
    "elevate",
    "load_scenario",
    "normalize_scenario",
    "residual",
    "run_scenario",
    "sweep",
]


def load_scenario(path: str | PathLike[str]) -> dict[str, Any]:
    """Reads a scenario file and returns it with every default filled in."""
    return json.loads(_core._load_scenario(str(path)))


def normalize_scenario(config: dict[str, Any]) -> dict[str, Any]:
    """Validates a scenario dict and returns it with every default filled in."""
    return json.loads(_core._normalize_scenario(json.dumps(config)))


def run_scenario(config: dict[str, Any]) -> dict[str, Any]:
    """Runs one scenario; the result holds aggregates, per-sample rows and the CSV text."""
    return json.loads(_core._run_scenario(json.dumps(config)))


def sweep(config: dict[str, Any], axis: str, values: Iterable[str]) -> dict[str, Any]:
    """One run per axis value; returns the comparison table and every report."""
    return json.loads(_core._sweep(json.dumps(config), axis, [str(v) for v in values]))
