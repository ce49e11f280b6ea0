"""Residual token streaming over lossy packet channels.

The compiled core lives in ``semtok._semtok``; this module re-exports it and adds
dict-based helpers around the run configuration used by the ``semtok`` CLI.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Mapping

from ._semtok import (  # noqa: F401
    ERASED,
    PAD,
    Codec,
    CodecConfig,
    ConfigError,
    CountModel,
    FramingConfig,
    Mask,
    Predictor,
    RepeatLastPredictor,
    UniformPredictor,
    conceal,
    depacketize,
    fixed_mask,
    ge_loss,
    hmm_tokens,
    importance_to_mask,
    latency_estimate,
    overhead_estimate,
    packetize,
    payload_bitrate,
    soft_step,
    step,
    synth_features,
    uniform_loss,
    without_redundancy,
)
from . import _semtok

__version__ = "0.1.0"


def default_config() -> dict:
    return json.loads(_semtok.default_config_json())


def _merge(base: dict, overrides: Mapping[str, Any]) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def make_config(overrides: Mapping[str, Any] | None = None) -> dict:
    """Defaults with ``overrides`` merged in section by section."""
    return _merge(default_config(), overrides or {})


def _load_report(cfg: dict) -> dict:
    return json.loads((Path(cfg["run"]["output_dir"]) / "report.json").read_text())


def train_codec(cfg: Mapping[str, Any]) -> str:
    return _semtok.train_codec_json(json.dumps(make_config(cfg)))


def train_predictor(cfg: Mapping[str, Any]) -> str:
    return _semtok.train_predictor_json(json.dumps(make_config(cfg)))


def simulate(cfg: Mapping[str, Any], jobs: int = 1) -> dict:
    """Runs the simulate command and returns the parsed report.json."""
    full = make_config(cfg)
    _semtok.simulate_json(json.dumps(full), jobs)
    return _load_report(full)


def sweep(cfg: Mapping[str, Any], jobs: int = 1) -> dict:
    full = make_config(cfg)
    _semtok.sweep_json(json.dumps(full), jobs)
    return _load_report(full)
