"""Experiment configuration: JSON schema validation for the CLI.

Configs are strict: unknown keys are rejected at every level, values are
type- and range-checked, and every message names the offending key so a
bad config fails fast with exit code 2.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .grid import VoxelGrid

METHOD_CHOICES = ("psm", "fcn", "gnn", "lcn", "contextpose", "baseline")
TRAINABLE_METHODS = ("contextpose", "baseline")


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(doc: dict, allowed: dict, where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    _expect(not unknown, f"unknown key(s) {unknown} in {where}")


def _number(doc, key, where, lo=None, hi=None, default=None, integer=False):
    if key not in doc:
        _expect(default is not None, f"missing required key {key!r} in {where}")
        return default
    val = doc[key]
    _expect(
        isinstance(val, (int, float)) and not isinstance(val, bool),
        f"{where}.{key} must be a number",
    )
    if integer:
        _expect(float(val).is_integer(), f"{where}.{key} must be an integer")
        val = int(val)
    if lo is not None:
        _expect(val >= lo, f"{where}.{key} must be >= {lo}, got {val}")
    if hi is not None:
        _expect(val <= hi, f"{where}.{key} must be <= {hi}, got {val}")
    return val


GRID_KEYS = {"dims": None, "origin": None, "spacing": None}

SYNTH_KEYS = {
    "n_samples": None,
    "limb_length_mm": None,
    "angle_range_rad": None,
    "bump_sigma_mm": None,
    "noise": None,
    "occlusion_prob": None,
    "channels": None,
    "occluded_level": None,
    "root_jitter_mm": None,
    "root": None,
}

TRAIN_KEYS = {
    "lr": None,
    "betas": None,
    "epochs": None,
    "batch": None,
    "checkpoint_every": None,
    "readout_scale": None,
}

LOSS_KEYS = {"beta": None, "lambda": None, "ga_sigma_mm": None}

CONTEXT_KEYS = {"alpha": None, "eps": None, "ga": None, "pa": None}

TOP_KEYS = {
    "method": None,
    "seed": None,
    "out": None,
    "dataset": None,
    "val_dataset": None,
    "skeleton": None,
    "grid": None,
    "synth": None,
    "train": None,
    "loss": None,
    "context": None,
}


def parse_grid(doc: dict, where: str = "grid") -> VoxelGrid:
    _expect(isinstance(doc, dict), f"{where} must be an object")
    _check_keys(doc, GRID_KEYS, where)
    for key in ("dims", "origin", "spacing"):
        _expect(key in doc, f"missing required key {key!r} in {where}")
        val = doc[key]
        _expect(
            isinstance(val, list) and len(val) == 3,
            f"{where}.{key} must be a 3-element array",
        )
    try:
        return VoxelGrid(
            dims=tuple(int(d) for d in doc["dims"]),
            origin=tuple(float(v) for v in doc["origin"]),
            spacing=tuple(float(v) for v in doc["spacing"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


def parse_synth(doc: dict) -> dict:
    _expect(isinstance(doc, dict), "synth must be an object")
    _check_keys(doc, SYNTH_KEYS, "synth")
    return {
        "n_samples": _number(doc, "n_samples", "synth", lo=0, integer=True),
        "limb_length_mm": _number(doc, "limb_length_mm", "synth", lo=1e-9, default=150.0),
        "angle_range_rad": _number(doc, "angle_range_rad", "synth", lo=0.0, default=0.5),
        "bump_sigma_mm": _number(doc, "bump_sigma_mm", "synth", lo=1e-9, default=60.0),
        "noise": _number(doc, "noise", "synth", lo=0.0, default=0.1),
        "occlusion_prob": _number(doc, "occlusion_prob", "synth", lo=0.0, hi=1.0, default=0.0),
        "channels": _number(doc, "channels", "synth", lo=1, integer=True, default=1),
        "occluded_level": _number(doc, "occluded_level", "synth", lo=0.0, default=0.1),
        "root_jitter_mm": _number(doc, "root_jitter_mm", "synth", lo=0.0, default=0.0),
        "root": _number(doc, "root", "synth", lo=0, integer=True, default=0),
    }


def parse_train(doc: dict) -> dict:
    _expect(isinstance(doc, dict), "train must be an object")
    _check_keys(doc, TRAIN_KEYS, "train")
    betas = doc.get("betas", [0.9, 0.999])
    _expect(
        isinstance(betas, list)
        and len(betas) == 2
        and all(isinstance(b, (int, float)) and 0 <= b < 1 for b in betas),
        "train.betas must be two numbers in [0, 1)",
    )
    return {
        "lr": _number(doc, "lr", "train", lo=0.0, default=1e-3),
        "betas": [float(b) for b in betas],
        "epochs": _number(doc, "epochs", "train", lo=1, integer=True, default=1),
        "batch": _number(doc, "batch", "train", lo=1, integer=True, default=8),
        "checkpoint_every": _number(doc, "checkpoint_every", "train", lo=0, integer=True, default=0),
        "readout_scale": _number(doc, "readout_scale", "train", default=20.0),
    }


def parse_loss(doc: dict) -> dict:
    _expect(isinstance(doc, dict), "loss must be an object")
    _check_keys(doc, LOSS_KEYS, "loss")
    out = {
        "beta": _number(doc, "beta", "loss", lo=0.0, default=1e-2),
        "lambda": _number(doc, "lambda", "loss", lo=0.0, default=1e6),
    }
    if "ga_sigma_mm" in doc:
        out["ga_sigma_mm"] = _number(doc, "ga_sigma_mm", "loss", lo=1e-9)
    else:
        out["ga_sigma_mm"] = None
    return out


def parse_context(doc: dict) -> dict:
    _expect(isinstance(doc, dict), "context must be an object")
    _check_keys(doc, CONTEXT_KEYS, "context")
    for key in ("ga", "pa"):
        if key in doc:
            _expect(isinstance(doc[key], bool), f"context.{key} must be a boolean")
    return {
        "alpha": _number(doc, "alpha", "context", lo=1e-12, default=1500.0),
        "eps": _number(doc, "eps", "context", lo=0.0, default=1e-8),
        "ga": doc.get("ga", True),
        "pa": doc.get("pa", True),
    }


def load_config(path) -> dict:
    """Load and validate an experiment config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    _expect(isinstance(doc, dict), "config root must be an object")
    _check_keys(doc, TOP_KEYS, "config")

    cfg: dict = {}
    method = doc.get("method", "contextpose")
    _expect(method in METHOD_CHOICES, f"method must be one of {METHOD_CHOICES}, got {method!r}")
    cfg["method"] = method
    cfg["seed"] = _number(doc, "seed", "config", lo=0, integer=True, default=0)
    for key in ("out", "dataset", "val_dataset", "skeleton"):
        if key in doc:
            _expect(isinstance(doc[key], str), f"config.{key} must be a path string")
            cfg[key] = doc[key]
    cfg["grid"] = parse_grid(doc["grid"]) if "grid" in doc else None
    cfg["synth"] = parse_synth(doc["synth"]) if "synth" in doc else None
    cfg["train"] = parse_train(doc.get("train", {}))
    cfg["loss"] = parse_loss(doc.get("loss", {}))
    cfg["context"] = parse_context(doc.get("context", {}))
    return cfg
