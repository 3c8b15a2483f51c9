"""Flat key = value config files with [model] / [train] / [loss] sections.

Field names mirror the config dataclasses. Resolution order everywhere:
dataclass defaults, then file values, then explicit overrides (CLI flags).
``config.snapshot`` written into each run directory uses the same format,
so a snapshot can be fed back via --config to reproduce a run.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import fields
from pathlib import Path

from .backbone import ModelConfig
from .errors import DataError
from .losses import LossConfig
from .trainer import TrainConfig

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(raw: str, typ):
    if typ is bool:
        key = raw.strip().lower()
        if key not in _BOOL:
            raise DataError(f"not a boolean: {raw!r}")
        return _BOOL[key]
    try:
        return typ(raw)
    except ValueError as e:
        raise DataError(f"bad config value {raw!r}: {e}") from e


def _section_fields(cls):
    return {f.name: f.type for f in fields(cls) if f.name != "loss"}


_FIELD_TYPES = {
    "model": {f.name: f.type for f in fields(ModelConfig)},
    "train": _section_fields(TrainConfig),
    "loss": {f.name: f.type for f in fields(LossConfig)},
}
_TYPE_BY_NAME = {"int": int, "float": float, "str": str, "bool": bool}


def _typ(t):
    return _TYPE_BY_NAME[t] if isinstance(t, str) else t


def parse_config_file(path) -> dict[str, dict]:
    """Read an INI config into {'model': {...}, 'train': {...}, 'loss': {...}}."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no config file at {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read_string(path.read_text())
    except configparser.Error as e:
        raise DataError(f"unparseable config {path}: {e}") from e
    out: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _FIELD_TYPES:
            raise DataError(f"{path}: unknown config section [{section}]")
        known = _FIELD_TYPES[section]
        vals = {}
        for key, raw in cp.items(section):
            if key not in known:
                raise DataError(f"{path}: unknown key '{key}' in [{section}]")
            vals[key] = _coerce(raw, _typ(known[key]))
        out[section] = vals
    return out


def build_configs(manifest: dict, file_cfg: dict | None = None, overrides: dict | None = None):
    """Materialize (ModelConfig, TrainConfig) for a dataset.

    ``overrides`` has the same section structure as a parsed file and wins
    over it. Geometry keys in [model] must agree with the dataset manifest.
    """
    file_cfg = file_cfg or {}
    overrides = overrides or {}

    def merged(section):
        vals = dict(file_cfg.get(section, {}))
        vals.update({k: v for k, v in overrides.get(section, {}).items() if v is not None})
        return vals

    model_vals = merged("model")
    geometry = {
        "spatial_dims": manifest["dims"],
        "n_modalities": manifest["n_modalities"],
        "n_tasks": manifest["n_tasks"],
    }
    for key, expected in geometry.items():
        if key in model_vals and model_vals[key] != expected:
            raise DataError(
                f"config [model] {key}={model_vals[key]} conflicts with dataset ({expected})"
            )
        model_vals[key] = expected
    try:
        model_cfg = ModelConfig(**model_vals)
        loss_cfg = LossConfig(**merged("loss"))
        train_cfg = TrainConfig(loss=loss_cfg, **merged("train"))
    except (TypeError, ValueError) as e:
        raise DataError(f"invalid configuration: {e}") from e
    return model_cfg, train_cfg


def render_snapshot(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """Full resolved configuration in the config-file format."""
    cp = configparser.ConfigParser()
    cp["model"] = {f.name: str(getattr(model_cfg, f.name)) for f in fields(ModelConfig)}
    cp["train"] = {
        f.name: str(getattr(train_cfg, f.name)) for f in fields(TrainConfig) if f.name != "loss"
    }
    cp["loss"] = {f.name: str(getattr(train_cfg.loss, f.name)) for f in fields(LossConfig)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
